use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const HEADER: [&str; 10] = [
    "run_id",
    "seed",
    "schedule",
    "t",
    "epoch",
    "class_loss",
    "alignment",
    "gp",
    "target_acc",
    "wall_ms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub schedule: String,
    pub t: usize,
    pub epoch: usize,
    pub class_loss: f64,
    pub alignment: f64,
    pub gp: f64,
    pub target_acc: f64,
    pub wall_ms: u64,
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..9).contains(&exp) {
        format!("{}e{}{:02}", trim(mant), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        trim(&format!("{:.*}", (8 - exp) as usize, x))
    }
}

/// Header plus rows, LF-terminated, RFC-4180 quoting where needed.
pub fn to_csv(rows: &[MetricsRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    w.write_record(HEADER).map_err(fail)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.seed.to_string(),
            r.schedule.clone(),
            r.t.to_string(),
            r.epoch.to_string(),
            fmt_sig(r.class_loss),
            fmt_sig(r.alignment),
            fmt_sig(r.gp),
            fmt_sig(r.target_acc),
            r.wall_ms.to_string(),
        ])
        .map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))
}
