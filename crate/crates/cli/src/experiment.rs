use std::fs;
use std::path::{Path, PathBuf};

use gradshift::diffcore::Rng;
use gradshift::domains::split_holdout;
use gradshift::objectives::{
    train_schedule_with, AdaptationModel, Control, EpochMetrics, ScheduleKind, ScheduleState,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest as _, Sha256};

use crate::checkpoint::{self, digest_of, Checkpoint, Position};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{sorted_json, write_atomic};
use crate::metrics::{to_csv, MetricsRow};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from per-run checkpoints found in the output directory.
    pub resume: bool,
    /// Stop every run once it has finished this many stages.
    pub halt_after_stage: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutcome {
    pub run_id: String,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub rows: Vec<MetricsRow>,
    pub target_acc: f64,
    pub stages_done: usize,
    pub stages: usize,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.stages_done == self.stages
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub output_dir: PathBuf,
    pub completed: bool,
    pub runs: Vec<RunOutcome>,
    /// `None` while any run is halted.
    pub report: Option<serde_json::Value>,
}

/// Per-run rows persisted beside the checkpoint so a resumed run can
/// reproduce the full metrics file.
#[derive(Serialize, Deserialize)]
struct RowsFile {
    stage: usize,
    rows: Vec<MetricsRow>,
}

pub fn run_id(schedule: ScheduleKind, seed: u64) -> String {
    format!("{}-{seed}", schedule.name())
}

/// Parallel width from `GRADSHIFT_THREADS`, else the number of cores.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var("GRADSHIFT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("GRADSHIFT_THREADS: expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> CliResult<ExperimentSummary> {
    let bytes = fs::read(config_path).map_err(CliError::io(config_path))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Config("config is not UTF-8".into()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    run_parsed(&cfg, &bytes, opts)
}

/// Runs every (schedule, seed) pair of an already parsed config; `bytes`
/// keys the checkpoint digests.
pub fn run_parsed(cfg: &ExperimentConfig, bytes: &[u8], opts: &RunOptions) -> CliResult<ExperimentSummary> {
    let out_dir = opts.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let specs: Vec<(ScheduleKind, u64)> = cfg
        .schedules
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<CliResult<RunOutcome>> =
        pool.install(|| specs.par_iter().map(|&(k, s)| run_one(cfg, bytes, k, s, opts, &out_dir)).collect());
    let mut runs = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    runs.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let completed = runs.iter().all(RunOutcome::completed);
    let report = if completed {
        let rows: Vec<MetricsRow> = runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
        write_atomic(&out_dir.join("metrics.csv"), &to_csv(&rows)?)?;
        let report = build_report(cfg, bytes, &runs);
        write_atomic(&out_dir.join("report.json"), (sorted_json(&report) + "\n").as_bytes())?;
        Some(report)
    } else {
        None
    };
    Ok(ExperimentSummary {
        output_dir: out_dir,
        completed,
        runs,
        report,
    })
}

fn to_row(id: &str, seed: u64, kind: ScheduleKind, m: &EpochMetrics, wall_clock: bool) -> MetricsRow {
    MetricsRow {
        run_id: id.into(),
        seed,
        schedule: kind.name().into(),
        t: m.t,
        epoch: m.epoch,
        class_loss: m.class_loss,
        alignment: m.alignment,
        gp: m.gp,
        target_acc: m.target_acc,
        wall_ms: if wall_clock { m.wall_ms } else { 0 },
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    bytes: &[u8],
    kind: ScheduleKind,
    seed: u64,
    opts: &RunOptions,
    out_dir: &Path,
) -> CliResult<RunOutcome> {
    let id = run_id(kind, seed);
    let core = |source: gradshift::Error| CliError::Run { run: id.clone(), source };
    let gen = match cfg.generator.seed() {
        Some(base) => cfg.generator.with_seed(Rng::keyed(base, &[seed]).next_u64()),
        None => cfg.generator.clone(),
    };
    let seq = gen.generate().map_err(core)?;
    let (train, eval) = split_holdout(&seq, cfg.holdout, seed).map_err(core)?;
    let arch = cfg.model.architecture(seq.d(), seq.k());
    let tc = cfg.train.to_config(seed);
    let stages = kind.stages(train.len());
    let digest = digest_of(&[bytes, id.as_bytes()]);
    let ckpt_dir = out_dir.join("checkpoints");
    let ckpt_path = ckpt_dir.join(format!("{id}.ckpt"));
    let rows_path = ckpt_dir.join(format!("{id}.rows.json"));

    let fresh = AdaptationModel::init(seed, &arch, kind == ScheduleKind::GradualTemporal).map_err(core)?;
    let (start, mut rows) = if opts.resume && ckpt_path.exists() {
        let c = checkpoint::load_verified(&ckpt_path, &digest)?;
        let (pos, model) = c
            .to_model(&fresh)
            .map_err(|source| CliError::Checkpoint { path: ckpt_path.clone(), source })?;
        let raw = fs::read(&rows_path).map_err(CliError::io(&rows_path))?;
        let saved: RowsFile = serde_json::from_slice(&raw).map_err(|e| CliError::Usage(format!("{}: {e}", rows_path.display())))?;
        if saved.stage != pos.stage || pos.stage > stages {
            return Err(CliError::Usage(format!(
                "{}: rows cover stage {} but the checkpoint is at stage {}",
                rows_path.display(),
                saved.stage,
                pos.stage
            )));
        }
        (ScheduleState { model, next_stage: pos.stage }, saved.rows)
    } else {
        (ScheduleState { model: fresh, next_stage: 0 }, Vec::new())
    };

    let mut write_err: Option<CliError> = None;
    let outcome = {
        let mut hook = |state: &ScheduleState, epochs: &[EpochMetrics]| -> gradshift::Result<Control> {
        rows.extend(epochs.iter().map(|m| to_row(&id, seed, kind, m, cfg.wall_clock)));
        let file = RowsFile { stage: state.next_stage, rows: rows.clone() };
        let saved = write_atomic(&rows_path, serde_json::to_string(&file)?.as_bytes()).and_then(|_| {
            let pos = Position { stage: state.next_stage, epoch: 0 };
            checkpoint::save(&ckpt_path, &Checkpoint::from_model(pos, &state.model, digest))
        });
        if let Err(e) = saved {
            write_err = Some(e);
            return Ok(Control::Stop);
        }
        Ok(match opts.halt_after_stage {
            Some(h) if state.next_stage >= h => Control::Stop,
            _ => Control::Continue,
        })
        };
        train_schedule_with(kind, &train, &eval, &tc, start.clone(), &mut hook).map_err(core)?
    };
    if let Some(e) = write_err {
        return Err(e);
    }
    let stages_done = start.next_stage + outcome.trace.len();
    let target_acc = outcome.model.accuracy(eval.last()).map_err(core)?;
    Ok(RunOutcome {
        run_id: id,
        seed,
        schedule: kind,
        rows,
        target_acc,
        stages_done,
        stages,
    })
}

/// Mean, sample standard deviation and median.
pub fn summarize(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    let median = if s.len() % 2 == 1 { s[mid] } else { (s[mid - 1] + s[mid]) / 2.0 };
    (mean, std, median)
}

fn build_report(cfg: &ExperimentConfig, bytes: &[u8], runs: &[RunOutcome]) -> serde_json::Value {
    let mut schedules = serde_json::Map::new();
    for &kind in &cfg.schedules {
        let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.schedule == kind).collect();
        let accs: Vec<f64> = mine.iter().map(|r| r.target_acc).collect();
        let (mean, std, median) = summarize(&accs);
        schedules.insert(
            kind.name().into(),
            json!({
                "runs": mine.len(),
                "seeds": mine.iter().map(|r| r.seed).collect::<Vec<_>>(),
                "target_acc": accs,
                "mean": mean,
                "std": std,
                "median": median,
            }),
        );
    }
    json!({
        "name": cfg.name,
        "config_sha256": hex::encode(Sha256::digest(bytes)),
        "schedules": schedules,
        "runs": runs.iter().map(|r| json!({
            "run_id": r.run_id,
            "seed": r.seed,
            "schedule": r.schedule.name(),
            "target_acc": r.target_acc,
            "stages": r.stages,
        })).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let (m, s, med) = summarize(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(m, 4.0);
        assert!((s - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(med, 2.5);
        assert_eq!(summarize(&[0.5]), (0.5, 0.0, 0.5));
    }

    #[test]
    fn run_ids() {
        assert_eq!(run_id(ScheduleKind::GradualTemporal, 12), "gradual_temporal-12");
    }
}
