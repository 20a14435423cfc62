use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gradshift::diffcore::{Array, Rng};
use gradshift::domains::{load_sequence, save_sequence, DomainSequence, GeneratorSpec};
use gradshift::objectives::{Architecture, LossSpec, TrainConfig};
use gradshift::theory::{
    check_lemma1, estimate_discrepancy, evaluate_bound, seq_rademacher_exact, sweep_horizon, BoundInputs,
    FiniteInstance, HypothesisPool, Lemma1Setup, Rseq,
};
use gradshift::transport::{class_conditional_delta, sinkhorn, w1_exact, w1_sorted_1d, CostMatrix, Estimator};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

/// One point per line, comma-separated; a non-numeric first line is a header.
pub fn parse_points(path: &Path) -> CliResult<Array> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) if r.iter().all(|v| v.is_finite()) => rows.push(r),
            _ if i == 0 => continue,
            _ => return Err(CliError::Usage(format!("{}: line {}: expected numbers, got {line:?}", path.display(), i + 1))),
        }
        if rows.len() > 1 && rows[rows.len() - 1].len() != rows[0].len() {
            return Err(CliError::Usage(format!("{}: line {}: ragged row", path.display(), i + 1)));
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no points", path.display())));
    }
    Ok(Array::from_rows(&rows)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum W1Method {
    Exact,
    Sorted1d,
    Sinkhorn,
}

#[derive(Args, Debug, Clone)]
pub struct W1Args {
    pub file_a: PathBuf,
    pub file_b: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    pub method: W1Method,
    /// Entropic regularization in cost units; defaults to 0.005 × mean cost.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

pub fn w1(args: &W1Args) -> CliResult<Value> {
    let a = parse_points(&args.file_a)?;
    let b = parse_points(&args.file_b)?;
    let mut eps_used = None;
    let result = match args.method {
        W1Method::Exact => w1_exact(&a, &b)?,
        W1Method::Sorted1d => {
            if a.cols() != 1 || b.cols() != 1 {
                return Err(CliError::Usage("sorted1d needs one column per file".into()));
            }
            w1_sorted_1d(a.data(), b.data())?
        }
        W1Method::Sinkhorn => {
            let eps = match args.epsilon {
                Some(e) => e,
                None => (0.005 * CostMatrix::euclidean(&a, &b)?.mean()).max(1e-12),
            };
            eps_used = Some(eps);
            sinkhorn(&a, &b, eps, args.max_iters, args.tol)?
        }
    };
    let mut out = serde_json::to_value(&result).expect("serializable");
    let obj = out.as_object_mut().expect("object");
    obj.insert("n_a".into(), json!(a.rows()));
    obj.insert("n_b".into(), json!(b.rows()));
    obj.insert("d".into(), json!(a.cols()));
    if let Some(e) = eps_used {
        obj.insert("epsilon".into(), json!(e));
    }
    Ok(out)
}

#[derive(Args, Debug, Clone)]
pub struct BoundArgs {
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long = "M", default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long = "Delta", default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 10.0)]
    pub vc: f64,
    /// Fixed sequential Rademacher value; otherwise `rseq_c / √(n(T−1))`.
    #[arg(long)]
    pub rseq: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub rseq_c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_online: f64,
}

impl BoundArgs {
    fn inputs(&self) -> BoundInputs {
        BoundInputs {
            t: self.t,
            n: self.n,
            m: self.m,
            rho: self.rho,
            drift: self.drift,
            delta: self.delta,
            vc: self.vc,
            rseq: match self.rseq {
                Some(v) => Rseq::Value(v),
                None => Rseq::Rule { c: self.rseq_c },
            },
            c_online: self.c_online,
        }
    }
}

pub fn bound(args: &BoundArgs) -> CliResult<Value> {
    let inp = args.inputs();
    let report = evaluate_bound(&inp).map_err(usage)?;
    Ok(json!({ "inputs": inp, "report": report }))
}

fn usage(e: gradshift::Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// `sweep` reads the template either from flags or from a flat TOML file
/// with the same keys (`T` is ignored there).
#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "T-min", alias = "t-min", default_value_t = 2)]
    pub t_min: usize,
    #[arg(long = "T-max", alias = "t-max", default_value_t = 200)]
    pub t_max: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long = "M", default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long = "Delta", default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 10.0)]
    pub vc: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rseq_c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_online: f64,
    /// Print only the argmin and the endpoints instead of every row.
    #[arg(long)]
    pub summary: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub t_min: usize,
    pub t_max: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub rho: f64,
    #[serde(rename = "Delta")]
    pub drift: f64,
    pub delta: f64,
    pub vc: f64,
    #[serde(default = "one")]
    pub rseq_c: f64,
    #[serde(default = "one")]
    pub c_online: f64,
}

fn one() -> f64 {
    1.0
}

pub fn sweep(args: &SweepArgs) -> CliResult<Value> {
    let (template, lo, hi) = match &args.config {
        Some(path) => {
            let f: SweepFile = toml::from_str(&read_text(path)?).map_err(|e| CliError::Config(e.to_string().trim_end().into()))?;
            let inp = BoundInputs {
                t: f.t_min.max(2),
                n: f.n,
                m: f.m,
                rho: f.rho,
                drift: f.drift,
                delta: f.delta,
                vc: f.vc,
                rseq: Rseq::Rule { c: f.rseq_c },
                c_online: f.c_online,
            };
            (inp, f.t_min, f.t_max)
        }
        None => {
            let inp = BoundInputs {
                t: args.t_min.max(2),
                n: args.n,
                m: args.m,
                rho: args.rho,
                drift: args.drift,
                delta: args.delta,
                vc: args.vc,
                rseq: Rseq::Rule { c: args.rseq_c },
                c_online: args.c_online,
            };
            (inp, args.t_min, args.t_max)
        }
    };
    let report = sweep_horizon(&template, lo, hi).map_err(usage)?;
    let mut out = json!({
        "inputs": template,
        "t_min": lo,
        "t_max": hi,
        "argmin_t": report.argmin_t,
        "min_total": report.min_total,
    });
    if args.summary {
        out["first"] = json!(report.rows.first());
        out["last"] = json!(report.rows.last());
    } else {
        out["rows"] = json!(report.rows);
    }
    Ok(out)
}

/// A `.csv` path loads a saved sequence; anything else is a TOML generator
/// table (`kind = ...` plus its fields).
pub fn load_source(path: &Path) -> CliResult<DomainSequence> {
    if path.extension().is_some_and(|e| e == "csv") {
        return Ok(load_sequence(path)?);
    }
    let spec: GeneratorSpec = toml::from_str(&read_text(path)?).map_err(|e| CliError::Config(e.to_string().trim_end().into()))?;
    Ok(spec.generate()?)
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    /// TOML generator table.
    pub spec: PathBuf,
    /// Output CSV; metadata goes to the matching `.meta.json`.
    pub out: PathBuf,
}

pub fn generate(args: &GenerateArgs) -> CliResult<Value> {
    let seq = load_source(&args.spec)?;
    save_sequence(&seq, &args.out)?;
    Ok(json!({
        "path": args.out,
        "domains": seq.len(),
        "d": seq.d(),
        "k": seq.k(),
        "n": seq.domains.iter().map(|d| d.n()).collect::<Vec<_>>(),
        "delta_true": seq.meta.delta_true,
    }))
}

#[derive(Args, Debug, Clone)]
pub struct DiscArgs {
    /// Sequence CSV or TOML generator table.
    pub source: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub random: usize,
    #[arg(long, default_value_t = 8)]
    pub snapshots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Loss clamp M.
    #[arg(long = "M", default_value_t = 5.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
}

pub fn disc(args: &DiscArgs) -> CliResult<Value> {
    let seq = load_source(&args.source)?;
    if args.random + args.snapshots == 0 {
        return Err(CliError::Usage("the pool needs at least one hypothesis".into()));
    }
    let arch = Architecture::new(seq.d(), seq.k());
    let mut pool = HypothesisPool::random(args.seed, args.random, &arch)?;
    let cfg = TrainConfig { seed: args.seed, ..TrainConfig::default() };
    pool.add_training_snapshots(&seq, &arch, &cfg, args.snapshots)?;
    let loss = LossSpec::cross_entropy(args.m);
    let report = estimate_discrepancy(&seq, &pool, &loss)?;
    let delta_hat = class_conditional_delta(&seq, Estimator::Exact, args.seed).ok().map(|r| r.delta_hat);
    let t = seq.len() as f64;
    Ok(json!({
        "source": args.source,
        "domains": seq.len(),
        "pool_random": args.random,
        "pool_snapshots": args.snapshots,
        "M": args.m,
        "rho": args.rho,
        "estimate": report.estimate,
        "argmax": report.argmax,
        "argmax_provenance": pool.members[report.argmax].provenance,
        "delta_true": seq.meta.delta_true,
        "delta_hat": delta_hat,
        "drift_bound_true": seq.meta.delta_true.map(|d| t * args.rho * d),
        "drift_bound_hat": delta_hat.map(|d| t * args.rho * d),
    }))
}

#[derive(Args, Debug, Clone)]
pub struct SeqradArgs {
    /// JSON file `{"z_count", "functions", "depth"}`.
    #[arg(long, conflicts_with_all = ["z", "functions"])]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub z: Option<usize>,
    /// Value tables separated by `;`, entries by `,`: `"1,1;-1,-1"`.
    #[arg(long)]
    pub functions: Option<String>,
    #[arg(long = "T", default_value_t = 1)]
    pub t: usize,
}

pub fn seqrad(args: &SeqradArgs) -> CliResult<Value> {
    let inst = match (&args.instance, args.z, &args.functions) {
        (Some(p), _, _) => serde_json::from_str::<FiniteInstance>(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        (None, Some(z), Some(f)) => {
            let functions = f
                .split(';')
                .map(|row| row.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(format!("--functions: {e}")))?;
            FiniteInstance { z_count: z, functions, depth: args.t }
        }
        _ => return Err(CliError::Usage("give --instance, or --z with --functions".into())),
    };
    let value = seq_rademacher_exact(&inst).map_err(usage)?;
    Ok(json!({
        "instance": inst,
        "trees": inst.tree_count().map(|c| c.to_string()),
        "value": value,
    }))
}

/// Gaussian translation family: μ = N(0, σ²), ν = N(shift, σ²) in 1-D with
/// loss `rho · clamp(x, −M, M)`.
#[derive(Args, Debug, Clone)]
pub struct Lemma1Args {
    #[arg(long, default_value_t = 0.3)]
    pub shift: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long = "M", default_value_t = 5.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn lemma1(args: &Lemma1Args) -> CliResult<Value> {
    if !(args.sigma >= 0.0) || !(args.m > 0.0) || !args.shift.is_finite() {
        return Err(CliError::Usage("need sigma >= 0, M > 0 and a finite shift".into()));
    }
    let (sigma, shift, m, rho) = (args.sigma, args.shift, args.m, args.rho);
    let mu = move |r: &mut Rng| sigma * r.normal();
    let nu = move |r: &mut Rng| shift + sigma * r.normal();
    let loss = move |x: f64| rho * x.clamp(-m, m);
    let setup = Lemma1Setup {
        true_w1: shift.abs(),
        rho,
        trials: args.trials,
        n: args.n,
        mu_seed: Rng::keyed(args.seed, &[0]).next_u64(),
        nu_seed: Rng::keyed(args.seed, &[1]).next_u64(),
    };
    let report = check_lemma1(&mu, &nu, &loss, &setup).map_err(usage)?;
    Ok(json!({
        "shift": shift,
        "sigma": sigma,
        "M": m,
        "setup": setup,
        "report": report,
    }))
}
