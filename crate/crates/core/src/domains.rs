//! Sequences of gradually drifting labeled domains.
//!
//! Every generator draws labels from a fixed marginal before positioning any
//! features, so the label distribution is the same in every domain. Drift acts
//! only on the class-conditional feature distributions.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Rng};
use crate::error::{invalid, Error, Result};

/// Labeled samples drawn from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch {
    pub t: usize,
    /// `n × d`
    pub features: Array,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl DomainBatch {
    pub fn new(t: usize, features: Array, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return invalid(format!("features must be n×d, got {:?}", features.shape()));
        }
        if labels.is_empty() || labels.len() != features.rows() {
            return invalid(format!(
                "domain {t}: {} labels for {} rows",
                labels.len(),
                features.rows()
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return invalid(format!("domain {t}: label {y} outside [0, {k})"));
        }
        Ok(Self {
            t,
            features,
            labels,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    /// Row indices carrying label `y`.
    pub fn class_indices(&self, y: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == y).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> DomainBatch {
        DomainBatch {
            t: self.t,
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            k: self.k,
        }
    }

    /// Stacks batches into one; the result carries the index of the last part.
    pub fn pool(parts: &[&DomainBatch]) -> Result<DomainBatch> {
        let Some(last) = parts.last() else {
            return invalid("cannot pool zero domains");
        };
        let d = last.d();
        if parts.iter().any(|p| p.d() != d || p.k != last.k) {
            return invalid("pooled domains disagree on d or k");
        }
        let rows: Vec<f64> = parts
            .iter()
            .flat_map(|p| p.features.data().iter().copied())
            .collect();
        let labels: Vec<usize> = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        DomainBatch::new(
            last.t,
            Array::new(vec![labels.len(), d], rows)?,
            labels,
            last.k,
        )
    }
}

/// Generator description and analytic drift, when known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub generator: String,
    #[serde(default)]
    pub params: serde_json::Value,
    /// Exact per-step class-conditional W_p drift, when analytic.
    #[serde(default)]
    pub delta_true: Option<f64>,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSequence {
    pub domains: Vec<DomainBatch>,
    pub meta: SequenceMeta,
}

impl DomainSequence {
    pub fn new(domains: Vec<DomainBatch>, meta: SequenceMeta) -> Result<Self> {
        let Some(first) = domains.first() else {
            return invalid("empty domain sequence");
        };
        let (d, k) = (first.d(), first.k);
        for (i, dom) in domains.iter().enumerate() {
            if dom.t != i {
                return invalid(format!("domain at position {i} has index {}", dom.t));
            }
            if dom.d() != d || dom.k != k {
                return invalid(format!("domain {i} disagrees on d or k"));
            }
        }
        if meta.k != k {
            return invalid(format!("metadata k={} but domains use k={k}", meta.k));
        }
        Ok(Self { domains, meta })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn d(&self) -> usize {
        self.domains[0].d()
    }

    pub fn k(&self) -> usize {
        self.meta.k
    }

    pub fn last(&self) -> &DomainBatch {
        &self.domains[self.domains.len() - 1]
    }
}

/// What to generate. `File` loads a saved sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    RotatingMoons {
        domains: usize,
        n: usize,
        total_degrees: f64,
        noise_sigma: f64,
        seed: u64,
    },
    RotatingGaussians {
        domains: usize,
        n: usize,
        total_degrees: f64,
        class_means: Vec<Vec<f64>>,
        sigma: f64,
        seed: u64,
    },
    ShiftingGaussians {
        domains: usize,
        n: usize,
        shift_per_step: f64,
        class_means: Vec<Vec<f64>>,
        sigma: f64,
        /// Unit directions cycled per step; defaults to the first axis.
        #[serde(default)]
        directions: Option<Vec<Vec<f64>>>,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl GeneratorSpec {
    pub fn seed(&self) -> Option<u64> {
        match self {
            GeneratorSpec::RotatingMoons { seed, .. }
            | GeneratorSpec::RotatingGaussians { seed, .. }
            | GeneratorSpec::ShiftingGaussians { seed, .. } => Some(*seed),
            GeneratorSpec::File { .. } => None,
        }
    }

    /// The same generator drawing from a different seed; `File` is unchanged.
    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            GeneratorSpec::RotatingMoons { seed, .. }
            | GeneratorSpec::RotatingGaussians { seed, .. }
            | GeneratorSpec::ShiftingGaussians { seed, .. } => *seed = new_seed,
            GeneratorSpec::File { .. } => {}
        }
        out
    }

    pub fn generate(&self) -> Result<DomainSequence> {
        match self {
            GeneratorSpec::RotatingMoons {
                domains,
                n,
                total_degrees,
                noise_sigma,
                seed,
            } => make_rotating_moons(*domains, *n, *total_degrees, *noise_sigma, *seed),
            GeneratorSpec::RotatingGaussians {
                domains,
                n,
                total_degrees,
                class_means,
                sigma,
                seed,
            } => make_rotating_gaussians(*domains, *n, *total_degrees, class_means, *sigma, *seed),
            GeneratorSpec::ShiftingGaussians {
                domains,
                n,
                shift_per_step,
                class_means,
                sigma,
                directions,
                seed,
            } => make_shifting_gaussians(
                *domains,
                *n,
                *shift_per_step,
                class_means,
                *sigma,
                directions.as_deref(),
                *seed,
            ),
            GeneratorSpec::File { path } => load_sequence(path),
        }
    }
}

fn check_common(domains: usize, n: usize, sigma: f64) -> Result<()> {
    if domains < 2 {
        return invalid(format!("need at least 2 domains, got {domains}"));
    }
    if n == 0 {
        return invalid("need at least one sample per domain");
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("noise scale must be >= 0, got {sigma}"));
    }
    Ok(())
}

/// Uniform labels over `k` classes, drawn before any feature.
fn draw_labels(seed: u64, t: usize, n: usize, k: usize) -> Vec<usize> {
    let mut rng = Rng::keyed(seed, &[t as u64, 0x4C]);
    (0..n).map(|_| rng.below(k)).collect()
}

fn rotate(p: [f64; 2], radians: f64) -> [f64; 2] {
    let (s, c) = (libm::sin(radians), libm::cos(radians));
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Rotation angle of domain `t` under a linear schedule, in degrees.
pub fn rotation_degrees(t: usize, domains: usize, total_degrees: f64) -> f64 {
    total_degrees * t as f64 / (domains - 1) as f64
}

/// Two interleaving half circles, centred at the origin, rotated by an angle
/// growing linearly from 0 at `t = 0` to `total_degrees` at `t = T - 1`.
pub fn make_rotating_moons(
    domains: usize,
    n: usize,
    total_degrees: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<DomainSequence> {
    check_common(domains, n, noise_sigma)?;
    let mut out = Vec::with_capacity(domains);
    for t in 0..domains {
        let labels = draw_labels(seed, t, n, 2);
        let angle = rotation_degrees(t, domains, total_degrees).to_radians();
        let mut rng = Rng::keyed(seed, &[t as u64, 0x46]);
        let mut data = Vec::with_capacity(2 * n);
        for &y in &labels {
            let s = std::f64::consts::PI * rng.uniform();
            let p = if y == 0 {
                [libm::cos(s), libm::sin(s)]
            } else {
                [1.0 - libm::cos(s), 0.5 - libm::sin(s)]
            };
            // centre of the standard cloud is (0.5, 0.25)
            let p = [
                p[0] - 0.5 + noise_sigma * rng.normal(),
                p[1] - 0.25 + noise_sigma * rng.normal(),
            ];
            data.extend(rotate(p, angle));
        }
        out.push(DomainBatch::new(t, Array::new(vec![n, 2], data)?, labels, 2)?);
    }
    DomainSequence::new(
        out,
        SequenceMeta {
            generator: "rotating_moons".into(),
            params: serde_json::json!({
                "domains": domains, "n": n, "total_degrees": total_degrees,
                "noise_sigma": noise_sigma, "seed": seed,
            }),
            delta_true: None,
            k: 2,
        },
    )
}

fn check_means(class_means: &[Vec<f64>]) -> Result<usize> {
    let d = class_means.first().map_or(0, Vec::len);
    if class_means.len() < 2 || d == 0 || class_means.iter().any(|m| m.len() != d) {
        return invalid("class_means needs >= 2 classes of equal positive dimension");
    }
    Ok(d)
}

fn gaussian_domain(
    seed: u64,
    t: usize,
    n: usize,
    means: &[Vec<f64>],
    sigma: f64,
) -> Result<DomainBatch> {
    let k = means.len();
    let d = means[0].len();
    let labels = draw_labels(seed, t, n, k);
    let mut rng = Rng::keyed(seed, &[t as u64, 0x46]);
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        for mu in &means[y] {
            data.push(mu + sigma * rng.normal());
        }
    }
    DomainBatch::new(t, Array::new(vec![n, d], data)?, labels, k)
}

/// Class `y` at time `t` is `N(R(t) μ_y, σ²I)` with `R(t)` a planar rotation
/// of the first two coordinates by the linear schedule. Each step translates
/// class `y` by `2‖μ_y‖ sin(θ/2)` in the plane, so the drift is analytic.
pub fn make_rotating_gaussians(
    domains: usize,
    n: usize,
    total_degrees: f64,
    class_means: &[Vec<f64>],
    sigma: f64,
    seed: u64,
) -> Result<DomainSequence> {
    check_common(domains, n, sigma)?;
    let d = check_means(class_means)?;
    if d < 2 {
        return invalid("rotating gaussians need d >= 2");
    }
    let mut out = Vec::with_capacity(domains);
    for t in 0..domains {
        let angle = rotation_degrees(t, domains, total_degrees).to_radians();
        let means: Vec<Vec<f64>> = class_means
            .iter()
            .map(|m| {
                let r = rotate([m[0], m[1]], angle);
                let mut v = m.clone();
                v[0] = r[0];
                v[1] = r[1];
                v
            })
            .collect();
        out.push(gaussian_domain(seed, t, n, &means, sigma)?);
    }
    let step = (total_degrees / (domains - 1) as f64).to_radians();
    let delta = class_means
        .iter()
        .map(|m| 2.0 * m[0].hypot(m[1]) * (step / 2.0).sin().abs())
        .fold(0.0, f64::max);
    DomainSequence::new(
        out,
        SequenceMeta {
            generator: "rotating_gaussians".into(),
            params: serde_json::json!({
                "domains": domains, "n": n, "total_degrees": total_degrees,
                "class_means": class_means, "sigma": sigma, "seed": seed,
            }),
            delta_true: Some(delta),
            k: class_means.len(),
        },
    )
}

/// Class `y` at time `t` is `N(μ_y + Σ_{s<t} shift·u_s, σ²I)` where the unit
/// directions `u_s` cycle through `directions`. Consecutive domains are exact
/// translates, so the per-step W_p drift equals `shift_per_step` for every p.
pub fn make_shifting_gaussians(
    domains: usize,
    n: usize,
    shift_per_step: f64,
    class_means: &[Vec<f64>],
    sigma: f64,
    directions: Option<&[Vec<f64>]>,
    seed: u64,
) -> Result<DomainSequence> {
    check_common(domains, n, sigma)?;
    if !(shift_per_step >= 0.0) || !shift_per_step.is_finite() {
        return invalid(format!("shift_per_step must be >= 0, got {shift_per_step}"));
    }
    let d = check_means(class_means)?;
    let mut axis = vec![0.0; d];
    axis[0] = 1.0;
    let dirs: Vec<Vec<f64>> = match directions {
        None => vec![axis],
        Some(list) if !list.is_empty() => list
            .iter()
            .map(|u| {
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if u.len() != d || !(norm > 0.0) {
                    return invalid("shift directions must be non-zero and match d");
                }
                Ok(u.iter().map(|v| v / norm).collect())
            })
            .collect::<Result<_>>()?,
        Some(_) => return invalid("empty direction cycle"),
    };
    let mut offset = vec![0.0; d];
    let mut out = Vec::with_capacity(domains);
    for t in 0..domains {
        if t > 0 {
            let u = &dirs[(t - 1) % dirs.len()];
            for (o, v) in offset.iter_mut().zip(u) {
                *o += shift_per_step * v;
            }
        }
        let means: Vec<Vec<f64>> = class_means
            .iter()
            .map(|m| m.iter().zip(&offset).map(|(a, b)| a + b).collect())
            .collect();
        out.push(gaussian_domain(seed, t, n, &means, sigma)?);
    }
    DomainSequence::new(
        out,
        SequenceMeta {
            generator: "shifting_gaussians".into(),
            params: serde_json::json!({
                "domains": domains, "n": n, "shift_per_step": shift_per_step,
                "class_means": class_means, "sigma": sigma,
                "directions": dirs, "seed": seed,
            }),
            delta_true: Some(shift_per_step),
            k: class_means.len(),
        },
    )
}

/// `data.csv` → `data.meta.json`
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `t,y,x0,...` rows plus the metadata sidecar.
pub fn save_sequence(seq: &DomainSequence, path: &Path) -> Result<()> {
    let d = seq.d();
    let mut s = String::from("t,y");
    for j in 0..d {
        s.push_str(&format!(",x{j}"));
    }
    s.push('\n');
    for dom in &seq.domains {
        for i in 0..dom.n() {
            s.push_str(&format!("{},{}", dom.t, dom.labels[i]));
            for v in dom.features.row(i) {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
    }
    write_atomic(path, s.as_bytes())?;
    write_atomic(
        &meta_path(path),
        serde_json::to_string_pretty(&seq.meta)?.as_bytes(),
    )
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        msg: msg.into(),
    })
}

/// Parses the CSV format; `k` comes from the sidecar when present, otherwise
/// from the largest label.
pub fn load_sequence(path: &Path) -> Result<DomainSequence> {
    let text = fs::read_to_string(path)?;
    let meta = match fs::read_to_string(meta_path(path)) {
        Ok(m) => Some(serde_json::from_str::<SequenceMeta>(&m)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    parse_sequence(&text, meta)
}

pub fn parse_sequence(text: &str, meta: Option<SequenceMeta>) -> Result<DomainSequence> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let Some((_, header)) = lines.next() else {
        return parse_err(1, "empty file");
    };
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "y" {
        return parse_err(1, "header must be t,y,x0,...");
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("x{j}") {
            return parse_err(1, format!("expected column x{j}, found {c}"));
        }
    }
    let d = cols.len() - 2;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 2 {
            return parse_err(ln, format!("expected {} fields, found {}", d + 2, fields.len()));
        }
        let t: usize = fields[0]
            .parse()
            .or_else(|_| parse_err(ln, format!("bad domain index `{}`", fields[0])))?;
        let y: usize = fields[1]
            .parse()
            .or_else(|_| parse_err(ln, format!("bad label `{}`", fields[1])))?;
        let x = fields[2..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => parse_err(ln, format!("bad feature `{f}`")),
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(&(prev, ..)) = rows.last() {
            if t < prev {
                return parse_err(ln, "rows must be sorted by t");
            }
            if t > prev + 1 {
                return parse_err(ln, format!("domain indices jump from {prev} to {t}"));
            }
        } else if t != 0 {
            return parse_err(ln, "first domain index must be 0");
        }
        if let Some(m) = &meta {
            if y >= m.k {
                return parse_err(ln, format!("label {y} outside [0, {})", m.k));
            }
        }
        rows.push((t, y, x));
    }
    if rows.is_empty() {
        return parse_err(1, "no data rows");
    }
    let k = match &meta {
        Some(m) => m.k,
        None => rows.iter().map(|r| r.1).max().unwrap_or(0) + 1,
    };
    let domains_count = rows.last().map_or(0, |r| r.0) + 1;
    let mut domains = Vec::with_capacity(domains_count);
    for t in 0..domains_count {
        let part: Vec<&(usize, usize, Vec<f64>)> = rows.iter().filter(|r| r.0 == t).collect();
        let data: Vec<f64> = part.iter().flat_map(|r| r.2.iter().copied()).collect();
        let labels: Vec<usize> = part.iter().map(|r| r.1).collect();
        domains.push(DomainBatch::new(
            t,
            Array::new(vec![labels.len(), d], data)?,
            labels,
            k,
        )?);
    }
    let meta = meta.unwrap_or(SequenceMeta {
        generator: "file".into(),
        params: serde_json::Value::Null,
        delta_true: None,
        k,
    });
    DomainSequence::new(domains, meta)
}

/// Allocates `round(total·fraction)` items across groups by largest remainder.
fn allocate(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let mut alloc: Vec<usize> = counts
        .iter()
        .map(|&c| (c as f64 * fraction).floor() as usize)
        .collect();
    let mut rem: Vec<(f64, usize)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (c as f64 * fraction - alloc[i] as f64, i))
        .collect();
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = target.saturating_sub(alloc.iter().sum());
    for &(_, i) in &rem {
        if left == 0 {
            break;
        }
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// Per-domain stratified split; `fraction` is the held-out share.
pub fn split_holdout(
    seq: &DomainSequence,
    fraction: f64,
    seed: u64,
) -> Result<(DomainSequence, DomainSequence)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return invalid(format!("holdout fraction must lie in (0, 1), got {fraction}"));
    }
    let mut train = Vec::with_capacity(seq.len());
    let mut eval = Vec::with_capacity(seq.len());
    for dom in &seq.domains {
        let counts = dom.class_counts();
        if let Some(y) = counts.iter().position(|&c| c > 0 && c < 2) {
            return invalid(format!(
                "class {y} in domain {} has fewer than 2 samples",
                dom.t
            ));
        }
        let mut alloc = allocate(&counts, fraction);
        for (a, &c) in alloc.iter_mut().zip(&counts) {
            if c >= 2 {
                *a = (*a).clamp(1, c - 1);
            }
        }
        let mut tr = Vec::new();
        let mut ev = Vec::new();
        for (y, &take) in alloc.iter().enumerate() {
            let mut idx = dom.class_indices(y);
            Rng::keyed(seed, &[dom.t as u64, y as u64]).shuffle(&mut idx);
            ev.extend_from_slice(&idx[..take]);
            tr.extend_from_slice(&idx[take..]);
        }
        tr.sort_unstable();
        ev.sort_unstable();
        train.push(dom.subset(&tr));
        eval.push(dom.subset(&ev));
    }
    Ok((
        DomainSequence::new(train, seq.meta.clone())?,
        DomainSequence::new(eval, seq.meta.clone())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_schedule_endpoints() {
        assert_eq!(rotation_degrees(0, 6, 120.0), 0.0);
        assert_eq!(rotation_degrees(5, 6, 120.0), 120.0);
        // domain 0 is the unrotated, centred cloud
        let seq = make_rotating_moons(3, 200, 120.0, 0.0, 4).unwrap();
        let d0 = &seq.domains[0];
        for i in 0..d0.n() {
            let p = d0.features.row(i);
            let (x, y) = (p[0] + 0.5, p[1] + 0.25);
            let r = if d0.labels[i] == 0 {
                x.hypot(y)
            } else {
                (x - 1.0).hypot(y - 0.5)
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
        // the last domain is the first rotated by exactly 120 degrees
        let last = &seq.domains[2];
        let p = last.features.row(0);
        let radius = p[0].hypot(p[1]);
        assert!(radius.is_finite());
    }

    #[test]
    fn moons_class_balance() {
        let seq = make_rotating_moons(3, 10_000, 120.0, 0.1, 1).unwrap();
        for d in &seq.domains {
            let frac = d.class_counts()[0] as f64 / d.n() as f64;
            assert!((frac - 0.5).abs() < 0.02, "{frac}");
        }
    }

    #[test]
    fn generator_errors() {
        assert!(make_rotating_moons(1, 10, 30.0, 0.1, 0).is_err());
        assert!(make_rotating_moons(3, 10, 30.0, -0.1, 0).is_err());
        let means = vec![vec![0.0], vec![1.0]];
        assert!(make_shifting_gaussians(3, 10, 0.3, &means, -1.0, None, 0).is_err());
        assert!(make_shifting_gaussians(3, 10, -0.3, &means, 1.0, None, 0).is_err());
    }

    #[test]
    fn shifting_gaussians_metadata() {
        let means = vec![vec![-1.0], vec![1.0]];
        let seq = make_shifting_gaussians(4, 50, 0.3, &means, 0.5, None, 2).unwrap();
        assert_eq!(seq.meta.delta_true, Some(0.3));
        assert_eq!(seq.len(), 4);
        assert_eq!(seq.k(), 2);
    }

    #[test]
    fn direction_cycle_keeps_step_length() {
        let means = vec![vec![0.0, 0.0], vec![3.0, 0.0]];
        let dirs = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, -1.0], vec![-1.0, 0.0]];
        let seq = make_shifting_gaussians(5, 10, 0.5, &means, 0.0, Some(&dirs), 2).unwrap();
        // sigma = 0: every row is its class mean
        let pos = |t: usize| seq.domains[t].features.row(seq.domains[t].class_indices(0)[0]).to_vec();
        for t in 1..5 {
            let (a, b) = (pos(t - 1), pos(t));
            assert!(((a[0] - b[0]).hypot(a[1] - b[1]) - 0.5).abs() < 1e-12);
        }
        assert!(pos(4).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rotating_gaussians_drift_is_chord_length() {
        let means = vec![vec![2.0, 0.0], vec![-1.0, 0.0]];
        let seq = make_rotating_gaussians(3, 10, 60.0, &means, 0.1, 1).unwrap();
        // 30 degree steps on radius 2: chord 2·2·sin(15°)
        let expect = 4.0 * 15f64.to_radians().sin();
        assert!((seq.meta.delta_true.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn parse_hand_written_csv() {
        let text = "t,y,x0,x1\n0,0,0.0,1.0\n0,1,1.0,0.0\n1,0,0.5,0.5\n";
        let seq = parse_sequence(text, None).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.d(), 2);
        assert_eq!(seq.k(), 2);
        assert_eq!(seq.domains[0].n(), 2);
        assert_eq!(seq.domains[1].n(), 1);
        assert_eq!(seq.domains[1].features.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn parse_rejects_label_at_k_and_ragged_rows() {
        let meta = SequenceMeta {
            generator: "file".into(),
            params: serde_json::Value::Null,
            delta_true: None,
            k: 2,
        };
        let text = "t,y,x0\n0,0,1.0\n0,2,1.0\n";
        match parse_sequence(text, Some(meta)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let ragged = "t,y,x0,x1\n0,0,1.0,2.0\n0,1,1.0\n";
        match parse_sequence(ragged, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_sequence("t,y,x0\n1,0,1.0\n", None).is_err());
        assert!(parse_sequence("t,y,x0\n0,0,1.0\n2,0,1.0\n", None).is_err());
        assert!(parse_sequence("t,y,x0\n0,0,nan\n", None).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moons.csv");
        let seq = make_rotating_moons(3, 40, 60.0, 0.2, 8).unwrap();
        save_sequence(&seq, &path).unwrap();
        let back = load_sequence(&path).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn holdout_split_contract() {
        let seq = make_rotating_moons(3, 100, 60.0, 0.1, 5).unwrap();
        let (tr, ev) = split_holdout(&seq, 0.5, 3).unwrap();
        for t in 0..3 {
            let (a, b) = (&tr.domains[t], &ev.domains[t]);
            assert_eq!(a.n(), 50);
            assert_eq!(b.n(), 50);
            let full = seq.domains[t].class_counts();
            for y in 0..2 {
                let half = full[y] as f64 / 2.0;
                assert!((b.class_counts()[y] as f64 - half).abs() <= 1.0);
            }
            // disjoint: no row appears in both halves
            for i in 0..a.n() {
                assert!((0..b.n()).all(|j| a.features.row(i) != b.features.row(j)));
            }
        }
        let again = split_holdout(&seq, 0.5, 3).unwrap();
        assert_eq!(again.0, tr);
        assert_eq!(again.1, ev);
    }

    #[test]
    fn holdout_rejects_singleton_class() {
        let text = "t,y,x0\n0,0,1.0\n0,0,2.0\n0,1,3.0\n1,0,1.0\n1,1,2.0\n1,1,2.5\n";
        let seq = parse_sequence(text, None).unwrap();
        assert!(split_holdout(&seq, 0.5, 1).is_err());
        assert!(split_holdout(&seq, 1.0, 1).is_err());
    }
}
