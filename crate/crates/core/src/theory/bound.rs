use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Sequential Rademacher input: a fixed value or the rule `c / √(n(T−1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rseq {
    Value(f64),
    Rule { c: f64 },
}

impl Default for Rseq {
    fn default() -> Self {
        Rseq::Rule { c: 1.0 }
    }
}

impl Rseq {
    pub fn resolve(self, t: usize, n: usize) -> f64 {
        match self {
            Rseq::Value(v) => v,
            Rseq::Rule { c } => c / ((n * (t - 1)) as f64).sqrt(),
        }
    }
}

/// Inputs of the excess-loss bound. `drift` is Δ and `delta` the confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub rho: f64,
    #[serde(rename = "Delta")]
    pub drift: f64,
    pub delta: f64,
    pub vc: f64,
    pub rseq: Rseq,
    pub c_online: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return invalid(format!("T must be >= 2, got {}", self.t));
        }
        if self.n == 0 {
            return invalid("n must be >= 1");
        }
        let positive = [("M", self.m), ("rho", self.rho), ("vc", self.vc), ("c_online", self.c_online)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.drift >= 0.0) || !self.drift.is_finite() {
            return invalid(format!("Delta must be >= 0 and finite, got {}", self.drift));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        match self.rseq {
            Rseq::Value(v) if !(v >= 0.0) || !v.is_finite() => invalid(format!("rseq must be >= 0, got {v}")),
            Rseq::Rule { c } if !(c > 0.0) || !c.is_finite() => invalid(format!("rseq rule constant must be > 0, got {c}")),
            _ => Ok(()),
        }
    }
}

/// Every addend separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundComponents {
    pub horizon: f64,
    pub concentration: f64,
    pub vc: f64,
    pub online: f64,
    pub rademacher: f64,
    pub drift: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub total: f64,
    pub rseq: f64,
    pub components: BoundComponents,
}

/// Excess loss on the last domain over the best fixed classifier in hindsight:
///
/// `e1 = 3/T + (3M/T)√(8 ln(1/δ))`,
/// `e2 = (1/T)√((vc + ln(2/δ))/(2n)) + c_online/√(nT)`,
/// `e3 = 18M√(4π ln T)·rseq + 3TρΔ`.
pub fn evaluate_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let t = inp.t as f64;
    let n = inp.n as f64;
    let rseq = inp.rseq.resolve(inp.t, inp.n);
    let c = BoundComponents {
        horizon: 3.0 / t,
        concentration: 3.0 * inp.m / t * (8.0 * (1.0 / inp.delta).ln()).sqrt(),
        vc: ((inp.vc + (2.0 / inp.delta).ln()) / (2.0 * n)).sqrt() / t,
        online: inp.c_online / (n * t).sqrt(),
        rademacher: 18.0 * inp.m * (4.0 * std::f64::consts::PI * t.ln()).sqrt() * rseq,
        drift: 3.0 * t * inp.rho * inp.drift,
    };
    let (e1, e2, e3) = (c.horizon + c.concentration, c.vc + c.online, c.rademacher + c.drift);
    Ok(BoundReport {
        e1,
        e2,
        e3,
        total: e1 + e2 + e3,
        rseq,
        components: c,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    /// The `3TρΔ` addend of `e3`.
    pub drift: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub argmin_t: usize,
    pub min_total: f64,
}

pub const MAX_HORIZON: usize = 1_000_000;

/// Evaluates the bound for every `T` in `lo..=hi` (the rseq rule is
/// re-resolved per `T`); ties go to the smaller `T`.
pub fn sweep_horizon(template: &BoundInputs, lo: usize, hi: usize) -> Result<SweepReport> {
    if lo > hi {
        return invalid(format!("empty horizon range {lo}..={hi}"));
    }
    if lo < 2 || hi > MAX_HORIZON {
        return invalid(format!("horizon range must lie within [2, {MAX_HORIZON}], got {lo}..={hi}"));
    }
    let mut rows = Vec::with_capacity(hi - lo + 1);
    let mut best: Option<SweepRow> = None;
    for t in lo..=hi {
        let r = evaluate_bound(&BoundInputs { t, ..*template })?;
        let row = SweepRow {
            t,
            e1: r.e1,
            e2: r.e2,
            e3: r.e3,
            drift: r.components.drift,
            total: r.total,
        };
        if best.is_none_or(|b| row.total < b.total) {
            best = Some(row);
        }
        rows.push(row);
    }
    let best = best.expect("non-empty range");
    Ok(SweepReport {
        rows,
        argmin_t: best.t,
        min_total: best.total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BoundInputs {
        BoundInputs {
            t: 10,
            n: 100,
            m: 1.0,
            rho: 1.0,
            drift: 0.01,
            delta: 0.1,
            vc: 10.0,
            rseq: Rseq::default(),
            c_online: 1.0,
        }
    }

    #[test]
    fn e1_closed_form() {
        let r = evaluate_bound(&base()).unwrap();
        assert!((r.e1 - 1.5876).abs() < 1e-4, "{}", r.e1);
        assert!((r.components.drift - 0.3).abs() < 1e-15);
        assert!((r.total - (r.e1 + r.e2 + r.e3)).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_addend() {
        let r = evaluate_bound(&BoundInputs { drift: 0.0, rho: 7.0, ..base() }).unwrap();
        assert_eq!(r.components.drift, 0.0);
    }

    #[test]
    fn invalid_inputs() {
        for bad in [
            BoundInputs { t: 1, ..base() },
            BoundInputs { delta: 1.0, ..base() },
            BoundInputs { m: 0.0, ..base() },
            BoundInputs { drift: -0.1, ..base() },
            BoundInputs { n: 0, ..base() },
        ] {
            assert!(evaluate_bound(&bad).is_err(), "{bad:?}");
        }
        assert!(sweep_horizon(&base(), 5, 4).is_err());
        assert!(sweep_horizon(&base(), 1, 4).is_err());
    }

    #[test]
    fn zero_drift_sweep_picks_the_largest_horizon() {
        let s = sweep_horizon(&BoundInputs { drift: 0.0, ..base() }, 2, 300).unwrap();
        assert_eq!(s.argmin_t, 300);
        assert!(s.rows.windows(2).all(|w| w[1].total <= w[0].total));
    }

    #[test]
    fn large_drift_sweep_picks_two() {
        let e1_at_2 = evaluate_bound(&BoundInputs { t: 2, ..base() }).unwrap().e1;
        let drift = e1_at_2 / 6.0 * 1.01;
        let s = sweep_horizon(&BoundInputs { drift, ..base() }, 2, 50).unwrap();
        assert_eq!(s.argmin_t, 2);
    }

    #[test]
    fn moderate_drift_has_an_interior_optimum() {
        let s = sweep_horizon(&base(), 2, 200).unwrap();
        assert!(s.argmin_t > 2 && s.argmin_t < 200, "{}", s.argmin_t);
        assert!(s.rows.windows(2).all(|w| w[1].drift > w[0].drift && w[1].e1 < w[0].e1));
    }
}
