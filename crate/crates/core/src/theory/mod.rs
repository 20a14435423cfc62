//! Bound terms, discrepancy, the one-step drift check and exact sequential
//! Rademacher complexity on tiny instances.

mod bound;
mod disc;
mod lemma1;
mod seqrad;

pub use bound::{evaluate_bound, sweep_horizon, BoundComponents, BoundInputs, BoundReport, Rseq, SweepReport, SweepRow, MAX_HORIZON};
pub use disc::{estimate_discrepancy, DiscReport, Hypothesis, HypothesisPool, Provenance};
pub use lemma1::{check_lemma1, Lemma1Report, Lemma1Setup};
pub use seqrad::{fsum, seq_rademacher_exact, FiniteInstance, TREE_GUARD};
