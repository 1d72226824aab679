//! Deterministic laboratory for federated block coordinate descent with
//! communication-computation overlap.
//!
//! The crate simulates three federated optimizers over synthetic objectives:
//!
//! * `parablock` — clients train one block per round while the previous
//!   round's block deltas are exchanged in parallel; a local correction
//!   replaces each client's stale local update with the server aggregate.
//! * `fedbcd` — synchronous block coordinate descent over FedAvg-style
//!   rounds (compute, then communicate).
//! * `fedcybgd` — cyclic single-client block descent with a model broadcast
//!   after every round.
//!
//! Everything is exactly reproducible: all randomness derives from one
//! master seed ([`rng`]), clients are evaluated serially in ascending id
//! order, and wall-clock time is simulated by [`netsim`] rather than
//! measured, so numerical results never depend on the host.
//!
//! Module map:
//!
//! * [`param`] — flat parameter vectors and disjoint block partitions.
//! * [`objective`] — synthetic objectives (quadratic, logistic, small MLP)
//!   with analytic gradients, Dirichlet data partitioning, and estimators
//!   for the smoothness and heterogeneity constants.
//! * [`opt`] — block-restricted local optimizers (SGD, AdamW).
//! * [`engine`] — the federated round loops, schedulers, and the
//!   consistency-invariant battery.
//! * [`compress`] — top-k sparsification of uploaded deltas.
//! * [`netsim`] — discrete-time accounting of compute/communication overlap.
//! * [`theory`] — convergence-bound evaluation and learning-rate gates.
//! * [`trace`] — per-round metric records and their CSV serialization.

pub mod compress;
pub mod engine;
pub mod netsim;
pub mod objective;
pub mod opt;
pub mod param;
pub mod rng;
pub mod theory;
pub mod trace;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// configuration problems exit 2, numeric faults exit 3, invariant
/// violations exit 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Block partition is malformed or a block id is out of range.
    #[error("partition error: {0}")]
    Partition(String),
    /// Vector dimensions do not agree.
    #[error("shape error: {0}")]
    Shape(String),
    /// Empty or otherwise unusable minibatch.
    #[error("batch error: {0}")]
    Batch(String),
    /// Empty client cohort where at least one participant is required.
    #[error("cohort error: {0}")]
    Cohort(String),
    /// Block scheduler cannot produce a block id.
    #[error("scheduler error: {0}")]
    Scheduler(String),
    /// Learning-rate schedule could not be made feasible.
    #[error("rate schedule error: {0}")]
    RateSchedule(String),
    /// Invalid scalar inputs (non-positive counts, negative variances, ...).
    #[error("input error: {0}")]
    Input(String),
    /// A trace is missing a channel or is structurally inconsistent.
    #[error("trace error: {0}")]
    Trace(String),
    /// A value became NaN/Inf outside an engine round (no round context).
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// A value became NaN/Inf during a federated run.
    #[error("numeric error at round {round}, client {client}, local step {step}: {what}")]
    Numeric {
        round: usize,
        client: usize,
        step: usize,
        what: String,
    },
    /// A protocol invariant (consistency, replay, aggregation) failed.
    #[error("invariant violation: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
