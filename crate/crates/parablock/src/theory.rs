//! Convergence-bound evaluation and learning-rate feasibility.
//!
//! The analyzed guarantee bounds the run-average squared block gradient
//! norm, `(1/T) Σ_t E‖∇_{b_t} f(θ_t)‖²`, by a closed-form expression in
//! the learning rates, round/step/client counts, smoothness constant `L`,
//! local gradient-noise variance `σ²`, cross-client heterogeneity `σ_g²`,
//! and the initial suboptimality `F = f(θ_0) − f_*`. It holds whenever
//! `η_l ≤ 1/(22KL)` and `η·η_l ≤ 1/(4KL)` (both inclusive).
//!
//! The average is taken over all executed rounds, matching the engine's
//! zero-based round loop; the engine logs `‖∇_{b_t} f(θ_t)‖²` exactly
//! (noise-free, full batch) at the post-aggregate server model each round,
//! so a trace can be compared against the bound directly.

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Learning-rate gate
// ---------------------------------------------------------------------------

/// Outcome of the two learning-rate conditions. Both are inclusive; with
/// `K·L = 0` the thresholds are infinite and anything passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LrFeasibility {
    /// `η_l ≤ 1/(22KL)`
    pub local_ok: bool,
    /// `η·η_l ≤ 1/(4KL)`
    pub product_ok: bool,
}

impl LrFeasibility {
    pub fn is_ok(self) -> bool {
        self.local_ok && self.product_ok
    }

    /// Human-readable list of violated conditions, empty when feasible.
    pub fn violations(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.local_ok {
            v.push("eta_l <= 1/(22*K*L)");
        }
        if !self.product_ok {
            v.push("eta*eta_l <= 1/(4*K*L)");
        }
        v
    }
}

/// Check the two rate conditions for local steps `k` and smoothness `l`.
pub fn lr_feasible(eta: f64, eta_l: f64, k: usize, l: f64) -> LrFeasibility {
    let kl = k as f64 * l;
    LrFeasibility {
        local_ok: eta_l <= 1.0 / (22.0 * kl),
        product_ok: eta * eta_l <= 1.0 / (4.0 * kl),
    }
}

// ---------------------------------------------------------------------------
// The bound
// ---------------------------------------------------------------------------

/// Everything the bound depends on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub eta: f64,
    pub eta_l: f64,
    /// Global rounds `T`.
    pub rounds: usize,
    /// Local steps `K`.
    pub local_steps: usize,
    /// Clients `N`.
    pub clients: usize,
    /// Smoothness constant `L`.
    pub smoothness: f64,
    /// Local gradient-noise standard deviation `σ`.
    pub sigma: f64,
    /// Heterogeneity standard deviation `σ_g`.
    pub sigma_g: f64,
    /// Initial suboptimality `F = f(θ_0) − f_*`.
    pub initial_gap: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_steps == 0 || self.clients == 0 {
            return Err(Error::Input(format!(
                "rounds, local steps and clients must be positive (got {}, {}, {})",
                self.rounds, self.local_steps, self.clients
            )));
        }
        if !(self.eta > 0.0) || !(self.eta_l > 0.0) {
            return Err(Error::Input(format!(
                "learning rates must be positive (eta {}, eta_l {})",
                self.eta, self.eta_l
            )));
        }
        if self.smoothness < 0.0 || self.sigma < 0.0 || self.sigma_g < 0.0 || self.initial_gap < 0.0
        {
            return Err(Error::Input(
                "smoothness, noise scales and initial gap must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn feasibility(&self) -> LrFeasibility {
        lr_feasible(self.eta, self.eta_l, self.local_steps, self.smoothness)
    }
}

/// The four terms of the guarantee, separately, for reporting:
///
/// 1. `8F / (η η_l T K)`
/// 2. `40 η_l² L² K (σ² + 6K σ_g²)`
/// 3. `(8 η² η_l L² K + ηL/2) · (η_l/N) · σ²`
/// 4. `64 η² η_l² L² K · [σ² + 10 η_l² L² K (σ² + K σ_g²)]`
pub fn bound_terms(inp: &BoundInputs) -> Result<[f64; 4]> {
    inp.validate()?;
    let t = inp.rounds as f64;
    let k = inp.local_steps as f64;
    let n = inp.clients as f64;
    let l = inp.smoothness;
    let (eta, eta_l) = (inp.eta, inp.eta_l);
    let s2 = inp.sigma * inp.sigma;
    let sg2 = inp.sigma_g * inp.sigma_g;
    let t1 = 8.0 * inp.initial_gap / (eta * eta_l * t * k);
    let t2 = 40.0 * eta_l * eta_l * l * l * k * (s2 + 6.0 * k * sg2);
    let t3 = (8.0 * eta * eta * eta_l * l * l * k + eta * l / 2.0) * (eta_l / n) * s2;
    let t4 = 64.0 * eta * eta * eta_l * eta_l * l * l * k
        * (s2 + 10.0 * eta_l * eta_l * l * l * k * (s2 + k * sg2));
    Ok([t1, t2, t3, t4])
}

/// Right-hand side of the guarantee: the sum of [`bound_terms`].
///
/// Evaluates regardless of feasibility; callers that care should check
/// [`BoundInputs::feasibility`] and warn.
pub fn bound_rhs(inp: &BoundInputs) -> Result<f64> {
    Ok(bound_terms(inp)?.iter().sum())
}

// ---------------------------------------------------------------------------
// Rate schedule
// ---------------------------------------------------------------------------

/// The `η = c·√(KN)`, `η_l = c_l/(√T·K)` schedule behind the
/// `O(1/√(TKN))` rate, with `c_l` halved until the rate gate passes.
///
/// Returns `(eta, eta_l)`. Errors if 60 halvings cannot reach feasibility.
pub fn rate_schedule(
    rounds: usize,
    local_steps: usize,
    clients: usize,
    c_eta: f64,
    c_etal: f64,
    smoothness: f64,
) -> Result<(f64, f64)> {
    if rounds == 0 || local_steps == 0 || clients == 0 {
        return Err(Error::Input(format!(
            "rounds, local steps and clients must be positive (got {rounds}, {local_steps}, {clients})"
        )));
    }
    if !(c_eta > 0.0) || !(c_etal > 0.0) {
        return Err(Error::Input(format!(
            "schedule constants must be positive (got {c_eta}, {c_etal})"
        )));
    }
    let eta = c_eta * ((local_steps * clients) as f64).sqrt();
    let mut c = c_etal;
    for _ in 0..=60 {
        let eta_l = c / ((rounds as f64).sqrt() * local_steps as f64);
        if lr_feasible(eta, eta_l, local_steps, smoothness).is_ok() {
            return Ok((eta, eta_l));
        }
        c /= 2.0;
    }
    Err(Error::RateSchedule(format!(
        "no feasible local rate after 60 halvings (eta {eta}, K {local_steps}, L {smoothness})"
    )))
}

// ---------------------------------------------------------------------------
// Trace comparison
// ---------------------------------------------------------------------------

/// Measured average against the bound. `ratio ≤ 1` means the run sits
/// inside the guarantee; for noisy single runs this is a diagnostic, not a
/// hard test, since the guarantee bounds an expectation.
#[derive(Clone, Copy, Debug)]
pub struct BoundReport {
    pub measured_avg: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub feasibility: LrFeasibility,
    pub rounds: usize,
}

/// Compare a run's logged `‖∇_{b_t} f(θ_t)‖²` channel with the bound.
pub fn trace_vs_bound(block_grad_norm_sq: &[f64], inp: &BoundInputs) -> Result<BoundReport> {
    if block_grad_norm_sq.is_empty() {
        return Err(Error::Trace(
            "trace carries no block gradient norm channel".into(),
        ));
    }
    if block_grad_norm_sq.iter().any(|x| !x.is_finite()) {
        return Err(Error::Trace(
            "block gradient norm channel contains non-finite values".into(),
        ));
    }
    let measured_avg =
        block_grad_norm_sq.iter().sum::<f64>() / block_grad_norm_sq.len() as f64;
    let rhs = bound_rhs(inp)?;
    Ok(BoundReport {
        measured_avg,
        rhs,
        ratio: measured_avg / rhs,
        feasibility: inp.feasibility(),
        rounds: block_grad_norm_sq.len(),
    })
}
