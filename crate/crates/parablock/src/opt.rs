//! Block-restricted local optimizers: plain SGD and AdamW.
//!
//! Optimizer state is sized to the active block and lives for a single
//! round of local training. Nothing carries across rounds or blocks: every
//! round re-initializes local training, so clients stay stateless between
//! rounds. The leak test in the engine suite pins this down by checking
//! that two identical rounds from identical models produce identical
//! deltas.

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Plain SGD with local learning rate `eta_l`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub eta_l: f64,
}

impl SgdConfig {
    pub fn new(eta_l: f64) -> Result<Self> {
        if !(eta_l > 0.0) || !eta_l.is_finite() {
            return Err(Error::Input(format!(
                "local learning rate must be positive and finite, got {eta_l}"
            )));
        }
        Ok(Self { eta_l })
    }
}

/// AdamW with decoupled weight decay.
///
/// `eps_inside_sqrt` selects where epsilon regularizes the denominator:
/// `true` (the default) uses `m̂ / √(v̂ + ε)`, `false` uses `m̂ / (√v̂ + ε)`.
/// Both forms appear in practice; the flag keeps either exactly testable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub eta_l: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub bias_correction: bool,
    pub eps_inside_sqrt: bool,
}

impl AdamWConfig {
    /// Trainer-style defaults: β1=0.9, β2=0.999, ε=1e-6, no weight decay,
    /// bias correction on, epsilon inside the square root.
    pub fn new(eta_l: f64) -> Result<Self> {
        let cfg = Self {
            eta_l,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: 0.0,
            bias_correction: true,
            eps_inside_sqrt: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_l > 0.0) || !self.eta_l.is_finite() {
            return Err(Error::Input(format!(
                "local learning rate must be positive and finite, got {}",
                self.eta_l
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Input(format!("{name} must lie in [0,1), got {beta}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Input(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Input(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Which local optimizer a run uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LocalOptimizer {
    Sgd(SgdConfig),
    AdamW(AdamWConfig),
}

impl LocalOptimizer {
    pub fn eta_l(&self) -> f64 {
        match self {
            LocalOptimizer::Sgd(c) => c.eta_l,
            LocalOptimizer::AdamW(c) => c.eta_l,
        }
    }
}

// ---------------------------------------------------------------------------
// State and steps
// ---------------------------------------------------------------------------

/// AdamW moment state for the active block. Fresh at every round.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: usize,
}

impl OptimizerState {
    /// Zero state sized to a block of dimension `d_b`.
    pub fn fresh(d_b: usize) -> Self {
        Self {
            m: vec![0.0; d_b],
            v: vec![0.0; d_b],
            step_count: 0,
        }
    }

    #[inline]
    pub fn step_count(&self) -> usize {
        self.step_count
    }
}

fn check_finite_grad(g: &[f64]) -> Result<()> {
    if let Some(j) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient coordinate {j} is {}",
            g[j]
        )));
    }
    Ok(())
}

/// One SGD step over a block: `θ ← θ − η_l · g`, no other state.
pub fn sgd_step(theta: &mut [f64], g: &[f64], cfg: &SgdConfig) -> Result<()> {
    if theta.len() != g.len() {
        return Err(Error::Shape(format!(
            "sgd step over block of dimension {} with gradient of dimension {}",
            theta.len(),
            g.len()
        )));
    }
    check_finite_grad(g)?;
    for (x, gi) in theta.iter_mut().zip(g) {
        *x -= cfg.eta_l * gi;
    }
    Ok(())
}

/// One AdamW step over a block.
///
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`; with bias correction
/// `m̂ = m/(1−β1^k)`, `v̂ = v/(1−β2^k)` at step count `k`; then
/// `θ ← θ − η_l · (m̂/denom + wd·θ)` with `denom` chosen by
/// `eps_inside_sqrt` (see [`AdamWConfig`]).
pub fn adamw_step(
    theta: &mut [f64],
    g: &[f64],
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if theta.len() != g.len() || state.m.len() != g.len() {
        return Err(Error::Shape(format!(
            "adamw step over block of dimension {} with gradient of dimension {} and state of dimension {}",
            theta.len(),
            g.len(),
            state.m.len()
        )));
    }
    check_finite_grad(g)?;
    state.step_count += 1;
    let k = state.step_count as i32;
    let (c1, c2) = if cfg.bias_correction {
        (1.0 - cfg.beta1.powi(k), 1.0 - cfg.beta2.powi(k))
    } else {
        (1.0, 1.0)
    };
    for j in 0..g.len() {
        state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g[j];
        state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
        let m_hat = state.m[j] / c1;
        let v_hat = state.v[j] / c2;
        let denom = if cfg.eps_inside_sqrt {
            (v_hat + cfg.epsilon).sqrt()
        } else {
            v_hat.sqrt() + cfg.epsilon
        };
        theta[j] -= cfg.eta_l * (m_hat / denom + cfg.weight_decay * theta[j]);
    }
    Ok(())
}
