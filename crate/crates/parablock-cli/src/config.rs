//! TOML experiment configuration.
//!
//! One file describes everything a run needs: the federated loop, the
//! objective family and its heterogeneity knobs, the local optimizer,
//! scheduling, participation, compression, the network model, bound
//! evaluation inputs, and optional sweep lists. Unknown keys anywhere
//! are rejected so a typo cannot silently change an experiment.

use serde::Deserialize;

use parablock::compress::TopKConfig;
use parablock::engine::{DebugHooks, FedConfig, Participation, SchedulerKind};
use parablock::netsim::{ComputeSpec, LinkSpec};
use parablock::objective::{dirichlet_partition, Objective, SyntheticDataset};
use parablock::opt::{AdamWConfig, LocalOptimizer, SgdConfig};
use parablock::param::BlockPartition;
use parablock::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::CliError;

fn default_seed() -> u64 {
    42
}
fn default_init_scale() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_center_spread() -> f64 {
    1.0
}
fn default_curvature_low() -> f64 {
    0.5
}
fn default_curvature_high() -> f64 {
    1.5
}
fn default_samples() -> usize {
    256
}
fn default_features() -> usize {
    8
}
fn default_classes() -> usize {
    2
}
fn default_class_spread() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.5
}
fn default_hidden() -> usize {
    8
}
fn default_up_bw() -> f64 {
    1.0e6
}
fn default_down_bw() -> f64 {
    4.0e6
}
fn default_latency() -> f64 {
    0.01
}
fn default_step_cost() -> f64 {
    0.002
}
fn default_c() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub participation: Option<ParticipationSection>,
    #[serde(default)]
    pub compression: Option<CompressionSection>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub debug: DebugSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub rounds: usize,
    pub local_steps: usize,
    pub server_lr: f64,
    pub staleness: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub grad_noise: f64,
    #[serde(default = "default_true")]
    pub verify: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Full parameter dimension. Required for quadratics; derived (and
    /// cross-checked when given) for logistic and mlp objectives.
    #[serde(default)]
    pub dimension: Option<usize>,
    /// Exactly one of the next three fields picks the block layout.
    #[serde(default)]
    pub blocks: Option<usize>,
    #[serde(default)]
    pub layer_dims: Option<Vec<usize>>,
    #[serde(default)]
    pub ranges: Option<Vec<[usize; 2]>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// `quadratic`, `logistic`, or `mlp`.
    pub family: String,
    pub clients: usize,
    /// Quadratic heterogeneity: client centers are drawn from
    /// `N(0, center_spread² · I)`; spread 0 makes clients identical.
    #[serde(default = "default_center_spread")]
    pub center_spread: f64,
    #[serde(default = "default_curvature_low")]
    pub curvature_low: f64,
    #[serde(default = "default_curvature_high")]
    pub curvature_high: f64,
    /// Give every client the same curvature diagonal (client 0's draw).
    #[serde(default)]
    pub shared_curvature: bool,
    /// Dataset shape for logistic and mlp families.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_class_spread")]
    pub class_spread: f64,
    #[serde(default = "default_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    /// `sgd` or `adamw`.
    pub kind: String,
    pub eta_l: f64,
    #[serde(default)]
    pub beta1: Option<f64>,
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub weight_decay: Option<f64>,
    #[serde(default)]
    pub bias_correction: Option<bool>,
    #[serde(default)]
    pub eps_inside_sqrt: Option<bool>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    /// `sequential`, `reverse`, `random`, or `gradient_guided`.
    #[serde(default = "default_scheduler_kind")]
    pub kind: String,
    #[serde(default)]
    pub refresh_every: Option<usize>,
}

fn default_scheduler_kind() -> String {
    "sequential".into()
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            kind: default_scheduler_kind(),
            refresh_every: None,
        }
    }
}

/// Presence of this section switches on cohort sampling.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipationSection {
    pub cohort: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSection {
    pub ratio: f64,
    #[serde(default)]
    pub index_bits: Option<u32>,
    #[serde(default)]
    pub value_bits: Option<u32>,
    /// Also compress the broadcast aggregate.
    #[serde(default)]
    pub downlink: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_up_bw")]
    pub up_bandwidth: f64,
    #[serde(default = "default_down_bw")]
    pub down_bandwidth: f64,
    #[serde(default = "default_latency")]
    pub latency: f64,
    #[serde(default = "default_step_cost")]
    pub sec_per_local_step: f64,
    /// Cyclic baseline broadcasts the full model each round.
    #[serde(default = "default_true")]
    pub full_broadcast: bool,
    /// Batch size at which `sec_per_local_step` was measured; per-step
    /// cost scales linearly with `batch_size / batch_reference`.
    #[serde(default)]
    pub batch_reference: Option<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            up_bandwidth: default_up_bw(),
            down_bandwidth: default_down_bw(),
            latency: default_latency(),
            sec_per_local_step: default_step_cost(),
            full_broadcast: true,
            batch_reference: None,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    /// Overrides for the bound inputs; defaults are derived from the
    /// generated objectives (see the `bound` subcommand docs).
    #[serde(default)]
    pub smoothness: Option<f64>,
    #[serde(default)]
    pub sigma_g: Option<f64>,
    #[serde(default)]
    pub initial_gap: Option<f64>,
    /// With `use_schedule`, the run's learning rates come from the
    /// horizon-aware schedule `η = c_eta·√(KN)`, `η_l = c_etal/(√T·K)`
    /// (halved until feasible) instead of the configured values.
    #[serde(default)]
    pub use_schedule: bool,
    #[serde(default = "default_c")]
    pub c_eta: f64,
    #[serde(default = "default_c")]
    pub c_etal: f64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Symmetric link bandwidths (bytes/s) for `compare`; each value
    /// replaces both directions of every client link.
    #[serde(default)]
    pub bandwidths: Vec<f64>,
    /// Batch sizes for `compare`; each value replaces `run.batch_size`.
    #[serde(default)]
    pub batch_sizes: Vec<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugSection {
    /// Perturb client 0's correction at this round; the invariant
    /// battery must catch it (used by `check`).
    #[serde(default)]
    pub corrupt_correction_round: Option<usize>,
}

/// Everything built from a config: the engine inputs plus the network
/// model the timing simulation needs.
pub struct Experiment {
    pub fed: FedConfig,
    pub objectives: Vec<Objective>,
    pub links: Vec<LinkSpec>,
    pub compute: Vec<ComputeSpec>,
    pub batch_scale: f64,
    pub full_broadcast: bool,
}

pub fn load(path: &std::path::Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl FileConfig {
    /// Block partition from the model section; exactly one layout field
    /// must be present.
    pub fn partition(&self, dim: usize) -> Result<BlockPartition, CliError> {
        let m = &self.model;
        let chosen =
            m.blocks.is_some() as u8 + m.layer_dims.is_some() as u8 + m.ranges.is_some() as u8;
        if chosen != 1 {
            return Err(CliError::Config(
                "model must set exactly one of `blocks`, `layer_dims`, `ranges`".into(),
            ));
        }
        let p = if let Some(b) = m.blocks {
            BlockPartition::equal(dim, b)
        } else if let Some(dims) = &m.layer_dims {
            BlockPartition::by_layer(dims)
        } else {
            let ranges: Vec<(usize, usize)> = m
                .ranges
                .as_ref()
                .unwrap()
                .iter()
                .map(|r| (r[0], r[1]))
                .collect();
            BlockPartition::explicit(dim, &ranges)
        }?;
        if p.dim() != dim {
            return Err(CliError::Config(format!(
                "block layout covers {} coordinates but the model has {dim}",
                p.dim()
            )));
        }
        Ok(p)
    }

    /// Parameter dimension: derived for dataset families, explicit for
    /// quadratics.
    pub fn dimension(&self) -> Result<usize, CliError> {
        let o = &self.objective;
        let derived = match o.family.as_str() {
            "quadratic" => {
                return self.model.dimension.ok_or_else(|| {
                    CliError::Config("quadratic objectives need `model.dimension`".into())
                })
            }
            "logistic" => o.features,
            "mlp" => {
                o.hidden * o.features + o.hidden + o.classes * o.hidden + o.classes
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown objective family `{other}` (expected quadratic, logistic, mlp)"
                )))
            }
        };
        if let Some(given) = self.model.dimension {
            if given != derived {
                return Err(CliError::Config(format!(
                    "model.dimension is {given} but the {} objective has {derived} parameters",
                    o.family
                )));
            }
        }
        Ok(derived)
    }

    fn scheduler_kind(&self) -> Result<SchedulerKind, CliError> {
        match self.scheduler.kind.as_str() {
            "sequential" => Ok(SchedulerKind::Sequential),
            "reverse" => Ok(SchedulerKind::Reverse),
            "random" => Ok(SchedulerKind::Random),
            "gradient_guided" => Ok(SchedulerKind::GradientGuided {
                refresh_every: self.scheduler.refresh_every.unwrap_or(0).max(1),
            }),
            other => Err(CliError::Config(format!(
                "unknown scheduler `{other}` (expected sequential, reverse, random, gradient_guided)"
            ))),
        }
    }

    fn optimizer(&self) -> Result<LocalOptimizer, CliError> {
        let o = &self.optimizer;
        match o.kind.as_str() {
            "sgd" => {
                for (name, set) in [
                    ("beta1", o.beta1.is_some()),
                    ("beta2", o.beta2.is_some()),
                    ("epsilon", o.epsilon.is_some()),
                    ("weight_decay", o.weight_decay.is_some()),
                    ("bias_correction", o.bias_correction.is_some()),
                    ("eps_inside_sqrt", o.eps_inside_sqrt.is_some()),
                ] {
                    if set {
                        return Err(CliError::Config(format!(
                            "optimizer.{name} only applies to kind = \"adamw\""
                        )));
                    }
                }
                Ok(LocalOptimizer::Sgd(SgdConfig::new(o.eta_l)?))
            }
            "adamw" => {
                let mut cfg = AdamWConfig::new(o.eta_l)?;
                if let Some(v) = o.beta1 {
                    cfg.beta1 = v;
                }
                if let Some(v) = o.beta2 {
                    cfg.beta2 = v;
                }
                if let Some(v) = o.epsilon {
                    cfg.epsilon = v;
                }
                if let Some(v) = o.weight_decay {
                    cfg.weight_decay = v;
                }
                if let Some(v) = o.bias_correction {
                    cfg.bias_correction = v;
                }
                if let Some(v) = o.eps_inside_sqrt {
                    cfg.eps_inside_sqrt = v;
                }
                cfg.validate()?;
                Ok(LocalOptimizer::AdamW(cfg))
            }
            other => Err(CliError::Config(format!(
                "unknown optimizer `{other}` (expected sgd, adamw)"
            ))),
        }
    }

    /// Synthesize the per-client objectives. All randomness comes from
    /// the master seed through the documented stream tags, so a config
    /// identifies its data exactly.
    pub fn objectives(&self) -> Result<Vec<Objective>, CliError> {
        let o = &self.objective;
        if o.clients == 0 {
            return Err(CliError::Config("objective.clients must be at least 1".into()));
        }
        let seed = self.run.master_seed;
        match o.family.as_str() {
            "quadratic" => {
                let d = self.dimension()?;
                if !(o.curvature_low >= 0.0 && o.curvature_high >= o.curvature_low) {
                    return Err(CliError::Config(format!(
                        "curvature range [{}, {}] must be nonnegative and ordered",
                        o.curvature_low, o.curvature_high
                    )));
                }
                let shared: Option<Vec<f64>> = o.shared_curvature.then(|| {
                    let mut rng = stream(seed, 0, 0, "curvature");
                    (0..d)
                        .map(|_| rng.random_range(o.curvature_low..=o.curvature_high))
                        .collect()
                });
                (0..o.clients)
                    .map(|i| {
                        let mut c_rng = stream(seed, i as u64, 0, "center");
                        let center: Vec<f64> = (0..d)
                            .map(|_| o.center_spread * c_rng.sample::<f64, _>(StandardNormal))
                            .collect();
                        let curvature = match &shared {
                            Some(a) => a.clone(),
                            None => {
                                let mut a_rng = stream(seed, i as u64, 0, "curvature");
                                (0..d)
                                    .map(|_| {
                                        a_rng.random_range(o.curvature_low..=o.curvature_high)
                                    })
                                    .collect()
                            }
                        };
                        Ok(Objective::quadratic(i, center, curvature)?)
                    })
                    .collect()
            }
            "logistic" | "mlp" => {
                if o.family == "logistic" && o.classes != 2 {
                    return Err(CliError::Config(format!(
                        "logistic objectives are binary; got classes = {}",
                        o.classes
                    )));
                }
                let mut data_rng = stream(seed, 0, 0, "dataset");
                let data = SyntheticDataset::generate(
                    o.samples,
                    o.features,
                    o.classes,
                    o.class_spread,
                    &mut data_rng,
                )?;
                let mut part_rng = stream(seed, 0, 0, "dirichlet");
                let part = dirichlet_partition(&data, o.dirichlet_alpha, o.clients, &mut part_rng)?;
                (0..o.clients)
                    .map(|i| {
                        let shard = data.subset(&part.client_rows(i))?;
                        let obj = if o.family == "logistic" {
                            Objective::logistic(i, shard)?
                        } else {
                            Objective::mlp(i, shard, o.hidden)?
                        };
                        Ok(obj)
                    })
                    .collect()
            }
            other => Err(CliError::Config(format!(
                "unknown objective family `{other}`"
            ))),
        }
    }

    /// Assemble the full experiment (engine config, objectives, network).
    pub fn build(&self) -> Result<Experiment, CliError> {
        let dim = self.dimension()?;
        let partition = self.partition(dim)?;
        let objectives = self.objectives()?;
        let participation = match &self.participation {
            Some(p) => Participation::Sample { m: p.cohort },
            None => Participation::Full,
        };
        let compression = match &self.compression {
            Some(c) => {
                let mut cfg = TopKConfig::new(c.ratio)?;
                if let Some(b) = c.index_bits {
                    cfg.index_bits = b;
                }
                if let Some(b) = c.value_bits {
                    cfg.value_bits = b;
                }
                cfg.validate()?;
                Some(cfg)
            }
            None => None,
        };
        let fed = FedConfig {
            clients: self.objective.clients,
            rounds: self.run.rounds,
            local_steps: self.run.local_steps,
            server_lr: self.run.server_lr,
            staleness: self.run.staleness,
            partition,
            scheduler: self.scheduler_kind()?,
            optimizer: self.optimizer()?,
            participation,
            batch_size: self.run.batch_size,
            grad_noise: self.run.grad_noise,
            compression,
            compress_downlink: self.compression.as_ref().map_or(false, |c| c.downlink),
            master_seed: self.run.master_seed,
            init_scale: self.run.init_scale,
            verify: self.run.verify,
            debug: DebugHooks {
                corrupt_correction_round: self.debug.corrupt_correction_round,
            },
        };
        fed.validate()?;
        let n = self.objective.clients;
        let net = &self.network;
        let links = vec![
            LinkSpec {
                up_bw: net.up_bandwidth,
                down_bw: net.down_bandwidth,
                latency: net.latency,
            };
            n
        ];
        let compute = vec![
            ComputeSpec {
                sec_per_local_step: net.sec_per_local_step,
            };
            n
        ];
        let batch_scale = match (self.run.batch_size, net.batch_reference) {
            (Some(b), Some(r)) if r > 0 => b as f64 / r as f64,
            _ => 1.0,
        };
        Ok(Experiment {
            fed,
            objectives,
            links,
            compute,
            batch_scale,
            full_broadcast: net.full_broadcast,
        })
    }
}
