//! Federated block-descent engine.
//!
//! One implementation covers four training procedures over a shared
//! round vocabulary (block schedule, local training, aggregation):
//!
//! * [`parablock_run`] — communication overlaps computation: the
//!   aggregate of round `t` reaches the server model at round `t+S`
//!   (staleness `S ≥ 1`), clients keep training on their own models and
//!   repair the drift with a correction step once each aggregate lands.
//!   `S = 0` degenerates to synchronous operation with the same
//!   client-side bookkeeping.
//! * [`fedbcd_run`] — the synchronous baseline: clients pull the server
//!   model every round, train the scheduled block, and the mean update
//!   is applied before the next round starts.
//! * [`fedcybgd_run`] — the cyclic baseline: round `t` elects the single
//!   client `t mod N`, which trains the scheduled block on the current
//!   global model; its update is applied directly.
//! * [`sequential_bcd_run`] — single-node block coordinate descent on a
//!   prescribed block schedule, mirroring the server-side arithmetic of
//!   the federated loop operation for operation. With one client the
//!   federated run must reproduce it bit for bit.
//!
//! Every run with `verify` enabled re-checks three invariants after each
//! round and fails with [`Error::Invariant`] on the first violation:
//! the client/server consistency identity (each client model equals the
//! server model plus its own not-yet-downlinked updates), bit-exact
//! replay of the server model from the applied-aggregate log, and
//! bit-exact re-summation of the round's aggregate from the stored
//! client uploads.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::compress::{topk_dense, TopKConfig};
use crate::objective::{MinibatchSampler, Objective};
use crate::opt::{adamw_step, sgd_step, LocalOptimizer, OptimizerState};
use crate::param::{rel_diff, BlockId, BlockPartition, ParamVector};
use crate::rng::stream;
use crate::{Error, Result};

/// Tolerance of the consistency identity, relative to
/// `max(1, |client|, |server+pending|)` per coordinate.
pub const CONSISTENCY_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Block selection policy. Blocks are ranked or cycled over `1..=B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulerKind {
    /// Round t trains block `(t mod B) + 1`.
    Sequential,
    /// Round t trains block `B − (t mod B)`.
    Reverse,
    /// Uniform over `1..=B` from one persistent stream.
    Random,
    /// Rank blocks by descending server-model block gradient norm every
    /// `refresh_every` rounds; cycle through the ranking in between.
    GradientGuided { refresh_every: usize },
}

/// Which clients train each round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Participation {
    /// Everyone, every round.
    Full,
    /// A uniform without-replacement cohort of `m` clients per round.
    Sample { m: usize },
}

/// Debug fault injection, used to prove the invariant checks can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DebugHooks {
    /// Perturb client 0's correction step at this round by `1e-3` in its
    /// first coordinate. The consistency check must then trip.
    pub corrupt_correction_round: Option<usize>,
}

/// Full description of a federated run. All fields are plain data; see
/// [`FedConfig::new`] for the defaults.
#[derive(Clone, Debug)]
pub struct FedConfig {
    /// Number of clients `N ≥ 1`.
    pub clients: usize,
    /// Number of rounds `T ≥ 1`.
    pub rounds: usize,
    /// Local optimizer steps per round `K ≥ 1`.
    pub local_steps: usize,
    /// Server step size `η > 0` applied to every aggregate.
    pub server_lr: f64,
    /// Aggregation delay in rounds; `0` means synchronous.
    pub staleness: usize,
    /// Coordinate blocks of the parameter vector.
    pub partition: BlockPartition,
    pub scheduler: SchedulerKind,
    pub optimizer: LocalOptimizer,
    pub participation: Participation,
    /// Minibatch size for dataset-backed objectives; `None` = full batch.
    /// Ignored by quadratics, whose gradient is analytic.
    pub batch_size: Option<usize>,
    /// Gradient noise level `σ ≥ 0`: per-coordinate standard deviation
    /// `σ/√d` on the trained block, total variance `σ²`.
    pub grad_noise: f64,
    /// Top-k compression of uploaded deltas; `None` = dense uploads.
    pub compression: Option<TopKConfig>,
    /// Also re-compress the aggregate before it is applied anywhere.
    pub compress_downlink: bool,
    /// Master seed; every random stream in the run derives from it.
    pub master_seed: u64,
    /// Initial model scale: `θ_0 = init_scale · z`, `z ~ N(0, I)`.
    pub init_scale: f64,
    /// Run the invariant battery after every round.
    pub verify: bool,
    pub debug: DebugHooks,
}

impl FedConfig {
    /// Config with the common defaults: sequential schedule, SGD with
    /// `η_l = 0.1`, full participation, full batches, no noise, no
    /// compression, master seed 42, `init_scale` 0.5, verification on.
    pub fn new(
        clients: usize,
        rounds: usize,
        local_steps: usize,
        server_lr: f64,
        staleness: usize,
        partition: BlockPartition,
    ) -> Result<Self> {
        let cfg = Self {
            clients,
            rounds,
            local_steps,
            server_lr,
            staleness,
            partition,
            scheduler: SchedulerKind::Sequential,
            optimizer: LocalOptimizer::Sgd(crate::opt::SgdConfig::new(0.1)?),
            participation: Participation::Full,
            batch_size: None,
            grad_noise: 0.0,
            compression: None,
            compress_downlink: false,
            master_seed: 42,
            init_scale: 0.5,
            verify: true,
            debug: DebugHooks::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Input("need at least one client".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Input("need at least one round".into()));
        }
        if self.local_steps == 0 {
            return Err(Error::Input("need at least one local step".into()));
        }
        if !(self.server_lr > 0.0) || !self.server_lr.is_finite() {
            return Err(Error::Input(format!(
                "server step size must be positive and finite, got {}",
                self.server_lr
            )));
        }
        if self.staleness > self.rounds {
            return Err(Error::Input(format!(
                "staleness {} exceeds the round count {}",
                self.staleness, self.rounds
            )));
        }
        if let SchedulerKind::GradientGuided { refresh_every } = self.scheduler {
            if refresh_every == 0 {
                return Err(Error::Scheduler(
                    "gradient-guided refresh interval must be at least 1".into(),
                ));
            }
        }
        if let Participation::Sample { m } = self.participation {
            if m == 0 || m > self.clients {
                return Err(Error::Cohort(format!(
                    "cohort size {m} must lie in 1..={}",
                    self.clients
                )));
            }
        }
        if self.batch_size == Some(0) {
            return Err(Error::Batch("batch size must be at least 1".into()));
        }
        if !(self.grad_noise >= 0.0) || !self.grad_noise.is_finite() {
            return Err(Error::Input(format!(
                "gradient noise level must be finite and nonnegative, got {}",
                self.grad_noise
            )));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::Input(format!(
                "init scale must be finite and nonnegative, got {}",
                self.init_scale
            )));
        }
        match &self.optimizer {
            LocalOptimizer::Sgd(_) => {} // SgdConfig::new already validated
            LocalOptimizer::AdamW(c) => c.validate()?,
        }
        if let Some(c) = &self.compression {
            c.validate()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scheduler
// ---------------------------------------------------------------------------

/// Stateful block scheduler. The random policy owns one persistent
/// stream; the gradient-guided policy re-ranks on refresh rounds and
/// requires block gradient norms to be supplied on exactly those rounds.
#[derive(Clone, Debug)]
pub struct Scheduler {
    kind: SchedulerKind,
    num_blocks: usize,
    rng: Option<ChaCha8Rng>,
    ranking: Vec<BlockId>,
    cursor: usize,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, num_blocks: usize, master_seed: u64) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::Scheduler("partition has no blocks".into()));
        }
        if let SchedulerKind::GradientGuided { refresh_every } = kind {
            if refresh_every == 0 {
                return Err(Error::Scheduler(
                    "gradient-guided refresh interval must be at least 1".into(),
                ));
            }
        }
        let rng = matches!(kind, SchedulerKind::Random)
            .then(|| stream(master_seed, 0, 0, "scheduler"));
        Ok(Self {
            kind,
            num_blocks,
            rng,
            ranking: Vec::new(),
            cursor: 0,
        })
    }

    /// Whether [`next_block`](Self::next_block) needs block gradient
    /// norms at this round.
    pub fn needs_gradient(&self, round: usize) -> bool {
        match self.kind {
            SchedulerKind::GradientGuided { refresh_every } => round % refresh_every == 0,
            _ => false,
        }
    }

    /// Block to train at `round`. For the gradient-guided policy,
    /// `block_grad_norms_sq[j]` is `‖∇_{j+1} f(θ_t)‖²` and must be given
    /// on refresh rounds; ranking is by descending norm with ties going
    /// to the lower block id.
    pub fn next_block(
        &mut self,
        round: usize,
        block_grad_norms_sq: Option<&[f64]>,
    ) -> Result<BlockId> {
        let b = self.num_blocks;
        match self.kind {
            SchedulerKind::Sequential => BlockId::new(round % b + 1),
            SchedulerKind::Reverse => BlockId::new(b - round % b),
            SchedulerKind::Random => {
                let rng = self.rng.as_mut().expect("random scheduler owns a stream");
                BlockId::new(rng.random_range(1..=b))
            }
            SchedulerKind::GradientGuided { refresh_every } => {
                if round % refresh_every == 0 {
                    let norms = block_grad_norms_sq.ok_or_else(|| {
                        Error::Scheduler(format!(
                            "gradient-guided refresh at round {round} needs block gradient norms"
                        ))
                    })?;
                    if norms.len() != b {
                        return Err(Error::Scheduler(format!(
                            "got {} block gradient norms for {} blocks",
                            norms.len(),
                            b
                        )));
                    }
                    let mut order: Vec<usize> = (0..b).collect();
                    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
                    self.ranking = order
                        .into_iter()
                        .map(|i| BlockId::new(i + 1))
                        .collect::<Result<_>>()?;
                    self.cursor = 0;
                }
                if self.ranking.is_empty() {
                    return Err(Error::Scheduler(
                        "gradient-guided scheduler consulted before its first refresh".into(),
                    ));
                }
                let out = self.ranking[self.cursor % b];
                self.cursor += 1;
                Ok(out)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Run results
// ---------------------------------------------------------------------------

/// Everything observed during one round, at full precision.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: usize,
    pub block: BlockId,
    /// Participating client ids, ascending.
    pub cohort: Vec<usize>,
    /// Noise-free full-batch global loss at the start-of-round server
    /// model (after any aggregate that precedes this round's compute).
    pub train_loss: f64,
    /// `‖∇_{b_t} f(θ_t)‖²` at the same point.
    pub block_grad_norm_sq: f64,
    /// `‖∇f(θ_t)‖²` over all coordinates, the bound-facing channel.
    pub full_grad_norm_sq: f64,
    /// `‖Δ_t‖²` of the aggregate computed this round (after any
    /// downlink compression, i.e. exactly what will be applied).
    pub delta_norm_sq: f64,
    /// Mean of `‖δ̂_i‖²` over the cohort's uploads.
    pub mean_client_delta_norm_sq: f64,
}

/// One server-side model update, in application order.
#[derive(Clone, Debug)]
pub struct AppliedAggregate {
    /// Round whose uploads produced this aggregate.
    pub round: usize,
    pub block: BlockId,
    /// The applied vector (the server added `η ·` this to the block).
    pub delta: Vec<f64>,
}

/// Output of a full run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    /// Initial model shared by server and clients.
    pub init_model: ParamVector,
    /// Final server model, after all pending aggregates were flushed.
    pub final_model: ParamVector,
    /// Final client models (federated runs) in client order. After the
    /// flush they agree with `final_model` to [`CONSISTENCY_TOL`].
    pub client_models: Vec<ParamVector>,
    /// Every aggregate the server applied, in application order;
    /// replaying them over `init_model` reproduces `final_model` bit
    /// for bit.
    pub applied: Vec<AppliedAggregate>,
    /// Noise-free full-batch global loss at `final_model`.
    pub final_loss: f64,
}

impl RunResult {
    /// Realized block schedule, one id per round.
    pub fn blocks(&self) -> Vec<BlockId> {
        self.records.iter().map(|r| r.block).collect()
    }

    /// Cohorts per round, for timing simulation.
    pub fn cohorts(&self) -> Vec<Vec<usize>> {
        self.records.iter().map(|r| r.cohort.clone()).collect()
    }

    /// The `‖∇f(θ_t)‖²` series, the left side of bound comparisons.
    pub fn grad_norm_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.full_grad_norm_sq).collect()
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// `f(θ) = (1/N) Σ_i f_i(θ)`, full batch, noise free.
pub fn global_loss(objs: &[Objective], theta: &ParamVector) -> Result<f64> {
    if objs.is_empty() {
        return Err(Error::Input("no objectives given".into()));
    }
    let mut total = 0.0;
    for o in objs {
        total += o.loss(theta, None)?;
    }
    Ok(total / objs.len() as f64)
}

/// `∇f(θ) = (1/N) Σ_i ∇f_i(θ)`, full batch, noise free.
pub fn global_grad(objs: &[Objective], theta: &ParamVector) -> Result<ParamVector> {
    if objs.is_empty() {
        return Err(Error::Input("no objectives given".into()));
    }
    let n = objs.len() as f64;
    let mut acc = ParamVector::zeros(theta.dim());
    for o in objs {
        let g = o.grad(theta, None)?;
        for (a, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a += v / n;
        }
    }
    Ok(acc)
}

/// Initial model `θ_0`, shared by every method at a given master seed.
pub fn initial_model(master_seed: u64, dim: usize, init_scale: f64) -> ParamVector {
    let mut rng = stream(master_seed, 0, 0, "init");
    ParamVector::new(
        (0..dim)
            .map(|_| init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Participating clients at `round`: ascending, without replacement,
/// drawn from the round-specific cohort stream.
fn draw_cohort(cfg: &FedConfig, round: usize) -> Vec<usize> {
    match cfg.participation {
        Participation::Full => (0..cfg.clients).collect(),
        Participation::Sample { m } => {
            let mut rng = stream(cfg.master_seed, 0, round as u64, "cohort");
            let mut pool: Vec<usize> = (0..cfg.clients).collect();
            for k in 0..m {
                let j = rng.random_range(k..pool.len());
                pool.swap(k, j);
            }
            let mut cohort = pool[..m].to_vec();
            cohort.sort_unstable();
            cohort
        }
    }
}

fn check_setup(cfg: &FedConfig, objs: &[Objective]) -> Result<()> {
    cfg.validate()?;
    if objs.len() != cfg.clients {
        return Err(Error::Input(format!(
            "config declares {} clients but {} objectives were given",
            cfg.clients,
            objs.len()
        )));
    }
    let d = cfg.partition.dim();
    if let Some(o) = objs.iter().find(|o| o.dim() != d) {
        return Err(Error::Shape(format!(
            "objective for client {} has dimension {}, partition covers {}",
            o.client_id(),
            o.dim(),
            d
        )));
    }
    Ok(())
}

fn make_sampler(cfg: &FedConfig, obj: &Objective, client: usize) -> Result<Option<MinibatchSampler<ChaCha8Rng>>> {
    match (cfg.batch_size, obj.num_samples()) {
        (Some(b), Some(n)) => Ok(Some(MinibatchSampler::new(
            n,
            b,
            stream(cfg.master_seed, client as u64, 0, "shuffle"),
        )?)),
        _ => Ok(None),
    }
}

/// `K` local optimizer steps on a copy of `start`, touching only block
/// `b`. Returns the block-local movement `[θ_K]_b − [start]_b`.
/// Optimizer moments start fresh every invocation; gradient noise comes
/// from the per-(client, round) noise stream.
fn local_block_training(
    cfg: &FedConfig,
    obj: &Objective,
    start: &ParamVector,
    block: BlockId,
    round: usize,
    client: usize,
    sampler: Option<&mut MinibatchSampler<ChaCha8Rng>>,
) -> Result<Vec<f64>> {
    let (lo, hi) = cfg.partition.range(block)?;
    let mut theta = start.clone();
    let mut state = OptimizerState::fresh(hi - lo);
    let noise_scale = cfg.grad_noise / (start.dim() as f64).sqrt();
    let mut noise_rng = (cfg.grad_noise > 0.0)
        .then(|| stream(cfg.master_seed, client as u64, round as u64, "noise"));
    let mut sampler = sampler;

    for step in 0..cfg.local_steps {
        let batch: Option<Vec<usize>> = sampler.as_deref_mut().map(|s| s.next_batch());
        let g_full = obj.grad(&theta, batch.as_deref()).map_err(|e| match e {
            Error::NonFinite(what) => Error::Numeric {
                round,
                client,
                step,
                what,
            },
            other => other,
        })?;
        let mut g_b = g_full.as_slice()[lo..hi].to_vec();
        if let Some(rng) = noise_rng.as_mut() {
            for v in g_b.iter_mut() {
                *v += noise_scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let block_slice = &mut theta.as_mut_slice()[lo..hi];
        let stepped = match &cfg.optimizer {
            LocalOptimizer::Sgd(c) => sgd_step(block_slice, &g_b, c),
            LocalOptimizer::AdamW(c) => adamw_step(block_slice, &g_b, &mut state, c),
        };
        stepped.map_err(|e| match e {
            Error::NonFinite(what) => Error::Numeric {
                round,
                client,
                step,
                what,
            },
            other => other,
        })?;
        if let Some(j) = block_slice.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                round,
                client,
                step,
                what: format!("parameter coordinate {} became {}", lo + j, block_slice[j]),
            });
        }
    }
    Ok(theta.as_slice()[lo..hi]
        .iter()
        .zip(&start.as_slice()[lo..hi])
        .map(|(a, b)| a - b)
        .collect())
}

/// Upload transform: top-k compress when configured, dense otherwise.
fn uplink(cfg: &FedConfig, delta: Vec<f64>) -> Result<Vec<f64>> {
    match &cfg.compression {
        Some(c) => topk_dense(&delta, c),
        None => Ok(delta),
    }
}

/// Cohort mean in ascending client order, then the optional downlink
/// compression. This is the exact arithmetic the oracle replays.
fn aggregate(cfg: &FedConfig, uploads: &[(usize, Vec<f64>)], d_b: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; d_b];
    for (_, u) in uploads {
        for (a, v) in acc.iter_mut().zip(u) {
            *a += v;
        }
    }
    let m = uploads.len() as f64;
    for a in acc.iter_mut() {
        *a /= m;
    }
    if cfg.compress_downlink {
        if let Some(c) = &cfg.compression {
            acc = topk_dense(&acc, c)?;
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// ParaBlock
// ---------------------------------------------------------------------------

/// One client's pending (not yet downlinked) update.
#[derive(Clone, Debug)]
struct Pending {
    round: usize,
    block: BlockId,
    /// What this client uploaded and already applied locally (zeros for
    /// rounds it sat out).
    own: Vec<f64>,
}

struct ClientState {
    model: ParamVector,
    sampler: Option<MinibatchSampler<ChaCha8Rng>>,
    pending: VecDeque<Pending>,
}

struct ServerState {
    model: ParamVector,
    init: ParamVector,
    /// Aggregates waiting out the staleness window.
    queue: VecDeque<(usize, BlockId, Vec<f64>)>,
    /// Everything ever applied, in application order, for replay checks.
    applied: Vec<AppliedAggregate>,
}

impl ServerState {
    fn apply(&mut self, cfg: &FedConfig, block: BlockId, agg: Vec<f64>, round: usize) -> Result<()> {
        self.model.block_axpy(&cfg.partition, block, cfg.server_lr, &agg)?;
        if !self.model.all_finite() {
            return Err(Error::NonFinite(format!(
                "server model lost finiteness applying the round {round} aggregate"
            )));
        }
        self.applied.push(AppliedAggregate {
            round,
            block,
            delta: agg,
        });
        Ok(())
    }

    /// Re-derive the model from `init` and the applied log; must match
    /// the live model bit for bit.
    fn replay_matches(&self, cfg: &FedConfig) -> Result<bool> {
        let mut replay = self.init.clone();
        for a in &self.applied {
            replay.block_axpy(&cfg.partition, a.block, cfg.server_lr, &a.delta)?;
        }
        Ok(replay
            .as_slice()
            .iter()
            .zip(self.model.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()))
    }
}

/// Consistency identity for one client: for every block `b`,
/// `client_b = server_b + η · Σ own` over its pending entries on `b`.
fn verify_client(
    cfg: &FedConfig,
    server: &ParamVector,
    client: &ClientState,
    id: usize,
    round: usize,
) -> Result<()> {
    let mut expected = server.clone();
    for p in &client.pending {
        expected.block_axpy(&cfg.partition, p.block, cfg.server_lr, &p.own)?;
    }
    for (j, (c, e)) in client
        .model
        .as_slice()
        .iter()
        .zip(expected.as_slice())
        .enumerate()
    {
        let diff = rel_diff(*c, *e);
        if !(diff <= CONSISTENCY_TOL) {
            let block = cfg
                .partition
                .block_ids()
                .find(|&b| {
                    cfg.partition
                        .range(b)
                        .map(|(lo, hi)| lo <= j && j < hi)
                        .unwrap_or(false)
                })
                .map(|b| b.get())
                .unwrap_or(0);
            return Err(Error::Invariant(format!(
                "consistency identity failed after round {round}: client {id}, block {block}, \
                 coordinate {j} is {c:.17e}, server plus pending gives {e:.17e} \
                 (rel diff {diff:.3e})"
            )));
        }
    }
    Ok(())
}

/// ParaBlock training run. See the module docs for the round anatomy.
pub fn parablock_run(cfg: &FedConfig, objs: &[Objective]) -> Result<RunResult> {
    check_setup(cfg, objs)?;
    let d = cfg.partition.dim();
    let s = cfg.staleness;
    let theta0 = initial_model(cfg.master_seed, d, cfg.init_scale);
    let mut server = ServerState {
        model: theta0.clone(),
        init: theta0.clone(),
        queue: VecDeque::new(),
        applied: Vec::new(),
    };
    let mut clients: Vec<ClientState> = objs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            Ok(ClientState {
                model: theta0.clone(),
                sampler: make_sampler(cfg, o, i)?,
                pending: VecDeque::new(),
            })
        })
        .collect::<Result<_>>()?;
    let mut scheduler = Scheduler::new(cfg.scheduler, cfg.partition.num_blocks(), cfg.master_seed)?;
    let mut records = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        // 1. The aggregate from round t−S (if any) lands on the server.
        if s >= 1 && t >= s {
            let (r, block, agg) = server.queue.pop_front().expect("queue holds round t-S");
            if r + s != t {
                return Err(Error::Invariant(format!(
                    "aggregate queue out of order: expected round {}, found {r}",
                    t - s
                )));
            }
            server.apply(cfg, block, agg, r)?;
        }

        // 2. Metrics and schedule at the start-of-round model θ_t.
        let grad = global_grad(objs, &server.model)?;
        let block_norms: Vec<f64> = cfg
            .partition
            .block_ids()
            .map(|b| grad.block_view(&cfg.partition, b).map(|v| v.iter().map(|x| x * x).sum()))
            .collect::<Result<_>>()?;
        let block = scheduler.next_block(t, Some(&block_norms))?;
        let train_loss = global_loss(objs, &server.model)?;
        let full_grad_norm_sq = grad.norm_sq();
        let block_grad_norm_sq = block_norms[block.index0()];

        // 3. Cohort trains block b_t on their own (stale) models.
        let cohort = draw_cohort(cfg, t);
        let d_b = cfg.partition.block_dim(block)?;
        let mut uploads: Vec<(usize, Vec<f64>)> = Vec::with_capacity(cohort.len());
        for &i in &cohort {
            let client = &mut clients[i];
            let delta = local_block_training(
                cfg,
                &objs[i],
                &client.model,
                block,
                t,
                i,
                client.sampler.as_mut(),
            )?;
            uploads.push((i, uplink(cfg, delta)?));
        }

        // 4. Aggregate in ascending client order; it will reach the
        //    server model at round t+S.
        let agg = aggregate(cfg, &uploads, d_b)?;
        let delta_norm_sq: f64 = agg.iter().map(|x| x * x).sum();
        let mean_client_delta_norm_sq = uploads
            .iter()
            .map(|(_, u)| u.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / uploads.len() as f64;
        server.queue.push_back((t, block, agg.clone()));
        if s == 0 {
            let (_, b0, a0) = server.queue.pop_back().expect("just pushed");
            server.apply(cfg, b0, a0, t)?;
        }

        // 5. Client-side updates: own movement first, then the
        //    correction for the aggregate that just left the queue.
        for (i, client) in clients.iter_mut().enumerate() {
            let own = uploads
                .iter()
                .find(|(id, _)| *id == i)
                .map(|(_, u)| u.clone())
                .unwrap_or_else(|| vec![0.0; d_b]);
            if !own.iter().all(|v| *v == 0.0) {
                client
                    .model
                    .block_axpy(&cfg.partition, block, cfg.server_lr, &own)?;
            }
            client.pending.push_back(Pending {
                round: t,
                block,
                own,
            });
            let correct_round = if s == 0 {
                Some(t)
            } else if t >= s {
                Some(t - s)
            } else {
                None
            };
            if let Some(r) = correct_round {
                let p = client.pending.pop_front().expect("pending holds round r");
                if p.round != r {
                    return Err(Error::Invariant(format!(
                        "pending queue out of order for client {i}: expected round {r}, found {}",
                        p.round
                    )));
                }
                let applied = server
                    .applied
                    .last()
                    .expect("server applied the aggregate this round");
                let mut corr: Vec<f64> = applied
                    .delta
                    .iter()
                    .zip(&p.own)
                    .map(|(a, o)| a - o)
                    .collect();
                if cfg.debug.corrupt_correction_round == Some(t) && i == 0 {
                    corr[0] += 1e-3;
                }
                client
                    .model
                    .block_axpy(&cfg.partition, p.block, cfg.server_lr, &corr)?;
            }
            if !client.model.all_finite() {
                return Err(Error::NonFinite(format!(
                    "client {i} model lost finiteness during round {t}"
                )));
            }
        }

        // 6. Invariant battery.
        if cfg.verify {
            for (i, client) in clients.iter().enumerate() {
                verify_client(cfg, &server.model, client, i, t)?;
            }
            if !server.replay_matches(cfg)? {
                return Err(Error::Invariant(format!(
                    "server replay from the applied-aggregate log diverged after round {t}"
                )));
            }
            let resum = aggregate(cfg, &uploads, d_b)?;
            let stored = server
                .queue
                .back()
                .map(|(_, _, a)| a.as_slice())
                .unwrap_or_else(|| &server.applied.last().expect("applied this round").delta);
            if resum.len() != stored.len()
                || resum
                    .iter()
                    .zip(stored)
                    .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Err(Error::Invariant(format!(
                    "aggregate re-summation diverged from the stored round {t} aggregate"
                )));
            }
        }

        records.push(RoundRecord {
            round: t,
            block,
            cohort,
            train_loss,
            block_grad_norm_sq,
            full_grad_norm_sq,
            delta_norm_sq,
            mean_client_delta_norm_sq,
        });
    }

    // Finalization: flush pending aggregates in ascending round order to
    // the server and, as corrections, to every client.
    while let Some((r, block, agg)) = server.queue.pop_front() {
        server.apply(cfg, block, agg, r)?;
        let applied = &server.applied.last().expect("just applied").delta;
        for (i, client) in clients.iter_mut().enumerate() {
            let p = client.pending.pop_front().expect("pending mirrors the queue");
            if p.round != r {
                return Err(Error::Invariant(format!(
                    "flush out of order for client {i}: expected round {r}, found {}",
                    p.round
                )));
            }
            let corr: Vec<f64> = applied.iter().zip(&p.own).map(|(a, o)| a - o).collect();
            client
                .model
                .block_axpy(&cfg.partition, p.block, cfg.server_lr, &corr)?;
        }
    }
    if cfg.verify {
        for (i, client) in clients.iter().enumerate() {
            verify_client(cfg, &server.model, client, i, cfg.rounds)?;
        }
        if !server.replay_matches(cfg)? {
            return Err(Error::Invariant(
                "server replay diverged after the final flush".into(),
            ));
        }
    }

    let final_loss = global_loss(objs, &server.model)?;
    Ok(RunResult {
        records,
        init_model: theta0,
        final_model: server.model,
        client_models: clients.into_iter().map(|c| c.model).collect(),
        applied: server.applied,
        final_loss,
    })
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Synchronous baseline: every round, the cohort pulls the server model,
/// trains the scheduled block, and the mean update is applied before the
/// next round. Staleness and the correction machinery do not exist here.
pub fn fedbcd_run(cfg: &FedConfig, objs: &[Objective]) -> Result<RunResult> {
    check_setup(cfg, objs)?;
    let d = cfg.partition.dim();
    let theta0 = initial_model(cfg.master_seed, d, cfg.init_scale);
    let mut model = theta0.clone();
    let mut samplers: Vec<Option<MinibatchSampler<ChaCha8Rng>>> = objs
        .iter()
        .enumerate()
        .map(|(i, o)| make_sampler(cfg, o, i))
        .collect::<Result<_>>()?;
    let mut scheduler = Scheduler::new(cfg.scheduler, cfg.partition.num_blocks(), cfg.master_seed)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut applied = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let grad = global_grad(objs, &model)?;
        let block_norms: Vec<f64> = cfg
            .partition
            .block_ids()
            .map(|b| grad.block_view(&cfg.partition, b).map(|v| v.iter().map(|x| x * x).sum()))
            .collect::<Result<_>>()?;
        let block = scheduler.next_block(t, Some(&block_norms))?;
        let train_loss = global_loss(objs, &model)?;
        let cohort = draw_cohort(cfg, t);
        let d_b = cfg.partition.block_dim(block)?;
        let mut uploads = Vec::with_capacity(cohort.len());
        for &i in &cohort {
            let delta =
                local_block_training(cfg, &objs[i], &model, block, t, i, samplers[i].as_mut())?;
            uploads.push((i, uplink(cfg, delta)?));
        }
        let agg = aggregate(cfg, &uploads, d_b)?;
        let delta_norm_sq: f64 = agg.iter().map(|x| x * x).sum();
        let mean_client_delta_norm_sq = uploads
            .iter()
            .map(|(_, u)| u.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / uploads.len() as f64;
        model.block_axpy(&cfg.partition, block, cfg.server_lr, &agg)?;
        if !model.all_finite() {
            return Err(Error::NonFinite(format!(
                "model lost finiteness applying the round {t} aggregate"
            )));
        }
        applied.push(AppliedAggregate {
            round: t,
            block,
            delta: agg,
        });
        records.push(RoundRecord {
            round: t,
            block,
            cohort,
            train_loss,
            block_grad_norm_sq: block_norms[block.index0()],
            full_grad_norm_sq: grad.norm_sq(),
            delta_norm_sq,
            mean_client_delta_norm_sq,
        });
    }
    let final_loss = global_loss(objs, &model)?;
    let clients = vec![model.clone(); cfg.clients];
    Ok(RunResult {
        records,
        init_model: theta0,
        final_model: model,
        client_models: clients,
        applied,
        final_loss,
    })
}

/// Cyclic baseline: round `t` elects client `t mod N` alone; its update
/// is applied directly (no averaging). Participation config is ignored,
/// election is the cycle itself.
pub fn fedcybgd_run(cfg: &FedConfig, objs: &[Objective]) -> Result<RunResult> {
    check_setup(cfg, objs)?;
    let d = cfg.partition.dim();
    let theta0 = initial_model(cfg.master_seed, d, cfg.init_scale);
    let mut model = theta0.clone();
    let mut samplers: Vec<Option<MinibatchSampler<ChaCha8Rng>>> = objs
        .iter()
        .enumerate()
        .map(|(i, o)| make_sampler(cfg, o, i))
        .collect::<Result<_>>()?;
    let mut scheduler = Scheduler::new(cfg.scheduler, cfg.partition.num_blocks(), cfg.master_seed)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut applied = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds {
        let grad = global_grad(objs, &model)?;
        let block_norms: Vec<f64> = cfg
            .partition
            .block_ids()
            .map(|b| grad.block_view(&cfg.partition, b).map(|v| v.iter().map(|x| x * x).sum()))
            .collect::<Result<_>>()?;
        let block = scheduler.next_block(t, Some(&block_norms))?;
        let train_loss = global_loss(objs, &model)?;
        let elected = t % cfg.clients;
        let d_b = cfg.partition.block_dim(block)?;
        let delta = local_block_training(
            cfg,
            &objs[elected],
            &model,
            block,
            t,
            elected,
            samplers[elected].as_mut(),
        )?;
        let uploads = vec![(elected, uplink(cfg, delta)?)];
        let agg = aggregate(cfg, &uploads, d_b)?;
        let delta_norm_sq: f64 = agg.iter().map(|x| x * x).sum();
        let mean_client_delta_norm_sq = uploads[0].1.iter().map(|x| x * x).sum::<f64>();
        model.block_axpy(&cfg.partition, block, cfg.server_lr, &agg)?;
        if !model.all_finite() {
            return Err(Error::NonFinite(format!(
                "model lost finiteness applying the round {t} update"
            )));
        }
        applied.push(AppliedAggregate {
            round: t,
            block,
            delta: agg,
        });
        records.push(RoundRecord {
            round: t,
            block,
            cohort: vec![elected],
            train_loss,
            block_grad_norm_sq: block_norms[block.index0()],
            full_grad_norm_sq: grad.norm_sq(),
            delta_norm_sq,
            mean_client_delta_norm_sq,
        });
    }
    let final_loss = global_loss(objs, &model)?;
    let clients = vec![model.clone(); cfg.clients];
    Ok(RunResult {
        records,
        init_model: theta0,
        final_model: model,
        client_models: clients,
        applied,
        final_loss,
    })
}

/// Single-node block coordinate descent over a prescribed block
/// schedule, using client 0's random streams and the exact server-side
/// arithmetic of the federated loop (sum over a one-element cohort,
/// divide by 1, optional compression). A one-client [`parablock_run`]
/// must match its final model bit for bit.
pub fn sequential_bcd_run(
    cfg: &FedConfig,
    obj: &Objective,
    blocks: &[BlockId],
) -> Result<RunResult> {
    cfg.validate()?;
    if blocks.len() != cfg.rounds {
        return Err(Error::Input(format!(
            "schedule lists {} blocks for {} rounds",
            blocks.len(),
            cfg.rounds
        )));
    }
    if obj.dim() != cfg.partition.dim() {
        return Err(Error::Shape(format!(
            "objective dimension {} does not match partition dimension {}",
            obj.dim(),
            cfg.partition.dim()
        )));
    }
    let objs = std::slice::from_ref(obj);
    let theta0 = initial_model(cfg.master_seed, obj.dim(), cfg.init_scale);
    let mut model = theta0.clone();
    let mut sampler = make_sampler(cfg, obj, 0)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut applied = Vec::with_capacity(cfg.rounds);

    for (t, &block) in blocks.iter().enumerate() {
        let grad = global_grad(objs, &model)?;
        let train_loss = global_loss(objs, &model)?;
        let block_grad_norm_sq: f64 = grad
            .block_view(&cfg.partition, block)?
            .iter()
            .map(|x| x * x)
            .sum();
        let d_b = cfg.partition.block_dim(block)?;
        let delta = local_block_training(cfg, obj, &model, block, t, 0, sampler.as_mut())?;
        let uploads = vec![(0usize, uplink(cfg, delta)?)];
        let agg = aggregate(cfg, &uploads, d_b)?;
        let delta_norm_sq: f64 = agg.iter().map(|x| x * x).sum();
        let mean_client_delta_norm_sq = uploads[0].1.iter().map(|x| x * x).sum::<f64>();
        model.block_axpy(&cfg.partition, block, cfg.server_lr, &agg)?;
        applied.push(AppliedAggregate {
            round: t,
            block,
            delta: agg,
        });
        records.push(RoundRecord {
            round: t,
            block,
            cohort: vec![0],
            train_loss,
            block_grad_norm_sq,
            full_grad_norm_sq: grad.norm_sq(),
            delta_norm_sq,
            mean_client_delta_norm_sq,
        });
    }
    let final_loss = global_loss(objs, &model)?;
    Ok(RunResult {
        records,
        init_model: theta0,
        final_model: model.clone(),
        client_models: vec![model],
        applied,
        final_loss,
    })
}
