//! Cross-method identities of the federated engine: oracle matches for
//! degenerate configurations, invariant preservation under the full
//! option matrix, and frozen end-to-end traces.

use parablock::compress::TopKConfig;
use parablock::engine::{
    fedbcd_run, fedcybgd_run, parablock_run, sequential_bcd_run, FedConfig, Participation,
    SchedulerKind, CONSISTENCY_TOL,
};
use parablock::netsim::{ComputeSpec, LinkSpec, Method};
use parablock::objective::{dirichlet_partition, Objective, SyntheticDataset};
use parablock::opt::{AdamWConfig, LocalOptimizer, SgdConfig};
use parablock::param::{rel_diff, BlockPartition, ParamVector};
use parablock::rng::stream;
use parablock::trace::{merge_rows, render_trace, timing_for_run, Summary};
use rand::Rng;
use rand_distr::StandardNormal;

fn spread_quadratics(n: usize, d: usize, seed: u64) -> Vec<Objective> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, i as u64, 0, "center");
            let center: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let curvature: Vec<f64> = (0..d).map(|_| 0.5 + rng.random::<f64>()).collect();
            Objective::quadratic(i, center, curvature).unwrap()
        })
        .collect()
}

fn identical_quadratics(n: usize, d: usize) -> Vec<Objective> {
    let center: Vec<f64> = (0..d).map(|j| (j as f64 * 0.7).sin()).collect();
    let curvature: Vec<f64> = (0..d).map(|j| 0.5 + 0.1 * j as f64).collect();
    (0..n)
        .map(|i| Objective::quadratic(i, center.clone(), curvature.clone()).unwrap())
        .collect()
}

fn identical_logistics(n: usize, d: usize) -> Vec<Objective> {
    let mut rng = stream(11, 0, 0, "dataset");
    let data = SyntheticDataset::generate(24, d, 2, 1.5, &mut rng).unwrap();
    (0..n)
        .map(|i| Objective::logistic(i, data.clone()).unwrap())
        .collect()
}

fn max_rel_deviation(a: &ParamVector, b: &ParamVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| rel_diff(*x, *y))
        .fold(0.0, f64::max)
}

fn assert_bitwise(a: &ParamVector, b: &ParamVector, what: &str) {
    for (j, (x, y)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        assert_eq!(
            x.to_bits(),
            y.to_bits(),
            "{what}: coordinate {j} differs ({x:.17e} vs {y:.17e})"
        );
    }
}

// ---------------------------------------------------------------------------
// One-client runs are bit-identical to single-node block descent
// ---------------------------------------------------------------------------

#[test]
fn one_client_matches_the_oracle_across_the_option_matrix() {
    let schedulers = [
        SchedulerKind::Sequential,
        SchedulerKind::Reverse,
        SchedulerKind::Random,
        SchedulerKind::GradientGuided { refresh_every: 3 },
    ];
    let mut cases = 0;
    for (ci, &scheduler) in schedulers.iter().enumerate() {
        for staleness in [0usize, 1, 2] {
            for adamw in [false, true] {
                let d = 10;
                let objs = spread_quadratics(1, d, 100 + ci as u64);
                let partition = BlockPartition::equal(d, 3).unwrap();
                let mut cfg = FedConfig::new(1, 12, 3, 0.9, staleness, partition).unwrap();
                cfg.scheduler = scheduler;
                cfg.master_seed = 7 + ci as u64;
                cfg.grad_noise = 0.05;
                cfg.optimizer = if adamw {
                    LocalOptimizer::AdamW(AdamWConfig::new(0.05).unwrap())
                } else {
                    LocalOptimizer::Sgd(SgdConfig::new(0.05).unwrap())
                };
                if ci % 2 == 0 {
                    cfg.compression = Some(TopKConfig::new(0.4).unwrap());
                }
                let fed = parablock_run(&cfg, &objs).unwrap();
                let seq = sequential_bcd_run(&cfg, &objs[0], &fed.blocks()).unwrap();
                assert_bitwise(
                    &fed.final_model,
                    &seq.final_model,
                    &format!("scheduler {ci}, S={staleness}, adamw={adamw}"),
                );
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 24);
}

#[test]
fn one_client_with_minibatches_still_matches_the_oracle() {
    let mut rng = stream(19, 0, 0, "dataset");
    let data = SyntheticDataset::generate(30, 6, 2, 1.0, &mut rng).unwrap();
    let obj = Objective::logistic(0, data).unwrap();
    let partition = BlockPartition::equal(6, 2).unwrap();
    let mut cfg = FedConfig::new(1, 10, 4, 1.0, 1, partition).unwrap();
    cfg.batch_size = Some(8);
    cfg.grad_noise = 0.1;
    cfg.master_seed = 19;
    let fed = parablock_run(&cfg, std::slice::from_ref(&obj)).unwrap();
    let seq = sequential_bcd_run(&cfg, &obj, &fed.blocks()).unwrap();
    assert_bitwise(&fed.final_model, &seq.final_model, "minibatch logistic");
}

// ---------------------------------------------------------------------------
// Identical clients collapse to single-node descent
// ---------------------------------------------------------------------------

#[test]
fn identical_clients_match_the_oracle_within_1e9() {
    // Deterministic gradients only: with full batches and zero noise,
    // every client computes the same update, so the federated run walks
    // the single-node trajectory up to mean-of-N rounding.
    for n in [2usize, 3, 5] {
        for staleness in [1usize, 2] {
            for &scheduler in &[
                SchedulerKind::Sequential,
                SchedulerKind::Reverse,
                SchedulerKind::Random,
            ] {
                let d = 9;
                let objs = identical_quadratics(n, d);
                let partition = BlockPartition::equal(d, 3).unwrap();
                let mut cfg = FedConfig::new(n, 24, 3, 1.0, staleness, partition).unwrap();
                cfg.scheduler = scheduler;
                cfg.optimizer = LocalOptimizer::Sgd(SgdConfig::new(0.08).unwrap());
                let fed = parablock_run(&cfg, &objs).unwrap();
                let mut solo = cfg.clone();
                solo.clients = 1;
                let seq = sequential_bcd_run(&solo, &objs[0], &fed.blocks()).unwrap();
                let dev = max_rel_deviation(&fed.final_model, &seq.final_model);
                assert!(
                    dev <= 1e-9,
                    "N={n}, S={staleness}, {scheduler:?}: deviation {dev:.3e}"
                );
            }
        }
    }
}

#[test]
fn identical_logistic_clients_match_the_oracle_with_adamw() {
    let objs = identical_logistics(4, 5);
    let partition = BlockPartition::equal(5, 2).unwrap();
    let mut cfg = FedConfig::new(4, 20, 2, 1.0, 1, partition).unwrap();
    cfg.optimizer = LocalOptimizer::AdamW(AdamWConfig::new(0.05).unwrap());
    let fed = parablock_run(&cfg, &objs).unwrap();
    let mut solo = cfg.clone();
    solo.clients = 1;
    let seq = sequential_bcd_run(&solo, &objs[0], &fed.blocks()).unwrap();
    let dev = max_rel_deviation(&fed.final_model, &seq.final_model);
    assert!(dev <= 1e-9, "deviation {dev:.3e}");
}

// ---------------------------------------------------------------------------
// The invariant battery holds across the option matrix
// ---------------------------------------------------------------------------

#[test]
fn consistency_holds_for_heterogeneous_runs_with_every_knob_on() {
    // Partial participation, compression both ways, AdamW, noise,
    // minibatches, non-uniform blocks: the per-round verification inside
    // parablock_run must stay silent and the flush must reconcile all
    // client models.
    let n = 6;
    let mut rng = stream(3_000, 0, 0, "dataset");
    let data = SyntheticDataset::generate(240, 8, 4, 1.0, &mut rng).unwrap();
    let part = dirichlet_partition(&data, 0.3, n, &mut rng).unwrap();
    let hidden = 4;
    let objs: Vec<Objective> = (0..n)
        .map(|i| {
            let rows = part.client_rows(i);
            Objective::mlp(i, data.subset(&rows).unwrap(), hidden).unwrap()
        })
        .collect();
    let d = objs[0].dim();
    let partition = BlockPartition::by_layer(&[hidden * 8, hidden, 4 * hidden, 4]).unwrap();
    assert_eq!(partition.dim(), d);
    let mut cfg = FedConfig::new(n, 15, 2, 0.7, 2, partition).unwrap();
    cfg.participation = Participation::Sample { m: 3 };
    cfg.compression = Some(TopKConfig::new(0.25).unwrap());
    cfg.compress_downlink = true;
    cfg.optimizer = LocalOptimizer::AdamW(AdamWConfig::new(0.01).unwrap());
    cfg.batch_size = Some(8);
    cfg.grad_noise = 0.05;
    cfg.master_seed = 77;
    let run = parablock_run(&cfg, &objs).unwrap();
    for (i, c) in run.client_models.iter().enumerate() {
        let dev = max_rel_deviation(c, &run.final_model);
        assert!(dev <= CONSISTENCY_TOL, "client {i} deviates by {dev:.3e}");
    }
}

#[test]
fn single_block_partitions_are_supported() {
    // B=1 means every round trains the same block and the correction
    // lands on the block being trained; the identity must still close.
    let objs = spread_quadratics(3, 5, 41);
    let partition = BlockPartition::equal(5, 1).unwrap();
    let mut cfg = FedConfig::new(3, 10, 2, 0.8, 1, partition).unwrap();
    cfg.master_seed = 41;
    let run = parablock_run(&cfg, &objs).unwrap();
    assert!(run.records.iter().all(|r| r.block.get() == 1));
    assert!(run.final_loss.is_finite());
}

#[test]
fn noise_free_full_batch_runs_are_rng_independent() {
    // With σ=0 and full batches the trajectory must not consult the
    // noise or shuffle streams at all: changing the master seed changes
    // only the init and cohort draws, so pinning those pins the run.
    let objs = identical_quadratics(2, 6);
    let partition = BlockPartition::equal(6, 2).unwrap();
    let mut a_cfg = FedConfig::new(2, 8, 2, 1.0, 1, partition.clone()).unwrap();
    a_cfg.init_scale = 0.0; // θ_0 = 0 regardless of seed
    let mut b_cfg = a_cfg.clone();
    b_cfg.master_seed = 4_242;
    let a = parablock_run(&a_cfg, &objs).unwrap();
    let b = parablock_run(&b_cfg, &objs).unwrap();
    assert_bitwise(&a.final_model, &b.final_model, "seed-independent run");
}

// ---------------------------------------------------------------------------
// Frozen end-to-end traces
// ---------------------------------------------------------------------------

fn uniform_links(n: usize) -> (Vec<LinkSpec>, Vec<ComputeSpec>) {
    (
        vec![
            LinkSpec {
                up_bw: 1.0e6,
                down_bw: 4.0e6,
                latency: 0.01,
            };
            n
        ],
        vec![
            ComputeSpec {
                sec_per_local_step: 0.002,
            };
            n
        ],
    )
}

fn golden_check(name: &str, rendered: &str) {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, rendered).unwrap();
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden fixture {path}: {e}"));
    assert_eq!(rendered, want, "trace drifted from {name}");
}

#[test]
fn fedbcd_trace_is_frozen_for_seed_23() {
    let n = 3;
    let objs = spread_quadratics(n, 12, 23);
    let partition = BlockPartition::equal(12, 3).unwrap();
    let mut cfg = FedConfig::new(n, 8, 2, 1.0, 0, partition).unwrap();
    cfg.master_seed = 23;
    cfg.optimizer = LocalOptimizer::Sgd(SgdConfig::new(0.05).unwrap());
    let run = fedbcd_run(&cfg, &objs).unwrap();
    let (links, compute) = uniform_links(n);
    let timing =
        timing_for_run(Method::FedBcd, &cfg, &run, &links, &compute, 1.0, true).unwrap();
    let rows = merge_rows(&run.records, &timing).unwrap();
    let text = format!(
        "{}{}",
        render_trace(&rows),
        Summary::new(Method::FedBcd.name(), run.final_loss, &timing).render()
    );
    golden_check("fedbcd_seed23.txt", &text);
}

#[test]
fn fedcybgd_trace_is_frozen_for_seed_29() {
    let n = 4;
    let objs = spread_quadratics(n, 12, 29);
    let partition = BlockPartition::equal(12, 4).unwrap();
    let mut cfg = FedConfig::new(n, 8, 2, 1.0, 0, partition).unwrap();
    cfg.master_seed = 29;
    cfg.optimizer = LocalOptimizer::Sgd(SgdConfig::new(0.05).unwrap());
    let run = fedcybgd_run(&cfg, &objs).unwrap();
    let (links, compute) = uniform_links(n);
    let timing =
        timing_for_run(Method::FedCyBgd, &cfg, &run, &links, &compute, 1.0, true).unwrap();
    let rows = merge_rows(&run.records, &timing).unwrap();
    let text = format!(
        "{}{}",
        render_trace(&rows),
        Summary::new(Method::FedCyBgd.name(), run.final_loss, &timing).render()
    );
    golden_check("fedcybgd_seed29.txt", &text);
}

#[test]
fn full_pipeline_is_deterministic_in_process() {
    let n = 3;
    let objs = spread_quadratics(n, 10, 55);
    let partition = BlockPartition::equal(10, 2).unwrap();
    let mut cfg = FedConfig::new(n, 6, 2, 1.0, 1, partition).unwrap();
    cfg.master_seed = 55;
    cfg.grad_noise = 0.1;
    let render = || {
        let run = parablock_run(&cfg, &objs).unwrap();
        let (links, compute) = uniform_links(n);
        let timing =
            timing_for_run(Method::Parablock, &cfg, &run, &links, &compute, 1.0, true).unwrap();
        let rows = merge_rows(&run.records, &timing).unwrap();
        format!(
            "{}{}",
            render_trace(&rows),
            Summary::new(Method::Parablock.name(), run.final_loss, &timing).render()
        )
    };
    assert_eq!(render(), render());
}
