//! Subcommand implementations.
//!
//! Each command loads one TOML config, builds the experiment, and prints
//! deterministic text: identical inputs produce byte-identical stdout and
//! output files. Diagnostics that should not affect exit status go
//! through `log::warn!` (stderr) instead of stdout.

use std::path::Path;

use parablock::engine::{
    fedbcd_run, fedcybgd_run, global_loss, initial_model, parablock_run, sequential_bcd_run,
    FedConfig, Participation, RunResult, CONSISTENCY_TOL,
};
use parablock::netsim::Method;
use parablock::objective::{
    dirichlet_partition, estimate_sigma_g, gradient_rel_error, quadratic_minimizer,
    smoothness_constant, Objective, ObjectiveKind, SmoothnessKind, SyntheticDataset,
};
use parablock::opt::LocalOptimizer;
use parablock::param::{rel_diff, ParamVector};
use parablock::rng::stream;
use parablock::theory::{lr_feasible, rate_schedule, trace_vs_bound, BoundInputs};
use parablock::trace::{format_float, merge_rows, render_trace, timing_for_run, Summary};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{load, Experiment};
use crate::CliError;

pub fn parse_method(name: &str) -> Result<Method, CliError> {
    match name {
        "parablock" => Ok(Method::Parablock),
        "fedbcd" => Ok(Method::FedBcd),
        "fedcybgd" => Ok(Method::FedCyBgd),
        other => Err(CliError::Config(format!(
            "unknown method `{other}` (expected parablock, fedbcd, fedcybgd)"
        ))),
    }
}

fn execute(method: Method, fed: &FedConfig, objs: &[Objective]) -> Result<RunResult, CliError> {
    let result = match method {
        Method::Parablock => parablock_run(fed, objs),
        Method::FedBcd => fedbcd_run(fed, objs),
        Method::FedCyBgd => fedcybgd_run(fed, objs),
    }?;
    Ok(result)
}

/// Warn (without failing) when the configured rates sit outside the
/// guarantee's gate; the run is still meaningful, just unanalyzed.
fn warn_if_infeasible(exp: &Experiment) -> Result<(), CliError> {
    let l = smoothness_constant(&exp.objectives)?.value;
    let gate = lr_feasible(
        exp.fed.server_lr,
        exp.fed.optimizer.eta_l(),
        exp.fed.local_steps,
        l,
    );
    if !gate.is_ok() {
        log::warn!(
            "learning rates sit outside the convergence gate (L = {}): {}",
            l,
            gate.violations().join(", ")
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

pub fn cmd_run(config: &Path, method_name: &str, out_dir: &Path) -> Result<(), CliError> {
    let method = parse_method(method_name)?;
    let file = load(config)?;
    let exp = file.build()?;
    warn_if_infeasible(&exp)?;
    let result = execute(method, &exp.fed, &exp.objectives)?;
    let timing = timing_for_run(
        method,
        &exp.fed,
        &result,
        &exp.links,
        &exp.compute,
        exp.batch_scale,
        exp.full_broadcast,
    )?;
    let rows = merge_rows(&result.records, &timing)?;
    let summary = Summary::new(method.name(), result.final_loss, &timing);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let trace_path = out_dir.join(format!("trace_{}.csv", method.name()));
    let summary_path = out_dir.join(format!("summary_{}.txt", method.name()));
    write_file(&trace_path, &render_trace(&rows))?;
    write_file(&summary_path, &summary.render())?;
    print!("{}", summary.render());
    println!("trace={}", trace_path.display());
    println!("summary={}", summary_path.display());
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

pub const COMPARE_HEADER: &str =
    "method,bandwidth,batch,total_wall,compute_share,comm_share,final_loss";

/// One grid cell of the comparison: run every method on the same problem
/// under one (bandwidth, batch) setting and report wall-clock structure.
/// Share definitions: compute_share = Σ per-round compute time / total
/// wall, comm_share = (Σ per-round comm time + flush) / total wall. The
/// overlapped method hides comm behind compute, so its shares may sum
/// past 1; the serial baselines' never do.
pub fn cmd_compare(
    config: &Path,
    method_names: &[String],
    out: Option<&Path>,
) -> Result<(), CliError> {
    let file = load(config)?;
    let methods = method_names
        .iter()
        .map(|m| parse_method(m))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Config("no methods selected".into()));
    }
    let bandwidths = if file.sweep.bandwidths.is_empty() {
        vec![file.network.up_bandwidth]
    } else {
        file.sweep.bandwidths.clone()
    };
    // Batch 0 encodes "full batch" in the sweep grid and the output.
    let batches = if file.sweep.batch_sizes.is_empty() {
        vec![file.run.batch_size.unwrap_or(0)]
    } else {
        file.sweep.batch_sizes.clone()
    };
    let mut lines = vec![COMPARE_HEADER.to_string()];
    for &bw in &bandwidths {
        for &batch in &batches {
            let mut cell = file.clone();
            cell.network.up_bandwidth = bw;
            cell.network.down_bandwidth = bw;
            cell.run.batch_size = if batch == 0 { None } else { Some(batch) };
            let exp = cell.build()?;
            for &method in &methods {
                let result = execute(method, &exp.fed, &exp.objectives)?;
                let timing = timing_for_run(
                    method,
                    &exp.fed,
                    &result,
                    &exp.links,
                    &exp.compute,
                    exp.batch_scale,
                    exp.full_broadcast,
                )?;
                let compute: f64 = timing.rounds.iter().map(|r| r.compute_time).sum();
                let comm: f64 =
                    timing.rounds.iter().map(|r| r.comm_time).sum::<f64>() + timing.flush_wall;
                lines.push(format!(
                    "{},{},{},{},{},{},{}",
                    method.name(),
                    format_float(bw),
                    batch,
                    format_float(timing.total_wall),
                    format_float(compute / timing.total_wall),
                    format_float(comm / timing.total_wall),
                    format_float(result.final_loss),
                ));
            }
        }
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

/// Invariant battery on top of the per-round checks the engine already
/// runs: external replay of the applied-aggregate log, untouched-block
/// freshness, cross-client consistency after the flush, and the
/// single-client reduction against plain block coordinate descent.
pub fn cmd_check(config: &Path) -> Result<(), CliError> {
    let file = load(config)?;
    let exp = file.build()?;
    let mut fed = exp.fed.clone();
    fed.verify = true;
    let result = execute(Method::Parablock, &fed, &exp.objectives)?;
    println!(
        "round battery: pass ({} rounds, {} clients)",
        fed.rounds, fed.clients
    );

    // Replay: θ_final must equal θ_0 plus η times every applied aggregate,
    // bit for bit, coordinate by coordinate.
    let mut replay = result.init_model.clone();
    for a in &result.applied {
        replay.block_axpy(&fed.partition, a.block, fed.server_lr, &a.delta)?;
    }
    for j in 0..replay.dim() {
        let (got, want) = (result.final_model.as_slice()[j], replay.as_slice()[j]);
        if got.to_bits() != want.to_bits() {
            return Err(CliError::Invariant(format!(
                "replay mismatch at coordinate {j}: server {got:e} vs replay {want:e}"
            )));
        }
    }
    println!("replay identity: pass ({} applied aggregates)", result.applied.len());

    // Coordinates in never-trained blocks must still be bit-identical to
    // the initial model, on the server and on every client.
    let touched: std::collections::BTreeSet<usize> =
        result.applied.iter().map(|a| a.block.get()).collect();
    let mut untouched = 0usize;
    for b in fed.partition.block_ids() {
        if touched.contains(&b.get()) {
            continue;
        }
        untouched += 1;
        let (lo, hi) = fed.partition.range(b)?;
        for j in lo..hi {
            let init = result.init_model.as_slice()[j];
            if result.final_model.as_slice()[j].to_bits() != init.to_bits() {
                return Err(CliError::Invariant(format!(
                    "untouched block {} moved on the server at coordinate {j}",
                    b.get()
                )));
            }
            for (i, cm) in result.client_models.iter().enumerate() {
                if cm.as_slice()[j].to_bits() != init.to_bits() {
                    return Err(CliError::Invariant(format!(
                        "untouched block {} moved on client {i} at coordinate {j}",
                        b.get()
                    )));
                }
            }
        }
    }
    println!("untouched blocks: pass ({untouched} blocks never scheduled)");

    // After the flush every client agrees with the server to the
    // consistency tolerance.
    for (i, cm) in result.client_models.iter().enumerate() {
        for j in 0..cm.dim() {
            let d = rel_diff(cm.as_slice()[j], result.final_model.as_slice()[j]);
            if d > CONSISTENCY_TOL {
                return Err(CliError::Invariant(format!(
                    "post-flush client {i} disagrees with the server at coordinate {j} \
                     (rel diff {d:e})"
                )));
            }
        }
    }
    println!("post-flush consistency: pass ({} clients)", fed.clients);

    // Single-client reduction: one client, full participation, no fault
    // hooks; the run must match plain block coordinate descent bitwise.
    let mut solo = fed.clone();
    solo.clients = 1;
    solo.participation = Participation::Full;
    solo.debug = Default::default();
    let solo_objs = vec![exp.objectives[0].clone()];
    let solo_run = parablock_run(&solo, &solo_objs)?;
    let oracle = sequential_bcd_run(&solo, &solo_objs[0], &solo_run.blocks())?;
    for j in 0..solo_run.final_model.dim() {
        let (got, want) = (
            solo_run.final_model.as_slice()[j],
            oracle.final_model.as_slice()[j],
        );
        if got.to_bits() != want.to_bits() {
            return Err(CliError::Invariant(format!(
                "single-client reduction diverged from block descent at coordinate {j}: \
                 {got:e} vs {want:e}"
            )));
        }
    }
    println!("single-client reduction: pass ({} rounds)", solo.rounds);
    println!("check: all invariants hold");
    Ok(())
}

// ---------------------------------------------------------------------------
// bound
// ---------------------------------------------------------------------------

/// Run the overlapped method and compare the logged block-gradient
/// channel with the guarantee. Constants come from the objectives unless
/// the `[bound]` section overrides them:
///
/// * smoothness: closed form (quadratic), `¼·max‖x‖²` (logistic), or a
///   power-iteration estimate (mlp);
/// * heterogeneity: measured at the initial model;
/// * initial gap: exact for quadratics via the closed-form minimizer;
///   for the nonnegative cross-entropy losses, `f(θ_0)` is a valid upper
///   bound on the gap and is used as-is.
pub fn cmd_bound(config: &Path) -> Result<(), CliError> {
    let file = load(config)?;
    let exp = file.build()?;
    let mut fed = exp.fed.clone();
    let objs = &exp.objectives;
    let theta0 = initial_model(fed.master_seed, fed.partition.dim(), fed.init_scale);

    let (l, l_tag) = match file.bound.smoothness {
        Some(v) => (v, "override".to_string()),
        None => {
            let s = smoothness_constant(objs)?;
            let tag = match s.kind {
                SmoothnessKind::Exact => "exact",
                SmoothnessKind::UpperBound => "upper_bound",
                SmoothnessKind::Estimate => "estimate",
            };
            (s.value, tag.to_string())
        }
    };
    let (sigma_g, sg_tag) = match file.bound.sigma_g {
        Some(v) => (v, "override"),
        None => (estimate_sigma_g(objs, &theta0)?.sqrt(), "measured"),
    };
    let (gap, gap_tag) = match file.bound.initial_gap {
        Some(v) => (v, "override"),
        None => match objs[0].kind() {
            ObjectiveKind::Quadratic => {
                let star = quadratic_minimizer(objs)?;
                (
                    global_loss(objs, &theta0)? - global_loss(objs, &star)?,
                    "exact",
                )
            }
            // Cross-entropy losses are nonnegative, so f(θ_0) bounds the gap.
            _ => (global_loss(objs, &theta0)?, "loss_at_init"),
        },
    };

    if file.bound.use_schedule {
        let (eta, eta_l) = rate_schedule(
            fed.rounds,
            fed.local_steps,
            fed.clients,
            file.bound.c_eta,
            file.bound.c_etal,
            l,
        )?;
        fed.server_lr = eta;
        match &mut fed.optimizer {
            LocalOptimizer::Sgd(c) => c.eta_l = eta_l,
            LocalOptimizer::AdamW(c) => c.eta_l = eta_l,
        }
    }
    if matches!(fed.optimizer, LocalOptimizer::AdamW(_)) {
        log::warn!("the guarantee analyzes plain sgd local steps; adamw runs are diagnostic only");
    }

    let inputs = BoundInputs {
        eta: fed.server_lr,
        eta_l: fed.optimizer.eta_l(),
        rounds: fed.rounds,
        local_steps: fed.local_steps,
        clients: fed.clients,
        smoothness: l,
        sigma: fed.grad_noise,
        sigma_g,
        initial_gap: gap,
    };
    if !inputs.feasibility().is_ok() {
        log::warn!(
            "rates are outside the guarantee's gate: {}",
            inputs.feasibility().violations().join(", ")
        );
    }

    let result = execute(Method::Parablock, &fed, objs)?;
    let series: Vec<f64> = result.records.iter().map(|r| r.block_grad_norm_sq).collect();
    let report = trace_vs_bound(&series, &inputs)?;
    let terms = parablock::theory::bound_terms(&inputs)?;

    println!("smoothness={} ({l_tag})", format_float(l));
    println!("sigma={}", format_float(fed.grad_noise));
    println!("sigma_g={} ({sg_tag})", format_float(sigma_g));
    println!("initial_gap={} ({gap_tag})", format_float(gap));
    println!("eta={}", format_float(inputs.eta));
    println!("eta_l={}", format_float(inputs.eta_l));
    println!("term_gap={}", format_float(terms[0]));
    println!("term_drift={}", format_float(terms[1]));
    println!("term_noise={}", format_float(terms[2]));
    println!("term_higher_order={}", format_float(terms[3]));
    println!("bound_rhs={}", format_float(report.rhs));
    println!("measured_avg={}", format_float(report.measured_avg));
    println!("ratio={}", format_float(report.ratio));
    println!("rounds={}", report.rounds);
    println!("feasible={}", report.feasibility.is_ok());
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Analytic gradients against central differences at seeded probe points.
pub fn cmd_gradcheck(
    config: &Path,
    tol: f64,
    step: f64,
    points: usize,
) -> Result<(), CliError> {
    if !(tol > 0.0) || !(step > 0.0) || points == 0 {
        return Err(CliError::Config(format!(
            "tol, step and points must be positive (got {tol}, {step}, {points})"
        )));
    }
    let file = load(config)?;
    let objs = file.objectives()?;
    let mut worst = 0.0f64;
    for obj in &objs {
        let mut client_max = 0.0f64;
        for p in 0..points {
            let mut rng =
                stream(file.run.master_seed, obj.client_id() as u64, p as u64, "gradcheck");
            let theta = ParamVector::new(
                (0..obj.dim())
                    .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            client_max = client_max.max(gradient_rel_error(obj, &theta, step)?);
        }
        println!(
            "client={} max_rel_error={}",
            obj.client_id(),
            format_float(client_max)
        );
        worst = worst.max(client_max);
    }
    println!("gradcheck max_rel_error={} tol={}", format_float(worst), format_float(tol));
    if worst > tol {
        return Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {worst:e} exceeds {tol:e}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// partition-preview
// ---------------------------------------------------------------------------

/// Per-client class histogram of the heterogeneous data split, without
/// running anything. Only meaningful for dataset-backed objectives.
pub fn cmd_partition_preview(config: &Path) -> Result<(), CliError> {
    let file = load(config)?;
    let o = &file.objective;
    if o.family == "quadratic" {
        return Err(CliError::Config(
            "quadratic objectives are analytic; there is no dataset to partition".into(),
        ));
    }
    if o.family != "logistic" && o.family != "mlp" {
        return Err(CliError::Config(format!("unknown objective family `{}`", o.family)));
    }
    let seed = file.run.master_seed;
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
    let hist = part.class_histogram(&data);
    let classes = data.num_classes();
    let mut header = String::from("client,rows");
    for c in 0..classes {
        header.push_str(&format!(",class_{c}"));
    }
    println!("{header}");
    let mut totals = vec![0usize; classes];
    for (i, row) in hist.iter().enumerate() {
        let rows: usize = row.iter().sum();
        let mut line = format!("{i},{rows}");
        for (c, n) in row.iter().enumerate() {
            totals[c] += n;
            line.push_str(&format!(",{n}"));
        }
        println!("{line}");
    }
    let mut total_line = format!("total,{}", data.num_samples());
    for t in &totals {
        total_line.push_str(&format!(",{t}"));
    }
    println!("{total_line}");
    Ok(())
}

