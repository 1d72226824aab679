//! Deterministic discrete-time accounting of computation and communication.
//!
//! Nothing here is measured: round times are pure functions of per-client
//! link and compute specs, so simulated wall-clock results are exactly
//! reproducible and independent of the numerical engine. Two round shapes
//! exist:
//!
//! * serial (`fedbcd`, `fedcybgd`, and overlap-free `parablock` with
//!   staleness 0): compute, then upload, then aggregate, then broadcast;
//! * overlapped (`parablock` with staleness ≥ 1): the round-t computation
//!   runs while the previous round's deltas are exchanged, so the round
//!   costs the maximum of the two critical paths, plus one final flush
//!   after the last round for the still-unsent delta.
//!
//! Conventions: paths are billed a per-message latency only when a leg
//! actually transfers bytes; all clients download every aggregate; the
//! delta exchange always lags computation by exactly one round (higher
//! staleness delays only when an aggregate is *applied*, which costs no
//! wire time). Payloads are billed at 4 bytes per parameter unless a
//! compression config overrides them.

use crate::{Error, Result};

/// Wire payload of an uncompressed block of dimension `d_b`: 4 bytes per
/// parameter, matching common reduced-precision transport.
pub fn dense_payload_bytes(d_b: usize) -> f64 {
    4.0 * d_b as f64
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

/// Per-client network endpoint: bandwidths in bytes/second, latency in
/// seconds per message.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub up_bw: f64,
    pub down_bw: f64,
    pub latency: f64,
}

impl LinkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.up_bw > 0.0) || !(self.down_bw > 0.0) {
            return Err(Error::Input(format!(
                "bandwidths must be positive (up {} B/s, down {} B/s)",
                self.up_bw, self.down_bw
            )));
        }
        if self.latency < 0.0 {
            return Err(Error::Input(format!(
                "latency must be nonnegative, got {}",
                self.latency
            )));
        }
        Ok(())
    }
}

/// Per-client compute speed: seconds per local optimizer step at the
/// reference batch size. Cost scales linearly with `batch / reference`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComputeSpec {
    pub sec_per_local_step: f64,
}

impl ComputeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sec_per_local_step > 0.0) {
            return Err(Error::Input(format!(
                "seconds per local step must be positive, got {}",
                self.sec_per_local_step
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Round-time primitives
// ---------------------------------------------------------------------------

fn leg_latency(transfers: &[f64], latency: f64) -> f64 {
    if transfers.iter().any(|&t| t > 0.0) {
        latency
    } else {
        0.0
    }
}

/// Serial round: everyone computes, then uploads (the server aggregates
/// after the last upload lands), then the broadcast goes out. Arrays are
/// per client over the cohort and hold seconds.
pub fn round_time_singlethread(
    compute: &[f64],
    upload: &[f64],
    download: &[f64],
    latency: f64,
) -> Result<f64> {
    if compute.is_empty() || compute.len() != upload.len() || compute.len() != download.len() {
        return Err(Error::Cohort(format!(
            "cohort arrays must be nonempty and equally sized (got {}, {}, {})",
            compute.len(),
            upload.len(),
            download.len()
        )));
    }
    let up_leg = compute
        .iter()
        .zip(upload)
        .map(|(c, u)| c + u)
        .fold(0.0_f64, f64::max);
    let down_leg = download.iter().copied().fold(0.0_f64, f64::max);
    Ok(up_leg + leg_latency(upload, latency) + down_leg + leg_latency(download, latency))
}

/// Overlapped round: the previous round's deltas go up at round start, the
/// aggregate comes back after the last upload, and all of it runs beside
/// this round's computation. `comm_finish_i = max_j upload_prev_j + λ +
/// download_prev_i + λ`; the round costs `max_i max(compute_i,
/// comm_finish_i)`.
pub fn round_time_parallel(
    compute: &[f64],
    upload_prev: &[f64],
    download_prev: &[f64],
    latency: f64,
) -> Result<f64> {
    if compute.is_empty()
        || compute.len() != upload_prev.len()
        || compute.len() != download_prev.len()
    {
        return Err(Error::Cohort(format!(
            "cohort arrays must be nonempty and equally sized (got {}, {}, {})",
            compute.len(),
            upload_prev.len(),
            download_prev.len()
        )));
    }
    let has_comm = upload_prev.iter().any(|&u| u > 0.0) || download_prev.iter().any(|&d| d > 0.0);
    if !has_comm {
        return Ok(compute.iter().copied().fold(0.0_f64, f64::max));
    }
    let up_done = upload_prev.iter().copied().fold(0.0_f64, f64::max)
        + leg_latency(upload_prev, latency);
    let lam_down = leg_latency(download_prev, latency);
    let mut wall = 0.0_f64;
    for i in 0..compute.len() {
        let comm_finish = up_done + download_prev[i] + lam_down;
        wall = wall.max(compute[i].max(comm_finish));
    }
    Ok(wall)
}

// ---------------------------------------------------------------------------
// Timeline simulation
// ---------------------------------------------------------------------------

/// Which federated method a timeline models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Parablock,
    FedBcd,
    FedCyBgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Parablock => "parablock",
            Method::FedBcd => "fedbcd",
            Method::FedCyBgd => "fedcybgd",
        }
    }
}

/// Whether rounds overlap communication with computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimingMode {
    Overlapped,
    Serial,
}

/// One round's communication shape: who computes, who uploads, and the
/// per-transfer payloads. `download_bytes > 0` means every client
/// downloads that payload.
#[derive(Clone, Debug)]
pub struct PlannedRound {
    pub computers: Vec<usize>,
    pub uploaders: Vec<usize>,
    pub upload_bytes: f64,
    pub download_bytes: f64,
}

/// Post-loop exchange of the still-unsent final delta (overlapped mode).
#[derive(Clone, Debug)]
pub struct PlannedFlush {
    pub uploaders: Vec<usize>,
    pub upload_bytes: f64,
    pub download_bytes: f64,
}

/// A full run's communication schedule plus its timing mode.
#[derive(Clone, Debug)]
pub struct TimelinePlan {
    pub mode: TimingMode,
    pub rounds: Vec<PlannedRound>,
    pub flush: Option<PlannedFlush>,
}

/// Build the communication schedule a method induces.
///
/// `blocks` is the realized zero-based block index per round, `cohorts`
/// the computing clients per round (for `fedcybgd` the single elected
/// client), and `up_bytes`/`down_bytes` the per-block payloads after any
/// compression. With `full_broadcast`, `fedcybgd` downloads
/// `full_model_bytes` every round instead of the updated block.
#[allow(clippy::too_many_arguments)]
pub fn plan_timeline(
    method: Method,
    blocks: &[usize],
    cohorts: &[Vec<usize>],
    up_bytes: &[f64],
    down_bytes: &[f64],
    full_model_bytes: f64,
    staleness: usize,
    full_broadcast: bool,
) -> Result<TimelinePlan> {
    if blocks.len() != cohorts.len() {
        return Err(Error::Input(format!(
            "schedule covers {} rounds but cohorts cover {}",
            blocks.len(),
            cohorts.len()
        )));
    }
    let rounds_total = blocks.len();
    let overlapped = method == Method::Parablock && staleness >= 1;
    let mut rounds = Vec::with_capacity(rounds_total);
    for t in 0..rounds_total {
        let (uploaders, upload_bytes, download_bytes) = match (method, overlapped) {
            (Method::Parablock, true) => {
                if t == 0 {
                    (Vec::new(), 0.0, 0.0)
                } else {
                    let b = blocks[t - 1];
                    (cohorts[t - 1].clone(), up_bytes[b], down_bytes[b])
                }
            }
            // Serial methods exchange the round's own delta within the round.
            (Method::FedCyBgd, _) => {
                let b = blocks[t];
                let down = if full_broadcast {
                    full_model_bytes
                } else {
                    down_bytes[b]
                };
                (cohorts[t].clone(), up_bytes[b], down)
            }
            _ => {
                let b = blocks[t];
                (cohorts[t].clone(), up_bytes[b], down_bytes[b])
            }
        };
        rounds.push(PlannedRound {
            computers: cohorts[t].clone(),
            uploaders,
            upload_bytes,
            download_bytes,
        });
    }
    let flush = if overlapped && rounds_total > 0 {
        let b = blocks[rounds_total - 1];
        Some(PlannedFlush {
            uploaders: cohorts[rounds_total - 1].clone(),
            upload_bytes: up_bytes[b],
            download_bytes: down_bytes[b],
        })
    } else {
        None
    };
    Ok(TimelinePlan {
        mode: if overlapped {
            TimingMode::Overlapped
        } else {
            TimingMode::Serial
        },
        rounds,
        flush,
    })
}

/// One round of simulated timing. Byte counts are totals across clients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundTiming {
    pub compute_time: f64,
    pub comm_time: f64,
    pub round_wall: f64,
    pub cum_wall: f64,
    pub bytes_up: f64,
    pub bytes_down: f64,
}

/// Whole-run timing: per-round walls plus the final flush. The total
/// always equals the sum of round walls plus the flush wall.
#[derive(Clone, Debug)]
pub struct TimingTrace {
    pub rounds: Vec<RoundTiming>,
    pub flush_wall: f64,
    pub flush_bytes_up: f64,
    pub flush_bytes_down: f64,
    pub total_wall: f64,
}

/// Execute a plan against per-client link and compute specs.
///
/// `local_steps` and `batch_scale` (batch size over reference batch) set
/// each computing client's round cost to
/// `local_steps · sec_per_local_step · batch_scale`.
pub fn simulate_timeline(
    plan: &TimelinePlan,
    links: &[LinkSpec],
    compute: &[ComputeSpec],
    local_steps: usize,
    batch_scale: f64,
) -> Result<TimingTrace> {
    if links.is_empty() || links.len() != compute.len() {
        return Err(Error::Input(format!(
            "need one link and compute spec per client (got {} and {})",
            links.len(),
            compute.len()
        )));
    }
    for l in links {
        l.validate()?;
    }
    for c in compute {
        c.validate()?;
    }
    if local_steps == 0 || !(batch_scale > 0.0) {
        return Err(Error::Input(format!(
            "local steps and batch scale must be positive (got {local_steps}, {batch_scale})"
        )));
    }
    let n = links.len();
    let latency = links.iter().map(|l| l.latency).fold(0.0_f64, f64::max);
    let mut rounds = Vec::with_capacity(plan.rounds.len());
    let mut cum = 0.0_f64;
    for pr in &plan.rounds {
        let mut compute_secs = vec![0.0; n];
        for &i in &pr.computers {
            compute_secs[i] = local_steps as f64 * compute[i].sec_per_local_step * batch_scale;
        }
        let mut upload_secs = vec![0.0; n];
        for &i in &pr.uploaders {
            upload_secs[i] = pr.upload_bytes / links[i].up_bw;
        }
        let download_secs: Vec<f64> = if pr.download_bytes > 0.0 {
            links.iter().map(|l| pr.download_bytes / l.down_bw).collect()
        } else {
            vec![0.0; n]
        };
        let compute_time = compute_secs.iter().copied().fold(0.0_f64, f64::max);
        let (round_wall, comm_time) = match plan.mode {
            TimingMode::Overlapped => {
                let wall =
                    round_time_parallel(&compute_secs, &upload_secs, &download_secs, latency)?;
                let has_comm = upload_secs.iter().any(|&u| u > 0.0)
                    || download_secs.iter().any(|&d| d > 0.0);
                let comm = if has_comm {
                    let up_done = upload_secs.iter().copied().fold(0.0_f64, f64::max)
                        + leg_latency(&upload_secs, latency);
                    let lam_down = leg_latency(&download_secs, latency);
                    download_secs
                        .iter()
                        .map(|d| up_done + d + lam_down)
                        .fold(0.0_f64, f64::max)
                } else {
                    0.0
                };
                (wall, comm)
            }
            TimingMode::Serial => {
                let wall =
                    round_time_singlethread(&compute_secs, &upload_secs, &download_secs, latency)?;
                (wall, wall - compute_time)
            }
        };
        cum += round_wall;
        rounds.push(RoundTiming {
            compute_time,
            comm_time,
            round_wall,
            cum_wall: cum,
            bytes_up: pr.uploaders.len() as f64 * pr.upload_bytes,
            bytes_down: if pr.download_bytes > 0.0 {
                n as f64 * pr.download_bytes
            } else {
                0.0
            },
        });
    }
    let (flush_wall, flush_up, flush_down) = match &plan.flush {
        Some(f) => {
            let mut upload_secs = vec![0.0; n];
            for &i in &f.uploaders {
                upload_secs[i] = f.upload_bytes / links[i].up_bw;
            }
            let download_secs: Vec<f64> = if f.download_bytes > 0.0 {
                links.iter().map(|l| f.download_bytes / l.down_bw).collect()
            } else {
                vec![0.0; n]
            };
            let wall = upload_secs.iter().copied().fold(0.0_f64, f64::max)
                + leg_latency(&upload_secs, latency)
                + download_secs.iter().copied().fold(0.0_f64, f64::max)
                + leg_latency(&download_secs, latency);
            (
                wall,
                f.uploaders.len() as f64 * f.upload_bytes,
                if f.download_bytes > 0.0 {
                    n as f64 * f.download_bytes
                } else {
                    0.0
                },
            )
        }
        None => (0.0, 0.0, 0.0),
    };
    Ok(TimingTrace {
        total_wall: cum + flush_wall,
        rounds,
        flush_wall,
        flush_bytes_up: flush_up,
        flush_bytes_down: flush_down,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_links(n: usize, up: f64, down: f64, latency: f64) -> Vec<LinkSpec> {
        vec![
            LinkSpec {
                up_bw: up,
                down_bw: down,
                latency,
            };
            n
        ]
    }

    fn uniform_compute(n: usize, sec: f64) -> Vec<ComputeSpec> {
        vec![ComputeSpec { sec_per_local_step: sec }; n]
    }

    #[test]
    fn serial_round_is_the_sum_of_legs() {
        let t = round_time_singlethread(&[10.0], &[3.0], &[3.0], 0.0).unwrap();
        assert_eq!(t, 16.0);
    }

    #[test]
    fn serial_round_without_communication_is_pure_compute() {
        let t = round_time_singlethread(&[10.0, 8.0], &[0.0, 0.0], &[0.0, 0.0], 5.0).unwrap();
        assert_eq!(t, 10.0); // zero-byte legs bill no latency
    }

    #[test]
    fn serial_round_takes_the_slowest_critical_path() {
        // compute (10, 12), upload (3, 1), download (2, 2):
        // upload leg max(13, 13) = 13, download leg 2.
        let t = round_time_singlethread(&[10.0, 12.0], &[3.0, 1.0], &[2.0, 2.0], 0.0).unwrap();
        assert_eq!(t, 15.0);
    }

    #[test]
    fn overlapped_round_hides_communication_under_compute() {
        let t = round_time_parallel(&[10.0], &[3.0], &[3.0], 0.0).unwrap();
        assert_eq!(t, 10.0);
    }

    #[test]
    fn overlapped_round_can_be_communication_bound() {
        let t = round_time_parallel(&[4.0], &[3.0], &[3.0], 0.0).unwrap();
        assert_eq!(t, 6.0);
    }

    #[test]
    fn overlapped_round_without_messages_is_pure_compute() {
        let t = round_time_parallel(&[7.0, 9.0], &[0.0, 0.0], &[0.0, 0.0], 2.0).unwrap();
        assert_eq!(t, 9.0);
    }

    #[test]
    fn empty_cohort_is_rejected() {
        assert!(round_time_singlethread(&[], &[], &[], 0.0).is_err());
        assert!(round_time_parallel(&[], &[], &[], 0.0).is_err());
    }

    /// Homogeneous latency-free totals over T rounds: the overlapped run
    /// costs p + (T−1)·max(p, c) + c against the serial T·(p + c); with
    /// p=10, c=6, T=4 that is 46 against 64.
    #[test]
    fn homogeneous_totals_match_the_closed_forms() {
        let n = 3;
        let t_rounds = 4;
        // One block of 25 params → 100 B; up_bw/down_bw chosen so upload
        // and download each take 3 s: p = 10, c = 6.
        let blocks = vec![0usize; t_rounds];
        let cohorts: Vec<Vec<usize>> = (0..t_rounds).map(|_| (0..n).collect()).collect();
        let up = vec![100.0];
        let down = vec![100.0];
        let links = uniform_links(n, 100.0 / 3.0, 100.0 / 3.0, 0.0);
        let compute = uniform_compute(n, 2.0); // 5 steps × 2 s = 10 s

        let pb = plan_timeline(Method::Parablock, &blocks, &cohorts, &up, &down, 100.0, 1, false)
            .unwrap();
        let pb_trace = simulate_timeline(&pb, &links, &compute, 5, 1.0).unwrap();
        assert!((pb_trace.total_wall - 46.0).abs() < 1e-9);
        assert_eq!(pb_trace.rounds[0].round_wall, 10.0);
        assert_eq!(pb_trace.rounds[0].comm_time, 0.0);
        assert!((pb_trace.flush_wall - 6.0).abs() < 1e-9);

        let fb = plan_timeline(Method::FedBcd, &blocks, &cohorts, &up, &down, 100.0, 0, false)
            .unwrap();
        let fb_trace = simulate_timeline(&fb, &links, &compute, 5, 1.0).unwrap();
        assert!((fb_trace.total_wall - 64.0).abs() < 1e-9);
        assert_eq!(fb_trace.flush_wall, 0.0);
    }

    #[test]
    fn vanishing_communication_closes_the_gap() {
        let n = 2;
        let t_rounds = 5;
        let blocks = vec![0usize; t_rounds];
        let cohorts: Vec<Vec<usize>> = (0..t_rounds).map(|_| (0..n).collect()).collect();
        let up = vec![1e-9];
        let down = vec![1e-9];
        let links = uniform_links(n, 1.0, 1.0, 0.0);
        let compute = uniform_compute(n, 1.0);
        let pb = plan_timeline(Method::Parablock, &blocks, &cohorts, &up, &down, 1e-9, 1, false)
            .unwrap();
        let fb = plan_timeline(Method::FedBcd, &blocks, &cohorts, &up, &down, 1e-9, 0, false)
            .unwrap();
        let pb_total = simulate_timeline(&pb, &links, &compute, 3, 1.0).unwrap().total_wall;
        let fb_total = simulate_timeline(&fb, &links, &compute, 3, 1.0).unwrap().total_wall;
        assert!((pb_total / fb_total - 1.0).abs() < 1e-6);
    }

    /// With equal per-round compute and full-model broadcasts, the cyclic
    /// method pays a strictly larger download every round than the
    /// all-client baseline whenever the model has more than one block.
    #[test]
    fn cyclic_broadcast_overhead_exceeds_fedbcd() {
        let n = 3;
        let t_rounds = 6; // T ≥ N
        let blocks: Vec<usize> = (0..t_rounds).map(|t| t % 2).collect();
        let full_cohorts: Vec<Vec<usize>> = (0..t_rounds).map(|_| (0..n).collect()).collect();
        let single_cohorts: Vec<Vec<usize>> = (0..t_rounds).map(|t| vec![t % n]).collect();
        let up = vec![200.0, 200.0];
        let down = vec![200.0, 200.0];
        let full_model = 400.0;
        let links = uniform_links(n, 50.0, 50.0, 0.0);
        let compute = uniform_compute(n, 1.0);
        let fb = plan_timeline(Method::FedBcd, &blocks, &full_cohorts, &up, &down, full_model, 0, false)
            .unwrap();
        let cy = plan_timeline(
            Method::FedCyBgd,
            &blocks,
            &single_cohorts,
            &up,
            &down,
            full_model,
            0,
            true,
        )
        .unwrap();
        let fb_total = simulate_timeline(&fb, &links, &compute, 2, 1.0).unwrap().total_wall;
        let cy_total = simulate_timeline(&cy, &links, &compute, 2, 1.0).unwrap().total_wall;
        assert!(
            cy_total > fb_total,
            "cyclic {cy_total} should exceed baseline {fb_total}"
        );
    }

    #[test]
    fn single_round_run_has_equal_totals_across_modes() {
        let n = 2;
        let blocks = vec![0usize];
        let cohorts = vec![(0..n).collect::<Vec<_>>()];
        let up = vec![120.0];
        let down = vec![120.0];
        let links = uniform_links(n, 60.0, 60.0, 0.0);
        let compute = uniform_compute(n, 3.0);
        let pb = plan_timeline(Method::Parablock, &blocks, &cohorts, &up, &down, 120.0, 1, false)
            .unwrap();
        let fb = plan_timeline(Method::FedBcd, &blocks, &cohorts, &up, &down, 120.0, 0, false)
            .unwrap();
        let pb_total = simulate_timeline(&pb, &links, &compute, 1, 1.0).unwrap().total_wall;
        let fb_total = simulate_timeline(&fb, &links, &compute, 1, 1.0).unwrap().total_wall;
        assert!((pb_total - fb_total).abs() < 1e-12);
    }

    #[test]
    fn latency_is_billed_once_per_message_leg() {
        // Serial: up leg + down leg → 2 latencies. Overlapped comm path the same.
        let t = round_time_singlethread(&[10.0], &[3.0], &[3.0], 0.5).unwrap();
        assert_eq!(t, 17.0);
        let t = round_time_parallel(&[1.0], &[3.0], &[3.0], 0.5).unwrap();
        assert_eq!(t, 7.0);
    }

    #[test]
    fn partial_participation_bills_only_uploaders() {
        let n = 4;
        let blocks = vec![0usize, 0];
        let cohorts = vec![vec![0, 2], vec![1, 3]];
        let up = vec![80.0];
        let down = vec![80.0];
        let links = uniform_links(n, 40.0, 40.0, 0.0);
        let compute = uniform_compute(n, 1.0);
        let plan = plan_timeline(Method::Parablock, &blocks, &cohorts, &up, &down, 80.0, 1, false)
            .unwrap();
        let trace = simulate_timeline(&plan, &links, &compute, 1, 1.0).unwrap();
        assert_eq!(trace.rounds[0].bytes_up, 0.0);
        assert_eq!(trace.rounds[1].bytes_up, 2.0 * 80.0); // round 0's cohort uploads
        assert_eq!(trace.rounds[1].bytes_down, 4.0 * 80.0); // everyone downloads
    }
}
