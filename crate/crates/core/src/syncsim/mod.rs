//! Two-node synchronization simulation.
//!
//! Compares two ways of agreeing on the time of a current surge seen by two
//! independently clocked sampling nodes:
//!
//! * **Shared perceptible time (SPT)**: each node timestamps the surge as
//!   `(cycle id, phase past the voltage zero crossing)`. The mains voltage is
//!   a physical broadcast, so the only disagreement left is each node
//!   quantizing the surge onto its own sample grid. The error is therefore
//!   hard-bounded by one sampling interval (62.5 us at 16 kHz).
//! * **Beacon-timestamp baseline (TSF-like)**: each node stamps the surge
//!   with its beacon-disciplined local clock. Residual jitter is Gaussian,
//!   with occasional millisecond-scale outliers when a beacon is missed, so
//!   the error is unbounded by the sampling interval.
//!
//! Trials are independent Monte-Carlo draws: surge times are continuous and
//! uniform within a cycle, and trials are spaced random wall-clock seconds
//! apart so the nodes' relative grid phase decorrelates through drift.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, param, Result};
use crate::simulate::stream_rng;

/// Timestamp jitter of a beacon-disciplined clock: Gaussian residual plus a
/// rare fixed-size shift when a beacon is missed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampJitter {
    pub std_us: f64,
    pub outlier_prob: f64,
    pub outlier_shift_us: f64,
}

impl TimestampJitter {
    /// Baseline calibration: with two nodes this yields 99.65% of pairwise
    /// errors under 220 us and 0.35% landing near one millisecond
    /// (980-1060 us).
    pub fn tsf_baseline() -> Self {
        TimestampJitter {
            std_us: 29.0,
            outlier_prob: 0.001_75,
            outlier_shift_us: 1020.0,
        }
    }
}

/// One sampling node's clock imperfections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeClock {
    pub offset_us: f64,
    pub drift_ppm: f64,
    pub timestamp_jitter_us: TimestampJitter,
}

impl NodeClock {
    pub fn validate(&self) -> Result<()> {
        let j = &self.timestamp_jitter_us;
        if !(0.0..=1.0).contains(&j.outlier_prob) {
            return Err(param("outlier_prob must lie in [0, 1]"));
        }
        if j.std_us < 0.0 {
            return Err(param("timestamp jitter std must be non-negative"));
        }
        if self.drift_ppm.abs() > 500.0 {
            return Err(param("clock drift beyond +/-500 ppm is out of scope"));
        }
        Ok(())
    }
}

/// A surge timestamp in shared-perceptible-time coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SptTimestamp {
    pub cycle_id: u64,
    /// Sampling intervals past the first upward voltage zero crossing;
    /// always within `[0, cycle_len)`.
    pub phase_index: f64,
}

/// One surge observed by both nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncTrial {
    pub true_event_time_us: f64,
    pub node_a_estimate_us: f64,
    pub node_b_estimate_us: f64,
    pub abs_error_us: f64,
}

impl SyncTrial {
    pub fn new(true_event_time_us: f64, node_a_estimate_us: f64, node_b_estimate_us: f64) -> Self {
        SyncTrial {
            true_event_time_us,
            node_a_estimate_us,
            node_b_estimate_us,
            abs_error_us: (node_a_estimate_us - node_b_estimate_us).abs(),
        }
    }
}

/// The physical medium both nodes observe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedVoltage {
    pub mains_hz: f64,
    pub sample_rate_hz: f64,
    /// Multiplicative per-sample amplitude noise on the sensed voltage.
    pub amp_noise_rel: f64,
    /// One-way propagation delay to node B; shifts voltage and current
    /// identically, so it cancels out of SPT by construction.
    pub cable_delay_us: f64,
}

impl Default for SharedVoltage {
    fn default() -> Self {
        SharedVoltage {
            mains_hz: 50.0,
            sample_rate_hz: 16_000.0,
            amp_noise_rel: 0.002,
            cable_delay_us: 0.0,
        }
    }
}

impl SharedVoltage {
    pub fn cycle_len(&self) -> usize {
        (self.sample_rate_hz / self.mains_hz).round() as usize
    }

    pub fn cycle_us(&self) -> f64 {
        1e6 / self.mains_hz
    }

    pub fn sample_interval_us(&self) -> f64 {
        1e6 / self.sample_rate_hz
    }
}

/// Full two-node Monte-Carlo configuration (JSON-loadable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    pub voltage: SharedVoltage,
    pub node_a: NodeClock,
    pub node_b: NodeClock,
    pub n_trials: usize,
    /// Probability that a trial suffers an injected beacon timing error.
    pub beacon_error_prob: f64,
    /// Magnitude of that injected error; only errors above half a cycle
    /// (10 ms) can flip a cycle id and void the trial.
    pub beacon_error_us: f64,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            voltage: SharedVoltage::default(),
            node_a: NodeClock {
                offset_us: 130.0,
                drift_ppm: 18.0,
                timestamp_jitter_us: TimestampJitter::tsf_baseline(),
            },
            node_b: NodeClock {
                offset_us: -270.0,
                drift_ppm: -17.0,
                timestamp_jitter_us: TimestampJitter::tsf_baseline(),
            },
            n_trials: 20_000,
            beacon_error_prob: 0.0,
            beacon_error_us: 0.0,
            seed: 1,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        self.node_a.validate()?;
        self.node_b.validate()?;
        if self.n_trials == 0 {
            return Err(param("n_trials must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beacon_error_prob) {
            return Err(param("beacon_error_prob must lie in [0, 1]"));
        }
        if self.voltage.cycle_len() < 4 || !(self.voltage.sample_rate_hz > 0.0) {
            return Err(param("voltage sampling geometry is degenerate"));
        }
        if self.voltage.amp_noise_rel < 0.0 {
            return Err(param("amplitude noise must be non-negative"));
        }
        Ok(())
    }
}

/// Upward zero crossings of a sampled waveform as fractional sample
/// indices, linearly interpolated between the bracketing samples.
pub fn detect_zero_crossings(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(param("need at least two samples to find a crossing"));
    }
    let mut out = Vec::new();
    for s in 0..samples.len() - 1 {
        let (v0, v1) = (samples[s], samples[s + 1]);
        if v0 <= 0.0 && v1 > 0.0 {
            out.push(s as f64 + (-v0) / (v1 - v0));
        }
    }
    if out.is_empty() {
        return Err(degenerate(
            "no upward zero crossing found (DC or silent input)",
        ));
    }
    Ok(out)
}

/// Result of an SPT run: usable trials plus the count of trials voided by
/// cycle-id disagreement.
#[derive(Debug, Clone)]
pub struct SptOutcome {
    pub trials: Vec<SyncTrial>,
    pub excluded_cycle_mismatches: usize,
}

// Derived RNG stream ids, one per independent noise source and trial.
const STREAM_EVENT: u64 = 0;
const STREAM_NODE_A: u64 = 1;
const STREAM_NODE_B: u64 = 2;
const STREAM_BEACON: u64 = 3;
const STREAM_TSF_A: u64 = 4;
const STREAM_TSF_B: u64 = 5;

/// Trial-level shared ground truth: surge time within its cycle and the
/// wall-clock instant of that cycle's start.
fn trial_truth(cfg: &SyncConfig, i: u64) -> (f64, f64) {
    let mut rng = stream_rng(cfg.seed, i, STREAM_EVENT);
    // Trials land seconds apart so relative drift decorrelates grid phase.
    let wall_s = i as f64 * 1.25 + rng.gen_range(0.0..1.0);
    let surge_in_cycle = rng.gen_range(0.0..cfg.voltage.cycle_us());
    (wall_s, surge_in_cycle)
}

/// One node's SPT observation of a surge `surge_in_cycle` microseconds into
/// cycle `cycle_id`, whose true start is at wall time `cycle_start_us`.
fn spt_observe(
    voltage: &SharedVoltage,
    clock: &NodeClock,
    cycle_id: u64,
    cycle_start_us: f64,
    surge_in_cycle: f64,
    delay_us: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> SptTimestamp {
    let len = voltage.cycle_len();
    let nominal = voltage.sample_interval_us();
    let local_interval = nominal * (1.0 + clock.drift_ppm * 1e-6);
    // Grid phase at this cycle: offset plus accumulated drift, mod interval.
    let phase = (clock.offset_us + clock.drift_ppm * 1e-6 * cycle_start_us)
        .rem_euclid(local_interval);
    let w = std::f64::consts::TAU / voltage.cycle_us();

    // Sample a window spanning about 2.25 cycles centred on the cycle start,
    // in true time relative to that start (cable delay shifts the whole
    // observed medium).
    let margin = len / 4;
    let total = 2 * len + 2 * margin;
    let t0 = phase - (len + margin) as f64 * local_interval;
    let samples: Vec<f64> = (0..total)
        .map(|s| {
            let t = t0 + s as f64 * local_interval - delay_us;
            let amp = 1.0 + voltage.amp_noise_rel * rng.sample::<f64, _>(StandardNormal);
            amp * (w * t).sin()
        })
        .collect();
    let crossings = detect_zero_crossings(&samples).expect("sine window has crossings");
    let local_time = |x: f64| t0 + x * local_interval;
    // Reference crossing: nearest to the true cycle start; next crossing
    // measures the node's own samples-per-cycle for self-calibration.
    let (pos, x_ref) = crossings
        .iter()
        .enumerate()
        .map(|(p, &x)| (p, x))
        .min_by(|a, b| {
            local_time(a.1)
                .abs()
                .partial_cmp(&local_time(b.1).abs())
                .unwrap()
        })
        .expect("nonempty");
    let x_next = crossings
        .get(pos + 1)
        .copied()
        .unwrap_or(x_ref + len as f64);
    let measured_cycle = x_next - x_ref;

    // The surge is pinned to the first sample tick at or after its arrival.
    let arrival = surge_in_cycle + delay_us;
    let k = ((arrival - t0) / local_interval).ceil();
    let mut phase_index = (k - x_ref) / measured_cycle * len as f64;
    let mut cycle_id = cycle_id;
    while phase_index >= len as f64 {
        phase_index -= len as f64;
        cycle_id += 1;
    }
    while phase_index < 0.0 {
        phase_index += len as f64;
        cycle_id = cycle_id.saturating_sub(1);
    }
    SptTimestamp {
        cycle_id,
        phase_index,
    }
}

fn spt_estimate_us(voltage: &SharedVoltage, ts: &SptTimestamp) -> f64 {
    ts.cycle_id as f64 * voltage.cycle_us()
        + ts.phase_index / voltage.cycle_len() as f64 * voltage.cycle_us()
}

/// Run the SPT Monte-Carlo: both nodes timestamp the same surges against the
/// shared voltage, each through its own clock.
pub fn spt_align(
    node_a: &NodeClock,
    node_b: &NodeClock,
    shared: &SharedVoltage,
    cfg: &SyncConfig,
) -> Result<SptOutcome> {
    cfg.validate()?;
    let results: Vec<Option<SyncTrial>> = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let (wall_s, surge_in_cycle) = trial_truth(cfg, i);
            let cycle_start_us = wall_s * 1e6;
            let cycle_id = (cycle_start_us / shared.cycle_us()) as u64;
            let truth = cycle_id as f64 * shared.cycle_us() + surge_in_cycle;

            // Beacon fault injection: errors above half a cycle flip one
            // node's cycle id, which the pairing step detects and voids.
            let mut brng = stream_rng(cfg.seed, i, STREAM_BEACON);
            let beacon_broken = cfg.beacon_error_prob > 0.0
                && brng.gen_bool(cfg.beacon_error_prob)
                && cfg.beacon_error_us.abs() > shared.cycle_us() / 2.0;

            let mut rng_a = stream_rng(cfg.seed, i, STREAM_NODE_A);
            let mut rng_b = stream_rng(cfg.seed, i, STREAM_NODE_B);
            let ts_a = spt_observe(
                shared,
                node_a,
                cycle_id,
                cycle_start_us,
                surge_in_cycle,
                0.0,
                &mut rng_a,
            );
            let mut ts_b = spt_observe(
                shared,
                node_b,
                cycle_id,
                cycle_start_us,
                surge_in_cycle,
                shared.cable_delay_us,
                &mut rng_b,
            );
            if beacon_broken {
                ts_b.cycle_id += (cfg.beacon_error_us.abs() / shared.cycle_us()).round() as u64;
            }
            if ts_a.cycle_id != ts_b.cycle_id {
                return None;
            }
            Some(SyncTrial::new(
                truth,
                spt_estimate_us(shared, &ts_a),
                spt_estimate_us(shared, &ts_b),
            ))
        })
        .collect();
    let excluded = results.iter().filter(|r| r.is_none()).count();
    let trials: Vec<SyncTrial> = results.into_iter().flatten().collect();
    if trials.is_empty() {
        return Err(degenerate("every SPT trial was excluded"));
    }
    Ok(SptOutcome {
        trials,
        excluded_cycle_mismatches: excluded,
    })
}

/// Run the beacon-timestamp baseline on the same surges.
pub fn tsf_align(node_a: &NodeClock, node_b: &NodeClock, cfg: &SyncConfig) -> Result<Vec<SyncTrial>> {
    cfg.validate()?;
    let draw = |jitter: &TimestampJitter, rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        if jitter.outlier_prob > 0.0 && rng.gen_bool(jitter.outlier_prob) {
            jitter.outlier_shift_us
        } else {
            jitter.std_us * rng.sample::<f64, _>(StandardNormal)
        }
    };
    Ok((0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let (wall_s, surge_in_cycle) = trial_truth(cfg, i);
            let cycle_start_us = wall_s * 1e6;
            let cycle_id = (cycle_start_us / cfg.voltage.cycle_us()) as u64;
            let truth = cycle_id as f64 * cfg.voltage.cycle_us() + surge_in_cycle;
            let mut rng_a = stream_rng(cfg.seed, i, STREAM_TSF_A);
            let mut rng_b = stream_rng(cfg.seed, i, STREAM_TSF_B);
            let e_a = draw(&node_a.timestamp_jitter_us, &mut rng_a);
            let e_b = draw(&node_b.timestamp_jitter_us, &mut rng_b);
            SyncTrial::new(truth, truth + e_a, truth + e_b)
        })
        .collect())
}

/// Empirical CDF of trial errors: sorted `(error_us, cumulative_fraction)`
/// pairs, deduplicated, ending at fraction 1.0.
pub fn error_cdf(trials: &[SyncTrial]) -> Result<Vec<(f64, f64)>> {
    if trials.is_empty() {
        return Err(degenerate("cannot build a CDF from zero trials"));
    }
    let mut errors: Vec<f64> = trials.iter().map(|t| t.abs_error_us).collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = errors.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, e) in errors.into_iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => out.push((e, frac)),
        }
    }
    Ok(out)
}

/// Write a CDF as `error_us,cum_frac` CSV.
pub fn write_cdf_csv<W: Write>(mut w: W, cdf: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "error_us,cum_frac")?;
    for (e, f) in cdf {
        writeln!(w, "{e},{f}")?;
    }
    Ok(())
}

/// Summary statistics of a paired SPT-versus-baseline run.
#[derive(Debug, Clone, Serialize)]
pub struct SyncComparison {
    pub n_trials: usize,
    pub spt_mean_us: f64,
    pub spt_max_us: f64,
    pub spt_excluded: usize,
    pub tsf_mean_us: f64,
    pub tsf_max_us: f64,
    /// Fraction of baseline errors in the millisecond outlier band
    /// (980-1060 us).
    pub tsf_outlier_fraction: f64,
    /// Fraction of baseline errors under 220 us.
    pub tsf_within_220_fraction: f64,
}

fn mean_max(trials: &[SyncTrial]) -> (f64, f64) {
    let mean = trials.iter().map(|t| t.abs_error_us).sum::<f64>() / trials.len() as f64;
    let max = trials
        .iter()
        .map(|t| t.abs_error_us)
        .fold(f64::MIN, f64::max);
    (mean, max)
}

/// Run both strategies on the same surge set and summarize.
pub fn run_comparison(cfg: &SyncConfig) -> Result<(SptOutcome, Vec<SyncTrial>, SyncComparison)> {
    let spt = spt_align(&cfg.node_a, &cfg.node_b, &cfg.voltage, cfg)?;
    let tsf = tsf_align(&cfg.node_a, &cfg.node_b, cfg)?;
    let (spt_mean, spt_max) = mean_max(&spt.trials);
    let (tsf_mean, tsf_max) = mean_max(&tsf);
    let in_band = tsf
        .iter()
        .filter(|t| (980.0..=1060.0).contains(&t.abs_error_us))
        .count();
    let within_220 = tsf.iter().filter(|t| t.abs_error_us < 220.0).count();
    let summary = SyncComparison {
        n_trials: cfg.n_trials,
        spt_mean_us: spt_mean,
        spt_max_us: spt_max,
        spt_excluded: spt.excluded_cycle_mismatches,
        tsf_mean_us: tsf_mean,
        tsf_max_us: tsf_max,
        tsf_outlier_fraction: in_band as f64 / tsf.len() as f64,
        tsf_within_220_fraction: within_220 as f64 / tsf.len() as f64,
    };
    Ok((spt, tsf, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crossings_of_aligned_sine_sit_on_cycle_starts() {
        let len = 320usize;
        let v: Vec<f64> = (0..3 * len)
            .map(|s| (std::f64::consts::TAU * s as f64 / len as f64).sin())
            .collect();
        let xs = detect_zero_crossings(&v).unwrap();
        assert_eq!(xs[0], 0.0);
        assert!((xs[1] - len as f64).abs() < 1e-9);
        assert!((xs[2] - 2.0 * len as f64).abs() < 1e-9);
    }

    #[test]
    fn half_sample_delay_interpolates_to_half() {
        let len = 320usize;
        let v: Vec<f64> = (0..2 * len)
            .map(|s| (std::f64::consts::TAU * (s as f64 - 0.5) / len as f64).sin())
            .collect();
        let xs = detect_zero_crossings(&v).unwrap();
        assert!((xs[0] - 0.5).abs() < 1e-6, "got {}", xs[0]);
        assert!((xs[1] - (len as f64 + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn dc_input_has_no_crossing() {
        let err = detect_zero_crossings(&[3.0; 640]).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let err = detect_zero_crossings(&[0.0; 640]).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn noisy_crossings_stay_within_a_fifth_of_a_sample() {
        // One thousand cycles of a sine with 1% amplitude noise and a known
        // fractional delay; every estimate must land within 0.2 samples.
        use rand::SeedableRng;
        let len = 320usize;
        let delay = 0.37;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let v: Vec<f64> = (0..1000 * len)
            .map(|s| {
                let amp = 1.0 + 0.01 * rng.sample::<f64, _>(StandardNormal);
                amp * (std::f64::consts::TAU * (s as f64 - delay) / len as f64).sin()
            })
            .collect();
        let xs = detect_zero_crossings(&v).unwrap();
        assert!(xs.len() >= 999, "found {} crossings", xs.len());
        let mut worst = 0.0f64;
        for x in xs {
            let k = (x / len as f64).round();
            let err = (x - (k * len as f64 + delay)).abs();
            worst = worst.max(err);
        }
        assert!(worst < 0.2, "worst crossing error {worst} samples");
    }

    #[test]
    fn identical_clocks_zero_noise_agree_exactly() {
        let mut cfg = SyncConfig {
            n_trials: 200,
            ..SyncConfig::default()
        };
        cfg.voltage.amp_noise_rel = 0.0;
        cfg.node_a = NodeClock {
            offset_us: 40.0,
            drift_ppm: 0.0,
            timestamp_jitter_us: TimestampJitter::tsf_baseline(),
        };
        cfg.node_b = cfg.node_a.clone();
        let out = spt_align(&cfg.node_a, &cfg.node_b, &cfg.voltage, &cfg).unwrap();
        for t in &out.trials {
            assert!(t.abs_error_us < 1e-6, "error {}", t.abs_error_us);
        }
    }

    #[test]
    fn spt_errors_respect_the_sampling_interval_bound() {
        for seed in 0..25 {
            let cfg = SyncConfig {
                n_trials: 400,
                seed,
                ..SyncConfig::default()
            };
            let out = spt_align(&cfg.node_a, &cfg.node_b, &cfg.voltage, &cfg).unwrap();
            let max = out
                .trials
                .iter()
                .map(|t| t.abs_error_us)
                .fold(0.0f64, f64::max);
            assert!(max <= 62.5, "seed {seed}: max error {max} us");
        }
    }

    #[test]
    fn spt_mean_sits_in_the_twenties() {
        let cfg = SyncConfig {
            n_trials: 4000,
            ..SyncConfig::default()
        };
        let out = spt_align(&cfg.node_a, &cfg.node_b, &cfg.voltage, &cfg).unwrap();
        let mean =
            out.trials.iter().map(|t| t.abs_error_us).sum::<f64>() / out.trials.len() as f64;
        assert!(
            (20.0..=30.0).contains(&mean),
            "mean SPT error {mean} us out of band"
        );
    }

    #[test]
    fn beacon_faults_flag_and_exclude_trials() {
        let cfg = SyncConfig {
            n_trials: 2000,
            beacon_error_prob: 0.1,
            beacon_error_us: 15_000.0,
            ..SyncConfig::default()
        };
        let out = spt_align(&cfg.node_a, &cfg.node_b, &cfg.voltage, &cfg).unwrap();
        let frac = out.excluded_cycle_mismatches as f64 / cfg.n_trials as f64;
        assert!((0.06..=0.14).contains(&frac), "excluded fraction {frac}");
        assert_eq!(
            out.trials.len() + out.excluded_cycle_mismatches,
            cfg.n_trials
        );
    }

    #[test]
    fn sub_half_cycle_beacon_errors_are_harmless() {
        let cfg = SyncConfig {
            n_trials: 500,
            beacon_error_prob: 0.5,
            beacon_error_us: 5_000.0,
            ..SyncConfig::default()
        };
        let out = spt_align(&cfg.node_a, &cfg.node_b, &cfg.voltage, &cfg).unwrap();
        assert_eq!(out.excluded_cycle_mismatches, 0);
    }

    #[test]
    fn zero_jitter_baseline_is_exact() {
        let mut cfg = SyncConfig {
            n_trials: 100,
            ..SyncConfig::default()
        };
        let quiet = TimestampJitter {
            std_us: 0.0,
            outlier_prob: 0.0,
            outlier_shift_us: 0.0,
        };
        cfg.node_a.timestamp_jitter_us = quiet.clone();
        cfg.node_b.timestamp_jitter_us = quiet;
        let tsf = tsf_align(&cfg.node_a, &cfg.node_b, &cfg).unwrap();
        for t in &tsf {
            assert_eq!(t.abs_error_us, 0.0);
        }
    }

    #[test]
    fn baseline_splits_into_tight_mode_and_millisecond_tail() {
        let cfg = SyncConfig {
            n_trials: 20_000,
            ..SyncConfig::default()
        };
        let (_, _, summary) = run_comparison(&cfg).unwrap();
        assert!(
            summary.tsf_within_220_fraction > 0.99,
            "within-220 fraction {}",
            summary.tsf_within_220_fraction
        );
        assert!(
            (0.0015..=0.0055).contains(&summary.tsf_outlier_fraction),
            "outlier fraction {}",
            summary.tsf_outlier_fraction
        );
        assert!(summary.tsf_mean_us > summary.spt_mean_us);
        assert!(summary.tsf_max_us > 900.0);
    }

    #[test]
    fn cdf_shape_and_edge_cases() {
        let one = vec![SyncTrial::new(0.0, 5.0, 0.0)];
        assert_eq!(error_cdf(&one).unwrap(), vec![(5.0, 1.0)]);
        let two = vec![SyncTrial::new(0.0, 10.0, 0.0), SyncTrial::new(0.0, 0.0, 30.0)];
        assert_eq!(error_cdf(&two).unwrap(), vec![(10.0, 0.5), (30.0, 1.0)]);
        assert!(error_cdf(&[]).is_err());

        let cfg = SyncConfig {
            n_trials: 1500,
            ..SyncConfig::default()
        };
        let out = spt_align(&cfg.node_a, &cfg.node_b, &cfg.voltage, &cfg).unwrap();
        let cdf = error_cdf(&out.trials).unwrap();
        for pair in cdf.windows(2) {
            assert!(pair[1].0 > pair[0].0);
            assert!(pair[1].1 >= pair[0].1);
        }
        let (last_e, last_f) = *cdf.last().unwrap();
        assert_eq!(last_f, 1.0);
        assert!(last_e <= 62.5, "SPT CDF tops out at {last_e} us");
    }

    #[test]
    fn comparison_is_deterministic() {
        let cfg = SyncConfig {
            n_trials: 300,
            ..SyncConfig::default()
        };
        let a = run_comparison(&cfg).unwrap().2;
        let b = run_comparison(&cfg).unwrap().2;
        assert_eq!(a.spt_mean_us, b.spt_mean_us);
        assert_eq!(a.tsf_mean_us, b.tsf_mean_us);
        assert_eq!(a.spt_max_us, b.spt_max_us);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let cdf = vec![(10.0, 0.5), (30.0, 1.0)];
        let mut buf = Vec::new();
        write_cdf_csv(&mut buf, &cdf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("error_us,cum_frac"));
        assert_eq!(lines.next(), Some("10,0.5"));
        assert_eq!(lines.next(), Some("30,1"));
    }
}
