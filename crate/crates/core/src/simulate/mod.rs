//! Synthetic appliance and aggregate current-trace generation.
//!
//! Executes an event schedule against a catalog of appliance waveform models
//! and a grid description, producing cycle-framed, state-labeled traces. Each
//! appliance is a harmonic series (fundamental plus overtones) with per-cycle
//! amplitude jitter, a transient envelope right after switching, and an OFF
//! leakage floor. The aggregate is the sample-wise sum of the individual
//! currents plus Gaussian background noise, so the trace obeys Kirchhoff's
//! current law by construction.

mod catalog;
mod io;

pub use catalog::{default_catalog, Catalog};
pub use io::{read_trace, write_trace, TraceReader, TraceWriter, TRACE_MAGIC, TRACE_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::schedule::{EventSchedule, ScheduleEvent, SwitchAction};

/// One steady-state current harmonic: `amplitude_a * sin(order * theta + phase_rad)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub amplitude_a: f64,
    pub phase_rad: f64,
}

/// Envelope family applied to the steady waveform during the transient
/// cycles after a switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransientShape {
    /// Inrush: starts at `peak_multiple` times the steady amplitude and
    /// decays geometrically toward it (switch-on) or toward zero (switch-off).
    Surge {
        peak_multiple: f64,
        decay_per_cycle: f64,
    },
    /// Soft start: amplitude ramps linearly from zero up to steady
    /// (switch-on) or back down (switch-off).
    Ramp,
}

/// Waveform model for a single appliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSpec {
    pub id: u32,
    pub name: String,
    pub rated_power_w: f64,
    /// Steady ON current as a harmonic series; must contain order 1 with a
    /// positive amplitude.
    pub harmonics: Vec<Harmonic>,
    /// Relative std-dev of the cycle-to-cycle amplitude scaling.
    pub power_jitter_rel: f64,
    /// Transient length `t` in cycles after any switch.
    pub transient_cycles: u32,
    pub transient_shape: TransientShape,
    /// OFF-state leakage noise scale in amperes.
    pub off_leakage_a: f64,
}

impl ApplianceSpec {
    pub fn fundamental(&self) -> Option<&Harmonic> {
        self.harmonics.iter().find(|h| h.order == 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rated_power_w > 0.0) {
            return Err(param(format!(
                "appliance {}: rated power must be positive",
                self.name
            )));
        }
        match self.fundamental() {
            Some(h) if h.amplitude_a > 0.0 => {}
            _ => {
                return Err(param(format!(
                    "appliance {}: needs a fundamental (order 1) harmonic with positive amplitude",
                    self.name
                )))
            }
        }
        if self.harmonics.iter().any(|h| h.order == 0) {
            return Err(param(format!(
                "appliance {}: harmonic orders start at 1",
                self.name
            )));
        }
        if self.power_jitter_rel < 0.0 || self.off_leakage_a < 0.0 {
            return Err(param(format!(
                "appliance {}: jitter and leakage must be non-negative",
                self.name
            )));
        }
        if let TransientShape::Surge {
            peak_multiple,
            decay_per_cycle,
        } = self.transient_shape
        {
            if peak_multiple < 1.0 {
                return Err(param(format!(
                    "appliance {}: surge peak multiple must be >= 1",
                    self.name
                )));
            }
            if !(0.0 < decay_per_cycle && decay_per_cycle < 1.0) {
                return Err(param(format!(
                    "appliance {}: surge decay must lie in (0, 1)",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Aggregate background-noise current model (per-sample Gaussian).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundNoise {
    pub mean_a: f64,
    pub std_a: f64,
}

/// Mains and sampling description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mains_hz: f64,
    pub sample_rate_hz: f64,
    pub voltage_rms_v: f64,
    /// Relative std-dev of per-cycle voltage amplitude scaling.
    pub voltage_jitter_rel: f64,
    pub background_noise_a: BackgroundNoise,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            mains_hz: 50.0,
            sample_rate_hz: 16_000.0,
            voltage_rms_v: 220.0,
            voltage_jitter_rel: 0.0,
            background_noise_a: BackgroundNoise {
                mean_a: 0.0,
                std_a: 0.064,
            },
        }
    }
}

impl GridSpec {
    /// Samples per mains cycle (320 for the defaults).
    pub fn cycle_len(&self) -> usize {
        (self.sample_rate_hz / self.mains_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mains_hz > 0.0) || !(self.sample_rate_hz > 0.0) {
            return Err(param("grid frequencies must be positive"));
        }
        if self.cycle_len() < 4 {
            return Err(param("cycle length must be at least 4 samples"));
        }
        if !(self.voltage_rms_v > 0.0) {
            return Err(param("voltage must be positive"));
        }
        if self.voltage_jitter_rel < 0.0 || self.background_noise_a.std_a < 0.0 {
            return Err(param("jitter and noise std must be non-negative"));
        }
        Ok(())
    }
}

/// Instantaneous electrical state of one appliance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplianceState {
    Off,
    On,
    /// Within the transient window after a switch; `cycles_since_switch`
    /// counts from 0 at the event cycle.
    Transient {
        cycles_since_switch: u32,
        turning_on: bool,
    },
}

/// Extra wideband noise during transients, relative to the fundamental
/// amplitude (transient waveforms are messier than steady ones).
const TRANSIENT_NOISE_REL: f64 = 0.03;

/// Per-cycle mixing rate of the amplitude-drift process used during trace
/// synthesis. Appliance power wanders thermally over minutes, not cycle to
/// cycle: each cycle the drift keeps a `1 - JITTER_MIX_PER_CYCLE` fraction
/// of its previous value, so the scale has marginal std `power_jitter_rel`
/// across runs while cycles a diff interval apart remain nearly identical
/// and steady-state differentials cancel down to the background noise.
const JITTER_MIX_PER_CYCLE: f64 = 1e-5;

/// RNG stream tag for per-appliance drift timelines (appliance per-cycle
/// streams use small tags, so this cannot collide).
const DRIFT_STREAM: u64 = u64::MAX;

/// Envelope factor multiplying the steady waveform `k` cycles after a
/// switch, for a transient of length `t`.
pub fn transient_envelope(shape: &TransientShape, k: u32, t: u32, turning_on: bool) -> f64 {
    match (shape, turning_on) {
        (
            TransientShape::Surge {
                peak_multiple,
                decay_per_cycle,
            },
            true,
        ) => 1.0 + (peak_multiple - 1.0) * decay_per_cycle.powi(k as i32),
        (
            TransientShape::Surge {
                decay_per_cycle, ..
            },
            false,
        ) => decay_per_cycle.powi(k as i32 + 1),
        (TransientShape::Ramp, true) => (k + 1) as f64 / (t + 1) as f64,
        (TransientShape::Ramp, false) => 1.0 - (k + 1) as f64 / (t + 1) as f64,
    }
}

/// Synthesize one cycle of an appliance's current in the given state.
///
/// The amplitude scale is drawn fresh per call; trace synthesis instead
/// threads a slowly drifting scale through [`execute_schedule`].
pub fn synth_appliance_cycle(
    spec: &ApplianceSpec,
    state: ApplianceState,
    grid: &GridSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let jitter = match state {
        ApplianceState::Off => 1.0,
        _ if spec.power_jitter_rel > 0.0 => {
            (1.0 + spec.power_jitter_rel * rng.sample::<f64, _>(StandardNormal)).max(0.0)
        }
        _ => 1.0,
    };
    synth_cycle_scaled(spec, state, grid, jitter, rng)
}

/// One cycle with an externally supplied amplitude scale.
fn synth_cycle_scaled(
    spec: &ApplianceSpec,
    state: ApplianceState,
    grid: &GridSpec,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let len = grid.cycle_len();
    match state {
        ApplianceState::Off => {
            if spec.off_leakage_a == 0.0 {
                vec![0.0; len]
            } else {
                (0..len)
                    .map(|_| spec.off_leakage_a * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
        ApplianceState::On => steady_cycle(spec, len, jitter, 0.0, rng),
        ApplianceState::Transient {
            cycles_since_switch,
            turning_on,
        } => {
            let env = transient_envelope(
                &spec.transient_shape,
                cycles_since_switch,
                spec.transient_cycles,
                turning_on,
            );
            let noise = TRANSIENT_NOISE_REL
                * spec.fundamental().map(|h| h.amplitude_a).unwrap_or(0.0);
            steady_cycle(spec, len, env * jitter, noise, rng)
        }
    }
}

fn steady_cycle(
    spec: &ApplianceSpec,
    len: usize,
    scale: f64,
    extra_noise_a: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = vec![0.0f64; len];
    for h in &spec.harmonics {
        let w = h.order as f64 * std::f64::consts::TAU / len as f64;
        for (s, y) in out.iter_mut().enumerate() {
            *y += scale * h.amplitude_a * (w * s as f64 + h.phase_rad).sin();
        }
    }
    if extra_noise_a > 0.0 {
        for y in &mut out {
            *y += extra_noise_a * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// One labeled voltage cycle of the synthesized stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleFrame {
    pub cycle_id: u64,
    /// Commanded appliance state bitmask (bit i = appliance i ON).
    pub label: u64,
    pub voltage: Vec<f64>,
    pub aggregate: Vec<f64>,
    /// Per-appliance currents, kept only when requested.
    pub individual: Option<Vec<Vec<f64>>>,
}

/// A full synthesized run: grid, catalog and consecutive labeled cycles.
#[derive(Debug, Clone)]
pub struct Trace {
    pub grid: GridSpec,
    /// Label width; kept separately because traces loaded from disk carry
    /// no appliance specs.
    pub n_appliances: u32,
    pub appliances: Vec<ApplianceSpec>,
    pub frames: Vec<CycleFrame>,
}

impl Trace {
    pub fn cycle_len(&self) -> usize {
        self.grid.cycle_len()
    }

    pub fn duration_hours(&self) -> f64 {
        self.frames.len() as f64 / self.grid.mains_hz / 3600.0
    }

    /// Largest per-sample deviation between the aggregate and the sum of the
    /// individual currents, when individual data is present.
    pub fn kirchhoff_max_residual(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for frame in &self.frames {
            let individual = frame.individual.as_ref()?;
            for (s, &agg) in frame.aggregate.iter().enumerate() {
                let sum: f64 = individual.iter().map(|i| i[s]).sum();
                let noise_free = agg - frame.noise_at(s);
                let dev = (noise_free - sum).abs();
                worst = Some(worst.map_or(dev, |w: f64| w.max(dev)));
            }
        }
        worst
    }
}

impl CycleFrame {
    /// Noise contribution at sample `s`, reconstructible only when the frame
    /// kept individual currents (aggregate minus their sum).
    fn noise_at(&self, s: usize) -> f64 {
        match &self.individual {
            Some(ind) => self.aggregate[s] - ind.iter().map(|i| i[s]).sum::<f64>(),
            None => 0.0,
        }
    }
}

/// Options for [`execute_schedule`].
#[derive(Debug, Clone, Default)]
pub struct ExecuteOptions {
    /// Trace length in cycles; defaults to the schedule horizon.
    pub horizon_cycles: Option<u64>,
    /// Retain per-appliance currents in every frame.
    pub keep_individual: bool,
}

/// Execute an event schedule into a labeled trace.
///
/// Appliance `i` of the schedule is driven by `specs[i]`; labels flip exactly
/// at event cycles, while the waveform passes through the spec's transient
/// envelope before settling. Deterministic for a fixed seed.
pub fn execute_schedule(
    schedule: &EventSchedule,
    specs: &[ApplianceSpec],
    grid: &GridSpec,
    seed: u64,
    options: &ExecuteOptions,
) -> Result<Trace> {
    grid.validate()?;
    if schedule.n_appliances as usize != specs.len() {
        return Err(param(format!(
            "schedule drives {} appliances but {} specs supplied",
            schedule.n_appliances,
            specs.len()
        )));
    }
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        if spec.id != i as u32 {
            return Err(param(format!(
                "appliance spec at position {i} has id {}; ids must match positions",
                spec.id
            )));
        }
    }
    let horizon = options.horizon_cycles.unwrap_or_else(|| schedule.horizon_cycles());
    if let Some(last) = schedule.events.last() {
        if last.time_cycle >= horizon {
            return Err(param(format!(
                "schedule event at cycle {} is beyond the {horizon}-cycle horizon",
                last.time_cycle
            )));
        }
    }

    // Per-appliance event timelines for random access by cycle.
    let mut timelines: Vec<Vec<&ScheduleEvent>> = vec![Vec::new(); specs.len()];
    for ev in &schedule.events {
        if ev.appliance_id as usize >= specs.len() {
            return Err(param(format!(
                "event references appliance {} outside the catalog",
                ev.appliance_id
            )));
        }
        timelines[ev.appliance_id as usize].push(ev);
    }

    let state_at = |appliance: usize, cycle: u64| -> (ApplianceState, bool) {
        let tl = &timelines[appliance];
        let idx = tl.partition_point(|e| e.time_cycle <= cycle);
        if idx == 0 {
            return (ApplianceState::Off, false);
        }
        let ev = tl[idx - 1];
        let turning_on = ev.action == SwitchAction::On;
        let k = cycle - ev.time_cycle;
        let t = specs[appliance].transient_cycles as u64;
        let state = if k < t {
            ApplianceState::Transient {
                cycles_since_switch: k as u32,
                turning_on,
            }
        } else if turning_on {
            ApplianceState::On
        } else {
            ApplianceState::Off
        };
        (state, turning_on)
    };

    // Slow per-appliance amplitude drift, materialized up front so the
    // per-cycle synthesis below stays order-independent.
    let rho = 1.0 - JITTER_MIX_PER_CYCLE;
    let innovation = (1.0 - rho * rho).sqrt();
    let drifts: Vec<Vec<f64>> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let sigma = spec.power_jitter_rel;
            if sigma == 0.0 {
                return Vec::new();
            }
            let mut rng = stream_rng(seed, i as u64, DRIFT_STREAM);
            let mut x: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            (0..horizon)
                .map(|_| {
                    let scale = (1.0 + x).max(0.0);
                    x = rho * x + sigma * innovation * rng.sample::<f64, _>(StandardNormal);
                    scale
                })
                .collect()
        })
        .collect();

    let len = grid.cycle_len();
    let noise = &grid.background_noise_a;
    let frames: Vec<CycleFrame> = (0..horizon)
        .into_par_iter()
        .map(|cycle| {
            // Voltage: clean sine with optional per-cycle amplitude jitter.
            let mut vrng = stream_rng(seed, cycle, 0);
            let vscale = if grid.voltage_jitter_rel > 0.0 {
                1.0 + grid.voltage_jitter_rel * vrng.sample::<f64, _>(StandardNormal)
            } else {
                1.0
            };
            let vamp = std::f64::consts::SQRT_2 * grid.voltage_rms_v * vscale;
            let voltage: Vec<f64> = (0..len)
                .map(|s| vamp * (std::f64::consts::TAU * s as f64 / len as f64).sin())
                .collect();

            let mut aggregate = vec![0.0f64; len];
            let mut label = 0u64;
            let mut individual = options
                .keep_individual
                .then(|| Vec::with_capacity(specs.len()));
            for (i, spec) in specs.iter().enumerate() {
                let (state, commanded_on) = state_at(i, cycle);
                if commanded_on {
                    label |= 1 << i;
                }
                let mut arng = stream_rng(seed, cycle, 2 + i as u64);
                let jitter = drifts[i].get(cycle as usize).copied().unwrap_or(1.0);
                let current = synth_cycle_scaled(spec, state, grid, jitter, &mut arng);
                for (a, c) in aggregate.iter_mut().zip(&current) {
                    *a += c;
                }
                if let Some(ind) = individual.as_mut() {
                    ind.push(current);
                }
            }
            if noise.mean_a != 0.0 || noise.std_a != 0.0 {
                let mut nrng = stream_rng(seed, cycle, 1);
                for a in aggregate.iter_mut() {
                    *a += noise.mean_a + noise.std_a * nrng.sample::<f64, _>(StandardNormal);
                }
            }
            CycleFrame {
                cycle_id: cycle,
                label,
                voltage,
                aggregate,
                individual,
            }
        })
        .collect();

    Ok(Trace {
        grid: grid.clone(),
        n_appliances: specs.len() as u32,
        appliances: specs.to_vec(),
        frames,
    })
}

/// Independent, deterministic RNG for (cycle, stream) pairs so parallel
/// synthesis matches sequential synthesis bit for bit.
pub(crate) fn stream_rng(seed: u64, cycle: u64, stream: u64) -> ChaCha8Rng {
    let mut x = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(cycle)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(stream);
    x ^= x >> 31;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 29;
    ChaCha8Rng::seed_from_u64(x)
}

/// Resample an event list toward a per-appliance weight distribution,
/// preserving the total event count.
///
/// Per-appliance quotas follow the weights (largest-remainder rounding);
/// each appliance's quota is drawn from its own events, without replacement
/// while they last, then with replacement. Uniform weights over an already
/// balanced list therefore return a permutation of the input.
pub fn resample_imbalanced(
    events: &[ScheduleEvent],
    weights: &[f64],
    seed: u64,
) -> Result<Vec<ScheduleEvent>> {
    if weights.iter().any(|&w| w < 0.0) {
        return Err(param("resample weights must be non-negative"));
    }
    let total_w: f64 = weights.iter().sum();
    if total_w <= 0.0 {
        return Err(param("resample weights must not all be zero"));
    }
    let mut pools: Vec<Vec<&ScheduleEvent>> = vec![Vec::new(); weights.len()];
    for ev in events {
        let i = ev.appliance_id as usize;
        if i >= weights.len() {
            return Err(param(format!(
                "event references appliance {i} outside the weight table"
            )));
        }
        pools[i].push(ev);
    }
    let total = events.len();
    // Largest-remainder quota split.
    let shares: Vec<f64> = weights.iter().map(|w| w / total_w * total as f64).collect();
    let mut quotas: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut leftover = total - quotas.iter().sum::<usize>();
    let mut by_frac: Vec<usize> = (0..weights.len()).collect();
    by_frac.sort_by(|&a, &b| {
        (shares[b] - shares[b].floor())
            .partial_cmp(&(shares[a] - shares[a].floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut pos = 0usize;
    while leftover > 0 {
        let i = by_frac[pos % by_frac.len()];
        pos += 1;
        if weights[i] > 0.0 {
            quotas[i] += 1;
            leftover -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ScheduleEvent> = Vec::with_capacity(total);
    for (i, quota) in quotas.iter().copied().enumerate() {
        if quota == 0 {
            continue;
        }
        let pool = &pools[i];
        if pool.is_empty() {
            return Err(param(format!(
                "appliance {i} has weight but no events to resample"
            )));
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for k in 0..quota {
            let pick = if k < pool.len() {
                order[k]
            } else {
                rng.gen_range(0..pool.len())
            };
            out.push(pool[pick].clone());
        }
    }
    out.sort_by_key(|e| (e.time_cycle, e.appliance_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{generate_schedule, ScheduleParams};

    fn toy_spec(id: u32, watts: f64) -> ApplianceSpec {
        ApplianceSpec {
            id,
            name: format!("toy{id}"),
            rated_power_w: watts,
            harmonics: vec![Harmonic {
                order: 1,
                amplitude_a: std::f64::consts::SQRT_2 * watts / 220.0,
                phase_rad: 0.0,
            }],
            power_jitter_rel: 0.0,
            transient_cycles: 0,
            transient_shape: TransientShape::Ramp,
            off_leakage_a: 0.0,
        }
    }

    fn quiet_grid() -> GridSpec {
        GridSpec {
            background_noise_a: BackgroundNoise {
                mean_a: 0.0,
                std_a: 0.0,
            },
            ..GridSpec::default()
        }
    }

    #[test]
    fn off_with_zero_leakage_is_silent() {
        let grid = quiet_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = synth_appliance_cycle(&toy_spec(0, 100.0), ApplianceState::Off, &grid, &mut rng);
        assert_eq!(c, vec![0.0; grid.cycle_len()]);
    }

    #[test]
    fn pure_fundamental_has_exact_rms() {
        let grid = quiet_grid();
        let mut spec = toy_spec(0, 100.0);
        spec.harmonics = vec![Harmonic {
            order: 1,
            amplitude_a: 1.0,
            phase_rad: 0.0,
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = synth_appliance_cycle(&spec, ApplianceState::On, &grid, &mut rng);
        let rms = (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt();
        assert!((rms - 1.0 / std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn surge_envelope_definition() {
        let shape = TransientShape::Surge {
            peak_multiple: 5.0,
            decay_per_cycle: 0.5,
        };
        assert_eq!(transient_envelope(&shape, 0, 4, true), 5.0);
        assert_eq!(transient_envelope(&shape, 1, 4, true), 3.0);
        assert!(transient_envelope(&shape, 20, 4, true) - 1.0 < 1e-4);
        assert_eq!(transient_envelope(&shape, 0, 4, false), 0.5);
        let ramp = TransientShape::Ramp;
        assert_eq!(transient_envelope(&ramp, 0, 4, true), 0.2);
        assert_eq!(transient_envelope(&ramp, 3, 4, true), 0.8);
        assert_eq!(transient_envelope(&ramp, 0, 4, false), 0.8);
    }

    #[test]
    fn empty_schedule_zero_noise_is_flat() {
        let schedule = EventSchedule {
            n_appliances: 2,
            dwell_cycles: 10,
            rng_seed: 0,
            params: None,
            events: Vec::new(),
        };
        let specs = [toy_spec(0, 40.0), toy_spec(1, 1500.0)];
        let trace = execute_schedule(
            &schedule,
            &specs,
            &quiet_grid(),
            7,
            &ExecuteOptions {
                horizon_cycles: Some(20),
                keep_individual: false,
            },
        )
        .unwrap();
        assert_eq!(trace.frames.len(), 20);
        for f in &trace.frames {
            assert_eq!(f.label, 0);
            assert!(f.aggregate.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn two_appliance_power_within_two_percent() {
        let schedule = EventSchedule {
            n_appliances: 2,
            dwell_cycles: 10,
            rng_seed: 0,
            params: None,
            events: vec![
                ScheduleEvent {
                    time_cycle: 0,
                    appliance_id: 0,
                    action: SwitchAction::On,
                },
                ScheduleEvent {
                    time_cycle: 0,
                    appliance_id: 1,
                    action: SwitchAction::On,
                },
            ],
        };
        let specs = [toy_spec(0, 40.0), toy_spec(1, 1500.0)];
        let trace = execute_schedule(
            &schedule,
            &specs,
            &quiet_grid(),
            3,
            &ExecuteOptions {
                horizon_cycles: Some(100),
                keep_individual: false,
            },
        )
        .unwrap();
        let mut p_sum = 0.0;
        let mut n = 0usize;
        for f in &trace.frames {
            p_sum += f
                .voltage
                .iter()
                .zip(&f.aggregate)
                .map(|(v, i)| v * i)
                .sum::<f64>();
            n += f.voltage.len();
        }
        let p = p_sum / n as f64;
        assert!(
            (p - 1540.0).abs() / 1540.0 < 0.02,
            "mean power {p} vs 1540 W"
        );
    }

    #[test]
    fn kirchhoff_closure_with_zero_noise() {
        let params = ScheduleParams {
            n_appliances: 4,
            groups_active_per_round: 1,
            rounds: 2,
            dwell_cycles: 40,
            ..ScheduleParams::default()
        };
        let schedule = generate_schedule(&params).unwrap();
        let specs: Vec<ApplianceSpec> =
            (0..4).map(|i| toy_spec(i, 100.0 * (i + 1) as f64)).collect();
        let trace = execute_schedule(
            &schedule,
            &specs,
            &quiet_grid(),
            11,
            &ExecuteOptions {
                horizon_cycles: None,
                keep_individual: true,
            },
        )
        .unwrap();
        let residual = trace.kirchhoff_max_residual().unwrap();
        assert!(residual <= 1e-9, "Kirchhoff residual {residual}");
    }

    #[test]
    fn labels_flip_exactly_at_event_cycles() {
        let params = ScheduleParams {
            n_appliances: 4,
            groups_active_per_round: 1,
            rounds: 2,
            dwell_cycles: 25,
            ..ScheduleParams::default()
        };
        let schedule = generate_schedule(&params).unwrap();
        let mut specs: Vec<ApplianceSpec> =
            (0..4).map(|i| toy_spec(i, 50.0 + 10.0 * i as f64)).collect();
        for s in &mut specs {
            s.transient_cycles = 3;
            s.transient_shape = TransientShape::Surge {
                peak_multiple: 2.0,
                decay_per_cycle: 0.5,
            };
        }
        let trace = execute_schedule(
            &schedule,
            &specs,
            &quiet_grid(),
            5,
            &ExecuteOptions::default(),
        )
        .unwrap();
        let mut expect = 0u64;
        let mut by_cycle = std::collections::BTreeMap::new();
        for ev in &schedule.events {
            by_cycle
                .entry(ev.time_cycle)
                .or_insert_with(Vec::new)
                .push(ev);
        }
        for f in &trace.frames {
            if let Some(evs) = by_cycle.get(&f.cycle_id) {
                for ev in evs {
                    match ev.action {
                        SwitchAction::On => expect |= 1 << ev.appliance_id,
                        SwitchAction::Off => expect &= !(1 << ev.appliance_id),
                    }
                }
            }
            assert_eq!(f.label, expect, "label mismatch at cycle {}", f.cycle_id);
        }
    }

    #[test]
    fn execution_is_deterministic() {
        let params = ScheduleParams {
            n_appliances: 4,
            groups_active_per_round: 1,
            rounds: 1,
            dwell_cycles: 15,
            ..ScheduleParams::default()
        };
        let schedule = generate_schedule(&params).unwrap();
        let specs: Vec<ApplianceSpec> = (0..4)
            .map(|i| {
                let mut s = toy_spec(i, 80.0);
                s.power_jitter_rel = 0.05;
                s.off_leakage_a = 0.01;
                s
            })
            .collect();
        let grid = GridSpec::default();
        let opts = ExecuteOptions::default();
        let a = execute_schedule(&schedule, &specs, &grid, 42, &opts).unwrap();
        let b = execute_schedule(&schedule, &specs, &grid, 42, &opts).unwrap();
        assert_eq!(a.frames.len(), b.frames.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn amplitude_drift_is_slow_but_real() {
        // A jittering load held ON: cycles a diff interval apart must be
        // nearly identical (differentials cancel to noise), yet the level
        // must wander measurably across the whole run.
        let grid = GridSpec {
            sample_rate_hz: 1600.0,
            background_noise_a: BackgroundNoise {
                mean_a: 0.0,
                std_a: 0.0,
            },
            ..GridSpec::default()
        };
        let mut spec = toy_spec(0, 1500.0);
        spec.power_jitter_rel = 0.02;
        let schedule = EventSchedule {
            n_appliances: 1,
            dwell_cycles: 30_000,
            rng_seed: 0,
            params: None,
            events: vec![ScheduleEvent {
                time_cycle: 0,
                appliance_id: 0,
                action: SwitchAction::On,
            }],
        };
        let trace = execute_schedule(&schedule, &[spec], &grid, 11, &ExecuteOptions::default())
            .unwrap();
        assert_eq!(trace.frames.len(), 30_000);

        let rms: Vec<f64> = trace
            .frames
            .iter()
            .map(|f| {
                (f.aggregate.iter().map(|x| x * x).sum::<f64>() / f.aggregate.len() as f64)
                    .sqrt()
            })
            .collect();
        let mean = rms.iter().sum::<f64>() / rms.len() as f64;

        // Mean RMS of 30-cycle-apart sample differentials, relative to the
        // steady level: far below what white 2% jitter would leave behind.
        let d = 30usize;
        let mut diff_acc = 0.0;
        let n_diffs = 2000;
        for c in 0..n_diffs {
            let a = &trace.frames[c].aggregate;
            let b = &trace.frames[c + d].aggregate;
            let ms: f64 =
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
            diff_acc += ms.sqrt();
        }
        let rel_diff = diff_acc / n_diffs as f64 / mean;
        assert!(
            rel_diff < 0.008,
            "steady diffs should cancel almost fully, got {rel_diff:.4} of steady RMS"
        );

        // Long-horizon wander: the per-cycle level is not frozen.
        let var = rms.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rms.len() as f64;
        let rel_std = var.sqrt() / mean;
        assert!(
            (0.003..0.06).contains(&rel_std),
            "run-scale level wander out of range: {rel_std:.5}"
        );
    }

    #[test]
    fn event_beyond_horizon_is_rejected() {
        let schedule = EventSchedule {
            n_appliances: 1,
            dwell_cycles: 5,
            rng_seed: 0,
            params: None,
            events: vec![ScheduleEvent {
                time_cycle: 50,
                appliance_id: 0,
                action: SwitchAction::On,
            }],
        };
        let err = execute_schedule(
            &schedule,
            &[toy_spec(0, 10.0)],
            &quiet_grid(),
            0,
            &ExecuteOptions {
                horizon_cycles: Some(40),
                keep_individual: false,
            },
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    fn balanced_events(n: u32, per: u64) -> Vec<ScheduleEvent> {
        let mut events = Vec::new();
        let mut t = 0;
        for rep in 0..per {
            for a in 0..n {
                events.push(ScheduleEvent {
                    time_cycle: t,
                    appliance_id: a,
                    action: if rep % 2 == 0 {
                        SwitchAction::On
                    } else {
                        SwitchAction::Off
                    },
                });
                t += 10;
            }
        }
        events
    }

    #[test]
    fn uniform_resample_is_a_permutation() {
        let events = balanced_events(4, 6);
        let out = resample_imbalanced(&events, &[1.0; 4], 9).unwrap();
        assert_eq!(out.len(), events.len());
        let key = |e: &ScheduleEvent| (e.time_cycle, e.appliance_id, e.action);
        let mut a: Vec<_> = events.iter().map(key).collect();
        let mut b: Vec<_> = out.iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn single_weight_takes_everything() {
        let events = balanced_events(3, 4);
        let out = resample_imbalanced(&events, &[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(out.len(), events.len());
        assert!(out.iter().all(|e| e.appliance_id == 1));
    }

    #[test]
    fn skewed_resample_matches_weight_balance_ratio() {
        let events = balanced_events(4, 25);
        let weights = [1.0, 0.5, 0.25, 0.25];
        let out = resample_imbalanced(&events, &weights, 4).unwrap();
        let mut counts = [0usize; 4];
        for e in &out {
            counts[e.appliance_id as usize] += 1;
        }
        let br = *counts.iter().min().unwrap() as f64 / *counts.iter().max().unwrap() as f64;
        assert!((br - 0.25).abs() < 0.05, "balance ratio {br}");
    }

    #[test]
    fn all_zero_weights_rejected() {
        let events = balanced_events(2, 2);
        assert!(resample_imbalanced(&events, &[0.0, 0.0], 0).is_err());
    }
}
