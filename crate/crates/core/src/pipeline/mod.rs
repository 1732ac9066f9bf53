//! Streaming signal processing: cycle framing, RMS denoising, steady-state
//! differential currents, harmonic features, and training-set preparation.
//!
//! The central object is the differential current: the sample-wise
//! difference between the newest cycle and the cycle `D` positions back.
//! Because cycles are phase-aligned by the shared-time framing, a switch
//! event inside the gap leaves (almost exactly) the switched appliance's
//! own steady waveform in the difference, while steady background cancels
//! to jitter and noise.

mod prep;

pub use prep::{
    augment_pairs, count_classes, filter_samples, labeled_events, locate_obvious_events,
    prepare_training_set, read_training_file, rms_thresholds, signature_from_spec,
    write_training_file, LabelEntry, LabelMap, LocatedEvent, LocatedEvents, PipelineConfig,
    PreparedSet,
};

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::schedule::SwitchAction;
use crate::simulate::CycleFrame;

/// Default differential interval in cycles.
pub const DEFAULT_DIFF_INTERVAL: usize = 30;

/// Harmonics retained per diff (orders 1..=10).
pub const N_HARMONICS: usize = 10;

/// Feature dimensionality: (real, imaginary, magnitude) per harmonic.
pub const FEATURE_DIM: usize = 3 * N_HARMONICS;

/// The idle / no-event class label.
pub const IDLE_CLASS: u16 = 0;

/// Class label for an appliance event. Layout: 0 is idle, appliance `i`
/// switching on is `1 + 2i`, switching off is `2 + 2i`.
pub fn event_class(appliance_id: u32, action: SwitchAction) -> u16 {
    let base = 1 + 2 * appliance_id as u16;
    match action {
        SwitchAction::On => base,
        SwitchAction::Off => base + 1,
    }
}

/// Inverse of [`event_class`]; `None` for the idle class.
pub fn class_appliance(label: u16) -> Option<(u32, SwitchAction)> {
    if label == IDLE_CLASS {
        return None;
    }
    let idx = (label - 1) / 2;
    let action = if label % 2 == 1 {
        SwitchAction::On
    } else {
        SwitchAction::Off
    };
    Some((idx as u32, action))
}

/// Total class count for `n` appliances (two events each, plus idle).
pub fn n_classes(n_appliances: u32) -> usize {
    1 + 2 * n_appliances as usize
}

/// Sliding window of the last `capacity` aggregate-current cycles.
#[derive(Debug, Clone)]
pub struct CycleRing {
    capacity: usize,
    cycles: VecDeque<(u64, Vec<f64>)>,
}

impl CycleRing {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(param("ring capacity must be positive"));
        }
        Ok(CycleRing {
            capacity,
            cycles: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Filled to capacity, i.e. past warm-up.
    pub fn is_warm(&self) -> bool {
        self.cycles.len() == self.capacity
    }

    /// Newest cycle id held, if any.
    pub fn head_cycle_id(&self) -> Option<u64> {
        self.cycles.back().map(|(id, _)| *id)
    }

    /// Push a cycle; once warm, also return `new - oldest` and evict the
    /// oldest. Returns `None` during warm-up.
    pub fn push(&mut self, cycle_id: u64, aggregate: &[f64]) -> Option<DiffCurrent> {
        let diff = if self.is_warm() {
            let (old_id, old) = self.cycles.pop_front().expect("warm ring is nonempty");
            let samples = aggregate
                .iter()
                .zip(&old)
                .map(|(n, o)| n - o)
                .collect::<Vec<f64>>();
            Some(DiffCurrent {
                samples,
                cycle_id_old: old_id,
                cycle_id_new: cycle_id,
            })
        } else {
            None
        };
        self.cycles.push_back((cycle_id, aggregate.to_vec()));
        diff
    }
}

/// Steady-state differential current between two cycles `D` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffCurrent {
    pub samples: Vec<f64>,
    pub cycle_id_old: u64,
    pub cycle_id_new: u64,
}

/// Streaming differential step: feed one frame, get the diff against the
/// frame `D` cycles back once the ring has warmed up.
pub fn ssdiff(ring: &mut CycleRing, frame: &CycleFrame) -> Option<DiffCurrent> {
    ring.push(frame.cycle_id, &frame.aggregate)
}

/// Root-mean-square of one cycle's samples.
pub fn cycle_rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Mean of an RMS window after discarding the `drop_top` largest and
/// `drop_bottom` smallest values (surge suppression).
pub fn denoised_rms(rms_window: &[f64], drop_top: usize, drop_bottom: usize) -> Result<f64> {
    let l = rms_window.len();
    if l <= drop_top + drop_bottom {
        return Err(param(format!(
            "denoise window of {l} cannot drop {drop_top}+{drop_bottom} values"
        )));
    }
    let mut sorted = rms_window.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = &sorted[drop_bottom..l - drop_top];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// First ten harmonics of a diff as (real, imaginary, magnitude) triples.
///
/// Convention: unnormalized forward DFT over exactly one cycle, so bin `k`
/// sits at `k * mains_hz` and a pure sine of amplitude `A` at harmonic `k`
/// yields magnitude `A * cycle_len / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffFeatureVector {
    /// Layout: `[re_1, im_1, mag_1, re_2, im_2, mag_2, ...]`.
    pub values: [f64; FEATURE_DIM],
}

impl DiffFeatureVector {
    pub fn zero() -> Self {
        DiffFeatureVector {
            values: [0.0; FEATURE_DIM],
        }
    }

    fn slot(harmonic: usize) -> usize {
        assert!((1..=N_HARMONICS).contains(&harmonic), "harmonic 1..=10");
        3 * (harmonic - 1)
    }

    pub fn re(&self, harmonic: usize) -> f64 {
        self.values[Self::slot(harmonic)]
    }

    pub fn im(&self, harmonic: usize) -> f64 {
        self.values[Self::slot(harmonic) + 1]
    }

    pub fn mag(&self, harmonic: usize) -> f64 {
        self.values[Self::slot(harmonic) + 2]
    }

    /// The ten magnitude entries, used for similarity filtering.
    pub fn magnitudes(&self) -> [f64; N_HARMONICS] {
        std::array::from_fn(|i| self.values[3 * i + 2])
    }
}

/// Harmonic features of a diff current (see [`DiffFeatureVector`] for the
/// DFT convention).
pub fn harmonic_features(diff: &DiffCurrent) -> DiffFeatureVector {
    harmonic_features_of(&diff.samples)
}

/// Same extraction from any single-cycle sample slice.
pub fn harmonic_features_of(samples: &[f64]) -> DiffFeatureVector {
    let len = samples.len();
    let mut values = [0.0f64; FEATURE_DIM];
    for k in 1..=N_HARMONICS {
        let w = k as f64 * std::f64::consts::TAU / len as f64;
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (s, &x) in samples.iter().enumerate() {
            let theta = w * s as f64;
            re += x * theta.cos();
            im -= x * theta.sin();
        }
        let base = 3 * (k - 1);
        values[base] = re;
        values[base + 1] = im;
        values[base + 2] = re.hypot(im);
    }
    DiffFeatureVector { values }
}

/// One labeled training example for the event classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub class_label: u16,
    pub features: DiffFeatureVector,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sine(len: usize, amp: f64, harmonic: usize, phase: f64) -> Vec<f64> {
        (0..len)
            .map(|s| {
                amp * (harmonic as f64 * std::f64::consts::TAU * s as f64 / len as f64 + phase)
                    .sin()
            })
            .collect()
    }

    #[test]
    fn rms_basics() {
        assert_eq!(cycle_rms(&vec![0.0; 320]), 0.0);
        let unit = sine(320, 1.0, 1, 0.0);
        assert!((cycle_rms(&unit) - 1.0 / std::f64::consts::SQRT_2).abs() < 1e-12);
        let double = sine(320, 2.0, 1, 0.0);
        assert!((cycle_rms(&double) - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn denoised_rms_drops_extremes() {
        assert_eq!(denoised_rms(&[1.0, 2.0, 3.0, 4.0, 5.0], 1, 1).unwrap(), 3.0);
        assert_eq!(denoised_rms(&[7.5; 9], 2, 3).unwrap(), 7.5);
        let with_surge = [1.0, 1.0, 100.0, 1.0, 1.0];
        assert_eq!(denoised_rms(&with_surge, 1, 0).unwrap(), 1.0);
        assert!(denoised_rms(&[1.0, 2.0], 1, 1).is_err());
    }

    #[test]
    fn ring_warms_up_then_pairs_d_apart() {
        let d = 5;
        let mut ring = CycleRing::new(d).unwrap();
        for i in 0..20u64 {
            let cycle = vec![i as f64; 4];
            let out = ring.push(i, &cycle);
            if (i as usize) < d {
                assert!(out.is_none(), "warm-up at {i}");
                assert!(!ring.is_warm() || i as usize == d - 1);
            } else {
                let diff = out.expect("warm ring diffs");
                assert_eq!(diff.cycle_id_new - diff.cycle_id_old, d as u64);
                assert_eq!(diff.samples, vec![d as f64; 4]);
            }
            assert!(ring.len() <= d);
        }
        assert_eq!(ring.head_cycle_id(), Some(19));
    }

    #[test]
    fn streaming_matches_batch() {
        let d = 7;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut ring = CycleRing::new(d).unwrap();
        let mut streamed = Vec::new();
        for (i, f) in frames.iter().enumerate() {
            if let Some(diff) = ring.push(i as u64, f) {
                streamed.push(diff);
            }
        }
        assert_eq!(streamed.len(), frames.len() - d);
        for (j, diff) in streamed.iter().enumerate() {
            let i = j + d;
            let batch: Vec<f64> = frames[i]
                .iter()
                .zip(&frames[i - d])
                .map(|(n, o)| n - o)
                .collect();
            assert_eq!(diff.samples, batch);
        }
    }

    #[test]
    fn diff_is_linear_in_superposition() {
        let d = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut ra = CycleRing::new(d).unwrap();
        let mut rb = CycleRing::new(d).unwrap();
        let mut rab = CycleRing::new(d).unwrap();
        for i in 0..12usize {
            let sum: Vec<f64> = a[i].iter().zip(&b[i]).map(|(x, y)| x + y).collect();
            let da = ra.push(i as u64, &a[i]);
            let db = rb.push(i as u64, &b[i]);
            let dab = rab.push(i as u64, &sum);
            if let (Some(da), Some(db), Some(dab)) = (da, db, dab) {
                for s in 0..8 {
                    assert!((dab.samples[s] - (da.samples[s] + db.samples[s])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn features_of_zero_are_zero() {
        let f = harmonic_features_of(&vec![0.0; 320]);
        assert_eq!(f.values, [0.0; FEATURE_DIM]);
    }

    #[test]
    fn pure_fundamental_magnitude_is_half_cycle_len_times_amplitude() {
        let a = 3.0;
        let f = harmonic_features_of(&sine(320, a, 1, 0.0));
        assert!((f.mag(1) - a * 160.0).abs() < 1e-9, "mag1 {}", f.mag(1));
        for k in 2..=N_HARMONICS {
            assert!(f.mag(k) < 1e-9, "leakage into harmonic {k}");
        }
        // sin convention: energy lands in the (negative) imaginary part
        assert!((f.im(1) + a * 160.0).abs() < 1e-9);
        assert!(f.re(1).abs() < 1e-9);
    }

    #[test]
    fn square_wave_matches_closed_form_dft() {
        // Discrete square wave: +1 for the first half cycle, -1 after.
        // Closed form: even bins vanish; odd bin k has magnitude
        // 2 / sin(pi k / L).
        let len = 320usize;
        let sq: Vec<f64> = (0..len)
            .map(|s| if s < len / 2 { 1.0 } else { -1.0 })
            .collect();
        let f = harmonic_features_of(&sq);
        for k in 1..=N_HARMONICS {
            if k % 2 == 0 {
                assert!(f.mag(k) < 1e-9, "even harmonic {k} = {}", f.mag(k));
            } else {
                let expect = 2.0 / (std::f64::consts::PI * k as f64 / len as f64).sin();
                let rel = (f.mag(k) - expect).abs() / expect;
                assert!(rel < 1e-9, "harmonic {k}: {} vs {expect}", f.mag(k));
            }
        }
        assert!(f.mag(2) < 1e-9);
    }

    #[test]
    fn magnitude_always_equals_hypot() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let samples: Vec<f64> = (0..320).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let f = harmonic_features_of(&samples);
            for k in 1..=N_HARMONICS {
                let h = f.re(k).hypot(f.im(k));
                let denom = h.abs().max(1e-300);
                assert!((f.mag(k) - h).abs() / denom < 1e-12);
            }
        }
    }

    #[test]
    fn class_encoding_round_trips() {
        assert_eq!(class_appliance(IDLE_CLASS), None);
        let mut seen = std::collections::HashSet::new();
        for i in 0..18u32 {
            for action in [SwitchAction::On, SwitchAction::Off] {
                let c = event_class(i, action);
                assert!((c as usize) < n_classes(18));
                assert!(seen.insert(c), "duplicate class {c}");
                assert_eq!(class_appliance(c), Some((i, action)));
            }
        }
        assert_eq!(n_classes(18), 37);
    }
}
