//! Training-set preparation: obvious-event location, pair augmentation,
//! signature filtering, and the binary training-sample container.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, format_err, param, Result};
use crate::pipeline::{
    class_appliance, cycle_rms, denoised_rms, event_class, harmonic_features, n_classes,
    DiffCurrent, DiffFeatureVector, TrainingSample, DEFAULT_DIFF_INTERVAL, FEATURE_DIM,
    IDLE_CLASS, N_HARMONICS,
};
use crate::schedule::SwitchAction;
use crate::simulate::{ApplianceSpec, Trace};

/// Tunables for diffing and training-set preparation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Differential interval D in cycles.
    pub diff_interval: usize,
    /// Stable cycles taken on each side of an event; yields up to
    /// `n_side * n_side` augmented pairs.
    pub n_side: usize,
    /// RMS denoising window length in cycles.
    pub denoise_len: usize,
    pub drop_top: usize,
    pub drop_bottom: usize,
    /// Minimum cosine similarity between a candidate's harmonic magnitudes
    /// and the appliance signature.
    pub min_similarity: f64,
    /// Event-locator threshold as a fraction of each appliance's steady RMS.
    pub threshold_frac: f64,
    /// Per-class cap on training samples (0 = unlimited).
    pub max_samples_per_class: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            diff_interval: DEFAULT_DIFF_INTERVAL,
            n_side: 50,
            denoise_len: 3,
            drop_top: 0,
            drop_bottom: 0,
            min_similarity: 0.9,
            threshold_frac: 0.5,
            max_samples_per_class: 1500,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.diff_interval < 2 {
            return Err(param("diff_interval must be at least 2 cycles"));
        }
        if self.n_side == 0 {
            return Err(param("n_side must be positive"));
        }
        if self.denoise_len <= self.drop_top + self.drop_bottom {
            return Err(param(
                "denoise window must be longer than the dropped count",
            ));
        }
        if !(0.0..=1.0).contains(&self.min_similarity) {
            return Err(param("min_similarity must lie in [0, 1]"));
        }
        if !(self.threshold_frac > 0.0) {
            return Err(param("threshold_frac must be positive"));
        }
        Ok(())
    }
}

/// Steady-state RMS current of an appliance's harmonic model.
fn steady_rms(spec: &ApplianceSpec) -> f64 {
    (spec
        .harmonics
        .iter()
        .map(|h| h.amplitude_a * h.amplitude_a / 2.0)
        .sum::<f64>())
    .sqrt()
}

/// Per-class RMS-jump thresholds: `frac` of each appliance's steady RMS.
/// The idle class gets an infinite threshold (never located).
pub fn rms_thresholds(specs: &[ApplianceSpec], frac: f64) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; n_classes(specs.len() as u32)];
    for (i, spec) in specs.iter().enumerate() {
        let thr = frac * steady_rms(spec);
        out[event_class(i as u32, SwitchAction::On) as usize] = thr;
        out[event_class(i as u32, SwitchAction::Off) as usize] = thr;
    }
    out
}

/// Ground-truth events recovered from a trace's label bitmasks: one
/// `(cycle_id, class_label)` entry per appliance bit flip, in cycle order.
pub fn labeled_events(trace: &Trace) -> Vec<(u64, u16)> {
    labeled_event_indices(trace)
        .into_iter()
        .map(|(idx, class)| (trace.frames[idx].cycle_id, class))
        .collect()
}

fn labeled_event_indices(trace: &Trace) -> Vec<(usize, u16)> {
    let mut out = Vec::new();
    let mut prev = 0u64;
    for (idx, frame) in trace.frames.iter().enumerate() {
        let changed = prev ^ frame.label;
        if changed != 0 {
            for bit in 0..trace.n_appliances {
                if changed >> bit & 1 == 1 {
                    let action = if frame.label >> bit & 1 == 1 {
                        SwitchAction::On
                    } else {
                        SwitchAction::Off
                    };
                    out.push((idx, event_class(bit, action)));
                }
            }
        }
        prev = frame.label;
    }
    out
}

/// One located training event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocatedEvent {
    /// Cycle where the RMS jump was detected.
    pub located_cycle: u64,
    /// Cycle where the ground-truth label flipped.
    pub labeled_cycle: u64,
    pub class_label: u16,
}

/// Locator output plus the count of events that never crossed threshold.
#[derive(Debug, Clone)]
pub struct LocatedEvents {
    pub events: Vec<LocatedEvent>,
    pub dropped: usize,
}

/// Find, for every labeled state change, the first cycle inside a
/// `+/- 2 D` search window whose denoised-RMS jump clears the class
/// threshold. Events that never cross are dropped and counted.
pub fn locate_obvious_events(
    trace: &Trace,
    cfg: &PipelineConfig,
    thresholds: &[f64],
) -> Result<LocatedEvents> {
    cfg.validate()?;
    if trace.frames.is_empty() {
        return Err(degenerate("trace has no frames"));
    }
    if thresholds.len() < n_classes(trace.n_appliances) {
        return Err(param(format!(
            "need {} per-class thresholds, got {}",
            n_classes(trace.n_appliances),
            thresholds.len()
        )));
    }
    let l = cfg.denoise_len;
    let rms: Vec<f64> = trace
        .frames
        .iter()
        .map(|f| cycle_rms(&f.aggregate))
        .collect();
    let denoised: Vec<f64> = (0..rms.len())
        .map(|i| {
            let lo = i.saturating_sub(l - 1);
            denoised_rms(&rms[lo..=i], cfg.drop_top.min(i - lo), cfg.drop_bottom.min(i - lo))
                .unwrap_or(rms[i])
        })
        .collect();
    // Jump over the diff interval, the same stride the online differential
    // uses: every transient fits inside it, so ramped switches show at full
    // step height instead of being split into sub-threshold increments.
    let stride = cfg.diff_interval;
    let jump = |i: usize| -> f64 {
        if i < stride {
            0.0
        } else {
            denoised[i] - denoised[i - stride]
        }
    };

    let labeled = labeled_event_indices(trace);
    let d = cfg.diff_interval;
    let mut events = Vec::new();
    let mut dropped = 0usize;
    for (idx, class) in labeled {
        let thr = thresholds[class as usize];
        let lo = idx.saturating_sub(2 * d);
        let hi = (idx + 2 * d).min(trace.frames.len() - 1);
        let mut found = None;
        for w in lo..=hi {
            if jump(w).abs() >= thr {
                found = Some(w);
                break;
            }
        }
        match found {
            Some(w) => events.push(LocatedEvent {
                located_cycle: trace.frames[w].cycle_id,
                labeled_cycle: trace.frames[idx].cycle_id,
                class_label: class,
            }),
            None => dropped += 1,
        }
    }
    Ok(LocatedEvents { events, dropped })
}

fn frame_index(trace: &Trace, cycle_id: u64) -> Option<usize> {
    // Frames are consecutive by construction; fall back to search if not.
    let first = trace.frames.first()?.cycle_id;
    let guess = cycle_id.checked_sub(first)? as usize;
    if trace.frames.get(guess).map(|f| f.cycle_id) == Some(cycle_id) {
        return Some(guess);
    }
    trace
        .frames
        .binary_search_by_key(&cycle_id, |f| f.cycle_id)
        .ok()
}

/// Cross-side differences around one event: every after-cycle minus every
/// before-cycle. The subtraction order is fixed so ON events carry the
/// appliance waveform positively and OFF events carry it negated, matching
/// what the streaming differential produces at inference time.
///
/// Sides sit `transient_cycles + 4` cycles clear of the event. If the trace
/// clips a side, fewer pairs are returned; the boolean reports clipping.
pub fn augment_pairs(
    trace: &Trace,
    event_cycle: u64,
    transient_cycles: u32,
    n_side: usize,
) -> Result<(Vec<DiffCurrent>, bool)> {
    if n_side == 0 {
        return Err(param("n_side must be positive"));
    }
    let idx = frame_index(trace, event_cycle)
        .ok_or_else(|| param(format!("event cycle {event_cycle} not in trace")))?;
    let guard = transient_cycles as usize + 4;

    let before_end = idx.saturating_sub(guard); // exclusive
    let before_start = before_end.saturating_sub(n_side);
    let after_start = (idx + guard).min(trace.frames.len());
    let after_end = (after_start + n_side).min(trace.frames.len());

    let before = &trace.frames[before_start..before_end];
    let after = &trace.frames[after_start..after_end];
    let clipped = before.len() < n_side || after.len() < n_side;
    let mut out = Vec::with_capacity(before.len() * after.len());
    for b in before {
        for a in after {
            let samples: Vec<f64> = a
                .aggregate
                .iter()
                .zip(&b.aggregate)
                .map(|(x, y)| x - y)
                .collect();
            out.push(DiffCurrent {
                samples,
                cycle_id_old: b.cycle_id,
                cycle_id_new: a.cycle_id,
            });
        }
    }
    Ok((out, clipped))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Keep candidates whose harmonic-magnitude vector is cosine-similar to the
/// appliance's reference signature. Returns survivors and the drop count.
pub fn filter_samples(
    candidates: Vec<DiffCurrent>,
    reference: &DiffFeatureVector,
    min_similarity: f64,
) -> (Vec<DiffCurrent>, usize) {
    let ref_mags = reference.magnitudes();
    let before = candidates.len();
    let kept: Vec<DiffCurrent> = candidates
        .into_iter()
        .filter(|c| {
            let mags = harmonic_features(c).magnitudes();
            cosine(&mags, &ref_mags) >= min_similarity
        })
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Analytic harmonic signature of an appliance's steady current: harmonic
/// `k` of amplitude `a` and phase `p` lands at
/// `(re, im) = (a L/2 sin p, -a L/2 cos p)`.
pub fn signature_from_spec(spec: &ApplianceSpec, cycle_len: usize) -> DiffFeatureVector {
    let mut values = [0.0f64; FEATURE_DIM];
    let half = cycle_len as f64 / 2.0;
    for h in &spec.harmonics {
        let k = h.order as usize;
        if (1..=N_HARMONICS).contains(&k) {
            let base = 3 * (k - 1);
            values[base] += h.amplitude_a * half * h.phase_rad.sin();
            values[base + 1] -= h.amplitude_a * half * h.phase_rad.cos();
        }
    }
    for k in 0..N_HARMONICS {
        values[3 * k + 2] = values[3 * k].hypot(values[3 * k + 1]);
    }
    DiffFeatureVector { values }
}

/// A prepared training set plus bookkeeping counters.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub samples: Vec<TrainingSample>,
    pub located: usize,
    pub dropped_events: usize,
    pub filtered_out: usize,
    pub class_counts: Vec<usize>,
}

/// Full preparation pass over a labeled trace: locate events, augment
/// cross-side pairs, filter against signatures, harvest idle diffs, and
/// extract features.
pub fn prepare_training_set(
    trace: &Trace,
    specs: &[ApplianceSpec],
    cfg: &PipelineConfig,
) -> Result<PreparedSet> {
    cfg.validate()?;
    if specs.len() != trace.n_appliances as usize {
        return Err(param(format!(
            "trace labels cover {} appliances but {} specs supplied",
            trace.n_appliances,
            specs.len()
        )));
    }
    if trace.frames.is_empty() {
        return Err(degenerate("trace has no frames"));
    }
    let cycle_len = trace.frames[0].voltage.len().max(trace.frames[0].aggregate.len());
    let thresholds = rms_thresholds(specs, cfg.threshold_frac);
    let located = locate_obvious_events(trace, cfg, &thresholds)?;

    let classes = n_classes(trace.n_appliances);
    let mut events_per_class = vec![0usize; classes];
    for ev in &located.events {
        events_per_class[ev.class_label as usize] += 1;
    }
    // Idle diffs are harvested once per located event.
    events_per_class[IDLE_CLASS as usize] = located.events.len();
    let quota = |class: usize| -> usize {
        if cfg.max_samples_per_class == 0 {
            usize::MAX
        } else {
            let n_events = events_per_class[class].max(1);
            cfg.max_samples_per_class.div_ceil(n_events)
        }
    };

    let mut samples: Vec<TrainingSample> = Vec::new();
    let mut class_counts = vec![0usize; classes];
    let mut filtered_out = 0usize;
    let d = cfg.diff_interval;

    for ev in &located.events {
        let (appliance, _) =
            class_appliance(ev.class_label).expect("located events are non-idle");
        let spec = &specs[appliance as usize];
        let (pairs, _clipped) =
            augment_pairs(trace, ev.located_cycle, spec.transient_cycles, cfg.n_side)?;
        let reference = signature_from_spec(spec, cycle_len);
        let (kept, dropped) = filter_samples(pairs, &reference, cfg.min_similarity);
        filtered_out += dropped;
        for diff in spaced_take(&kept, quota(ev.class_label as usize)) {
            samples.push(TrainingSample {
                class_label: ev.class_label,
                features: harmonic_features(diff),
            });
            class_counts[ev.class_label as usize] += 1;
        }

        // Idle diffs: D-apart pairs inside the stable stretch before the
        // event, mirroring the online diff geometry.
        let guard = spec.transient_cycles as usize + 4;
        if let Some(idx) = frame_index(trace, ev.located_cycle) {
            let mut idle: Vec<DiffCurrent> = Vec::new();
            let end = idx.saturating_sub(guard);
            for j in 0..cfg.n_side {
                let (Some(new_idx), Some(old_sub)) =
                    (end.checked_sub(j + 1), end.checked_sub(j + 1 + d))
                else {
                    break;
                };
                let new = &trace.frames[new_idx];
                let old = &trace.frames[old_sub];
                if new.label != old.label {
                    continue;
                }
                idle.push(DiffCurrent {
                    samples: new
                        .aggregate
                        .iter()
                        .zip(&old.aggregate)
                        .map(|(x, y)| x - y)
                        .collect(),
                    cycle_id_old: old.cycle_id,
                    cycle_id_new: new.cycle_id,
                });
            }
            for diff in spaced_take(&idle, quota(IDLE_CLASS as usize)) {
                samples.push(TrainingSample {
                    class_label: IDLE_CLASS,
                    features: harmonic_features(diff),
                });
                class_counts[IDLE_CLASS as usize] += 1;
            }
        }
    }

    if samples.is_empty() {
        return Err(degenerate("preparation produced no training samples"));
    }
    Ok(PreparedSet {
        samples,
        located: located.events.len(),
        dropped_events: located.dropped,
        filtered_out,
        class_counts,
    })
}

/// Up to `quota` elements, evenly spaced across the slice (deterministic).
fn spaced_take<T>(items: &[T], quota: usize) -> impl Iterator<Item = &T> {
    let n = items.len();
    let take = quota.min(n);
    (0..take).map(move |i| {
        let idx = if take == n { i } else { i * n / take };
        &items[idx]
    })
}

/// Label-to-meaning sidecar stored next to the binary training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: u16,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub appliance_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub appliance_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub classes: Vec<LabelEntry>,
}

impl LabelMap {
    pub fn from_specs(specs: &[ApplianceSpec]) -> Self {
        let mut classes = vec![LabelEntry {
            label: IDLE_CLASS,
            kind: "idle".into(),
            appliance_id: None,
            appliance_name: None,
        }];
        for (i, spec) in specs.iter().enumerate() {
            for action in [SwitchAction::On, SwitchAction::Off] {
                classes.push(LabelEntry {
                    label: event_class(i as u32, action),
                    kind: match action {
                        SwitchAction::On => "on".into(),
                        SwitchAction::Off => "off".into(),
                    },
                    appliance_id: Some(i as u32),
                    appliance_name: Some(spec.name.clone()),
                });
            }
        }
        classes.sort_by_key(|e| e.label);
        LabelMap { classes }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".labels.json");
    PathBuf::from(os)
}

/// Write training samples as fixed 122-byte records
/// (`u16` label + 30 `f32` features, little-endian) plus a JSON label
/// sidecar at `<path>.labels.json`.
pub fn write_training_file(path: &Path, samples: &[TrainingSample], labels: &LabelMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        w.write_all(&s.class_label.to_le_bytes())?;
        for v in s.features.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    let side = File::create(sidecar_path(path))?;
    serde_json::to_writer_pretty(BufWriter::new(side), labels)
        .map_err(|e| format_err(format!("label sidecar encode: {e}")))?;
    Ok(())
}

const RECORD_BYTES: usize = 2 + 4 * FEATURE_DIM;

/// Read a training file written by [`write_training_file`]; the sidecar is
/// read too when present.
pub fn read_training_file(path: &Path) -> Result<(Vec<TrainingSample>, Option<LabelMap>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(format_err(format!(
            "training file length {} is not a whole number of {RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(RECORD_BYTES)
        .map(|rec| {
            let class_label = u16::from_le_bytes([rec[0], rec[1]]);
            let mut values = [0.0f64; FEATURE_DIM];
            for (i, v) in values.iter_mut().enumerate() {
                let o = 2 + 4 * i;
                *v = f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
            }
            TrainingSample {
                class_label,
                features: DiffFeatureVector { values },
            }
        })
        .collect();
    let labels = match File::open(sidecar_path(path)) {
        Ok(f) => Some(
            serde_json::from_reader(BufReader::new(f))
                .map_err(|e| format_err(format!("label sidecar decode: {e}")))?,
        ),
        Err(_) => None,
    };
    Ok((samples, labels))
}

/// Per-class counts of a sample list.
pub fn count_classes(samples: &[TrainingSample], classes: usize) -> HashMap<u16, usize> {
    let mut map = HashMap::with_capacity(classes);
    for s in samples {
        *map.entry(s.class_label).or_insert(0) += 1;
    }
    map
}
