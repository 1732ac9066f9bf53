//! Metrics: event matching, per-class and averaged F1, balance ratios,
//! state diversity, empirical SINR estimation, and per-cycle state scoring.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{degenerate, format_err, param, Result};
use crate::model::{run_inference, EventClassifier, EventReport};
use crate::schedule::SwitchAction;
use crate::simulate::Trace;

/// Default event-match tolerance: 50 mains cycles = 1 s at 50 Hz.
pub const DEFAULT_MATCH_TOLERANCE: u64 = 50;

/// Cap returned instead of an infinite SINR (e.g. zero measured noise).
pub const SINR_CAP: f64 = 1e12;

/// Cycles skipped after an event before treating the waveform as steady;
/// covers every catalog transient with margin.
const SETTLE_CYCLES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchOutcome {
    #[serde(rename = "tp")]
    TruePositive,
    #[serde(rename = "fp")]
    FalsePositive,
    #[serde(rename = "fn")]
    FalseNegative,
}

/// One row of the truth/prediction matching: a matched pair, an unmatched
/// truth, or an unmatched prediction. Events are `(cycle, class)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventMatch {
    pub truth: Option<(u64, u16)>,
    pub predicted: Option<(u64, u16)>,
    pub outcome: MatchOutcome,
}

/// Greedy one-to-one matching: within each class, candidate pairs inside
/// the cycle tolerance are taken nearest-first; leftovers become false
/// negatives (truth) or false positives (predictions).
pub fn match_events(
    truth: &[(u64, u16)],
    predicted: &[(u64, u16)],
    tolerance_cycles: u64,
) -> Vec<EventMatch> {
    let mut by_class: BTreeMap<u16, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, &(_, c)) in truth.iter().enumerate() {
        by_class.entry(c).or_default().0.push(i);
    }
    for (i, &(_, c)) in predicted.iter().enumerate() {
        by_class.entry(c).or_default().1.push(i);
    }

    let mut truth_match: Vec<Option<usize>> = vec![None; truth.len()];
    let mut pred_used = vec![false; predicted.len()];
    for (ts, ps) in by_class.values() {
        let mut candidates: Vec<(u64, usize, usize)> = Vec::new();
        for &ti in ts {
            for &pi in ps {
                let gap = truth[ti].0.abs_diff(predicted[pi].0);
                if gap <= tolerance_cycles {
                    candidates.push((gap, ti, pi));
                }
            }
        }
        candidates.sort_unstable();
        for (_, ti, pi) in candidates {
            if truth_match[ti].is_none() && !pred_used[pi] {
                truth_match[ti] = Some(pi);
                pred_used[pi] = true;
            }
        }
    }

    let mut out = Vec::with_capacity(truth.len() + predicted.len());
    for (ti, t) in truth.iter().enumerate() {
        match truth_match[ti] {
            Some(pi) => out.push(EventMatch {
                truth: Some(*t),
                predicted: Some(predicted[pi]),
                outcome: MatchOutcome::TruePositive,
            }),
            None => out.push(EventMatch {
                truth: Some(*t),
                predicted: None,
                outcome: MatchOutcome::FalseNegative,
            }),
        }
    }
    for (pi, p) in predicted.iter().enumerate() {
        if !pred_used[pi] {
            out.push(EventMatch {
                truth: None,
                predicted: Some(*p),
                outcome: MatchOutcome::FalsePositive,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of truth events of this class (TP + FN).
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub per_class: BTreeMap<u16, ClassScore>,
    /// Macro average over classes with truth support.
    pub average_f1: f64,
    /// Support-weighted average.
    pub weighted_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 from match rows, with 0/0 defined as 0.
pub fn f1_scores(matches: &[EventMatch]) -> F1Summary {
    let mut tally: BTreeMap<u16, (u64, u64, u64)> = BTreeMap::new();
    for m in matches {
        let class = m
            .truth
            .or(m.predicted)
            .map(|(_, c)| c)
            .expect("match row carries at least one side");
        let entry = tally.entry(class).or_default();
        match m.outcome {
            MatchOutcome::TruePositive => entry.0 += 1,
            MatchOutcome::FalsePositive => entry.1 += 1,
            MatchOutcome::FalseNegative => entry.2 += 1,
        }
    }

    let mut per_class = BTreeMap::new();
    let mut macro_sum = 0.0;
    let mut macro_n = 0u64;
    let mut weighted_sum = 0.0;
    let mut weight = 0u64;
    for (class, (tp, fp, fne)) in tally {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fne);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let support = tp + fne;
        if support > 0 {
            macro_sum += f1;
            macro_n += 1;
            weighted_sum += f1 * support as f64;
            weight += support;
        }
        per_class.insert(
            class,
            ClassScore {
                true_positives: tp,
                false_positives: fp,
                false_negatives: fne,
                precision,
                recall,
                f1,
                support,
            },
        );
    }
    F1Summary {
        per_class,
        average_f1: if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 },
        weighted_f1: if weight == 0 { 0.0 } else { weighted_sum / weight as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    /// min/max per-appliance event counts.
    pub event_br: f64,
    /// min/max per-appliance ON-cycle counts.
    pub state_br: f64,
    /// Mean over appliances of min(on, off)/max(on, off) event counts.
    pub avg_on_off_br: f64,
}

/// Balance ratios over `(appliance_id, action)` events plus per-appliance
/// ON-cycle totals. A zero maximum yields ratio 0 by convention.
pub fn balance_ratios(
    events: &[(u32, SwitchAction)],
    on_state_cycles: &[u64],
) -> Result<BalanceSummary> {
    let n = on_state_cycles.len();
    if n == 0 {
        return Err(param("no appliances to balance"));
    }
    let mut on = vec![0u64; n];
    let mut off = vec![0u64; n];
    for &(appliance, action) in events {
        let Some(slot) = (appliance as usize).checked_sub(0).filter(|&a| a < n) else {
            return Err(param(format!(
                "event references appliance {appliance} outside 0..{n}"
            )));
        };
        match action {
            SwitchAction::On => on[slot] += 1,
            SwitchAction::Off => off[slot] += 1,
        }
    }
    let totals: Vec<u64> = on.iter().zip(&off).map(|(a, b)| a + b).collect();
    let minmax = |xs: &[u64]| -> f64 {
        let max = xs.iter().copied().max().unwrap_or(0);
        let min = xs.iter().copied().min().unwrap_or(0);
        ratio(min, max)
    };
    let avg_on_off = on
        .iter()
        .zip(&off)
        .map(|(&a, &b)| ratio(a.min(b), a.max(b)))
        .sum::<f64>()
        / n as f64;
    Ok(BalanceSummary {
        event_br: minmax(&totals),
        state_br: minmax(on_state_cycles),
        avg_on_off_br: avg_on_off,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub unique_states: usize,
    pub density_per_hour: f64,
}

/// Count distinct appliance-state bitmasks and their density over time.
pub fn diversity<I: IntoIterator<Item = u64>>(labels: I, duration_hours: f64) -> Result<Diversity> {
    if !(duration_hours > 0.0) {
        return Err(param("duration must be positive"));
    }
    let unique: HashSet<u64> = labels.into_iter().collect();
    Ok(Diversity {
        unique_states: unique.len(),
        density_per_hour: unique.len() as f64 / duration_hours,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinrMode {
    Raw,
    Diff,
}

/// Empirical signal-to-interference-plus-noise ratio of one appliance's
/// switching event, measured around its first isolated ON event.
///
/// Signal power is the coherent (real) power of the target against the
/// mains voltage; interference-plus-noise power is the apparent power of
/// the residual, `V_rms * rms(residual)`, so incoherent noise still counts.
/// RAW measures the appliance against everything else in the aggregate;
/// DIFF measures the event's differential current against non-event
/// differentials at the same interval `d`.
pub fn estimate_sinr(trace: &Trace, appliance_id: u32, mode: SinrMode, d: usize) -> Result<f64> {
    if trace.frames.is_empty() {
        return Err(degenerate("trace has no frames"));
    }
    if appliance_id >= trace.n_appliances {
        return Err(param(format!(
            "appliance {appliance_id} outside 0..{}",
            trace.n_appliances
        )));
    }
    if trace.frames[0].individual.is_none() {
        return Err(param(
            "SINR estimation needs per-appliance currents (simulate with keep_individual)",
        ));
    }
    if d <= SETTLE_CYCLES {
        return Err(param(format!(
            "differential interval {d} must exceed the settle margin {SETTLE_CYCLES}"
        )));
    }

    // All label flips, then the first sufficiently isolated ON of our bit.
    let flips: Vec<(usize, u32, bool)> = {
        let mut prev = 0u64;
        let mut out = Vec::new();
        for (idx, frame) in trace.frames.iter().enumerate() {
            let changed = prev ^ frame.label;
            for bit in 0..trace.n_appliances {
                if changed >> bit & 1 == 1 {
                    out.push((idx, bit, frame.label >> bit & 1 == 1));
                }
            }
            prev = frame.label;
        }
        out
    };
    let ons: Vec<usize> = flips
        .iter()
        .filter(|&&(_, bit, on)| bit == appliance_id && on)
        .map(|&(idx, _, _)| idx)
        .collect();
    if ons.is_empty() {
        return Err(degenerate(format!(
            "appliance {appliance_id} never turns on; SINR undefined"
        )));
    }
    let before_margin = 2 * d + 40 + SETTLE_CYCLES;
    let after_margin = d + SETTLE_CYCLES + 30;
    let event = ons
        .iter()
        .copied()
        .find(|&e| {
            e >= before_margin
                && e + after_margin < trace.frames.len()
                && flips
                    .iter()
                    .all(|&(idx, _, _)| idx == e || idx + before_margin <= e || idx > e + after_margin)
        })
        .ok_or_else(|| {
            degenerate(format!(
                "no isolated ON event for appliance {appliance_id} (need {before_margin} quiet cycles before and {after_margin} after)"
            ))
        })?;

    let frames = &trace.frames;
    let v_rms = {
        let v = &frames[event].voltage;
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    };

    let mean_coherent = |pairs: &mut dyn Iterator<Item = (f64, f64)>| -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, i) in pairs {
            sum += v * i;
            n += 1;
        }
        (if n == 0 { 0.0 } else { sum / n as f64 }, n)
    };

    let sinr = match mode {
        SinrMode::Raw => {
            let window = event + SETTLE_CYCLES..event + SETTLE_CYCLES + 30;
            let mut signal_sum = 0.0;
            let mut residual_sq = 0.0;
            let mut n = 0usize;
            for idx in window {
                let frame = &frames[idx];
                let target = &frame.individual.as_ref().unwrap()[appliance_id as usize];
                for ((&v, &agg), &tgt) in frame
                    .voltage
                    .iter()
                    .zip(&frame.aggregate)
                    .zip(target)
                {
                    signal_sum += v * tgt;
                    let res = agg - tgt;
                    residual_sq += res * res;
                    n += 1;
                }
            }
            let signal_power = (signal_sum / n as f64).abs();
            let residual_power = v_rms * (residual_sq / n as f64).sqrt();
            guard_ratio(signal_power, residual_power)
        }
        SinrMode::Diff => {
            let mut signal_sum = 0.0;
            let mut signal_n = 0usize;
            for new_idx in event + SETTLE_CYCLES..event + d {
                let new = &frames[new_idx];
                let old = &frames[new_idx - d];
                let mut pairs = new
                    .voltage
                    .iter()
                    .zip(new.aggregate.iter().zip(&old.aggregate))
                    .map(|(&v, (&a, &b))| (v, a - b));
                let (mean, n) = mean_coherent(&mut pairs);
                signal_sum += mean * n as f64;
                signal_n += n;
            }
            let signal_power = (signal_sum / signal_n as f64).abs();

            let mut noise_sq = 0.0;
            let mut noise_n = 0usize;
            for new_idx in event - d - 40..event - d {
                let new = &frames[new_idx];
                let old = &frames[new_idx - d];
                for (&a, &b) in new.aggregate.iter().zip(&old.aggregate) {
                    let delta = a - b;
                    noise_sq += delta * delta;
                    noise_n += 1;
                }
            }
            let noise_power = v_rms * (noise_sq / noise_n as f64).sqrt();
            guard_ratio(signal_power, noise_power)
        }
    };
    Ok(sinr)
}

fn guard_ratio(num: f64, den: f64) -> f64 {
    if den < 1e-9 {
        SINR_CAP
    } else {
        (num / den).min(SINR_CAP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScore {
    /// Per-appliance per-cycle ON/OFF F1 (ON as the positive class).
    pub per_appliance: Vec<f64>,
    /// Macro average over appliances that are ever ON in the truth.
    pub average_f1: f64,
}

/// Score per-cycle appliance states reconstructed by toggling on reported
/// events. Estimated states start from the trace's initial ground truth.
pub fn state_identify_from_reports(trace: &Trace, reports: &[EventReport]) -> Result<StateScore> {
    if trace.frames.is_empty() {
        return Err(degenerate("trace has no frames"));
    }
    let n = trace.n_appliances as usize;
    let mut ordered: Vec<&EventReport> = reports.iter().collect();
    ordered.sort_by_key(|r| (r.cycle_id, r.class_label));

    let mut est = trace.frames[0].label;
    let mut tp = vec![0u64; n];
    let mut fp = vec![0u64; n];
    let mut fne = vec![0u64; n];
    let mut next = 0usize;
    for frame in &trace.frames {
        while next < ordered.len() && ordered[next].cycle_id <= frame.cycle_id {
            let r = ordered[next];
            next += 1;
            if (r.appliance_id as usize) < n {
                match r.action {
                    SwitchAction::On => est |= 1 << r.appliance_id,
                    SwitchAction::Off => est &= !(1 << r.appliance_id),
                }
            }
        }
        for k in 0..n {
            let e = est >> k & 1 == 1;
            let t = frame.label >> k & 1 == 1;
            match (e, t) {
                (true, true) => tp[k] += 1,
                (true, false) => fp[k] += 1,
                (false, true) => fne[k] += 1,
                (false, false) => {}
            }
        }
    }

    let mut per_appliance = Vec::with_capacity(n);
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    for k in 0..n {
        let f1 = ratio(2 * tp[k], 2 * tp[k] + fp[k] + fne[k]);
        per_appliance.push(f1);
        if tp[k] + fne[k] > 0 {
            macro_sum += f1;
            macro_n += 1;
        }
    }
    Ok(StateScore {
        per_appliance,
        average_f1: if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 },
    })
}

/// End-to-end state identification: infer events with the model, then score
/// the reconstructed per-cycle states.
pub fn state_identify(
    trace: &Trace,
    model: &EventClassifier,
    thresholds: &[u32],
    d: usize,
) -> Result<StateScore> {
    let reports = run_inference(trace, model, thresholds, d)?;
    state_identify_from_reports(trace, &reports)
}

/// The full metric bundle emitted by an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: BTreeMap<u16, ClassScore>,
    pub average_f1: f64,
    pub weighted_f1: f64,
    pub event_br: f64,
    pub state_br: f64,
    pub avg_on_off_br: f64,
    pub unique_states: usize,
    pub diversity_density: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub state_f1: Option<StateScore>,
}

impl MetricReport {
    pub fn assemble(
        f1: F1Summary,
        balance: BalanceSummary,
        diversity: Diversity,
        state_f1: Option<StateScore>,
    ) -> Self {
        MetricReport {
            per_class: f1.per_class,
            average_f1: f1.average_f1,
            weighted_f1: f1.weighted_f1,
            event_br: balance.event_br,
            state_br: balance.state_br,
            avg_on_off_br: balance.avg_on_off_br,
            unique_states: diversity.unique_states,
            diversity_density: diversity.density_per_hour,
            state_f1,
        }
    }
}

pub fn write_metric_json(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)
        .map_err(|e| format_err(format!("metric encode: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_metric_json(path: &Path) -> Result<MetricReport> {
    let f = File::open(path)?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| format_err(format!("metric decode: {e}")))
}

/// One CSV row per class: counts and scores for external tabulation.
pub fn write_metric_csv(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "class,support,true_positives,false_positives,false_negatives,precision,recall,f1"
    )?;
    for (class, s) in &report.per_class {
        writeln!(
            w,
            "{class},{},{},{},{},{:.6},{:.6},{:.6}",
            s.support, s.true_positives, s.false_positives, s.false_negatives, s.precision,
            s.recall, s.f1
        )?;
    }
    w.flush()?;
    Ok(())
}
