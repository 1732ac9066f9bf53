//! Popularity voting over per-cycle predictions, report generation, and
//! per-class threshold calibration.
//!
//! An event whose transient lasts t cycles leaves D − t diff cycles carrying
//! its steady signature, so a window of the last D predictions accumulates
//! up to D − t votes for the event class. Requiring T votes therefore
//! tolerates D − t − T missed cycles per event and T − 1 spurious
//! predictions per class in quiet stretches.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{degenerate, param, Result};
use crate::eval::{match_events, DEFAULT_MATCH_TOLERANCE};
use crate::model::EventClassifier;
use crate::pipeline::{
    class_appliance, harmonic_features, labeled_events, CycleRing, IDLE_CLASS,
};
use crate::schedule::SwitchAction;
use crate::simulate::Trace;

/// A voted event detection.
///
/// `cycle_id` is back-dated to the oldest supporting vote in the window, so
/// it approximates when the event's signature began rather than when the
/// vote count crossed the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventReport {
    pub cycle_id: u64,
    pub class_label: u16,
    pub vote_count: u32,
    pub appliance_id: u32,
    pub action: SwitchAction,
}

/// Sliding-window vote accumulator; single-consumer streaming state.
///
/// After a report the window is cleared and the next `window_len` inputs are
/// discarded (refractory), so one physical event cannot report twice.
#[derive(Debug, Clone)]
pub struct VoteState {
    window_len: usize,
    window: VecDeque<(u64, u16)>,
    counts: Vec<u32>,
    thresholds: Vec<u32>,
    refractory_remaining: u32,
}

impl VoteState {
    /// `thresholds[c]` is T_c, required to lie in `[1, window_len]`.
    pub fn new(window_len: usize, thresholds: Vec<u32>) -> Result<Self> {
        if window_len == 0 {
            return Err(param("vote window must be non-empty"));
        }
        if thresholds.is_empty() {
            return Err(param("no per-class thresholds supplied"));
        }
        for (c, &t) in thresholds.iter().enumerate() {
            if t == 0 || t as usize > window_len {
                return Err(param(format!(
                    "threshold {t} for class {c} outside [1, {window_len}]"
                )));
            }
        }
        Ok(VoteState {
            window_len,
            window: VecDeque::with_capacity(window_len),
            counts: vec![0; thresholds.len()],
            thresholds,
            refractory_remaining: 0,
        })
    }

    pub fn thresholds(&self) -> &[u32] {
        &self.thresholds
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    fn clear(&mut self) {
        self.window.clear();
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Feed one prediction; returns a report when a non-idle class's count
    /// reaches its threshold. Among qualifying classes the highest count
    /// wins, ties to the lowest class index.
    pub fn vote_step(&mut self, predicted: u16, cycle_id: u64) -> Option<EventReport> {
        if self.refractory_remaining > 0 {
            self.refractory_remaining -= 1;
            return None;
        }
        if self.window.len() == self.window_len {
            if let Some((_, old)) = self.window.pop_front() {
                self.counts[old as usize] -= 1;
            }
        }
        self.window.push_back((cycle_id, predicted));
        if let Some(c) = self.counts.get_mut(predicted as usize) {
            *c += 1;
        }

        let mut winner: Option<(u16, u32)> = None;
        for (class, (&count, &threshold)) in
            self.counts.iter().zip(&self.thresholds).enumerate()
        {
            if class as u16 == IDLE_CLASS || count < threshold {
                continue;
            }
            let better = match winner {
                None => true,
                Some((_, best)) => count > best,
            };
            if better {
                winner = Some((class as u16, count));
            }
        }
        let (class_label, vote_count) = winner?;
        let onset = self
            .window
            .iter()
            .find(|(_, l)| *l == class_label)
            .map(|(c, _)| *c)
            .unwrap_or(cycle_id);
        self.clear();
        self.refractory_remaining = self.window_len as u32;
        let (appliance_id, action) = class_appliance(class_label)?;
        Some(EventReport {
            cycle_id: onset,
            class_label,
            vote_count,
            appliance_id,
            action,
        })
    }

    #[cfg(test)]
    fn counts_consistent(&self) -> bool {
        let mut recount = vec![0u32; self.counts.len()];
        for &(_, l) in &self.window {
            recount[l as usize] += 1;
        }
        recount == self.counts && self.window.len() <= self.window_len
    }
}

/// Per-cycle class predictions for a whole trace: stream diffs at interval
/// `d`, extract harmonic features, and classify each diff cycle.
/// Returns `(cycle_id, predicted_class)` for every cycle with a full ring.
pub fn predict_stream(
    trace: &Trace,
    model: &EventClassifier,
    d: usize,
) -> Result<Vec<(u64, u16)>> {
    use rayon::prelude::*;
    if !model.is_trained() {
        return Err(degenerate(
            "classifier has no trained trees (untrained model state)",
        ));
    }
    let mut ring = CycleRing::new(d)?;
    let mut diffs = Vec::with_capacity(trace.frames.len().saturating_sub(d));
    for frame in &trace.frames {
        if let Some(diff) = ring.push(frame.cycle_id, &frame.aggregate) {
            diffs.push(diff);
        }
    }
    diffs
        .par_iter()
        .map(|diff| {
            let features = harmonic_features(diff);
            model
                .predict(&features.values)
                .map(|label| (diff.cycle_id_new, label))
        })
        .collect()
}

/// Replay a prediction stream through voting with the given thresholds.
pub fn vote_stream(
    predictions: &[(u64, u16)],
    thresholds: &[u32],
    d: usize,
) -> Result<Vec<EventReport>> {
    let mut state = VoteState::new(d, thresholds.to_vec())?;
    Ok(predictions
        .iter()
        .filter_map(|&(cycle, label)| state.vote_step(label, cycle))
        .collect())
}

/// Full inference pass: predictions plus voting.
pub fn run_inference(
    trace: &Trace,
    model: &EventClassifier,
    thresholds: &[u32],
    d: usize,
) -> Result<Vec<EventReport>> {
    let predictions = predict_stream(trace, model, d)?;
    vote_stream(&predictions, thresholds, d)
}

/// Calibrated per-class thresholds plus the classes that fell back to the
/// default because the trace contained no such event.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: Vec<u32>,
    pub defaulted_classes: Vec<u16>,
}

/// Choose, independently per class, the threshold T in `[1, d]` that
/// maximizes that class's event F1. Ties prefer the larger T (fewer false
/// positives). Classes absent from the truth default to `ceil(d / 2)`.
///
/// Each class is swept against a replay carrying only its own votes
/// (everything else mapped to idle). A joint replay would let the choice
/// for one class hinge on how other classes' reports and refractory
/// periods happened to interleave at each candidate T, which is an
/// artifact of the sweep rather than a property of the class.
pub fn calibrate_from_predictions(
    predictions: &[(u64, u16)],
    truth: &[(u64, u16)],
    d: usize,
    n_classes: u16,
) -> Result<Calibration> {
    if n_classes == 0 {
        return Err(param("n_classes must be positive"));
    }
    if d == 0 {
        return Err(param("differential interval must be positive"));
    }
    let k = n_classes as usize;
    let default_t = (d as u32).div_ceil(2);
    let mut truth_support = vec![0usize; k];
    for &(_, c) in truth {
        if (c as usize) < k {
            truth_support[c as usize] += 1;
        }
    }

    let mut thresholds = vec![default_t; k];
    for class in 1..k as u16 {
        if truth_support[class as usize] == 0 {
            continue;
        }
        let own: Vec<(u64, u16)> = predictions
            .iter()
            .map(|&(cy, l)| (cy, if l == class { l } else { IDLE_CLASS }))
            .collect();
        let class_truth: Vec<(u64, u16)> = truth
            .iter()
            .copied()
            .filter(|&(_, c)| c == class)
            .collect();
        let mut best = (f64::NEG_INFINITY, default_t);
        for t in 1..=d as u32 {
            let reports = vote_stream(&own, &vec![t; k], d)?;
            let predicted: Vec<(u64, u16)> = reports
                .iter()
                .map(|r| (r.cycle_id, r.class_label))
                .collect();
            let matches = match_events(&class_truth, &predicted, DEFAULT_MATCH_TOLERANCE);
            let summary = crate::eval::f1_scores(&matches);
            let f1 = summary
                .per_class
                .get(&class)
                .map(|s| s.f1)
                .unwrap_or(0.0);
            if f1 >= best.0 {
                best = (f1, t);
            }
        }
        thresholds[class as usize] = best.1;
    }

    let defaulted_classes: Vec<u16> = (1..n_classes)
        .filter(|&c| truth_support[c as usize] == 0)
        .collect();
    Ok(Calibration {
        thresholds,
        defaulted_classes,
    })
}

/// Calibrate thresholds for `model` against a labeled trace.
pub fn calibrate_thresholds(
    trace: &Trace,
    model: &EventClassifier,
    d: usize,
) -> Result<Calibration> {
    let truth = labeled_events(trace);
    let predictions = predict_stream(trace, model, d)?;
    calibrate_from_predictions(&predictions, &truth, d, model.n_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::event_class;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: usize = 30;

    fn uniform(t: u32, classes: usize) -> Vec<u32> {
        vec![t; classes]
    }

    #[test]
    fn report_fires_on_the_t_th_push() {
        let c = event_class(3, SwitchAction::On);
        let mut state = VoteState::new(D, uniform(12, 37)).unwrap();
        let mut fired_at = None;
        for push in 0..D as u64 {
            if let Some(report) = state.vote_step(c, 1000 + push) {
                fired_at = Some((push + 1, report));
                break;
            }
        }
        let (push, report) = fired_at.expect("threshold 12 must fire");
        assert_eq!(push, 12);
        assert_eq!(report.class_label, c);
        assert_eq!(report.vote_count, 12);
        assert_eq!(report.appliance_id, 3);
        assert_eq!(report.action, SwitchAction::On);
        assert_eq!(report.cycle_id, 1000, "back-dated to the first vote");
    }

    #[test]
    fn idle_dilution_within_the_tolerance_still_reports() {
        // Span D − t = 25 signature cycles, T = 12: up to 13 idle
        // mispredictions inside the span are tolerated.
        let c = event_class(0, SwitchAction::Off);
        let mut state = VoteState::new(D, uniform(12, 37)).unwrap();
        let mut reports = Vec::new();
        let mut cycle = 0u64;
        let feed = |state: &mut VoteState, label, reports: &mut Vec<EventReport>, cycle: &mut u64| {
            if let Some(r) = state.vote_step(label, *cycle) {
                reports.push(r);
            }
            *cycle += 1;
        };
        for _ in 0..D {
            feed(&mut state, IDLE_CLASS, &mut reports, &mut cycle);
        }
        for i in 0..25 {
            // alternate, giving 13 correct + 12 idle, then the score settles
            let label = if i % 2 == 0 { c } else { IDLE_CLASS };
            feed(&mut state, label, &mut reports, &mut cycle);
        }
        for _ in 0..(2 * D) {
            feed(&mut state, IDLE_CLASS, &mut reports, &mut cycle);
        }
        assert_eq!(reports.len(), 1, "{reports:?}");
        assert_eq!(reports[0].class_label, c);
    }

    #[test]
    fn spurious_votes_below_threshold_never_report() {
        let c = event_class(5, SwitchAction::On);
        let mut state = VoteState::new(D, uniform(12, 37)).unwrap();
        let mut cycle = 0u64;
        // 11 = T − 1 spurious predictions scattered in idle noise.
        for burst in 0..11 {
            for _ in 0..7 {
                assert!(state.vote_step(IDLE_CLASS, cycle).is_none());
                cycle += 1;
            }
            assert!(state.vote_step(c, cycle).is_none(), "burst {burst}");
            cycle += 1;
        }
        for _ in 0..(3 * D) {
            assert!(state.vote_step(IDLE_CLASS, cycle).is_none());
            cycle += 1;
        }
    }

    #[test]
    fn idle_is_never_reported() {
        let mut state = VoteState::new(D, uniform(1, 37)).unwrap();
        for cycle in 0..(4 * D as u64) {
            assert!(state.vote_step(IDLE_CLASS, cycle).is_none());
        }
    }

    #[test]
    fn refractory_separates_repeat_reports() {
        let c = event_class(2, SwitchAction::On);
        let mut state = VoteState::new(D, uniform(12, 37)).unwrap();
        let mut reports = Vec::new();
        for cycle in 0..90u64 {
            if let Some(r) = state.vote_step(c, cycle) {
                reports.push((cycle, r));
            }
        }
        // Fires at push 12, drops 30 during refractory, refills to 12.
        assert_eq!(reports.len(), 2, "{reports:?}");
        let emitted: Vec<u64> = reports.iter().map(|(at, _)| *at).collect();
        assert!(emitted[1] - emitted[0] >= D as u64);
        assert!(reports[1].1.cycle_id - reports[0].1.cycle_id > D as u64);
    }

    #[test]
    fn tie_breaks_prefer_count_then_lowest_class() {
        // Streaming from a clean window, the first class to reach its
        // threshold always fires alone, so exercise the selection rule by
        // crafting window states where several classes qualify at once.

        // Higher count outranks the freshly pushed class.
        let mut thresholds = uniform(2, 37);
        thresholds[IDLE_CLASS as usize] = 1;
        let mut state = VoteState::new(10, thresholds).unwrap();
        for (cycle, label) in [(0u64, 9u16), (1, 9), (2, 9), (3, 5)] {
            state.window.push_back((cycle, label));
            state.counts[label as usize] += 1;
        }
        let report = state.vote_step(5, 4).expect("both classes qualify");
        assert_eq!(report.class_label, 9, "count 3 must beat count 2");
        assert_eq!(report.vote_count, 3);
        assert_eq!(report.cycle_id, 0);

        // Exact tie: lower class index wins regardless of push order.
        let mut state = VoteState::new(10, uniform(3, 37)).unwrap();
        for (cycle, label) in [(0u64, 9u16), (1, 5), (2, 9), (3, 5), (4, 9)] {
            state.window.push_back((cycle, label));
            state.counts[label as usize] += 1;
        }
        let report = state.vote_step(5, 5).expect("tied counts at threshold");
        assert_eq!(
            report.class_label, 5,
            "equal counts must resolve to lower class"
        );
        assert_eq!(report.cycle_id, 1, "onset backdates to the first vote");
    }

    #[test]
    fn window_counts_stay_consistent_under_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut state = VoteState::new(11, uniform(6, 9)).unwrap();
        for cycle in 0..2000u64 {
            let label = rng.gen_range(0..9) as u16;
            let _ = state.vote_step(label, cycle);
            assert!(state.counts_consistent(), "at cycle {cycle}");
        }
    }

    #[test]
    fn raising_a_threshold_never_adds_reports() {
        let c = 3u16;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stream: Vec<(u64, u16)> = (0..3000u64)
            .map(|cycle| {
                let label = if rng.gen_bool(0.05) { c } else { IDLE_CLASS };
                (cycle, label)
            })
            .collect();
        let mut previous = usize::MAX;
        for t in 1..=D as u32 {
            let reports = vote_stream(&stream, &uniform(t, 5), D).unwrap();
            let fp = reports.iter().filter(|r| r.class_label == c).count();
            assert!(
                fp <= previous,
                "threshold {t} produced {fp} reports, more than {previous}"
            );
            previous = fp;
        }
    }

    #[test]
    fn voting_tolerance_property_holds_over_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..1500 {
            let d = rng.gen_range(8..=50usize);
            let t_transient = rng.gen_range(0..=d / 2);
            let span = d - t_transient;
            let threshold = rng.gen_range(1..=span) as u32;
            let c = rng.gen_range(1..20u16);
            let n_classes = 21u16;

            // Correct votes: exactly `hits >= threshold` placed in the span.
            let hits = rng.gen_range(threshold as usize..=span);
            let mut span_labels = vec![IDLE_CLASS; span];
            let mut placed = 0;
            while placed < hits {
                let pos = rng.gen_range(0..span);
                if span_labels[pos] == IDLE_CLASS {
                    span_labels[pos] = c;
                    placed += 1;
                }
            }
            let mut thresholds = vec![d as u32; n_classes as usize];
            thresholds[c as usize] = threshold;

            let mut stream: Vec<(u64, u16)> = Vec::new();
            let mut cycle = 0u64;
            for _ in 0..rng.gen_range(0..2 * d) {
                stream.push((cycle, IDLE_CLASS));
                cycle += 1;
            }
            for &l in &span_labels {
                stream.push((cycle, l));
                cycle += 1;
            }
            for _ in 0..3 * d {
                stream.push((cycle, IDLE_CLASS));
                cycle += 1;
            }
            let reports = vote_stream(&stream, &thresholds, d).unwrap();
            assert_eq!(
                reports.len(),
                1,
                "case {case}: d={d} t={t_transient} T={threshold} hits={hits} -> {reports:?}"
            );
            assert_eq!(reports[0].class_label, c);

            // Conversely, at most T − 1 occurrences anywhere: no report.
            let scattered = threshold as usize - 1;
            let mut quiet: Vec<(u64, u16)> = (0..(4 * d) as u64)
                .map(|cy| (cy, IDLE_CLASS))
                .collect();
            let mut placed = 0;
            while placed < scattered {
                let pos = rng.gen_range(0..quiet.len());
                if quiet[pos].1 == IDLE_CLASS {
                    quiet[pos].1 = c;
                    placed += 1;
                }
            }
            let reports = vote_stream(&quiet, &thresholds, d).unwrap();
            assert!(
                reports.is_empty(),
                "case {case}: T−1 scattered votes reported {reports:?}"
            );
        }
    }

    #[test]
    fn calibration_picks_the_widest_perfect_threshold() {
        // A perfect prediction stream for one event of class 3 whose
        // signature spans D − t = 25 cycles: every T in [1, 25] gives
        // F1 = 1.0, so the tie-break must choose 25.
        let c = 3u16;
        let mut predictions: Vec<(u64, u16)> = Vec::new();
        for cycle in 0..300u64 {
            let label = if (100..125).contains(&cycle) { c } else { IDLE_CLASS };
            predictions.push((cycle, label));
        }
        let truth = vec![(95u64, c)];
        let cal = calibrate_from_predictions(&predictions, &truth, D, 37).unwrap();
        assert_eq!(cal.thresholds[c as usize], 25);
        assert!(cal.defaulted_classes.contains(&5));
        assert!(!cal.defaulted_classes.contains(&c));
        assert!(!cal.defaulted_classes.contains(&IDLE_CLASS));
        // Absent classes fall back to ceil(D/2).
        assert_eq!(cal.thresholds[5], 15);
    }

    #[test]
    fn calibration_suppresses_isolated_false_positives() {
        // One real event with a strong 20-cycle signature plus recurring
        // single-cycle false positives of the same class: T = 1 suffers the
        // false positives, T ≥ 2 removes them, so calibration picks T ≥ 2
        // and the spurious singles stop reporting.
        let c = 7u16;
        let mut predictions: Vec<(u64, u16)> = Vec::new();
        for cycle in 0..600u64 {
            let label = if (200..220).contains(&cycle) {
                c
            } else if cycle % 97 == 0 {
                c
            } else {
                IDLE_CLASS
            };
            predictions.push((cycle, label));
        }
        let truth = vec![(195u64, c)];
        let cal = calibrate_from_predictions(&predictions, &truth, D, 37).unwrap();
        assert!(cal.thresholds[c as usize] >= 2, "{:?}", cal.thresholds[c as usize]);
        let reports = vote_stream(&predictions, &cal.thresholds, D).unwrap();
        let of_c: Vec<_> = reports.iter().filter(|r| r.class_label == c).collect();
        assert_eq!(of_c.len(), 1, "{of_c:?}");
    }
}
