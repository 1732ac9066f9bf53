//! Event classification and reporting: a from-scratch multi-class
//! gradient-boosted tree ensemble over harmonic diff features, the
//! popularity-voting post-processor, per-class threshold calibration, and
//! the model artifact format.
//!
//! The ensemble is one-vs-rest additive trees trained round-synchronously
//! on a softmax objective: each boosting round computes class probabilities
//! from the current scores, then fits one regression tree per class to that
//! class's gradient/hessian. Trees use exact (pre-sorted) split finding, so
//! training is deterministic for fixed samples and configuration.

mod gbdt;
mod io;
mod vote;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use vote::{
    calibrate_from_predictions, calibrate_thresholds, predict_stream, run_inference, vote_stream,
    Calibration, EventReport, VoteState,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, param, Result};
use crate::pipeline::{TrainingSample, FEATURE_DIM};

/// Boosting hyperparameters. The defaults are this project's choice of a
/// reasonable desk-scale operating point and are recorded in every saved
/// model; they are not claimed to be optimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Boosting rounds; each round adds one tree per class.
    pub n_trees: u32,
    pub max_depth: u32,
    pub learning_rate: f64,
    /// L2 regularization on leaf weights.
    pub lambda: f64,
    pub min_samples_leaf: u32,
    /// Recorded for provenance. Training is currently fully deterministic,
    /// so the seed only matters for future stochastic variants.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 200,
            max_depth: 6,
            learning_rate: 0.1,
            lambda: 1.0,
            min_samples_leaf: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(param("n_trees must be at least 1"));
        }
        if self.max_depth == 0 || self.max_depth > 24 {
            return Err(param("max_depth must lie in 1..=24"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(param("learning_rate must lie in (0, 1]"));
        }
        if !(self.lambda >= 0.0) {
            return Err(param("lambda must be non-negative"));
        }
        if self.min_samples_leaf == 0 {
            return Err(param("min_samples_leaf must be at least 1"));
        }
        Ok(())
    }
}

/// Trained multi-class event classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EventClassifier {
    n_classes: u16,
    n_features: usize,
    config: TrainConfig,
    /// `rounds[r][k]` is round r's tree for class k.
    pub(crate) rounds: Vec<Vec<gbdt::Tree>>,
}

impl EventClassifier {
    pub fn n_classes(&self) -> u16 {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_trained(&self) -> bool {
        !self.rounds.is_empty()
    }

    pub(crate) fn from_parts(
        n_classes: u16,
        n_features: usize,
        config: TrainConfig,
        rounds: Vec<Vec<gbdt::Tree>>,
    ) -> Self {
        EventClassifier {
            n_classes,
            n_features,
            config,
            rounds,
        }
    }

    /// Fit the ensemble. Requires at least two distinct class labels.
    pub fn train(samples: &[TrainingSample], n_classes: u16, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(degenerate("cannot train on an empty sample set"));
        }
        if n_classes < 2 {
            return Err(param("n_classes must be at least 2"));
        }
        let mut seen = vec![false; n_classes as usize];
        for s in samples {
            if s.class_label >= n_classes {
                return Err(param(format!(
                    "sample label {} out of range for {} classes",
                    s.class_label, n_classes
                )));
            }
            if s.features.values.iter().any(|v| !v.is_finite()) {
                return Err(param("training features must be finite"));
            }
            seen[s.class_label as usize] = true;
        }
        if seen.iter().filter(|&&b| b).count() < 2 {
            return Err(degenerate(
                "training set contains a single class; nothing to separate",
            ));
        }

        let n = samples.len();
        let k = n_classes as usize;
        let cols: Vec<Vec<f32>> = (0..FEATURE_DIM)
            .map(|j| samples.iter().map(|s| s.features.values[j] as f32).collect())
            .collect();
        let sorted: Vec<Vec<u32>> = cols
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_unstable_by(|&a, &b| {
                    col[a as usize]
                        .total_cmp(&col[b as usize])
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        let labels: Vec<u16> = samples.iter().map(|s| s.class_label).collect();

        let grow = gbdt::GrowParams {
            max_depth: config.max_depth,
            learning_rate: config.learning_rate,
            lambda: config.lambda,
            min_samples_leaf: config.min_samples_leaf as usize,
        };

        let mut scores = vec![0.0f64; n * k];
        let mut prob = vec![0.0f64; n * k];
        let mut rounds = Vec::with_capacity(config.n_trees as usize);
        for _ in 0..config.n_trees {
            scores
                .par_chunks(k)
                .zip(prob.par_chunks_mut(k))
                .for_each(|(f_row, p_row)| softmax_into(f_row, p_row));

            let fitted: Vec<(gbdt::Tree, Vec<u32>)> = (0..k)
                .into_par_iter()
                .map(|class| {
                    let mut grad = vec![0.0f64; n];
                    let mut hess = vec![0.0f64; n];
                    for i in 0..n {
                        let p = prob[i * k + class];
                        let y = if labels[i] as usize == class { 1.0 } else { 0.0 };
                        grad[i] = p - y;
                        hess[i] = (p * (1.0 - p)).max(1e-16);
                    }
                    gbdt::build_tree(&cols, &sorted, &grad, &hess, &grow)
                })
                .collect();

            let mut trees = Vec::with_capacity(k);
            for (class, (tree, leaf_of)) in fitted.into_iter().enumerate() {
                for (i, &leaf) in leaf_of.iter().enumerate() {
                    scores[i * k + class] += tree.nodes[leaf as usize].value;
                }
                trees.push(tree);
            }
            rounds.push(trees);
        }

        Ok(EventClassifier {
            n_classes,
            n_features: FEATURE_DIM,
            config: config.clone(),
            rounds,
        })
    }

    /// Raw additive scores per class (higher = more likely).
    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.is_trained() {
            return Err(degenerate(
                "classifier has no trained trees (untrained model state)",
            ));
        }
        if x.len() != self.n_features {
            return Err(param(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut scores = vec![0.0f64; self.n_classes as usize];
        for round in &self.rounds {
            for (s, tree) in scores.iter_mut().zip(round) {
                *s += tree.predict(x);
            }
        }
        Ok(scores)
    }

    /// Predicted class label; score ties resolve to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<u16> {
        Ok(argmax_lowest(&self.predict_scores(x)?))
    }

    /// Fraction of samples whose prediction matches their label.
    pub fn accuracy(&self, samples: &[TrainingSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(degenerate("no samples to score"));
        }
        let hits: Result<usize> = samples
            .par_iter()
            .map(|s| {
                self.predict(&s.features.values)
                    .map(|p| usize::from(p == s.class_label))
            })
            .try_reduce(|| 0, |a, b| Ok(a + b));
        Ok(hits? as f64 / samples.len() as f64)
    }
}

fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        let e = (s - m).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the maximum value; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> u16 {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best as u16
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::DiffFeatureVector;

    pub(crate) fn sample(label: u16, fill: &[(usize, f64)]) -> TrainingSample {
        let mut features = DiffFeatureVector::zero();
        for &(i, v) in fill {
            features.values[i] = v;
        }
        TrainingSample {
            class_label: label,
            features,
        }
    }

    fn blob(label: u16, center: f64, n: usize) -> Vec<TrainingSample> {
        (0..n)
            .map(|i| {
                let off = (i as f64 / n as f64 - 0.5) * 0.4;
                sample(label, &[(0, center + off), (3, center * 0.5 - off)])
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            n_trees: 25,
            max_depth: 3,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let mut samples = blob(0, -2.0, 40);
        samples.extend(blob(1, 2.0, 40));
        let model = EventClassifier::train(&samples, 2, &small_config()).unwrap();
        assert_eq!(model.accuracy(&samples).unwrap(), 1.0);
    }

    #[test]
    fn zero_vector_lands_in_the_idle_blob() {
        let mut samples: Vec<TrainingSample> =
            (0..40).map(|i| sample(0, &[(1, (i as f64 - 20.0) * 0.005)])).collect();
        samples.extend(blob(1, 4.0, 40));
        samples.extend(blob(2, -4.0, 40));
        let model = EventClassifier::train(&samples, 3, &small_config()).unwrap();
        assert_eq!(model.predict(&[0.0; FEATURE_DIM]).unwrap(), 0);
    }

    #[test]
    fn contradictory_duplicates_settle_at_the_majority_share() {
        // Identical features, labels 70/30: the best any classifier can do
        // is predict the majority everywhere.
        let mut samples = Vec::new();
        for _ in 0..70 {
            samples.push(sample(1, &[(2, 1.0)]));
        }
        for _ in 0..30 {
            samples.push(sample(2, &[(2, 1.0)]));
        }
        let model = EventClassifier::train(&samples, 3, &small_config()).unwrap();
        let acc = model.accuracy(&samples).unwrap();
        assert!((acc - 0.7).abs() < 1e-12, "accuracy {acc}");
        assert_eq!(model.predict(&[0.0; FEATURE_DIM]).unwrap(), 1);
    }

    #[test]
    fn single_class_input_is_degenerate() {
        let samples = blob(4, 1.0, 20);
        let err = EventClassifier::train(&samples, 5, &small_config()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn out_of_range_label_is_a_parameter_error() {
        let mut samples = blob(0, -1.0, 10);
        samples.extend(blob(7, 1.0, 10));
        let err = EventClassifier::train(&samples, 3, &small_config()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn untrained_predict_is_a_state_error() {
        let model = EventClassifier::from_parts(3, FEATURE_DIM, TrainConfig::default(), vec![]);
        let err = model.predict(&[0.0; FEATURE_DIM]).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn wrong_feature_width_is_a_parameter_error() {
        let mut samples = blob(0, -1.0, 10);
        samples.extend(blob(1, 1.0, 10));
        let model = EventClassifier::train(&samples, 2, &small_config()).unwrap();
        assert_eq!(model.predict(&[0.0; 7]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn retraining_is_deterministic() {
        let mut samples = blob(0, -1.5, 30);
        samples.extend(blob(1, 0.5, 30));
        samples.extend(blob(2, 2.5, 30));
        let a = EventClassifier::train(&samples, 3, &small_config()).unwrap();
        let b = EventClassifier::train(&samples, 3, &small_config()).unwrap();
        assert_eq!(a, b);
        for i in 0..50 {
            let x: Vec<f64> = (0..FEATURE_DIM)
                .map(|j| ((i * 31 + j * 7) as f64 * 0.173).sin() * 3.0)
                .collect();
            assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        }
    }

    #[test]
    fn argmax_prefers_the_lowest_index_on_ties() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[5.0]), 0);
        assert_eq!(argmax_lowest(&[-1.0, -1.0]), 0);
    }
}
