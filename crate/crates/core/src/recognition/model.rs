//! Modality selection, standardization and the logistic-regression
//! baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::TrialFeatures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModalityCombo {
    #[serde(rename = "EEG")]
    Eeg,
    #[serde(rename = "PPG")]
    Ppg,
    #[serde(rename = "Hb")]
    Hb,
    #[serde(rename = "EEG+PPG")]
    EegPpg,
    #[serde(rename = "EEG+Hb")]
    EegHb,
    #[serde(rename = "EEG+PPG+Hb")]
    EegPpgHb,
}

impl ModalityCombo {
    pub const ALL: [ModalityCombo; 6] = [
        ModalityCombo::Eeg,
        ModalityCombo::Ppg,
        ModalityCombo::Hb,
        ModalityCombo::EegPpg,
        ModalityCombo::EegHb,
        ModalityCombo::EegPpgHb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityCombo::Eeg => "EEG",
            ModalityCombo::Ppg => "PPG",
            ModalityCombo::Hb => "Hb",
            ModalityCombo::EegPpg => "EEG+PPG",
            ModalityCombo::EegHb => "EEG+Hb",
            ModalityCombo::EegPpgHb => "EEG+PPG+Hb",
        }
    }

    /// (eeg, ppg, hb)
    pub fn parts(self) -> (bool, bool, bool) {
        match self {
            ModalityCombo::Eeg => (true, false, false),
            ModalityCombo::Ppg => (false, true, false),
            ModalityCombo::Hb => (false, false, true),
            ModalityCombo::EegPpg => (true, true, false),
            ModalityCombo::EegHb => (true, false, true),
            ModalityCombo::EegPpgHb => (true, true, true),
        }
    }

    /// Concatenated feature vector in EEG, PPG, Hb order.
    pub fn vector(self, t: &TrialFeatures) -> Vec<f64> {
        let (e, p, h) = self.parts();
        let mut v = Vec::with_capacity(76);
        if e {
            v.extend_from_slice(&t.eeg);
        }
        if p {
            v.extend_from_slice(&t.ppg);
        }
        if h {
            v.extend_from_slice(&t.hb.0);
        }
        v
    }
}

impl fmt::Display for ModalityCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityCombo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown modality combination {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Valence,
    Arousal,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Valence, Target::Arousal];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Valence => "valence",
            Target::Arousal => "arousal",
        }
    }

    pub fn label(self, t: &TrialFeatures) -> bool {
        match self {
            Target::Valence => t.label.valence_high,
            Target::Arousal => t.label.arousal_high,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            learning_rate: 0.1,
            iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("training set has {0} example(s), need at least 2")]
    TooFew(usize),
    #[error("training labels are all {0}; need both classes")]
    SingleClass(bool),
    #[error("feature rows have inconsistent lengths")]
    Ragged,
}

/// Column means and population SDs from the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut sd = vec![0.0; d];
        for r in rows {
            for ((s, x), m) in sd.iter_mut().zip(r).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        sd.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Self { mean, sd }
    }

    /// Zero-variance columns map to 0.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn probability(&self, row: &[f64]) -> f64 {
        let z = self
            .standardizer
            .transform(row)
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }

    /// High class when p >= 0.5.
    pub fn predict(&self, row: &[f64]) -> bool {
        self.probability(row) >= 0.5
    }
}

/// Full-batch gradient descent on mean log-loss plus `lambda/2 * |w|^2`
/// from zero weights. The bias is not penalized.
pub fn train_logistic(
    rows: &[Vec<f64>],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<LogisticModel, ModelError> {
    let n = rows.len();
    if n < 2 || labels.len() != n {
        return Err(ModelError::TooFew(n.min(labels.len())));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(ModelError::SingleClass(labels[0]));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(ModelError::Ragged);
    }
    let standardizer = Standardizer::fit(rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.transform(r)).collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (xi, yi) in x.iter().zip(&y) {
            let z = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let err = sigmoid(z) - yi;
            gb += err;
            for (g, v) in grad.iter_mut().zip(xi) {
                *g += err * v;
            }
        }
        for (wj, gj) in w.iter_mut().zip(&grad) {
            *wj -= cfg.learning_rate * (gj / n as f64 + cfg.lambda * *wj);
        }
        b -= cfg.learning_rate * gb / n as f64;
    }
    Ok(LogisticModel {
        standardizer,
        weights: w,
        bias: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn clusters(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { 2.0 } else { -2.0 };
            rows.push(vec![
                c + noise.sample(&mut rng),
                100.0 + noise.sample(&mut rng),
                -c * 1e3,
            ]);
            labels.push(pos);
        }
        (rows, labels)
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let (rows, labels) = clusters(60, 1);
        let m = train_logistic(&rows, &labels, &TrainConfig::default()).unwrap();
        let acc = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| m.predict(r) == l)
            .count();
        assert_eq!(acc, 60);
    }

    #[test]
    fn retraining_is_bitwise_identical() {
        let (rows, labels) = clusters(40, 2);
        let a = train_logistic(&rows, &labels, &TrainConfig::default()).unwrap();
        let b = train_logistic(&rows, &labels, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_features_predict_majority() {
        let rows = vec![vec![3.0, 3.0]; 10];
        let mut labels = vec![true; 7];
        labels.extend([false; 3]);
        let m = train_logistic(&rows, &labels, &TrainConfig::default()).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert!(m.predict(&[3.0, 3.0]));
        assert!(m.predict(&[-50.0, 9.0]));
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let m = train_logistic(&rows, &flipped, &TrainConfig::default()).unwrap();
        assert!(!m.predict(&[3.0, 3.0]));
    }

    #[test]
    fn balanced_tie_predicts_high() {
        let rows = vec![vec![1.0]; 4];
        let m =
            train_logistic(&rows, &[true, false, true, false], &TrainConfig::default()).unwrap();
        assert_eq!(m.probability(&[1.0]), 0.5);
        assert!(m.predict(&[1.0]));
    }

    #[test]
    fn degenerate_training_sets() {
        assert_eq!(
            train_logistic(&[vec![1.0]], &[true], &TrainConfig::default()),
            Err(ModelError::TooFew(1))
        );
        assert_eq!(
            train_logistic(
                &[vec![1.0], vec![2.0]],
                &[false, false],
                &TrainConfig::default()
            ),
            Err(ModelError::SingleClass(false))
        );
    }

    #[test]
    fn standardizer_uses_population_sd() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.sd, vec![1.0, 0.0]);
        assert_eq!(s.transform(&[4.0, 7.0]), vec![2.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        // One step from zero: w1 = -lr * dL/dw at w = 0. Check against a
        // numerical derivative of the penalized loss.
        let (rows, labels) = clusters(12, 5);
        let cfg = TrainConfig {
            iterations: 1,
            ..Default::default()
        };
        let m = train_logistic(&rows, &labels, &cfg).unwrap();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| m.standardizer.transform(r)).collect();
        let loss = |w: &[f64]| {
            let mut l = 0.0;
            for (xi, &yi) in x.iter().zip(&labels) {
                let p = sigmoid(xi.iter().zip(w).map(|(a, b)| a * b).sum());
                l -= if yi { p.ln() } else { (1.0 - p).ln() };
            }
            l / x.len() as f64 + 0.5 * cfg.lambda * w.iter().map(|v| v * v).sum::<f64>()
        };
        for j in 0..3 {
            let h = 1e-6;
            let mut wp = vec![0.0; 3];
            let mut wm = vec![0.0; 3];
            wp[j] = h;
            wm[j] = -h;
            let g = (loss(&wp) - loss(&wm)) / (2.0 * h);
            assert!((m.weights[j] + cfg.learning_rate * g).abs() < 1e-8);
        }
    }

    #[test]
    fn combo_vectors() {
        assert_eq!(ModalityCombo::ALL.len(), 6);
        for c in ModalityCombo::ALL {
            assert_eq!(c.as_str().parse::<ModalityCombo>().unwrap(), c);
            assert_eq!(
                serde_json::to_string(&c).unwrap(),
                format!("\"{}\"", c.as_str())
            );
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t = crate::recognition::features::tests::random_trial(&mut rng, "s", 0);
        assert_eq!(ModalityCombo::EegPpgHb.vector(&t).len(), 76);
        assert_eq!(ModalityCombo::EegHb.vector(&t)[10], t.hb.0[0]);
        assert_eq!(ModalityCombo::Ppg.vector(&t), t.ppg.to_vec());
    }
}
