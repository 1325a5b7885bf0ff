//! Cross-subject (leave-one-subject-out) and intra-subject (stratified
//! k-fold) evaluation.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::TrialFeatures;
use super::model::{train_logistic, LogisticModel, ModalityCombo, ModelError, Target, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Loso,
    IntraSubject,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::Loso, Protocol::IntraSubject];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Loso => "loso",
            Protocol::IntraSubject => "intra_subject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CvError {
    #[error("empty input")]
    Empty,
    #[error("predictions and labels differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("need at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("no subject has enough trials for intra-subject folding")]
    NoEligibleSubjects,
    #[error("fold {fold} (subject {subject}): {source}")]
    Model {
        subject: String,
        fold: usize,
        source: ModelError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Unweighted mean of the two per-class F1 scores. A class absent from
/// both predictions and labels scores 0.
pub fn macro_f1(predictions: &[bool], labels: &[bool]) -> Result<MacroF1, CvError> {
    if predictions.len() != labels.len() {
        return Err(CvError::Length(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(CvError::Empty);
    }
    let mut warnings = Vec::new();
    let mut total = 0.0;
    for class in [false, true] {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p == class, l == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        if tp + fp + fnn == 0 {
            warnings.push(format!(
                "class {} absent from predictions and labels; F1 taken as 0",
                if class { "high" } else { "low" }
            ));
            continue;
        }
        total += 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64;
    }
    Ok(MacroF1 {
        value: total / 2.0,
        warnings,
    })
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> f64 {
    predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count() as f64
        / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    pub acc: f64,
    pub mf1: f64,
}

/// One cross-validation unit: the held-out subject (LOSO) or one subject's
/// k-fold run, whose scores are the means over its folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitResult {
    pub subject: String,
    pub acc: f64,
    pub mf1: f64,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub protocol: Protocol,
    pub combo: ModalityCombo,
    pub target: Target,
    pub acc_mean: f64,
    /// Population SD across units.
    pub acc_sd: f64,
    pub mf1_mean: f64,
    pub mf1_sd: f64,
    pub units: Vec<UnitResult>,
    pub warnings: Vec<String>,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (
        m,
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

fn summarize(
    protocol: Protocol,
    combo: ModalityCombo,
    target: Target,
    units: Vec<UnitResult>,
    warnings: Vec<String>,
) -> CvResult {
    let (acc_mean, acc_sd) = mean_sd(&units.iter().map(|u| u.acc).collect::<Vec<_>>());
    let (mf1_mean, mf1_sd) = mean_sd(&units.iter().map(|u| u.mf1).collect::<Vec<_>>());
    CvResult {
        protocol,
        combo,
        target,
        acc_mean,
        acc_sd,
        mf1_mean,
        mf1_sd,
        units,
        warnings,
    }
}

/// Trials grouped by subject, in first-appearance order of the subject id
/// sorted lexicographically.
pub fn by_subject(data: &[TrialFeatures]) -> BTreeMap<&str, Vec<&TrialFeatures>> {
    let mut m: BTreeMap<&str, Vec<&TrialFeatures>> = BTreeMap::new();
    for t in data {
        m.entry(t.subject.as_str()).or_default().push(t);
    }
    m
}

fn fit(
    train: &[&TrialFeatures],
    combo: ModalityCombo,
    target: Target,
    cfg: &TrainConfig,
) -> Result<LogisticModel, ModelError> {
    let rows: Vec<Vec<f64>> = train.iter().map(|t| combo.vector(t)).collect();
    let labels: Vec<bool> = train.iter().map(|t| target.label(t)).collect();
    train_logistic(&rows, &labels, cfg)
}

fn score(
    model: &LogisticModel,
    test: &[&TrialFeatures],
    combo: ModalityCombo,
    target: Target,
    fold: usize,
    warnings: &mut Vec<String>,
) -> FoldResult {
    let preds: Vec<bool> = test
        .iter()
        .map(|t| model.predict(&combo.vector(t)))
        .collect();
    let labels: Vec<bool> = test.iter().map(|t| target.label(t)).collect();
    let f1 = macro_f1(&preds, &labels).expect("non-empty fold");
    warnings.extend(f1.warnings);
    FoldResult {
        fold,
        n_test: test.len(),
        acc: accuracy(&preds, &labels),
        mf1: f1.value,
    }
}

/// The model a LOSO fold trains when `test_subject` is held out. It never
/// sees that subject's trials.
pub fn loso_fold_model(
    data: &[TrialFeatures],
    test_subject: &str,
    combo: ModalityCombo,
    target: Target,
    cfg: &TrainConfig,
) -> Result<LogisticModel, ModelError> {
    let train: Vec<&TrialFeatures> = data.iter().filter(|t| t.subject != test_subject).collect();
    fit(&train, combo, target, cfg)
}

pub fn loso_cv(
    data: &[TrialFeatures],
    combo: ModalityCombo,
    target: Target,
    cfg: &TrainConfig,
) -> Result<CvResult, CvError> {
    if data.is_empty() {
        return Err(CvError::Empty);
    }
    let groups = by_subject(data);
    if groups.len() < 2 {
        return Err(CvError::TooFewSubjects(groups.len()));
    }
    let subjects: Vec<(&str, &Vec<&TrialFeatures>)> = groups.iter().map(|(s, v)| (*s, v)).collect();
    let results: Vec<Result<(UnitResult, Vec<String>), CvError>> = subjects
        .par_iter()
        .enumerate()
        .map(|(fold, (subject, test))| {
            let model = loso_fold_model(data, subject, combo, target, cfg).map_err(|source| {
                CvError::Model {
                    subject: subject.to_string(),
                    fold,
                    source,
                }
            })?;
            let mut warnings = Vec::new();
            let r = score(&model, test, combo, target, fold, &mut warnings);
            Ok((
                UnitResult {
                    subject: subject.to_string(),
                    acc: r.acc,
                    mf1: r.mf1,
                    folds: vec![r],
                },
                warnings,
            ))
        })
        .collect();
    let mut units = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        let (u, w) = r?;
        warnings.extend(w.into_iter().map(|m| format!("subject {}: {m}", u.subject)));
        units.push(u);
    }
    Ok(summarize(Protocol::Loso, combo, target, units, warnings))
}

/// Stratified fold assignment: positives first, then negatives, dealt
/// round-robin in trial order so every fold gets a near-equal share of
/// each class.
pub fn stratified_folds(labels: &[bool], k: usize) -> Vec<usize> {
    let mut fold = vec![0; labels.len()];
    let order = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l)
        .chain(labels.iter().enumerate().filter(|(_, &l)| !l));
    for (slot, (i, _)) in order.enumerate() {
        fold[i] = slot % k;
    }
    fold
}

pub fn kfold_cv(
    data: &[TrialFeatures],
    k: usize,
    combo: ModalityCombo,
    target: Target,
    cfg: &TrainConfig,
) -> Result<CvResult, CvError> {
    if data.is_empty() {
        return Err(CvError::Empty);
    }
    let mut warnings = Vec::new();
    let mut eligible = Vec::new();
    for (subject, trials) in by_subject(data) {
        let pos = trials.iter().filter(|t| target.label(t)).count();
        let neg = trials.len() - pos;
        if pos < 2 || neg < 2 {
            let msg = format!("subject {subject} excluded: {pos} high / {neg} low {target} trials, need 2 of each");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let k_eff = k.min(trials.len());
        if k_eff < k {
            let msg = format!(
                "subject {subject}: {} trials, folding with k = {k_eff}",
                trials.len()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        eligible.push((subject, trials, k_eff));
    }
    if eligible.is_empty() {
        return Err(CvError::NoEligibleSubjects);
    }
    let jobs: Vec<(usize, usize)> = eligible
        .iter()
        .enumerate()
        .flat_map(|(s, e)| (0..e.2).map(move |f| (s, f)))
        .collect();
    let folds: Vec<Result<(usize, FoldResult, Vec<String>), CvError>> = jobs
        .par_iter()
        .map(|&(s, fold)| {
            let (subject, trials, k_eff) = &eligible[s];
            let labels: Vec<bool> = trials.iter().map(|t| target.label(t)).collect();
            let assign = stratified_folds(&labels, *k_eff);
            let (test, train): (Vec<_>, Vec<_>) =
                trials.iter().zip(&assign).partition(|(_, &a)| a == fold);
            let test: Vec<&TrialFeatures> = test.into_iter().map(|(t, _)| *t).collect();
            let train: Vec<&TrialFeatures> = train.into_iter().map(|(t, _)| *t).collect();
            let model = fit(&train, combo, target, cfg).map_err(|source| CvError::Model {
                subject: subject.to_string(),
                fold,
                source,
            })?;
            let mut w = Vec::new();
            let r = score(&model, &test, combo, target, fold, &mut w);
            Ok((s, r, w))
        })
        .collect();
    let mut per_subject: Vec<Vec<FoldResult>> = vec![Vec::new(); eligible.len()];
    for r in folds {
        let (s, fold, w) = r?;
        warnings.extend(
            w.into_iter()
                .map(|m| format!("subject {} fold {}: {m}", eligible[s].0, fold.fold)),
        );
        per_subject[s].push(fold);
    }
    let units = eligible
        .iter()
        .zip(per_subject)
        .map(|((subject, _, _), folds)| {
            let n = folds.len() as f64;
            UnitResult {
                subject: subject.to_string(),
                acc: folds.iter().map(|f| f.acc).sum::<f64>() / n,
                mf1: folds.iter().map(|f| f.mf1).sum::<f64>() / n,
                folds,
            }
        })
        .collect();
    Ok(summarize(
        Protocol::IntraSubject,
        combo,
        target,
        units,
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        let labels = [true, false, true, false];
        assert_eq!(macro_f1(&labels, &labels).unwrap().value, 1.0);
        let all_high = macro_f1(&[true; 4], &labels).unwrap();
        assert!((all_high.value - 1.0 / 3.0).abs() < 1e-15);
        assert!(all_high.warnings.is_empty());
        let wrong: Vec<bool> = labels.iter().map(|l| !l).collect();
        assert_eq!(macro_f1(&wrong, &labels).unwrap().value, 0.0);
        assert_eq!(macro_f1(&[], &[]), Err(CvError::Empty));
        assert!(matches!(
            macro_f1(&[true], &[true, false]),
            Err(CvError::Length(1, 2))
        ));
    }

    #[test]
    fn absent_class_warns() {
        let r = macro_f1(&[true, true], &[true, true]).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn f1_against_confusion_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = rng.random_range(1..30);
            let p: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let mut cm = [[0.0; 2]; 2];
            for (a, b) in p.iter().zip(&l) {
                cm[*b as usize][*a as usize] += 1.0;
            }
            let f = |c: usize| {
                let (tp, fp, fnn) = (cm[c][c], cm[1 - c][c], cm[c][1 - c]);
                if tp + fp + fnn == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (2.0 * tp + fp + fnn)
                }
            };
            let want = (f(0) + f(1)) / 2.0;
            assert!((macro_f1(&p, &l).unwrap().value - want).abs() < 1e-15);
        }
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let f = stratified_folds(&labels, 10);
        for k in 0..10 {
            let members: Vec<usize> = (0..40).filter(|&i| f[i] == k).collect();
            assert_eq!(members.len(), 4);
            assert_eq!(members.iter().filter(|&&i| labels[i]).count(), 1);
        }
    }
}
