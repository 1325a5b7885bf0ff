//! Multimodal feature vectors, a logistic-regression baseline and the
//! cross-validation harness around it.

pub mod ablation;
pub mod cv;
pub mod features;
pub mod model;

pub use ablation::{ablation_report, AblationCell, AblationReport, RecognitionConfig};
pub use cv::{
    accuracy, kfold_cv, loso_cv, loso_fold_model, macro_f1, stratified_folds, CvError, CvResult,
    FoldResult, MacroF1, Protocol, UnitResult,
};
pub use features::{
    build_features, detect_beats, feature_csv_header, heart_rate, ppg_features, read_feature_csv,
    write_feature_csv, ExcludeReason, FeatureConfig, FeatureCsvError, TrialFeatures, TrialInputs,
    EEG_FEATURES, PPG_FEATURES,
};
pub use model::{
    train_logistic, LogisticModel, ModalityCombo, ModelError, Standardizer, Target, TrainConfig,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{derive_label, FnirsFeatureVector, RatingTriple};
    use crate::quadrant::EmotionQuadrant;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[derive(Clone, Copy)]
    struct Signal {
        eeg: f64,
        ppg: f64,
        hb: f64,
    }

    /// Per-subject offsets plus noise; the label shifts a few features in
    /// each modality by the given strength.
    fn dataset(subjects: usize, trials: usize, sig: Signal, seed: u64) -> Vec<TrialFeatures> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::new();
        for s in 0..subjects {
            let offset: f64 = rng.random_range(-0.3..0.3);
            for i in 0..trials {
                let q = EmotionQuadrant::ALL[i % 4];
                let score = |high: bool| if high { 8 } else { 2 };
                let rating =
                    RatingTriple::new(score(q.valence_high()), score(q.arousal_high()), 5).unwrap();
                let v = if q.valence_high() { 1.0 } else { -1.0 };
                let a = if q.arousal_high() { 1.0 } else { -1.0 };
                let mut f = |k: usize, strength: f64| -> f64 {
                    let shift = match k % 3 {
                        0 => v,
                        1 => a,
                        _ => 0.0,
                    };
                    offset + strength * shift + n.sample(&mut rng)
                };
                let eeg = std::array::from_fn(|k| f(k, sig.eeg));
                let ppg = std::array::from_fn(|k| f(k, sig.ppg));
                let hb = FnirsFeatureVector(std::array::from_fn(|k| f(k, sig.hb)));
                out.push(TrialFeatures {
                    trial_id: i as u32,
                    subject: format!("s{s:02}"),
                    quadrant: q,
                    eeg,
                    ppg,
                    hr_defined: true,
                    hb,
                    rating,
                    label: derive_label(rating, q),
                });
            }
        }
        out
    }

    #[test]
    fn separable_data_is_perfect() {
        let data = dataset(
            5,
            40,
            Signal {
                eeg: 20.0,
                ppg: 20.0,
                hb: 20.0,
            },
            1,
        );
        let cfg = TrainConfig::default();
        for target in Target::ALL {
            let l = loso_cv(&data, ModalityCombo::EegPpgHb, target, &cfg).unwrap();
            assert_eq!(l.units.len(), 5);
            assert!(l.units.iter().all(|u| u.acc == 1.0 && u.mf1 == 1.0));
            let k = kfold_cv(&data, 10, ModalityCombo::EegPpgHb, target, &cfg).unwrap();
            assert_eq!(k.units[0].folds.len(), 10);
            assert!(k.units[0].folds.iter().all(|f| f.n_test == 4));
            assert_eq!((k.acc_mean, k.mf1_mean), (1.0, 1.0));
        }
    }

    #[test]
    fn loso_partitions_dataset() {
        let data = dataset(
            4,
            12,
            Signal {
                eeg: 1.0,
                ppg: 0.0,
                hb: 0.0,
            },
            2,
        );
        let r = loso_cv(
            &data,
            ModalityCombo::Eeg,
            Target::Valence,
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(
            r.units.iter().map(|u| u.folds[0].n_test).sum::<usize>(),
            data.len()
        );
        let accs: Vec<f64> = r.units.iter().map(|u| u.acc).collect();
        let lo = accs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(r.acc_mean >= lo && r.acc_mean <= hi);
    }

    #[test]
    fn permuted_labels_are_at_chance() {
        let cfg = TrainConfig {
            iterations: 100,
            ..Default::default()
        };
        let mut accs = Vec::new();
        for seed in 0..10 {
            let mut data = dataset(
                5,
                40,
                Signal {
                    eeg: 2.0,
                    ppg: 0.0,
                    hb: 0.0,
                },
                100 + seed,
            );
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<_> = data.iter().map(|t| t.label).collect();
            rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
            for (t, l) in data.iter_mut().zip(labels) {
                t.label = l;
            }
            accs.push(
                loso_cv(&data, ModalityCombo::Eeg, Target::Valence, &cfg)
                    .unwrap()
                    .acc_mean,
            );
        }
        let m = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((m - 0.5).abs() <= 0.1, "{m}");
    }

    #[test]
    fn held_out_subject_never_reaches_its_model() {
        let data = dataset(
            4,
            20,
            Signal {
                eeg: 1.0,
                ppg: 1.0,
                hb: 1.0,
            },
            3,
        );
        let cfg = TrainConfig::default();
        let combo = ModalityCombo::EegPpgHb;
        let mut scaled = data.clone();
        for t in scaled.iter_mut().filter(|t| t.subject == "s02") {
            t.eeg
                .iter_mut()
                .chain(t.ppg.iter_mut())
                .chain(t.hb.0.iter_mut())
                .for_each(|v| *v *= 1000.0);
        }
        let a = loso_fold_model(&data, "s02", combo, Target::Arousal, &cfg).unwrap();
        let b = loso_fold_model(&scaled, "s02", combo, Target::Arousal, &cfg).unwrap();
        assert_eq!(a, b);
        // Other folds train on s02, so their models must differ.
        let c = loso_fold_model(&data, "s00", combo, Target::Arousal, &cfg).unwrap();
        let d = loso_fold_model(&scaled, "s00", combo, Target::Arousal, &cfg).unwrap();
        assert_ne!(c, d);
    }

    #[test]
    fn eeg_only_signal_favours_eeg_combos() {
        let data = dataset(
            5,
            40,
            Signal {
                eeg: 1.5,
                ppg: 0.0,
                hb: 0.0,
            },
            4,
        );
        let cfg = RecognitionConfig {
            protocols: vec![Protocol::Loso],
            ..Default::default()
        };
        let rep = ablation_report(&data, &cfg).unwrap();
        assert_eq!(rep.cells.len(), 12);
        for t in Target::ALL {
            let eeg = rep
                .cell(Protocol::Loso, t, ModalityCombo::Eeg)
                .unwrap()
                .acc_mean;
            for other in [ModalityCombo::Ppg, ModalityCombo::Hb] {
                assert!(eeg > rep.cell(Protocol::Loso, t, other).unwrap().acc_mean + 0.1);
            }
            assert_eq!(
                rep.cells.iter().filter(|c| c.target == t && c.best).count(),
                1
            );
        }
        let md = rep.to_markdown();
        assert!(md.contains("| EEG+PPG+Hb |"));
        assert_eq!(md.matches("**").count(), 4);
    }

    #[test]
    fn fused_at_least_best_single() {
        let data = dataset(
            5,
            40,
            Signal {
                eeg: 0.5,
                ppg: 0.5,
                hb: 0.5,
            },
            5,
        );
        let cfg = TrainConfig::default();
        for t in Target::ALL {
            let acc = |c| loso_cv(&data, c, t, &cfg).unwrap().acc_mean;
            let single = [ModalityCombo::Eeg, ModalityCombo::Ppg, ModalityCombo::Hb].map(acc);
            let fused = acc(ModalityCombo::EegPpgHb);
            assert!(
                fused >= single.iter().copied().fold(0.0, f64::max),
                "{fused} {single:?}"
            );
        }
    }

    #[test]
    fn grid_is_deterministic_and_json_round_trips() {
        let data = dataset(
            3,
            24,
            Signal {
                eeg: 0.7,
                ppg: 0.3,
                hb: 0.2,
            },
            6,
        );
        let cfg = RecognitionConfig {
            k: 4,
            ..Default::default()
        };
        let a = ablation_report(&data, &cfg).unwrap();
        let b = ablation_report(&data, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.cells.len(), 24);
        assert!(a
            .cells
            .iter()
            .all(|c| (0.0..=1.0).contains(&c.acc_mean) && (0.0..=1.0).contains(&c.mf1_mean)));
        let back: AblationReport =
            serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn kfold_exclusions() {
        let mut data = dataset(
            2,
            12,
            Signal {
                eeg: 3.0,
                ppg: 0.0,
                hb: 0.0,
            },
            7,
        );
        // s01 keeps a single low-valence trial.
        data.retain(|t| t.subject == "s00" || t.label.valence_high || t.trial_id == 3);
        let r = kfold_cv(
            &data,
            10,
            ModalityCombo::Eeg,
            Target::Valence,
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(r.units.len(), 1);
        assert!(r.warnings.iter().any(|w| w.contains("s01 excluded")));
        assert_eq!(r.units[0].folds.len(), 10);
        assert!(matches!(
            ablation_report(&[], &RecognitionConfig::default()),
            Err(CvError::Empty)
        ));
        let one: Vec<_> = data
            .iter()
            .filter(|t| t.subject == "s00")
            .cloned()
            .collect();
        assert!(matches!(
            loso_cv(
                &one,
                ModalityCombo::Eeg,
                Target::Valence,
                &TrainConfig::default()
            ),
            Err(CvError::TooFewSubjects(1))
        ));
    }
}
