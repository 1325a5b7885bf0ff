use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chroma::{detect_mode, Mode};
use super::pitch::{melodic_direction, pitch_track, range_of};
use super::tempo::estimate_tempo;
use super::{AudioClip, AudioError};
use crate::analysis::{one_way_anova, StatsError};
use crate::quadrant::EmotionQuadrant;

pub const FEATURE_NAMES: [&str; 5] = [
    "tempo",
    "articulation",
    "mode",
    "pitch_range",
    "melodic_direction",
];

const ZCR_FRAME_S: f64 = 0.020;
const ZCR_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub tempo_low_confidence: bool,
    pub mode_low_confidence: bool,
    pub pitch_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralFeatures {
    pub tempo_bpm: f64,
    pub articulation_raw: f64,
    pub mode: Mode,
    pub mode_raw: f64,
    pub pitch_range_semitones: f64,
    pub melodic_direction_raw: f64,
    /// Corpus-scaled values in [1, 7], in `FEATURE_NAMES` order.
    pub scaled: Option<[f64; 5]>,
    pub flags: FeatureFlags,
}

impl StructuralFeatures {
    pub fn raw(&self) -> [f64; 5] {
        [
            self.tempo_bpm,
            self.articulation_raw,
            self.mode_raw,
            self.pitch_range_semitones,
            self.melodic_direction_raw,
        ]
    }
}

/// Inverse of the mean zero-crossing rate over 20 ms frames.
pub fn rhythmic_articulation(clip: &AudioClip) -> Result<f64, AudioError> {
    if clip.samples.is_empty() {
        return Err(AudioError::Empty);
    }
    let frame = ((ZCR_FRAME_S * clip.sample_rate as f64).round() as usize).max(2);
    // Consecutive frames share their boundary sample so that every
    // adjacent pair is counted exactly once.
    let step = frame - 1;
    let mut chunks: Vec<&[f64]> = Vec::new();
    let mut start = 0;
    while start + frame <= clip.samples.len() {
        chunks.push(&clip.samples[start..start + frame]);
        start += step;
    }
    if chunks.is_empty() {
        chunks.push(&clip.samples);
    }
    let rates: Vec<f64> = chunks
        .iter()
        .map(|c| {
            if c.len() < 2 {
                return 0.0;
            }
            let changes = c
                .windows(2)
                .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
                .count();
            changes as f64 / (c.len() - 1) as f64
        })
        .collect();
    let zcr = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok(1.0 / (zcr + ZCR_EPS))
}

/// All five raw features. Tempo and mode run at the analysis rate; ZCR and
/// pitch run at the clip's own rate.
pub fn extract_features(clip: &AudioClip) -> Result<StructuralFeatures, AudioError> {
    clip.require_duration(2.0)?;
    let tempo = estimate_tempo(clip)?;
    let mode = detect_mode(clip)?;
    let track = pitch_track(clip);
    let range = range_of(&track);
    Ok(StructuralFeatures {
        tempo_bpm: tempo.bpm,
        articulation_raw: rhythmic_articulation(clip)?,
        mode: mode.mode,
        mode_raw: mode.mode_raw,
        pitch_range_semitones: range.semitones,
        melodic_direction_raw: melodic_direction(&track),
        scaled: None,
        flags: FeatureFlags {
            tempo_low_confidence: tempo.low_confidence,
            mode_low_confidence: mode.low_confidence,
            pitch_degenerate: range.degenerate,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub quadrant: EmotionQuadrant,
    pub features: StructuralFeatures,
}

/// Extracts features for every clip in parallel; order is preserved.
pub fn extract_corpus(
    clips: &[(String, EmotionQuadrant, AudioClip)],
) -> Vec<(String, Result<ClipFeatures, AudioError>)> {
    clips
        .par_iter()
        .map(|(id, q, audio)| {
            let r = extract_features(audio).map(|features| ClipFeatures {
                clip_id: id.clone(),
                quadrant: *q,
                features,
            });
            (id.clone(), r)
        })
        .collect()
}

/// Per-feature min-max mapping onto [1, 7]; a constant feature maps to 4.
pub fn scale_features(corpus: &mut [StructuralFeatures]) {
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for f in corpus.iter() {
        for (j, v) in f.raw().iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    for f in corpus.iter_mut() {
        let raw = f.raw();
        f.scaled = Some(std::array::from_fn(|j| {
            if hi[j] > lo[j] {
                1.0 + 6.0 * ((raw[j] - lo[j]) / (hi[j] - lo[j]))
            } else {
                4.0
            }
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnova {
    pub feature: String,
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// One-way ANOVA across quadrants for each scaled feature.
pub fn feature_group_anova(
    groups: &BTreeMap<EmotionQuadrant, Vec<[f64; 5]>>,
) -> Result<Vec<FeatureAnova>, StatsError> {
    (0..5)
        .map(|j| {
            let cols: Vec<Vec<f64>> = groups
                .values()
                .map(|rows| rows.iter().map(|r| r[j]).collect())
                .collect();
            let a = one_way_anova(&cols)?;
            Ok(FeatureAnova {
                feature: FEATURE_NAMES[j].to_string(),
                f: a.f,
                p: a.p,
                df_between: a.df_between,
                df_within: a.df_within,
            })
        })
        .collect()
}

/// `clip_id,quadrant,tempo,...` with scaled values.
pub fn write_feature_csv<W: Write>(w: W, rows: &[ClipFeatures]) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["clip_id", "quadrant"];
    header.extend(FEATURE_NAMES);
    wtr.write_record(&header)?;
    for r in rows {
        let vals = r.features.scaled.unwrap_or_else(|| r.features.raw());
        let mut rec = vec![r.clip_id.clone(), r.quadrant.to_string()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::synth;
    use super::*;
    use rand::{Rng, SeedableRng};

    fn feat(raw: [f64; 5]) -> StructuralFeatures {
        StructuralFeatures {
            tempo_bpm: raw[0],
            articulation_raw: raw[1],
            mode: Mode::Major,
            mode_raw: raw[2],
            pitch_range_semitones: raw[3],
            melodic_direction_raw: raw[4],
            scaled: None,
            flags: FeatureFlags::default(),
        }
    }

    #[test]
    fn articulation_examples() {
        let constant = AudioClip::new(vec![0.3; 16_000], 16_000).unwrap();
        assert!((rhythmic_articulation(&constant).unwrap() - 1e6).abs() < 1e-6);
        let alt: Vec<f64> = (0..16_000)
            .map(|i| if i % 2 == 0 { 0.5 } else { -0.5 })
            .collect();
        let a = rhythmic_articulation(&AudioClip::new(alt, 16_000).unwrap()).unwrap();
        assert!((a - 1.0).abs() < 1e-5);
        let sine = AudioClip::new(synth::sine(100.0, 0.5, 2.0, 16_000), 16_000).unwrap();
        let a = rhythmic_articulation(&sine).unwrap();
        // 200 crossings per 16000 sample pairs.
        assert!((a - 80.0).abs() < 1.0, "{a}");
        assert!(rhythmic_articulation(&AudioClip::new(vec![], 16_000).unwrap()).is_err());
    }

    #[test]
    fn articulation_sign_based() {
        let sine = AudioClip::new(synth::sine(130.0, 0.5, 1.0, 16_000), 16_000).unwrap();
        assert_eq!(
            rhythmic_articulation(&sine).unwrap(),
            rhythmic_articulation(&sine.scaled(3.0)).unwrap()
        );
    }

    #[test]
    fn scaling_examples() {
        let mut c: Vec<_> = [2.0, 4.0, 6.0]
            .iter()
            .map(|&v| feat([v, 5.0, v, v, v]))
            .collect();
        scale_features(&mut c);
        let s: Vec<[f64; 5]> = c.iter().map(|f| f.scaled.unwrap()).collect();
        assert_eq!(
            s.iter().map(|r| r[0]).collect::<Vec<_>>(),
            vec![1.0, 4.0, 7.0]
        );
        assert!(s.iter().all(|r| r[1] == 4.0));
    }

    #[test]
    fn scaling_random_corpus() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.random_range(2..40);
            let mut c: Vec<_> = (0..n)
                .map(|_| feat(std::array::from_fn(|_| rng.random_range(-50.0..50.0))))
                .collect();
            scale_features(&mut c);
            for j in 0..5 {
                let col: Vec<f64> = c.iter().map(|f| f.scaled.unwrap()[j]).collect();
                let raw: Vec<f64> = c.iter().map(|f| f.raw()[j]).collect();
                assert_eq!(col.iter().copied().fold(f64::INFINITY, f64::min), 1.0);
                assert_eq!(col.iter().copied().fold(f64::NEG_INFINITY, f64::max), 7.0);
                for a in 0..n {
                    for b in 0..n {
                        if raw[a] < raw[b] {
                            assert!(col[a] <= col[b]);
                        }
                    }
                }
            }
            // Idempotent once the corpus spans exactly [1, 7].
            let mut again: Vec<_> = c.iter().map(|f| feat(f.scaled.unwrap())).collect();
            scale_features(&mut again);
            for (x, y) in c.iter().zip(&again) {
                for (p, q) in x.scaled.unwrap().iter().zip(y.scaled.unwrap()) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn anova_on_groups() {
        use EmotionQuadrant::*;
        let same: BTreeMap<_, _> = EmotionQuadrant::ALL
            .iter()
            .map(|&q| {
                (
                    q,
                    vec![[1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 3.0, 4.0, 5.0, 6.0]],
                )
            })
            .collect();
        for r in feature_group_anova(&same).unwrap() {
            assert!(r.f.abs() < 1e-12 && (r.p - 1.0).abs() < 1e-12);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut jitter = |c: f64| c + rng.random_range(-0.01..0.01);
        let apart: BTreeMap<_, _> = [(HAHV, 1.0), (LALV, 7.0)]
            .into_iter()
            .map(|(q, c)| (q, (0..6).map(|_| [jitter(c); 5]).collect()))
            .collect();
        for r in feature_group_anova(&apart).unwrap() {
            assert!(r.p < 1e-6);
        }
        let tiny: BTreeMap<_, _> = [(HAHV, vec![[1.0; 5]])].into_iter().collect();
        assert!(feature_group_anova(&tiny).is_err());
    }

    #[test]
    fn full_extraction_on_synthetic_clip() {
        let mut s = synth::click_track(0.5, 6.0, 32_000);
        for (o, t) in s
            .iter_mut()
            .zip(synth::chord(&[261.63, 329.63, 392.0], 6.0, 32_000))
        {
            *o += 0.5 * t;
        }
        let f = extract_features(&AudioClip::new(s, 32_000).unwrap()).unwrap();
        assert!((f.tempo_bpm - 120.0).abs() <= 2.0, "{}", f.tempo_bpm);
        assert_eq!(f.mode, Mode::Major);
        assert!((0.0..=1.0).contains(&f.melodic_direction_raw));
    }

    #[test]
    fn csv_layout() {
        let mut feats = vec![
            feat([100.0, 2.0, 0.1, 3.0, 0.5]),
            feat([120.0, 4.0, -0.1, 5.0, 0.25]),
        ];
        scale_features(&mut feats);
        let rows: Vec<ClipFeatures> = feats
            .into_iter()
            .enumerate()
            .map(|(i, features)| ClipFeatures {
                clip_id: format!("c{i}"),
                quadrant: EmotionQuadrant::LAHV,
                features,
            })
            .collect();
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "clip_id,quadrant,tempo,articulation,mode,pitch_range,melodic_direction"
        );
        assert_eq!(lines.next().unwrap(), "c0,LAHV,1,1,7,1,7");
    }
}
