//! The 48-value hemodynamic feature set: mean and variance of HbO, HbR and
//! HbT for each of eight channels over the last 30 s of a trial.

use serde::{Deserialize, Serialize};

use crate::sigproc::fnirs::{HemodynamicSeries, FNIRS_CHANNELS};

pub const FNIRS_FEATURES: usize = FNIRS_CHANNELS * 3 * 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chromophore {
    HbO,
    HbR,
    HbT,
}

impl Chromophore {
    pub const ALL: [Chromophore; 3] = [Chromophore::HbO, Chromophore::HbR, Chromophore::HbT];

    pub fn as_str(self) -> &'static str {
        match self {
            Chromophore::HbO => "hbo",
            Chromophore::HbR => "hbr",
            Chromophore::HbT => "hbt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stat {
    Mean,
    Variance,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FnirsFeatureError {
    #[error("window [{start_ms}, {end_ms}) ms has {got} samples, need {need}")]
    ShortWindow {
        start_ms: f64,
        end_ms: f64,
        got: usize,
        need: usize,
    },
    #[error("expected {FNIRS_FEATURES} values, got {0}")]
    Length(usize),
}

/// Channel-major, then chromophore (HbO, HbR, HbT), then statistic
/// (mean, variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FnirsFeatureVector(pub [f64; FNIRS_FEATURES]);

impl TryFrom<Vec<f64>> for FnirsFeatureVector {
    type Error = FnirsFeatureError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let n = v.len();
        v.try_into()
            .map(FnirsFeatureVector)
            .map_err(|_| FnirsFeatureError::Length(n))
    }
}

impl From<FnirsFeatureVector> for Vec<f64> {
    fn from(v: FnirsFeatureVector) -> Self {
        v.0.to_vec()
    }
}

impl FnirsFeatureVector {
    /// Flat position of (channel, chromophore, statistic); channel is 0-based.
    pub fn index(channel: usize, chromophore: Chromophore, stat: Stat) -> usize {
        channel * 6 + chromophore as usize * 2 + stat as usize
    }

    pub fn get(&self, channel: usize, chromophore: Chromophore, stat: Stat) -> f64 {
        self.0[Self::index(channel, chromophore, stat)]
    }

    /// `[channel][chromophore][mean, variance]`.
    pub fn unpack(&self) -> [[[f64; 2]; 3]; FNIRS_CHANNELS] {
        std::array::from_fn(|c| {
            std::array::from_fn(|h| [self.0[c * 6 + h * 2], self.0[c * 6 + h * 2 + 1]])
        })
    }

    pub fn pack(parts: &[[[f64; 2]; 3]; FNIRS_CHANNELS]) -> Self {
        let mut v = [0.0; FNIRS_FEATURES];
        for (c, chans) in parts.iter().enumerate() {
            for (h, stats) in chans.iter().enumerate() {
                v[c * 6 + h * 2] = stats[0];
                v[c * 6 + h * 2 + 1] = stats[1];
            }
        }
        Self(v)
    }

    /// Column names in packing order, e.g. `ch3_hbr_var`.
    pub fn names() -> Vec<String> {
        let mut out = Vec::with_capacity(FNIRS_FEATURES);
        for c in 1..=FNIRS_CHANNELS {
            for h in Chromophore::ALL {
                out.push(format!("ch{c}_{}_mean", h.as_str()));
                out.push(format!("ch{c}_{}_var", h.as_str()));
            }
        }
        out
    }
}

/// Two-pass population mean and variance.
fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v)
}

/// Features over `[end_ms - window_s, end_ms)`.
pub fn fnirs_features(
    series: &HemodynamicSeries,
    end_ms: f64,
    window_s: f64,
) -> Result<FnirsFeatureVector, FnirsFeatureError> {
    let start_ms = end_ms - window_s * 1000.0;
    let ts = &series.timestamps_ms;
    let a = ts.partition_point(|&t| t < start_ms);
    let b = ts.partition_point(|&t| t < end_ms);
    let need = (window_s * series.sample_rate).round() as usize;
    let got = b - a;
    if got < need || got == 0 {
        return Err(FnirsFeatureError::ShortWindow {
            start_ms,
            end_ms,
            got,
            need,
        });
    }
    let mut parts = [[[0.0; 2]; 3]; FNIRS_CHANNELS];
    for (c, part) in parts.iter_mut().enumerate().take(series.hbo.len()) {
        for (h, data) in [&series.hbo[c], &series.hbr[c], &series.hbt[c]]
            .into_iter()
            .enumerate()
        {
            let (m, v) = mean_var(&data[a..b]);
            part[h] = [m, v];
        }
    }
    Ok(FnirsFeatureVector::pack(&parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn series(f: impl Fn(usize, usize) -> f64, seconds: usize) -> HemodynamicSeries {
        let n = seconds * 25;
        let ts = (0..n).map(|i| i as f64 * 40.0).collect();
        let hbo: Vec<Vec<f64>> = (0..8).map(|c| (0..n).map(|i| f(c, i)).collect()).collect();
        let hbr: Vec<Vec<f64>> = (0..8)
            .map(|c| (0..n).map(|i| -0.5 * f(c, i)).collect())
            .collect();
        HemodynamicSeries::from_components(ts, 25.0, hbo, hbr)
    }

    #[test]
    fn constant_series() {
        let s = series(|c, _| c as f64 + 1.0, 60);
        let v = fnirs_features(&s, 60_000.0, 30.0).unwrap();
        assert_eq!(v.get(2, Chromophore::HbO, Stat::Mean), 3.0);
        assert_eq!(v.get(2, Chromophore::HbR, Stat::Mean), -1.5);
        assert_eq!(v.get(2, Chromophore::HbT, Stat::Mean), 1.5);
        for c in 0..8 {
            for h in Chromophore::ALL {
                assert_eq!(v.get(c, h, Stat::Variance), 0.0);
            }
        }
    }

    #[test]
    fn alternating_series() {
        let s = series(|_, i| if i % 2 == 0 { 1.0 } else { -1.0 }, 60);
        let v = fnirs_features(&s, 60_000.0, 30.0).unwrap();
        assert_eq!(v.get(0, Chromophore::HbO, Stat::Mean), 0.0);
        assert_eq!(v.get(0, Chromophore::HbO, Stat::Variance), 1.0);
        assert_eq!(v.get(7, Chromophore::HbR, Stat::Variance), 0.25);
    }

    #[test]
    fn random_series_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let noise: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..1500).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let s = series(|c, i| noise[c][i], 60);
        let v = fnirs_features(&s, 50_000.0, 30.0).unwrap();
        // Window covers samples 500..1250.
        for c in 0..8 {
            let w = &s.hbt[c][500..1250];
            let mut sum = 0.0;
            for x in w {
                sum += x;
            }
            let m = sum / 750.0;
            let mut ss = 0.0;
            for x in w {
                ss += (x - m).powi(2);
            }
            assert!((v.get(c, Chromophore::HbT, Stat::Mean) - m).abs() < 1e-12);
            assert!((v.get(c, Chromophore::HbT, Stat::Variance) - ss / 750.0).abs() < 1e-12);
        }
    }

    #[test]
    fn short_window_flagged() {
        let s = series(|_, _| 1.0, 20);
        assert!(matches!(
            fnirs_features(&s, 20_000.0, 30.0),
            Err(FnirsFeatureError::ShortWindow { .. })
        ));
    }

    #[test]
    fn pack_unpack_bijection() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v = FnirsFeatureVector(std::array::from_fn(|_| rng.random()));
        assert_eq!(FnirsFeatureVector::pack(&v.unpack()), v);
        let names = FnirsFeatureVector::names();
        assert_eq!(names.len(), 48);
        assert_eq!(
            names[FnirsFeatureVector::index(2, Chromophore::HbR, Stat::Variance)],
            "ch3_hbr_var"
        );
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(
            serde_json::from_str::<FnirsFeatureVector>(&json).unwrap(),
            v
        );
        assert!(serde_json::from_str::<FnirsFeatureVector>("[1.0]").is_err());
    }
}
