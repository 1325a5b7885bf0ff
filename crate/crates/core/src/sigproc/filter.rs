//! Butterworth IIR design as second-order sections and forward-backward
//! (zero-phase) application.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("invalid band [{lo}, {hi}] Hz at fs = {fs} Hz (need 0 <= lo < hi < fs/2)")]
    Band { lo: f64, hi: f64, fs: f64 },
    #[error("filter order must be at least 1")]
    Order,
}

/// One biquad: `b0 b1 b2 / 1 a1 a2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Section {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub sections: Vec<Section>,
}

impl Sos {
    /// Butterworth band-pass built from an order-`order` low-pass prototype
    /// (so the digital filter has order `2 * order`). `lo == 0` designs a
    /// low-pass at `hi` instead.
    pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self, FilterError> {
        if order == 0 {
            return Err(FilterError::Order);
        }
        if !(lo >= 0.0 && lo < hi && hi < fs / 2.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(FilterError::Band { lo, hi, fs });
        }
        // Analog prototype poles on the unit circle, left half-plane.
        let proto: Vec<Complex64> = (0..order)
            .map(|k| {
                let m = -(order as f64) + 1.0 + 2.0 * k as f64;
                -Complex64::from_polar(1.0, std::f64::consts::PI * m / (2.0 * order as f64))
            })
            .collect();
        let fs2 = 2.0 * fs;
        let warp = |f: f64| fs2 * (std::f64::consts::PI * f / fs).tan();

        let (poles, zeros_at_one, gain) = if lo == 0.0 {
            let wc = warp(hi);
            let poles: Vec<Complex64> = proto.iter().map(|p| p * wc).collect();
            (poles, 0usize, wc.powi(order as i32))
        } else {
            let wl = warp(lo);
            let wh = warp(hi);
            let bw = wh - wl;
            let wo2 = wl * wh;
            let mut poles = Vec::with_capacity(2 * order);
            for p in &proto {
                let ps = p * (bw / 2.0);
                let disc = (ps * ps - wo2).sqrt();
                poles.push(ps + disc);
                poles.push(ps - disc);
            }
            (poles, order, bw.powi(order as i32))
        };
        // Bilinear transform. Analog zeros at the origin map to z = 1; the
        // zeros at infinity map to z = -1.
        let zeros_at_minus_one = poles.len() - zeros_at_one;
        let digital: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
        let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
        let k = gain * fs2.powi(zeros_at_one as i32) / den.re;

        // Pair conjugate poles into sections.
        let mut upper: Vec<Complex64> = digital.iter().copied().filter(|p| p.im > 0.0).collect();
        let mut reals: Vec<f64> = digital
            .iter()
            .filter(|p| p.im == 0.0)
            .map(|p| p.re)
            .collect();
        upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        reals.sort_by(f64::total_cmp);

        let mut ones = zeros_at_one;
        let mut minus_ones = zeros_at_minus_one;
        let mut take_zero_pair = || -> [f64; 3] {
            // Mix one zero of each kind while both remain (band-pass).
            let mut poly = [1.0, 0.0, 0.0];
            let mut deg = 0;
            for _ in 0..2 {
                let root = if ones > 0 && (minus_ones == 0 || ones >= minus_ones) {
                    ones -= 1;
                    1.0
                } else if minus_ones > 0 {
                    minus_ones -= 1;
                    -1.0
                } else {
                    continue;
                };
                // multiply by (1 - root z^-1)
                let mut next = [0.0; 3];
                for i in 0..=deg {
                    next[i] += poly[i];
                    next[i + 1] -= root * poly[i];
                }
                poly = next;
                deg += 1;
            }
            poly
        };

        let mut sections = Vec::new();
        for p in &upper {
            let b = take_zero_pair();
            sections.push(Section {
                b,
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            });
        }
        let mut r = 0;
        while r < reals.len() {
            let b = take_zero_pair();
            let a = if r + 1 < reals.len() {
                [1.0, -(reals[r] + reals[r + 1]), reals[r] * reals[r + 1]]
            } else {
                [1.0, -reals[r], 0.0]
            };
            sections.push(Section { b, a });
            r += 2;
        }
        // Spread the gain evenly; keeps intermediate magnitudes balanced.
        let per = k.abs().powf(1.0 / sections.len() as f64);
        for (i, s) in sections.iter_mut().enumerate() {
            let g = if i == 0 { per * k.signum() } else { per };
            s.b = s.b.map(|x| x * g);
        }
        Ok(Sos { sections })
    }

    /// Filter order (number of poles).
    pub fn order(&self) -> usize {
        self.sections
            .iter()
            .map(|s| if s.a[2] == 0.0 { 1 } else { 2 })
            .sum()
    }

    /// Complex response at `freq` Hz.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * freq / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Steady-state section states for a unit step input.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut input_level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let y = s.dc_gain() * input_level;
                let z1 = s.b[2] * input_level - s.a[2] * y;
                let z0 = y - s.b[0] * input_level;
                input_level = y;
                [z0, z1]
            })
            .collect()
    }

    /// Single causal pass (direct form II transposed) from the given states.
    fn run(&self, x: &mut [f64], mut states: Vec<[f64; 2]>) {
        for v in x.iter_mut() {
            let mut sig = *v;
            for (s, z) in self.sections.iter().zip(states.iter_mut()) {
                let y = s.b[0] * sig + z[0];
                z[0] = s.b[1] * sig - s.a[1] * y + z[1];
                z[1] = s.b[2] * sig - s.a[2] * y;
                sig = y;
            }
            *v = sig;
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.run(&mut out, vec![[0.0; 2]; self.sections.len()]);
        out
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding of
    /// `3 * order` samples and step-response initial states at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let pad = (3 * self.order()).min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.step_states();
        let scaled = |level: f64| zi.iter().map(|z| [z[0] * level, z[1] * level]).collect();

        let first = ext[0];
        self.run(&mut ext, scaled(first));
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, scaled(first));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase 4th-order-prototype Butterworth band-pass.
pub fn bandpass(signal: &[f64], lo: f64, hi: f64, fs: f64) -> Result<Vec<f64>, FilterError> {
    Ok(Sos::butter_bandpass(4, lo, hi, fs)?.filtfilt(signal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: f64, seconds: f64) -> Vec<f64> {
        (0..(fs * seconds) as usize)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    /// |H(f)| of `butter(4, [lo, hi], btype='band', fs=fs, output='sos')`
    /// evaluated with `sosfreqz` in SciPy 1.15.
    #[test]
    fn magnitude_matches_reference_design() {
        let cases: &[(f64, f64, f64, &[(f64, f64)])] = &[
            (
                0.1,
                40.0,
                250.0,
                &[
                    (0.05, 0.0619529323663676),
                    (1.0, 0.999999999362159),
                    (10.0, 0.9999972212379474),
                    (40.0, 0.7071067811865474),
                    (80.0, 0.014695685137835039),
                ],
            ),
            (
                0.5,
                4.0,
                25.0,
                &[
                    (0.05, 6.145935950823873e-05),
                    (0.25, 0.04294938762177765),
                    (1.2, 0.999999829584862),
                    (4.0, 0.7071067811865468),
                    (8.0, 0.009637107260692513),
                ],
            ),
            (
                0.01,
                0.1,
                25.0,
                &[
                    (0.002, 0.001066746508054661),
                    (0.005, 0.04533064940135572),
                    (0.03, 0.9999999999987658),
                    (0.2, 0.04530068931189084),
                    (1.0, 6.450797662657707e-05),
                ],
            ),
        ];
        for &(lo, hi, fs, points) in cases {
            let sos = Sos::butter_bandpass(4, lo, hi, fs).unwrap();
            assert_eq!(sos.sections.len(), 4);
            assert_eq!(sos.order(), 8);
            for &(f, expected) in points {
                let got = sos.response(f, fs).norm();
                let tol = 1e-9 + 1e-7 * expected;
                assert!(
                    (got - expected).abs() < tol,
                    "band ({lo},{hi})@{fs} f={f}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn lowpass_when_lo_is_zero() {
        let sos = Sos::butter_bandpass(4, 0.0, 10.0, 100.0).unwrap();
        assert_eq!(sos.order(), 4);
        assert!((sos.response(0.0, 100.0).norm() - 1.0).abs() < 1e-12);
        assert!((sos.response(10.0, 100.0).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        // SciPy: butter(4, 10, fs=100) at 20 Hz.
        assert!((sos.response(20.0, 100.0).norm() - 0.03996804).abs() < 1e-7);
    }

    #[test]
    fn invalid_bands() {
        assert!(bandpass(&[0.0; 10], 5.0, 4.0, 25.0).is_err());
        assert!(bandpass(&[0.0; 10], -1.0, 4.0, 25.0).is_err());
        assert!(bandpass(&[0.0; 10], 1.0, 12.5, 25.0).is_err());
        assert!(bandpass(&[0.0; 10], 1.0, f64::NAN, 25.0).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let y = bandpass(&vec![0.0; 5000], 0.1, 40.0, 250.0).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(y.len(), 5000);
        assert!(bandpass(&[], 0.1, 40.0, 250.0).unwrap().is_empty());
    }

    #[test]
    fn passband_sine_preserved_and_zero_lag() {
        let x = sine(10.0, 250.0, 20.0);
        let y = bandpass(&x, 0.1, 40.0, 250.0).unwrap();
        let mid = 1000..4000;
        let ratio = rms(&y[mid.clone()]) / rms(&x[mid.clone()]);
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
        // Cross-correlation peak at lag 0.
        let xc = |lag: isize| -> f64 {
            mid.clone()
                .map(|i| x[i] * y[(i as isize + lag) as usize])
                .sum()
        };
        let best = (-12..=12).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn filtfilt_squares_magnitude() {
        let sos = Sos::butter_bandpass(4, 0.5, 4.0, 25.0).unwrap();
        let x = sine(0.35, 25.0, 400.0);
        let y = sos.filtfilt(&x);
        let mid = 2000..8000;
        let ratio = rms(&y[mid.clone()]) / rms(&x[mid]);
        let expected = sos.response(0.35, 25.0).norm_sqr();
        assert!((ratio - expected).abs() < 0.01, "{ratio} vs {expected}");
    }

    #[test]
    fn linear() {
        let x = sine(3.0, 250.0, 4.0);
        let y: Vec<f64> = (0..1000)
            .map(|i| ((i * 7919) % 113) as f64 / 50.0 - 1.0)
            .collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let fx = bandpass(&x, 0.1, 40.0, 250.0).unwrap();
        let fy = bandpass(&y, 0.1, 40.0, 250.0).unwrap();
        let fc = bandpass(&combo, 0.1, 40.0, 250.0).unwrap();
        for i in 0..1000 {
            let expect = 2.5 * fx[i] - 0.75 * fy[i];
            assert!((fc[i] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }
}
