//! One-way ANOVA, Tukey HSD and Pearson correlation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {need} groups, got {got}")]
    TooFewGroups { need: usize, got: usize },
    #[error("group {index} has {len} values, need at least {need}")]
    GroupTooSmall {
        index: usize,
        len: usize,
        need: usize,
    },
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired values, got {0}")]
    TooFewPairs(usize),
    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Linear-interpolation quantile of already sorted data (the common
/// "type 7" definition). Returns NaN for empty input.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divides by n), two-pass.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ms_between: f64,
    pub ms_within: f64,
}

fn check_groups<G: AsRef<[f64]>>(groups: &[G]) -> Result<(), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups {
            need: 2,
            got: groups.len(),
        });
    }
    for (index, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall {
                index,
                len: g.len(),
                need: 2,
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
    }
    Ok(())
}

/// Between/within mean-square ratio with its F(k−1, N−k) upper-tail p-value.
/// All-constant data (no variance anywhere) gives F = 0, p = 1.
pub fn one_way_anova<G: AsRef<[f64]>>(groups: &[G]) -> Result<AnovaResult, StatsError> {
    check_groups(groups)?;
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let grand = groups.iter().flat_map(|g| g.as_ref()).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let g = g.as_ref();
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    let (f, p) = if ms_within == 0.0 {
        if ms_between == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = ms_between / ms_within;
        let dist = FisherSnedecor::new(df_between as f64, df_within as f64)
            .expect("degrees of freedom are positive");
        (f, dist.sf(f))
    };
    Ok(AnovaResult {
        f,
        p,
        df_between,
        df_within,
        ms_between,
        ms_within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub i: usize,
    pub j: usize,
    /// mean(i) − mean(j)
    pub diff: f64,
    pub q: f64,
    pub p: f64,
    pub significant: bool,
}

/// All pairwise comparisons i < j using the pooled within-group variance
/// (Tukey–Kramer standard errors for unequal sizes).
pub fn tukey_hsd<G: AsRef<[f64]>>(groups: &[G], alpha: f64) -> Result<Vec<TukeyPair>, StatsError> {
    let anova = one_way_anova(groups)?;
    let k = groups.len();
    let means: Vec<f64> = groups.iter().map(|g| mean(g.as_ref())).collect();
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            out.push(tukey_pair(groups, &means, &anova, i, j, alpha));
        }
    }
    Ok(out)
}

/// Single comparison in the caller's order; `tukey_pair_ordered(.., j, i)` has
/// the negated diff and identical q, p and significance.
pub fn tukey_pair_ordered<G: AsRef<[f64]>>(
    groups: &[G],
    i: usize,
    j: usize,
    alpha: f64,
) -> Result<TukeyPair, StatsError> {
    let anova = one_way_anova(groups)?;
    let means: Vec<f64> = groups.iter().map(|g| mean(g.as_ref())).collect();
    Ok(tukey_pair(groups, &means, &anova, i, j, alpha))
}

fn tukey_pair<G: AsRef<[f64]>>(
    groups: &[G],
    means: &[f64],
    anova: &AnovaResult,
    i: usize,
    j: usize,
    alpha: f64,
) -> TukeyPair {
    let k = groups.len();
    let diff = means[i] - means[j];
    let ni = groups[i].as_ref().len() as f64;
    let nj = groups[j].as_ref().len() as f64;
    let se = (anova.ms_within / 2.0 * (1.0 / ni + 1.0 / nj)).sqrt();
    let (q, p) = if se == 0.0 {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let q = diff.abs() / se;
        (q, studentized_range_sf(q, k, anova.df_within as f64))
    };
    TukeyPair {
        i,
        j,
        diff,
        q,
        p,
        significant: p < alpha,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Sample correlation with a two-sided p-value from Student's t(n−2).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewPairs(n));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { r, p, n })
}

const GL_POINTS: usize = 64;

/// 64-point Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Chebyshev initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    })
}

/// Integrates `f` over [a, b] split into `panels` equal panels.
fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let half = width / 2.0;
        let mid = lo + half;
        total += half
            * nodes
                .iter()
                .zip(weights)
                .map(|(x, w)| w * f(mid + half * x))
                .sum::<f64>();
    }
    total
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Φ(hi) − Φ(lo) for lo ≤ hi, using whichever tail keeps precision.
fn norm_interval(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        0.5 * (erfc(lo * FRAC_1_SQRT_2) - erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi * FRAC_1_SQRT_2) - erfc(-lo * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * erfc(-lo * FRAC_1_SQRT_2) - 0.5 * erfc(hi * FRAC_1_SQRT_2)
    }
}

/// P(range of k standard normals ≤ w).
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    let v = k as f64
        * integrate(
            |z| norm_pdf(z) * norm_interval(z - w, z).powi(km1),
            -8.5,
            8.5,
            12,
        );
    v.clamp(0.0, 1.0)
}

/// CDF of the studentized range statistic with `k` groups and `df` error
/// degrees of freedom, by double Gauss-Legendre quadrature.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2 && df > 0.0);
    if q <= 0.0 {
        return 0.0;
    }
    if !q.is_finite() {
        return 1.0;
    }
    // Density of s = sqrt(chi2_df / df).
    let half = df / 2.0;
    let log_norm = half * df.ln() - ln_gamma(half) - (half - 1.0) * std::f64::consts::LN_2;
    let density = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (log_norm + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
        }
    };
    let spread = 14.0 / (2.0 * df).sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread;
    let v = integrate(|s| density(s) * normal_range_cdf(q * s, k), lo, hi, 16);
    v.clamp(0.0, 1.0)
}

pub fn studentized_range_sf(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - studentized_range_cdf(q, k, df)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_and_weights_sum_to_two() {
        let (nodes, weights) = gauss_legendre();
        assert!((weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        // ∫_{-1}^{1} x^20 dx = 2/21
        let v: f64 = nodes.iter().zip(weights).map(|(x, w)| w * x.powi(20)).sum();
        assert!((v - 2.0 / 21.0).abs() < 1e-14);
    }

    #[test]
    fn normal_range_k2_matches_closed_form() {
        // Range of two normals is |N(0, 2)|: P(R ≤ w) = 2Φ(w/√2) − 1.
        for w in [0.5, 1.0, 2.0, 3.5] {
            let exact = 1.0 - erfc(w / 2.0);
            assert!((normal_range_cdf(w, 2) - exact).abs() < 1e-10, "w={w}");
        }
    }

    #[test]
    fn studentized_range_k2_matches_t() {
        // With two groups q = √2 |t|.
        for df in [3.0, 10.0, 57.0] {
            let t = StudentsT::new(0.0, 1.0, df).unwrap();
            for tv in [0.5, 1.5, 3.0] {
                let expected = 2.0 * t.sf(tv);
                let got = studentized_range_sf(tv * 2f64.sqrt(), 2, df);
                assert!(
                    (got - expected).abs() < 1e-9,
                    "df={df} t={tv}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn quantile_type7() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert_eq!(quantile(&x, 0.5), 2.5);
        assert!((quantile(&x, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn anova_identical_groups() {
        let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.f, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
        let c = one_way_anova(&[vec![4.0, 4.0], vec![4.0, 4.0]]).unwrap();
        assert_eq!((c.f, c.p), (0.0, 1.0));
    }

    #[test]
    fn anova_errors() {
        assert!(matches!(
            one_way_anova(&[vec![1.0, 2.0]]),
            Err(StatsError::TooFewGroups { .. })
        ));
        assert!(matches!(
            one_way_anova(&[vec![1.0, 2.0], vec![1.0]]),
            Err(StatsError::GroupTooSmall { index: 1, .. })
        ));
    }

    #[test]
    fn anova_shift_invariant() {
        let g = vec![
            vec![1.0, 2.5, 3.0],
            vec![2.0, 3.5, 4.0, 4.1],
            vec![10.0, 11.0, 12.5],
        ];
        let shifted: Vec<Vec<f64>> = g
            .iter()
            .map(|v| v.iter().map(|x| x + 1234.5).collect())
            .collect();
        let a = one_way_anova(&g).unwrap();
        let b = one_way_anova(&shifted).unwrap();
        assert!((a.f - b.f).abs() / a.f < 1e-9);
    }

    #[test]
    fn pearson_exact_lines() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap().r - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap().r + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&x, &vec![1.0; 20]),
            Err(StatsError::ZeroVariance("y"))
        ));
        assert!(matches!(
            pearson(&x[..2], &x[..2]),
            Err(StatsError::TooFewPairs(2))
        ));
    }

    #[test]
    fn tukey_identical_groups_not_significant() {
        let g = vec![vec![1.0, 2.0, 3.0]; 3];
        for pair in tukey_hsd(&g, 0.05).unwrap() {
            assert_eq!(pair.diff, 0.0);
            assert!(!pair.significant);
            assert!((pair.p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tukey_symmetric_in_order() {
        let g = vec![
            vec![1.0, 2.0, 3.5],
            vec![2.0, 2.5, 4.0],
            vec![6.0, 7.0, 7.5],
        ];
        let a = tukey_pair_ordered(&g, 0, 2, 0.05).unwrap();
        let b = tukey_pair_ordered(&g, 2, 0, 0.05).unwrap();
        assert_eq!(a.diff, -b.diff);
        assert_eq!((a.q, a.p, a.significant), (b.q, b.p, b.significant));
    }
}
