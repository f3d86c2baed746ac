use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

/// Smallest accepted ratio between the extreme diagonal entries of `R`
/// in the QR factorization of a design matrix.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub f_stat: f64,
    pub p_value: f64,
    pub max_lag: usize,
    pub df_num: usize,
    pub df_den: usize,
    pub rss_restricted: f64,
    pub rss_unrestricted: f64,
    /// `p_value < alpha`: the candidate's history helps predict the target.
    pub reject: bool,
}

/// Least squares through a QR factorization. Returns the residual sum of
/// squares, or a rank-deficiency error with the conditioning estimate.
pub fn ols_rss(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (rows, cols) = design.shape();
    let qr = design.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..cols).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if max == 0.0 { 0.0 } else { min / max };
    if condition.is_nan() || condition <= RANK_TOL {
        return Err(Error::RankDeficient { rows, cols, condition });
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rows, cols, condition })?;
    let resid = y - design * &beta;
    Ok((beta, resid.norm_squared()))
}

/// Does the history of `x` help predict `y` beyond `y`'s own lags?
///
/// Restricted model: `y_t ~ 1 + y_{t-1..t-L}`. Unrestricted model adds
/// `x_{t-1..t-L}`. The F statistic has `(L, n - 2L - 1)` degrees of
/// freedom where `n = len - L` rows are usable.
pub fn granger_test(x: &[f64], y: &[f64], max_lag: usize, alpha: f64) -> Result<GrangerResult> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("x has {} points, y has {}", x.len(), y.len())));
    }
    if max_lag == 0 {
        return Err(Error::InvalidInput("max_lag must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if x == y {
        return Err(Error::InvalidInput("candidate and target are the same series".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("granger input contains NaN or infinity".into()));
    }
    let l = max_lag;
    let n = y.len().saturating_sub(l);
    if n <= 2 * l + 1 {
        return Err(Error::InvalidInput(format!(
            "{} points are too few for max_lag {l} (need more than {})",
            y.len(),
            3 * l + 1
        )));
    }
    let target = DVector::from_iterator(n, (l..y.len()).map(|t| y[t]));
    let restricted = DMatrix::from_fn(n, 1 + l, |i, j| if j == 0 { 1.0 } else { y[i + l - j] });
    let unrestricted = DMatrix::from_fn(n, 1 + 2 * l, |i, j| match j {
        0 => 1.0,
        j if j <= l => y[i + l - j],
        j => x[i + l - (j - l)],
    });
    let (_, rss_r) = ols_rss(&restricted, &target)?;
    let (_, rss_u) = ols_rss(&unrestricted, &target)?;
    let df_num = l;
    let df_den = n - 2 * l - 1;
    let f_stat = if rss_u == 0.0 {
        f64::INFINITY
    } else {
        ((rss_r - rss_u).max(0.0) / df_num as f64) / (rss_u / df_den as f64)
    };
    let dist = FisherSnedecor::new(df_num as f64, df_den as f64)
        .map_err(|e| Error::InvalidInput(format!("F distribution: {e}")))?;
    let p_value = if f_stat.is_infinite() { 0.0 } else { dist.sf(f_stat) }.clamp(0.0, 1.0);
    Ok(GrangerResult {
        f_stat,
        p_value,
        max_lag: l,
        df_num,
        df_den,
        rss_restricted: rss_r,
        rss_unrestricted: rss_u,
        reject: p_value < alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn coupled(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y = vec![0.0; n];
        for t in 1..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[t] = 0.9 * x[t - 1] + e;
        }
        (x, y)
    }

    #[test]
    fn detects_planted_driver_one_way() {
        let (x, y) = coupled(2000, 1);
        let fwd = granger_test(&x, &y, 4, 0.05).unwrap();
        assert!(fwd.p_value < 0.01 && fwd.reject);
        assert_eq!((fwd.df_num, fwd.df_den), (4, 2000 - 4 - 9));
        let back = granger_test(&y, &x, 4, 0.05).unwrap();
        assert!(back.p_value > 0.01);
    }

    #[test]
    fn size_is_calibrated() {
        let mut rejections = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
            if granger_test(&x, &y, 4, 0.05).unwrap().reject {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 200.0;
        assert!((0.0..=0.10).contains(&rate), "rejection rate {rate}");
    }

    #[test]
    fn extra_regressors_never_raise_rss() {
        for seed in 0..20 {
            let (x, y) = coupled(300, seed);
            let r = granger_test(&x, &y, 3, 0.05).unwrap();
            assert!(r.rss_unrestricted <= r.rss_restricted);
        }
    }

    #[test]
    fn self_test_and_short_series_rejected() {
        let (x, _) = coupled(100, 0);
        assert!(matches!(granger_test(&x, &x, 2, 0.05), Err(Error::InvalidInput(_))));
        assert!(matches!(granger_test(&x[..10], &x[1..11], 4, 0.05), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn collinear_design_is_reported() {
        let y: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin()).collect();
        let x = vec![2.0; 50];
        assert!(matches!(granger_test(&x, &y, 2, 0.05), Err(Error::RankDeficient { .. })));
    }
}
