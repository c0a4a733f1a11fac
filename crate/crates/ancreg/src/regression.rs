//! Least squares with the hat-quantities used by ancestor regression.
//!
//! `ols` is the raw primitive: beta = (x'x)^(-1) x'y via Householder QR,
//! sigma^2 = ||residuals||^2 / (n - p), var(beta_k) = (x'x)^(-1)_kk sigma^2.
//! `ancestor_scan` regresses f(x_j) on all p columns (x_j included) and
//! turns each coefficient into a z-statistic and two-sided normal p-value;
//! `parent_tests` refines detected ancestors into parents with t-tests.
//!
//! Real data is not centered the way the model is, so scans and parent
//! tests subtract sample means from response and regressors before fitting
//! (an intercept that is never tested). The raw `ols` does not.

use thiserror::Error;

use crate::sem::DataMatrix;
use crate::stats::{pvalue_from_t, pvalue_from_z};

/// Smallest acceptable ratio of extreme R-diagonal magnitudes before the
/// design is declared numerically rank deficient.
const RANK_TOL: f64 = 1e-10;

/// sigma^2 below this fraction of the response variance means f was
/// (numerically) affine in the regressors and the z-statistics are 0/0.
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error("need more rows than regressors (n = {n}, p = {p})")]
    ShapeError { n: usize, p: usize },
    #[error("design is numerically rank deficient")]
    RankDeficient,
    #[error("regression of f({target}) is an exact linear fit; z-statistics are undefined")]
    DegenerateFit { target: usize },
    #[error("no ancestors supplied for target {target}")]
    EmptyAncestors { target: usize },
    #[error("column index {index} out of range for p = {p}")]
    BadIndex { index: usize, p: usize },
}

/// Built-in nonlinear response transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    /// f(x) = x^3, the default.
    #[default]
    Cube,
    /// f(x) = x |x|.
    SignSquare,
    /// f(x) = s tanh(x / s) with s the column's standard deviation, so the
    /// transform saturates at the data's own scale.
    Tanh,
    /// f(x) = x. Kept for demonstrating the degenerate-fit guard; the scan
    /// rejects it because a linear f is fitted exactly.
    Identity,
}

impl Nonlinearity {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Cube => "cube",
            Nonlinearity::SignSquare => "sign-square",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cube" => Some(Nonlinearity::Cube),
            "sign-square" | "sign_square" | "signsquare" => Some(Nonlinearity::SignSquare),
            "tanh" => Some(Nonlinearity::Tanh),
            "identity" => Some(Nonlinearity::Identity),
            _ => None,
        }
    }

    /// Applies the transform elementwise; `scale` is the column sd.
    fn apply(&self, x: &[f64], scale: f64) -> Vec<f64> {
        match self {
            Nonlinearity::Cube => x.iter().map(|v| v * v * v).collect(),
            Nonlinearity::SignSquare => x.iter().map(|v| v * v.abs()).collect(),
            Nonlinearity::Tanh => {
                let s = if scale > 0.0 { scale } else { 1.0 };
                x.iter().map(|v| s * (v / s).tanh()).collect()
            }
            Nonlinearity::Identity => x.to_vec(),
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Compact Householder QR of a column-major n x p matrix.
///
/// Column k holds R rows 0..=k above/on the diagonal and the reflector
/// tail below it (leading reflector entry is implicitly 1).
struct Householder {
    n: usize,
    p: usize,
    qr: Vec<f64>,
    tau: Vec<f64>,
}

impl Householder {
    fn factor(mut a: Vec<f64>, n: usize, p: usize) -> Result<Self, RegressionError> {
        debug_assert_eq!(a.len(), n * p);
        let mut tau = vec![0.0; p];
        for k in 0..p {
            let (head, rest) = a.split_at_mut((k + 1) * n);
            let col = &mut head[k * n + k..];
            tau[k] = make_reflector(col);
            if tau[k] != 0.0 {
                for c in 0..p - k - 1 {
                    apply_reflector(col, tau[k], &mut rest[c * n + k..c * n + n]);
                }
            }
        }
        let fac = Householder { n, p, qr: a, tau };
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in 0..p {
            let d = fac.qr[k * n + k].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if hi == 0.0 || lo < RANK_TOL * hi {
            return Err(RegressionError::RankDeficient);
        }
        Ok(fac)
    }

    /// Applies Q^T to `y` in place; entries 0..p then hold Q^T y's head.
    fn apply_qt(&self, y: &mut [f64]) {
        for k in 0..self.p {
            if self.tau[k] != 0.0 {
                let v = &self.qr[k * self.n + k..(k + 1) * self.n];
                apply_reflector(v, self.tau[k], &mut y[k..]);
            }
        }
    }

    /// Solves R beta = head(Q^T y).
    fn back_substitute(&self, qty: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut beta = vec![0.0; p];
        for i in (0..p).rev() {
            let mut acc = qty[i];
            for (m, b) in beta.iter().enumerate().skip(i + 1) {
                acc -= self.r(i, m) * b;
            }
            beta[i] = acc / self.r(i, i);
        }
        beta
    }

    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let mut work = y.to_vec();
        self.apply_qt(&mut work);
        self.back_substitute(&work[..self.p])
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j);
        self.qr[j * self.n + i]
    }

    /// Diagonal of (x'x)^(-1) = row norms of R^(-1) squared.
    fn gram_inverse_diag(&self) -> Vec<f64> {
        let p = self.p;
        // Solve R * col_m = e_m for each m; accumulate squared rows.
        let mut diag = vec![0.0; p];
        let mut col = vec![0.0; p];
        for m in 0..p {
            for v in col.iter_mut() {
                *v = 0.0;
            }
            for i in (0..=m).rev() {
                let mut acc = if i == m { 1.0 } else { 0.0 };
                for (l, c) in col.iter().enumerate().take(m + 1).skip(i + 1) {
                    acc -= self.r(i, l) * c;
                }
                col[i] = acc / self.r(i, i);
            }
            for i in 0..=m {
                diag[i] += col[i] * col[i];
            }
        }
        diag
    }
}

/// Turns `x` into a Householder reflector in place: x[0] becomes the R
/// diagonal entry, x[1..] the reflector tail (leading 1 implicit).
fn make_reflector(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let alpha = x[0];
    let beta = if alpha >= 0.0 { -norm } else { norm };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    for v in x[1..].iter_mut() {
        *v *= scale;
    }
    x[0] = beta;
    tau
}

/// Applies (I - tau v v') to `y`, where v = [1, refl[1..]].
fn apply_reflector(refl: &[f64], tau: f64, y: &mut [f64]) {
    debug_assert_eq!(refl.len(), y.len());
    let mut w = y[0];
    for (r, v) in refl[1..].iter().zip(&y[1..]) {
        w += r * v;
    }
    w *= tau;
    y[0] -= w;
    for (r, v) in refl[1..].iter().zip(y[1..].iter_mut()) {
        *v -= w * r;
    }
}

/// Output of a least squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sigma_hat_sq: f64,
    pub var_hat: Vec<f64>,
    pub df: usize,
}

/// Ordinary least squares of `response` on the columns of `design`.
///
/// No centering happens here; this is the raw hat-quantity definition.
pub fn ols(response: &[f64], design: &DataMatrix) -> Result<OlsFit, RegressionError> {
    let (n, p) = (design.n(), design.p());
    if n <= p {
        return Err(RegressionError::ShapeError { n, p });
    }
    assert_eq!(response.len(), n, "response length must match row count");
    let mut cols = Vec::with_capacity(n * p);
    for j in 0..p {
        cols.extend_from_slice(design.column(j));
    }
    let fac = Householder::factor(cols, n, p)?;
    let beta_hat = fac.solve(response);
    let mut residuals = response.to_vec();
    for (j, b) in beta_hat.iter().enumerate() {
        for (r, x) in residuals.iter_mut().zip(design.column(j)) {
            *r -= b * x;
        }
    }
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let df = n - p;
    let sigma_hat_sq = rss / df as f64;
    let var_hat = fac
        .gram_inverse_diag()
        .into_iter()
        .map(|g| g * sigma_hat_sq)
        .collect();
    Ok(OlsFit {
        beta_hat,
        residuals,
        sigma_hat_sq,
        var_hat,
        df,
    })
}

/// Per-target scan output: z-statistics and raw two-sided p-values for
/// every candidate ancestor (the target's own entries are unset).
#[derive(Debug, Clone)]
pub struct AncestorScan {
    pub target: usize,
    pub f_name: &'static str,
    z: Vec<f64>,
    p_raw: Vec<f64>,
}

impl AncestorScan {
    pub fn p(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self, k: usize) -> Option<f64> {
        (k != self.target).then(|| self.z[k])
    }

    pub fn p_raw(&self, k: usize) -> Option<f64> {
        (k != self.target).then(|| self.p_raw[k])
    }

    /// The p - 1 tested hypotheses as `(candidate, z, raw_p)`, ascending.
    pub fn hypotheses(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.z.len())
            .filter(move |&k| k != self.target)
            .map(move |k| (k, self.z[k], self.p_raw[k]))
    }
}

/// A centered design factored once so that all p nodewise scans (and any
/// number of responses) reuse the same decomposition.
pub struct DesignFactorization {
    n: usize,
    p: usize,
    centered: Vec<f64>,
    col_sd: Vec<f64>,
    gram_inv_diag: Vec<f64>,
    fac: Householder,
}

impl DesignFactorization {
    pub fn new(data: &DataMatrix) -> Result<Self, RegressionError> {
        Self::with_centering(data, true)
    }

    pub fn with_centering(data: &DataMatrix, center: bool) -> Result<Self, RegressionError> {
        let (n, p) = (data.n(), data.p());
        if n <= p {
            return Err(RegressionError::ShapeError { n, p });
        }
        let mut centered = Vec::with_capacity(n * p);
        let mut col_sd = Vec::with_capacity(p);
        for j in 0..p {
            let col = data.column(j);
            let mean = if center {
                col.iter().sum::<f64>() / n as f64
            } else {
                0.0
            };
            let start = centered.len();
            centered.extend(col.iter().map(|v| v - mean));
            let ss: f64 = centered[start..].iter().map(|v| v * v).sum();
            col_sd.push((ss / n as f64).sqrt());
        }
        let fac = Householder::factor(centered.clone(), n, p)?;
        let gram_inv_diag = fac.gram_inverse_diag();
        Ok(DesignFactorization {
            n,
            p,
            centered,
            col_sd,
            gram_inv_diag,
            fac,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn column(&self, j: usize) -> &[f64] {
        &self.centered[j * self.n..(j + 1) * self.n]
    }

    /// Regresses f(x_target) on all p columns (target included) and returns
    /// z-statistics plus raw p-values for every other column.
    pub fn scan(&self, target: usize, f: Nonlinearity) -> Result<AncestorScan, RegressionError> {
        let (n, p) = (self.n, self.p);
        if target >= p {
            return Err(RegressionError::BadIndex { index: target, p });
        }
        let mut response = f.apply(self.column(target), self.col_sd[target]);
        let mean = response.iter().sum::<f64>() / n as f64;
        let mut response_var = 0.0;
        for v in response.iter_mut() {
            *v -= mean;
            response_var += *v * *v;
        }
        response_var /= n as f64;

        let beta = self.fac.solve(&response);
        let mut rss = 0.0;
        for (i, resp) in response.iter().enumerate() {
            let mut r = *resp;
            for (j, b) in beta.iter().enumerate() {
                r -= b * self.centered[j * n + i];
            }
            rss += r * r;
        }
        let sigma_hat_sq = rss / (n - p) as f64;
        if response_var == 0.0 || sigma_hat_sq < DEGENERATE_TOL * response_var {
            return Err(RegressionError::DegenerateFit { target });
        }

        let mut z = vec![f64::NAN; p];
        let mut p_raw = vec![f64::NAN; p];
        for k in 0..p {
            if k == target {
                continue;
            }
            let se = (self.gram_inv_diag[k] * sigma_hat_sq).sqrt();
            z[k] = beta[k] / se;
            p_raw[k] = pvalue_from_z(z[k]);
        }
        Ok(AncestorScan {
            target,
            f_name: f.name(),
            z,
            p_raw,
        })
    }
}

/// One-off nodewise scan; use [`DesignFactorization`] to scan many targets
/// of the same data.
pub fn ancestor_scan(
    data: &DataMatrix,
    target: usize,
    f: Nonlinearity,
) -> Result<AncestorScan, RegressionError> {
    DesignFactorization::new(data)?.scan(target, f)
}

/// Parent refinement output: one coefficient / t-statistic / p-value per
/// candidate ancestor.
#[derive(Debug, Clone)]
pub struct ParentReport {
    pub target: usize,
    pub ancestors_used: Vec<usize>,
    pub coef: Vec<f64>,
    pub t_stat: Vec<f64>,
    pub p_value: Vec<f64>,
    pub df: usize,
}

/// Regresses x_target on its detected ancestors (centered, no intercept
/// term tested) and t-tests each coefficient with n - |ancestors| degrees
/// of freedom.
pub fn parent_tests(
    data: &DataMatrix,
    target: usize,
    ancestors: &[usize],
) -> Result<ParentReport, RegressionError> {
    let n = data.n();
    let p = data.p();
    if target >= p {
        return Err(RegressionError::BadIndex { index: target, p });
    }
    if ancestors.is_empty() {
        return Err(RegressionError::EmptyAncestors { target });
    }
    let m = ancestors.len();
    if n <= m {
        return Err(RegressionError::ShapeError { n, p: m });
    }
    let mut cols = Vec::with_capacity(n * m);
    for &k in ancestors {
        if k >= p {
            return Err(RegressionError::BadIndex { index: k, p });
        }
        debug_assert_ne!(k, target, "target cannot be its own ancestor");
        let col = data.column(k);
        let mean = col.iter().sum::<f64>() / n as f64;
        cols.extend(col.iter().map(|v| v - mean));
    }
    let fac = Householder::factor(cols.clone(), n, m)?;
    let target_col = data.column(target);
    let mean = target_col.iter().sum::<f64>() / n as f64;
    let response: Vec<f64> = target_col.iter().map(|v| v - mean).collect();
    let coef = fac.solve(&response);
    let mut rss = 0.0;
    for i in 0..n {
        let mut r = response[i];
        for (j, c) in coef.iter().enumerate() {
            r -= c * cols[j * n + i];
        }
        rss += r * r;
    }
    let df = n - m;
    let sigma_hat_sq = rss / df as f64;
    let ginv = fac.gram_inverse_diag();
    let mut t_stat = Vec::with_capacity(m);
    let mut p_value = Vec::with_capacity(m);
    for (j, &c) in coef.iter().enumerate() {
        let se = (ginv[j] * sigma_hat_sq).sqrt();
        // Exact linear dependence drives se to 0; report the limit.
        let t = if se > 0.0 {
            c / se
        } else if c == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(c)
        };
        t_stat.push(t);
        p_value.push(if t.is_finite() {
            pvalue_from_t(t, df as f64)
        } else {
            0.0
        });
    }
    Ok(ParentReport {
        target,
        ancestors_used: ancestors.to_vec(),
        coef,
        t_stat,
        p_value,
        df,
    })
}
