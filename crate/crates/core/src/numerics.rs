//! Dense linear algebra used throughout the toolkit.
//!
//! Everything here is a pure function of its inputs. Matrix products that
//! feed persisted artifacts or embeddings go through [`matmul`], which sums
//! each output entry in a fixed order so that a row's result does not depend
//! on how many other rows were in the batch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD `M = u * diag(s) * v^T` under a deterministic sign convention:
/// in every column of `v` the entry of largest magnitude is positive (ties go
/// to the lowest index).
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd(m: &DMatrix<f64>) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!("svd of empty {rows}x{cols} matrix")));
    }
    check_finite(m, "svd input")?;
    let dec = nalgebra::linalg::SVD::try_new_unordered(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical(format!("svd did not converge on {rows}x{cols} matrix")))?;
    let u_raw = dec.u.expect("u requested");
    let vt_raw = dec.v_t.expect("v_t requested");
    let sv = dec.singular_values;
    let r = sv.len();

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut u = DMatrix::zeros(rows, r);
    let mut v = DMatrix::zeros(cols, r);
    let mut s = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        s.push(sv[src].max(0.0));
        let mut flip = false;
        let mut best = -1.0;
        for j in 0..cols {
            let x = vt_raw[(src, j)];
            if x.abs() > best {
                best = x.abs();
                flip = x < 0.0;
            }
        }
        let sign = if flip { -1.0 } else { 1.0 };
        for j in 0..cols {
            v[(j, dst)] = sign * vt_raw[(src, j)];
        }
        for i in 0..rows {
            u[(i, dst)] = sign * u_raw[(i, src)];
        }
    }
    Ok(SvdResult { u, s, v })
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&DVector::from_vec(self.s.clone()));
        &self.u * s * self.v.transpose()
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} contains a non-finite value")))
    }
}

/// Row-order-independent product `a * b`. Each entry is accumulated over the
/// inner index in ascending order.
pub fn matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (n, inner, m) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..inner {
                acc += a[(i, t)] * b[(t, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hstack row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let l = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / l))
}

pub fn center_columns(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn rank_tolerance(s_max: f64, rows: usize, cols: usize) -> f64 {
    s_max * (rows.max(cols) as f64) * f64::EPSILON * 10.0
}

/// Minimizes `||Y - X W||_F` for full-column-rank `X`.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (l, a) = x.shape();
    if y.nrows() != l {
        return Err(Error::DimMismatch(format!(
            "least_squares: X has {l} rows, Y has {}",
            y.nrows()
        )));
    }
    if l < a {
        return Err(Error::InvalidArgument(format!(
            "least_squares: {l} rows but {a} columns"
        )));
    }
    let dec = svd(x)?;
    let s_max = dec.s.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(s_max, l, a);
    if s_max == 0.0 || dec.s.iter().any(|&s| s <= tol) {
        let rank = dec.s.iter().filter(|&&s| s > tol).count();
        return Err(Error::RankDeficient(format!(
            "least_squares: X has rank {rank} < {a} columns"
        )));
    }
    // W = V diag(1/s) U^T Y
    let mut uty = dec.u.transpose() * y;
    for (i, mut row) in uty.row_iter_mut().enumerate() {
        row /= dec.s[i];
    }
    Ok(&dec.v * uty)
}

/// Principal components of the sample covariance `X_c^T X_c / (L - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `k x r`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Descending covariance eigenvalues, one per component.
    pub eigenvalues: Vec<f64>,
}

pub fn pca(x: &DMatrix<f64>) -> Result<PcaModel> {
    let l = x.nrows();
    if l < 2 {
        return Err(Error::InvalidArgument(format!("pca needs at least 2 rows, got {l}")));
    }
    let mean = column_means(x);
    let scaled = center_columns(x, &mean) / ((l - 1) as f64).sqrt();
    let dec = svd(&scaled)?;
    let eigenvalues = dec.s.iter().map(|s| s * s).collect();
    Ok(PcaModel {
        mean,
        components: dec.v,
        eigenvalues,
    })
}

impl PcaModel {
    /// Scores of `x` on the first `r` components.
    pub fn transform(&self, x: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
        let c = center_columns(x, &self.mean);
        matmul(&c, &self.components.columns(0, r).into_owned())
    }
}

/// Median of the Marchenko–Pastur law with unit variance and aspect ratio
/// `gamma` in (0, 1].
pub fn marchenko_pastur_median(gamma: f64) -> f64 {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    let a = (1.0 - gamma.sqrt()).powi(2);
    let b = (1.0 + gamma.sqrt()).powi(2);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    // x = mid + half * cos(theta); theta in [0, pi] runs from b down to a and
    // turns the square-root endpoints into a smooth integrand.
    // Half-angle forms keep the lower endpoint exact when a = 0:
    // x = a + 2h cos^2(t/2), sin^2(t) = 4 sin^2(t/2) cos^2(t/2).
    let x_of = |theta: f64| mid + half * theta.cos();
    let integrand = |theta: f64| {
        let (s, c) = (0.5 * theta).sin_cos();
        let x = a + 2.0 * half * c * c;
        if x <= 0.0 {
            half * 2.0 * s * s / (2.0 * std::f64::consts::PI * gamma)
        } else {
            half * half * 4.0 * s * s * c * c / (2.0 * std::f64::consts::PI * gamma * x)
        }
    };
    // mass below x(theta0) = integral over [theta0, pi]
    let mass_below = |theta0: f64| simpson(&integrand, theta0, std::f64::consts::PI, 2048);
    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
    for _ in 0..100 {
        let m = 0.5 * (lo + hi);
        // mass below decreases as theta grows
        if mass_below(m) > 0.5 {
            lo = m;
        } else {
            hi = m;
        }
    }
    x_of(0.5 * (lo + hi))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Johnstone rank: number of covariance eigenvalues strictly above the
/// Marchenko–Pastur upper edge `sigma^2 (1 + sqrt(k/L))^2`. The noise level
/// is estimated as the median eigenvalue over the MP median.
pub fn johnstone_rank(eigenvalues: &[f64], l: usize, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("johnstone_rank: k must be >= 1".into()));
    }
    if l <= k {
        return Err(Error::InvalidArgument(format!(
            "johnstone_rank: need L > k (L={l}, k={k})"
        )));
    }
    if eigenvalues.is_empty() {
        return Ok(0);
    }
    let gamma = k as f64 / l as f64;
    let sigma2 = median(eigenvalues) / marchenko_pastur_median(gamma);
    let edge = sigma2 * (1.0 + gamma.sqrt()).powi(2);
    Ok(eigenvalues.iter().filter(|&&e| e > edge).count().min(k))
}

/// `x -> (x - input_mean) * weights + output_mean`, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub input_mean: DVector<f64>,
    pub weights: DMatrix<f64>,
    pub output_mean: DVector<f64>,
}

impl AffineMap {
    pub fn k_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn k_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.k_in(), "affine map input width");
        let centered = center_columns(x, &self.input_mean);
        let mut out = matmul(&centered, &self.weights);
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.output_mean[j]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.input_mean.iter().all(|v| v.is_finite())
            && self.weights.iter().all(|v| v.is_finite())
            && self.output_mean.iter().all(|v| v.is_finite())
    }
}

/// Ordinary least squares with intercept (both sides centered).
pub fn ols_fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<AffineMap> {
    let input_mean = column_means(x);
    let output_mean = column_means(y);
    let weights = least_squares(&center_columns(x, &input_mean), &center_columns(y, &output_mean))?;
    Ok(AffineMap {
        input_mean,
        weights,
        output_mean,
    })
}

/// Principal component regression on the top `rank` components of `x`.
pub fn pcr_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, rank: usize) -> Result<AffineMap> {
    let model = pca(x)?;
    pcr_fit_with(&model, x, y, rank)
}

/// [`pcr_fit`] with a precomputed PCA of `x`.
pub fn pcr_fit_with(model: &PcaModel, x: &DMatrix<f64>, y: &DMatrix<f64>, rank: usize) -> Result<AffineMap> {
    let (l, a) = x.shape();
    if y.nrows() != l {
        return Err(Error::DimMismatch(format!("pcr_fit: X has {l} rows, Y has {}", y.nrows())));
    }
    if l < 2 {
        return Err(Error::InvalidArgument(format!("pcr_fit needs at least 2 rows, got {l}")));
    }
    if rank == 0 || rank > a {
        return Err(Error::InvalidArgument(format!(
            "pcr_fit: rank {rank} outside [1, {a}]"
        )));
    }
    if rank > model.eigenvalues.len() {
        return Err(Error::Degenerate(format!(
            "pcr_fit: only {} components available for rank {rank}",
            model.eigenvalues.len()
        )));
    }
    let top = model.eigenvalues[0];
    let floor = top * (l.max(a) as f64) * f64::EPSILON * 100.0;
    if top <= 0.0 || model.eigenvalues[rank - 1] <= floor {
        return Err(Error::Degenerate(format!(
            "pcr_fit: component {rank} has zero variance"
        )));
    }
    let basis = model.components.columns(0, rank).into_owned();
    let scores = model.transform(x, rank);
    let output_mean = column_means(y);
    let y_c = center_columns(y, &output_mean);
    // scores^T scores = (L-1) diag(eigenvalues)
    let mut coef = scores.transpose() * y_c;
    for (i, mut row) in coef.row_iter_mut().enumerate() {
        row /= (l - 1) as f64 * model.eigenvalues[i];
    }
    Ok(AffineMap {
        input_mean: model.mean.clone(),
        weights: basis * coef,
        output_mean,
    })
}

/// Ridge fit with the regularizer picked by closed-form leave-one-out CV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub loocv_mse_per_alpha: Vec<(f64, f64)>,
    /// Set when the target is constant; the weights are then zero.
    pub degenerate: bool,
}

impl RidgeFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let mut acc = self.intercept;
                for j in 0..x.ncols() {
                    acc += x[(i, j)] * self.weights[j];
                }
                acc
            })
            .collect()
    }
}

pub fn ridge_loocv(x: &DMatrix<f64>, y: &[f64], alpha_grid: &[f64]) -> Result<RidgeFit> {
    let (l, k) = x.shape();
    if l < 3 {
        return Err(Error::InvalidArgument(format!("ridge_loocv needs at least 3 rows, got {l}")));
    }
    if y.len() != l {
        return Err(Error::DimMismatch(format!("ridge_loocv: X has {l} rows, y has {}", y.len())));
    }
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("ridge_loocv: empty alpha grid".into()));
    }
    if let Some(bad) = alpha_grid.iter().find(|a| a.is_nan() || **a <= 0.0 || !a.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge_loocv: alpha must be > 0, got {bad}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("ridge_loocv: non-finite target".into()));
    }
    let x_mean = column_means(x);
    let xc = center_columns(x, &x_mean);
    let y_mean = y.iter().sum::<f64>() / l as f64;
    let yc = DVector::from_iterator(l, y.iter().map(|v| v - y_mean));

    if yc.iter().all(|v| *v == 0.0) {
        let alpha = alpha_grid.iter().copied().fold(f64::INFINITY, f64::min);
        return Ok(RidgeFit {
            alpha,
            weights: vec![0.0; k],
            intercept: y_mean,
            loocv_mse_per_alpha: alpha_grid.iter().map(|&a| (a, 0.0)).collect(),
            degenerate: true,
        });
    }

    let dec = svd(&xc)?;
    let r = dec.s.len();
    let uty = dec.u.transpose() * &yc;
    let mut per_alpha = Vec::with_capacity(alpha_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &alpha in alpha_grid {
        let shrink: Vec<f64> = dec.s.iter().map(|s| s * s / (s * s + alpha)).collect();
        let mut sse = 0.0;
        for i in 0..l {
            let mut fitted = 0.0;
            let mut h = 1.0 / l as f64;
            for j in 0..r {
                let uij = dec.u[(i, j)];
                fitted += uij * shrink[j] * uty[j];
                h += uij * uij * shrink[j];
            }
            let e = (yc[i] - fitted) / (1.0 - h);
            sse += e * e;
        }
        let mse = sse / l as f64;
        per_alpha.push((alpha, mse));
        best = match best {
            Some((ba, bm)) if bm < mse || (bm == mse && ba <= alpha) => Some((ba, bm)),
            _ => Some((alpha, mse)),
        };
    }
    let (alpha, _) = best.expect("grid is nonempty");
    let mut coef = DVector::zeros(r);
    for j in 0..r {
        coef[j] = dec.s[j] / (dec.s[j] * dec.s[j] + alpha) * uty[j];
    }
    let w = &dec.v * coef;
    let intercept = y_mean - x_mean.dot(&w);
    Ok(RidgeFit {
        alpha,
        weights: w.iter().copied().collect(),
        intercept,
        loocv_mse_per_alpha: per_alpha,
        degenerate: false,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1)..=j
        let r = (i + j + 1) as f64 / 2.0;
        for &t in &idx[i..j] {
            ranks[t] = r;
        }
        i = j;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::DimMismatch(format!("pearson: lengths {n} and {}", b.len())));
    }
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 points, got {n}")));
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimMismatch(format!(
            "spearman: lengths {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("spearman: non-finite input".into()));
    }
    pearson(&average_ranks(pred), &average_ranks(truth))
}

/// Orthonormal basis for the column space of `a`.
pub fn orthonormal_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return Err(Error::InvalidArgument("zero-rank input: empty matrix".into()));
    }
    let dec = svd(a)?;
    let s_max = dec.s[0];
    let tol = rank_tolerance(s_max, a.nrows(), a.ncols());
    let rank = dec.s.iter().filter(|&&s| s > tol).count();
    if s_max == 0.0 || rank == 0 {
        return Err(Error::InvalidArgument("zero-rank input".into()));
    }
    Ok(dec.u.columns(0, rank).into_owned())
}

/// Principal angles (radians, ascending) between the column spaces of `a`
/// and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimMismatch(format!(
            "principal_angles: ambient dims {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let qa = orthonormal_basis(a)?;
    let qb = orthonormal_basis(b)?;
    let m = qa.transpose() * qb;
    let dec = svd(&m)?;
    let mut angles: Vec<f64> = dec.s.iter().map(|s| s.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn orthonormality_err(q: &DMatrix<f64>) -> f64 {
        max_abs(&(q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())))
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let r = svd(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(r.s, vec![1.0, 1.0]);
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let r = svd(&d).unwrap();
        assert!((r.s[0] - 3.0).abs() < 1e-14 && (r.s[1] - 2.0).abs() < 1e-14);
        assert!(max_abs(&(&r.v - DMatrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn svd_random_matches_gram_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = gaussian(&mut rng, 5, 3);
        let r = svd(&m).unwrap();
        let rel = (r.reconstruct() - &m).norm() / m.norm();
        assert!(rel <= 1e-10, "reconstruction {rel}");
        assert!(orthonormality_err(&r.u) < 1e-10);
        assert!(orthonormality_err(&r.v) < 1e-10);

        // independent route: eigenvalues of M^T M via a symmetric eigensolver
        let eig = (m.transpose() * &m).symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        for (s, e) in r.s.iter().zip(&ev) {
            assert!((s * s - e).abs() <= 1e-10 * ev[0], "{s}^2 vs {e}");
        }
        // each v column is an eigenvector of M^T M
        let g = m.transpose() * &m;
        for j in 0..3 {
            let v = r.v.column(j);
            let resid = &g * v - v * (r.s[j] * r.s[j]);
            assert!(resid.norm() < 1e-10 * ev[0]);
        }
    }

    #[test]
    fn svd_sign_convention_and_wide_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = gaussian(&mut rng, 3, 7);
        let r = svd(&m).unwrap();
        assert_eq!(r.v.shape(), (7, 3));
        for j in 0..3 {
            let col = r.v.column(j);
            let imax = (0..7).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a))).unwrap();
            assert!(col[imax] > 0.0);
        }
        let again = svd(&m).unwrap();
        assert_eq!(r, again);
        assert!((r.reconstruct() - &m).norm() <= 1e-10 * m.norm());
    }

    #[test]
    fn svd_rejects_nan() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(svd(&m).is_err());
    }

    #[test]
    fn least_squares_identity_and_planted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(&mut rng, 20, 4);
        let w = least_squares(&x, &x).unwrap();
        assert!(max_abs(&(w - DMatrix::identity(4, 4))) < 1e-10);

        let w_true = gaussian(&mut rng, 4, 3);
        let y = &x * &w_true;
        let w = least_squares(&x, &y).unwrap();
        assert!(max_abs(&(&w - &w_true)) < 1e-8);
    }

    #[test]
    fn least_squares_residual_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = gaussian(&mut rng, 50, 5);
        let y = gaussian(&mut rng, 50, 3);
        let w = least_squares(&x, &y).unwrap();
        let resid = &y - &x * w;
        let bound = 1e-6 * x.norm() * y.norm();
        assert!(max_abs(&(x.transpose() * resid)) <= bound);
    }

    #[test]
    fn least_squares_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = gaussian(&mut rng, 10, 3);
        let c0 = x.column(0).into_owned();
        x.set_column(2, &c0);
        let err = least_squares(&x, &gaussian(&mut rng, 10, 2)).unwrap_err();
        assert!(err.to_string().contains("rank-deficient"), "{err}");
        assert!(least_squares(&gaussian(&mut rng, 2, 3), &gaussian(&mut rng, 2, 1)).is_err());
    }

    #[test]
    fn pca_axis_aligned() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
        let p = pca(&x).unwrap();
        assert!((p.components[(0, 0)] - 1.0).abs() < 1e-12);
        // column variance with L-1 denominator: 4/3
        assert!((p.eigenvalues[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!(p.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn pca_isotropic_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(&mut rng, 5000, 8);
        let p = pca(&x).unwrap();
        let mean = p.eigenvalues.iter().sum::<f64>() / 8.0;
        for e in &p.eigenvalues {
            assert!((e - mean).abs() <= 0.15 * mean, "{:?}", p.eigenvalues);
        }
        assert!(orthonormality_err(&p.components) < 1e-10);
    }

    #[test]
    fn pca_matches_covariance_eigen() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(&mut rng, 40, 5) * gaussian(&mut rng, 5, 5);
        let p = pca(&x).unwrap();
        let mean = column_means(&x);
        let xc = center_columns(&x, &mean);
        let cov = xc.transpose() * &xc / 39.0;
        let mut ev: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in p.eigenvalues.iter().zip(&ev) {
            assert!((a - b).abs() <= 1e-10 * ev[0]);
        }
        assert!(pca(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn mp_median_integrates_correctly() {
        // unit total mass (theta0 = 0 covers the whole support)
        for &gamma in &[0.01, 0.1, 0.5, 1.0] {
            let a = (1.0 - f64::sqrt(gamma)).powi(2);
            let b = (1.0 + f64::sqrt(gamma)).powi(2);
            let m = marchenko_pastur_median(gamma);
            assert!(m > a && m < b);
            // independent route: midpoint-rule quadrature of the density in x
            let n = 400_000;
            let h = (m - a) / n as f64;
            let mut mass = 0.0;
            for i in 0..n {
                let x = a + (i as f64 + 0.5) * h;
                mass += ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * gamma * x) * h;
            }
            assert!((mass - 0.5).abs() < 2e-3, "gamma {gamma}: mass below median {mass}");
        }
        // frozen from adaptive quadrature + root finding (scipy quad/brentq)
        for (gamma, want) in [(1.0, 0.652_775_941_6), (0.1, 0.966_565_147_4), (0.01, 0.996_665_676_3)] {
            let got = marchenko_pastur_median(gamma);
            assert!((got - want).abs() < 1e-8, "gamma {gamma}: {got} vs {want}");
        }
    }

    #[test]
    fn johnstone_degenerate_and_errors() {
        assert_eq!(johnstone_rank(&[0.0; 5], 100, 5).unwrap(), 0);
        assert!(johnstone_rank(&[1.0; 5], 5, 5).is_err());
    }

    #[test]
    fn johnstone_noise_and_spike() {
        let (l, k) = (4000, 40);
        let mut small = 0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(9_000 + seed);
            let x = gaussian(&mut rng, l, k);
            if johnstone_rank(&pca(&x).unwrap().eigenvalues, l, k).unwrap() <= 2 {
                small += 1;
            }
        }
        assert!(small >= 9);
    }

    #[test]
    fn johnstone_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = gaussian(&mut rng, 500, 10) * DMatrix::from_diagonal(&DVector::from_vec(vec![
            5.0, 3.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
        ]));
        let ev = pca(&x).unwrap().eigenvalues;
        let base = johnstone_rank(&ev, 500, 10).unwrap();
        assert_eq!(base, 2);
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled: Vec<f64> = ev.iter().map(|e| e * c).collect();
            assert_eq!(johnstone_rank(&scaled, 500, 10).unwrap(), base);
        }
    }

    #[test]
    fn pcr_full_rank_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = gaussian(&mut rng, 60, 5).add_scalar(2.0);
        let y = gaussian(&mut rng, 60, 3).add_scalar(-1.0);
        let pcr = pcr_fit(&x, &y, 5).unwrap();
        let ols = ols_fit(&x, &y).unwrap();
        let diff = pcr.apply(&x) - ols.apply(&x);
        assert!(max_abs(&diff) < 1e-8);
        // independent route: explicit intercept column
        let design = hstack(&DMatrix::from_element(60, 1, 1.0), &x);
        let w = least_squares(&design, &y).unwrap();
        assert!(max_abs(&(pcr.apply(&x) - design * w)) < 1e-8);
    }

    #[test]
    fn pcr_planted_signal_beats_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let l = 400;
        let signal = gaussian(&mut rng, l, 2) * 3.0;
        let noise = gaussian(&mut rng, l, 6) * 0.3;
        let x = hstack(&signal, &noise);
        let beta = gaussian(&mut rng, 2, 4);
        let y_clean = &signal * &beta;
        let y = &y_clean + gaussian(&mut rng, l, 4) * 0.5;
        let pcr = pcr_fit(&x, &y, 2).unwrap();
        let oracle = ols_fit(&signal, &y).unwrap();
        // held-out data from the same model
        let sig_t = gaussian(&mut rng, l, 2) * 3.0;
        let x_t = hstack(&sig_t, &(gaussian(&mut rng, l, 6) * 0.3));
        let target = &sig_t * &beta;
        let mse = |p: DMatrix<f64>| frobenius_sq(&(p - &target)) / (l * 4) as f64;
        let (m_pcr, m_oracle) = (mse(pcr.apply(&x_t)), mse(oracle.apply(&sig_t)));
        assert!(m_pcr <= 1.05 * m_oracle + 1e-12 || (m_pcr - m_oracle).abs() < 0.05 * frobenius_sq(&target) / (l * 4) as f64,
            "pcr {m_pcr} oracle {m_oracle}");
    }

    #[test]
    fn pcr_rank_errors() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(pcr_fit(&x, &y, 0).is_err());
        assert!(pcr_fit(&x, &y, 3).is_err());
        let flat = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(pcr_fit(&flat, &y, 1), Err(Error::Degenerate(_))));
    }

    /// Explicit leave-one-out refits; independent of the hat-matrix path.
    fn loocv_explicit(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> f64 {
        let (l, k) = x.shape();
        let mut sse = 0.0;
        for i in 0..l {
            let keep: Vec<usize> = (0..l).filter(|&t| t != i).collect();
            let xs = x.select_rows(&keep);
            let ys = DVector::from_iterator(l - 1, keep.iter().map(|&t| y[t]));
            let xm = column_means(&xs);
            let ym = ys.mean();
            let xc = center_columns(&xs, &xm);
            let a = xc.transpose() * &xc + DMatrix::identity(k, k) * alpha;
            let b = xc.transpose() * ys.add_scalar(-ym);
            let w = a.lu().solve(&b).unwrap();
            let pred = ym + (x.row(i).transpose() - &xm).dot(&w);
            sse += (y[i] - pred).powi(2);
        }
        sse / l as f64
    }

    #[test]
    fn ridge_loocv_matches_explicit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = gaussian(&mut rng, 10, 3);
        let y: Vec<f64> = gaussian(&mut rng, 10, 1).iter().copied().collect();
        let fit = ridge_loocv(&x, &y, &[0.1, 1.0, 10.0]).unwrap();
        for &(alpha, mse) in &fit.loocv_mse_per_alpha {
            let oracle = loocv_explicit(&x, &y, alpha);
            assert!((mse - oracle).abs() <= 1e-8 * oracle, "alpha {alpha}: {mse} vs {oracle}");
        }
        let best = fit
            .loocv_mse_per_alpha
            .iter()
            .cloned()
            .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert_eq!(fit.alpha, best.0);
    }

    #[test]
    fn ridge_zero_target_and_single_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut rng, 8, 3);
        let fit = ridge_loocv(&x, &[0.0; 8], &[1.0, 2.0]).unwrap();
        assert!(fit.weights.iter().all(|w| *w == 0.0));
        assert_eq!(fit.intercept, 0.0);
        assert!(fit.degenerate);

        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let fit = ridge_loocv(&x, &y, &[3.5]).unwrap();
        assert_eq!(fit.alpha, 3.5);
        assert!(ridge_loocv(&x, &y, &[0.0]).is_err());
        assert!(ridge_loocv(&x, &y, &[]).is_err());
    }

    #[test]
    fn ridge_tie_prefers_smallest_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut rng, 8, 3);
        let fit = ridge_loocv(&x, &[5.0; 8], &[4.0, 2.0, 3.0]).unwrap();
        assert_eq!(fit.alpha, 2.0);
    }

    #[test]
    fn spearman_basic() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap() + 1.0).abs() < 1e-15);
        let err = spearman(&[1.0, 2.0], &[4.0, 4.0]).unwrap_err();
        assert!(err.to_string().contains("undefined correlation"));
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn spearman_with_ties_hand_computed() {
        // pred ranks [1, 2.5, 2.5, 4], truth ranks [1, 3, 2, 4]
        // centered: [-1.5, 0, 0, 1.5] and [-1.5, 0.5, -0.5, 1.5]
        // cov = 4.5, var_p = 4.5, var_t = 5 -> rho = 4.5 / sqrt(22.5)
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 4.5 / 22.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn principal_angles_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian(&mut rng, 6, 3);
        assert!(principal_angles(&a, &a).unwrap().iter().all(|t| t.abs() < 1e-7));
        let e1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let t = principal_angles(&e1, &e2).unwrap();
        assert!((t[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(principal_angles(&DMatrix::zeros(3, 2), &a.rows(0, 3).into_owned()).is_err());
    }

    #[test]
    fn principal_angles_match_gram_schmidt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = gaussian(&mut rng, 20, 8);
        let b = gaussian(&mut rng, 20, 8);
        let got = principal_angles(&a, &b).unwrap();

        fn gram_schmidt(m: &DMatrix<f64>) -> DMatrix<f64> {
            let mut q = m.clone();
            for j in 0..q.ncols() {
                for _ in 0..2 {
                    for i in 0..j {
                        let proj = q.column(i).dot(&q.column(j));
                        let qi = q.column(i).into_owned();
                        q.column_mut(j).axpy(-proj, &qi, 1.0);
                    }
                }
                let n = q.column(j).norm();
                q.column_mut(j).unscale_mut(n);
            }
            q
        }
        let m = gram_schmidt(&a).transpose() * gram_schmidt(&b);
        // cosines are sqrt of eigenvalues of M^T M
        let mut cos: Vec<f64> = (m.transpose() * &m)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|e| e.max(0.0).sqrt().min(1.0))
            .collect();
        cos.sort_by(|x, y| y.total_cmp(x));
        for (g, c) in got.iter().zip(&cos) {
            assert!((g.cos() - c).abs() < 1e-8, "{} vs {c}", g.cos());
        }
    }

    #[test]
    fn matmul_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = gaussian(&mut rng, 7, 5);
        let b = gaussian(&mut rng, 5, 4);
        assert!(max_abs(&(matmul(&a, &b) - &a * &b)) < 1e-13);
        // row-batch independence
        let top = matmul(&a.rows(0, 2).into_owned(), &b);
        assert_eq!(top, matmul(&a, &b).rows(0, 2).into_owned());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spearman_monotone_invariance(vals in proptest::collection::vec((-50i32..50, -50i32..50), 3..30)) {
                let pred: Vec<f64> = vals.iter().map(|v| v.0 as f64).collect();
                let truth: Vec<f64> = vals.iter().map(|v| v.1 as f64).collect();
                prop_assume!(pred.iter().any(|v| *v != pred[0]) && truth.iter().any(|v| *v != truth[0]));
                let base = spearman(&pred, &truth).unwrap();
                let warped: Vec<f64> = pred.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect();
                let flipped: Vec<f64> = truth.iter().map(|v| v.powi(3) - 7.0).collect();
                prop_assert!((spearman(&warped, &flipped).unwrap() - base).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&base));
            }

            #[test]
            fn ridge_closed_form_equals_loop(seed in 0u64..1000, extra in 3usize..30, k in 1usize..6) {
                let l = k + extra;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = gaussian(&mut rng, l, k);
                let y: Vec<f64> = gaussian(&mut rng, l, 1).iter().copied().collect();
                let fit = ridge_loocv(&x, &y, &[0.01, 1.0, 100.0]).unwrap();
                for &(alpha, mse) in &fit.loocv_mse_per_alpha {
                    let oracle = loocv_explicit(&x, &y, alpha);
                    prop_assert!((mse - oracle).abs() <= 1e-8 * oracle.max(1e-300));
                }
            }
        }
    }
}
