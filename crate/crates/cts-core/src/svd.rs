//! Truncated singular value decomposition.
//!
//! Two paths, selected by matrix size:
//! * exact: eigendecomposition of the Gram matrix on the smaller
//!   dimension via cyclic Jacobi rotations (min dimension <= 512),
//! * randomized: Gaussian range sketch with oversampling 8 and two
//!   power iterations, seeded for determinism, then the exact kernel
//!   on the projected matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Singular values below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-12;

/// Largest Gram dimension handled by the exact path before the
/// randomized sketch takes over.
pub const EXACT_DIM_LIMIT: usize = 512;

const OVERSAMPLE: usize = 8;
const POWER_ITERS: usize = 2;

/// Rank-truncated SVD of a matrix: `m ~ left * diag(s) * right_t`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m x k, orthonormal columns.
    pub left: DenseTensor,
    /// k singular values, non-increasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// k x n, orthonormal rows.
    pub right_t: DenseTensor,
    /// Frobenius norm of everything truncated away.
    pub discarded_norm: f64,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Dense `left * diag(s) * right_t`, for verification.
    pub fn reconstruct(&self) -> DenseTensor {
        let m = self.left.dims()[0];
        let k = self.rank();
        let n = self.right_t.dims()[1];
        let mut out = vec![0.0; m * n];
        let l = self.left.data();
        let r = self.right_t.data();
        for i in 0..m {
            for x in 0..k {
                let c = l[i * k + x] * self.singular_values[x];
                let row = &r[x * n..(x + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &rv) in dst.iter_mut().zip(row) {
                    *d += c * rv;
                }
            }
        }
        DenseTensor::new(vec![m, n], out).expect("shape agreed above")
    }
}

/// Truncated SVD with deterministic output for a fixed `seed`.
///
/// `k = min(max_rank, numerical rank)`, where the numerical rank drops
/// singular values below `RANK_TOL * sigma_max`. The discarded norm is
/// exact on both paths: the sum of dropped eigenvalues on the exact
/// path, and the Pythagorean residual on the randomized path.
pub fn truncated_svd(m: &DenseTensor, max_rank: usize, seed: u64) -> Result<SvdResult> {
    if m.rank() != 2 {
        return Err(Error::Argument(format!(
            "truncated_svd expects a matrix, got rank {}",
            m.rank()
        )));
    }
    if max_rank == 0 {
        return Err(Error::Argument("max_rank must be at least 1".into()));
    }
    if !m.has_finite_entries() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let rows = m.dims()[0];
    let cols = m.dims()[1];
    let small = rows.min(cols);
    if small <= EXACT_DIM_LIMIT || max_rank + OVERSAMPLE >= small / 2 {
        exact_svd(m.data(), rows, cols, max_rank)
    } else {
        randomized_svd(m.data(), rows, cols, max_rank, seed)
    }
}

// ---------------------------------------------------------------------------
// exact path
// ---------------------------------------------------------------------------

fn exact_svd(a: &[f64], rows: usize, cols: usize, max_rank: usize) -> Result<SvdResult> {
    if rows <= cols {
        // Gram on the row side: G = A A^T, eigenvectors give the left factor.
        let g = gram_rows(a, rows, cols);
        let (eigvals, eigvecs) = jacobi_eigen(&g, rows);
        let (k, sigma, discarded) = select_rank(&eigvals, max_rank);
        // left: rows x k columns straight from the eigenvectors
        let mut left = vec![0.0; rows * k];
        for i in 0..rows {
            for j in 0..k {
                left[i * k + j] = eigvecs[i * rows + j];
            }
        }
        // right_t = diag(1/sigma) * left^T * A
        let mut right_t = vec![0.0; k * cols];
        for i in 0..rows {
            let arow = &a[i * cols..(i + 1) * cols];
            for j in 0..k {
                let c = left[i * k + j];
                if c == 0.0 {
                    continue;
                }
                let dst = &mut right_t[j * cols..(j + 1) * cols];
                for (d, &v) in dst.iter_mut().zip(arow) {
                    *d += c * v;
                }
            }
        }
        for j in 0..k {
            let inv = if sigma[j] > 0.0 { 1.0 / sigma[j] } else { 0.0 };
            for v in &mut right_t[j * cols..(j + 1) * cols] {
                *v *= inv;
            }
        }
        fix_zero_factors(&mut left, rows, &mut right_t, cols, &sigma);
        Ok(SvdResult {
            left: DenseTensor::new(vec![rows, k], left)?,
            singular_values: sigma,
            right_t: DenseTensor::new(vec![k, cols], right_t)?,
            discarded_norm: discarded,
        })
    } else {
        // Gram on the column side: G = A^T A, eigenvectors give the right factor.
        let g = gram_cols(a, rows, cols);
        let (eigvals, eigvecs) = jacobi_eigen(&g, cols);
        let (k, sigma, discarded) = select_rank(&eigvals, max_rank);
        let mut right_t = vec![0.0; k * cols];
        for j in 0..k {
            for i in 0..cols {
                right_t[j * cols + i] = eigvecs[i * cols + j];
            }
        }
        // left = A * V * diag(1/sigma)
        let mut left = vec![0.0; rows * k];
        for i in 0..rows {
            let arow = &a[i * cols..(i + 1) * cols];
            let dst = &mut left[i * k..(i + 1) * k];
            for (x, &v) in arow.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for j in 0..k {
                    dst[j] += v * right_t[j * cols + x];
                }
            }
        }
        for i in 0..rows {
            for j in 0..k {
                let inv = if sigma[j] > 0.0 { 1.0 / sigma[j] } else { 0.0 };
                left[i * k + j] *= inv;
            }
        }
        fix_zero_factors(&mut left, rows, &mut right_t, cols, &sigma);
        Ok(SvdResult {
            left: DenseTensor::new(vec![rows, k], left)?,
            singular_values: sigma,
            right_t: DenseTensor::new(vec![k, cols], right_t)?,
            discarded_norm: discarded,
        })
    }
}

/// An all-zero matrix still gets one (arbitrary orthonormal) factor pair
/// so core shapes stay well-formed.
fn fix_zero_factors(left: &mut [f64], rows: usize, right_t: &mut [f64], cols: usize, sigma: &[f64]) {
    for (j, &s) in sigma.iter().enumerate() {
        if s == 0.0 {
            let k = sigma.len();
            for i in 0..rows {
                left[i * k + j] = if i == j % rows { 1.0 } else { 0.0 };
            }
            for i in 0..cols {
                right_t[j * cols + i] = if i == j % cols { 1.0 } else { 0.0 };
            }
        }
    }
}

/// Keeps `min(max_rank, numerical rank)` eigenvalues; returns singular
/// values and the Frobenius norm of the dropped tail.
///
/// Eigenvalues below the Gram noise floor (`dim * eps * lambda_max`)
/// are indistinguishable from rounding error and count as exact zeros,
/// both for the rank decision and for the discarded tail.
fn select_rank(eigvals: &[f64], max_rank: usize) -> (usize, Vec<f64>, f64) {
    let lam_max = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let noise_floor = eigvals.len() as f64 * f64::EPSILON * lam_max;
    let cut = (RANK_TOL * RANK_TOL * lam_max).max(noise_floor);
    let mut numerical = eigvals.iter().take_while(|&&l| l > cut && l > 0.0).count();
    if numerical == 0 {
        numerical = 1; // keep shapes non-degenerate for zero matrices
    }
    let k = max_rank.min(numerical);
    let sigma: Vec<f64> = eigvals[..k].iter().map(|&l| l.max(0.0).sqrt()).collect();
    let discarded_sq: f64 = eigvals[k..]
        .iter()
        .map(|&l| if l > noise_floor { l } else { 0.0 })
        .sum();
    (k, sigma, discarded_sq.sqrt())
}

/// G = A A^T for a row-major `rows x cols` buffer (upper triangle mirrored).
fn gram_rows(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; rows * rows];
    for i in 0..rows {
        let ri = &a[i * cols..(i + 1) * cols];
        for j in i..rows {
            let rj = &a[j * cols..(j + 1) * cols];
            let dot: f64 = ri.iter().zip(rj).map(|(x, y)| x * y).sum();
            g[i * rows + j] = dot;
            g[j * rows + i] = dot;
        }
    }
    g
}

/// G = A^T A accumulated row by row to keep the access contiguous.
fn gram_cols(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for i in 0..rows {
        let r = &a[i * cols..(i + 1) * cols];
        for (p, &vp) in r.iter().enumerate() {
            if vp == 0.0 {
                continue;
            }
            let grow = &mut g[p * cols..(p + 1) * cols];
            for (q, &vq) in r.iter().enumerate().skip(p) {
                grow[q] += vp * vq;
            }
        }
    }
    for p in 0..cols {
        for q in (p + 1)..cols {
            g[q * cols + p] = g[p * cols + q];
        }
    }
    g
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues sorted non-increasing and the matching
/// eigenvector columns (row-major `n x n`).
pub fn jacobi_eigen(g: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = g.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = 1e-14 * norm.max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // rotate rows/cols p and q of a
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = a[p * n + i];
                    let aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigvals: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigvecs = vec![0.0; n * n];
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            eigvecs[i * n + new_j] = v[i * n + old_j];
        }
    }
    (eigvals, eigvecs)
}

// ---------------------------------------------------------------------------
// randomized path
// ---------------------------------------------------------------------------

fn randomized_svd(
    a: &[f64],
    rows: usize,
    cols: usize,
    max_rank: usize,
    seed: u64,
) -> Result<SvdResult> {
    let l = max_rank + OVERSAMPLE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Gaussian test matrix, cols x l
    let mut omega = vec![0.0; cols * l];
    for v in &mut omega {
        *v = standard_normal(&mut rng);
    }
    let mut y = mat_mul(a, rows, cols, &omega, l); // rows x l
    orthonormalize(&mut y, rows, l);
    for _ in 0..POWER_ITERS {
        let mut z = mat_tmul(a, rows, cols, &y, l); // cols x l
        orthonormalize(&mut z, cols, l);
        y = mat_mul(a, rows, cols, &z, l);
        orthonormalize(&mut y, rows, l);
    }
    let q = y; // rows x l, orthonormal columns
    // b = q^T a  (l x cols)
    let mut b = vec![0.0; l * cols];
    for i in 0..rows {
        let arow = &a[i * cols..(i + 1) * cols];
        for j in 0..l {
            let c = q[i * l + j];
            if c == 0.0 {
                continue;
            }
            let dst = &mut b[j * cols..(j + 1) * cols];
            for (d, &v) in dst.iter_mut().zip(arow) {
                *d += c * v;
            }
        }
    }
    let inner = exact_svd(&b, l, cols, max_rank)?;
    let k = inner.rank();
    // left = q * inner.left  (rows x k)
    let mut left = vec![0.0; rows * k];
    let il = inner.left.data();
    for i in 0..rows {
        let qrow = &q[i * l..(i + 1) * l];
        let dst = &mut left[i * k..(i + 1) * k];
        for (x, &qv) in qrow.iter().enumerate() {
            if qv == 0.0 {
                continue;
            }
            for j in 0..k {
                dst[j] += qv * il[x * k + j];
            }
        }
    }
    // Exact residual via Pythagoras: the kept part lives inside range(q).
    let total_sq: f64 = a.iter().map(|v| v * v).sum();
    let kept_sq: f64 = inner.singular_values.iter().map(|s| s * s).sum();
    let discarded = (total_sq - kept_sq).max(0.0).sqrt();
    Ok(SvdResult {
        left: DenseTensor::new(vec![rows, k], left)?,
        singular_values: inner.singular_values,
        right_t: inner.right_t,
        discarded_norm: discarded,
    })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the stream stable across rand versions.
    loop {
        let u: f64 = rng.gen::<f64>();
        let v: f64 = rng.gen::<f64>();
        if u > f64::MIN_POSITIVE {
            return (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos();
        }
    }
}

/// C = A (rows x cols) * B (cols x l), row-major.
fn mat_mul(a: &[f64], rows: usize, cols: usize, b: &[f64], l: usize) -> Vec<f64> {
    let mut c = vec![0.0; rows * l];
    for i in 0..rows {
        let arow = &a[i * cols..(i + 1) * cols];
        let dst = &mut c[i * l..(i + 1) * l];
        for (x, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[x * l..(x + 1) * l];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
    }
    c
}

/// C = A^T (cols x rows) * B (rows x l), row-major.
fn mat_tmul(a: &[f64], rows: usize, cols: usize, b: &[f64], l: usize) -> Vec<f64> {
    let mut c = vec![0.0; cols * l];
    for i in 0..rows {
        let arow = &a[i * cols..(i + 1) * cols];
        let brow = &b[i * l..(i + 1) * l];
        for (x, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let dst = &mut c[x * l..(x + 1) * l];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
    }
    c
}

/// In-place modified Gram-Schmidt on the columns of a rows x l buffer.
fn orthonormalize(m: &mut [f64], rows: usize, l: usize) {
    for j in 0..l {
        for prev in 0..j {
            let mut dot = 0.0;
            for i in 0..rows {
                dot += m[i * l + j] * m[i * l + prev];
            }
            for i in 0..rows {
                m[i * l + j] -= dot * m[i * l + prev];
            }
        }
        let mut norm = 0.0;
        for i in 0..rows {
            norm += m[i * l + j] * m[i * l + j];
        }
        let norm = norm.sqrt();
        if norm > 1e-300 {
            for i in 0..rows {
                m[i * l + j] /= norm;
            }
        } else {
            // degenerate column: replace with a unit vector to keep q full width
            for i in 0..rows {
                m[i * l + j] = if i == j % rows { 1.0 } else { 0.0 };
            }
            for prev in 0..j {
                let mut dot = 0.0;
                for i in 0..rows {
                    dot += m[i * l + j] * m[i * l + prev];
                }
                for i in 0..rows {
                    m[i * l + j] -= dot * m[i * l + prev];
                }
            }
            let mut n2 = 0.0;
            for i in 0..rows {
                n2 += m[i * l + j] * m[i * l + j];
            }
            let n2 = n2.sqrt().max(1e-300);
            for i in 0..rows {
                m[i * l + j] /= n2;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseTensor::new(vec![rows, cols], data).unwrap()
    }

    fn max_abs_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_matrix_has_unit_singular_values() {
        let mut eye = DenseTensor::zeros(vec![4, 4]).unwrap();
        for i in 0..4 {
            eye.set(&[i, i], 1.0);
        }
        let svd = truncated_svd(&eye, 4, 0).unwrap();
        assert_eq!(svd.rank(), 4);
        for &s in &svd.singular_values {
            assert!((s - 1.0).abs() < 1e-12, "sigma {s}");
        }
        assert!(svd.discarded_norm < 1e-12);
    }

    #[test]
    fn rank_one_outer_product_is_exact_at_rank_one() {
        let u: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() + 0.2).collect();
        let v: Vec<f64> = (0..20).map(|i| (i as f64 * 0.71).cos() - 0.1).collect();
        let mut data = vec![0.0; 30 * 20];
        for i in 0..30 {
            for j in 0..20 {
                data[i * 20 + j] = u[i] * v[j];
            }
        }
        let m = DenseTensor::new(vec![30, 20], data).unwrap();
        let svd = truncated_svd(&m, 1, 0).unwrap();
        assert_eq!(svd.rank(), 1);
        assert!(svd.discarded_norm <= 1e-10, "discarded {}", svd.discarded_norm);
        assert!(max_abs_diff(&svd.reconstruct(), &m) < 1e-10);
    }

    /// Independent full-decomposition oracle: textbook Jacobi eigenvalue
    /// iteration on the column Gram matrix with no truncation logic.
    fn oracle_singular_values(m: &DenseTensor) -> Vec<f64> {
        let (rows, cols) = (m.dims()[0], m.dims()[1]);
        let a = m.data();
        let n = cols;
        let mut g = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                let mut dot = 0.0;
                for i in 0..rows {
                    dot += a[i * cols + p] * a[i * cols + q];
                }
                g[p * n + q] = dot;
            }
        }
        // plain cyclic Jacobi, eigenvalues only
        for _ in 0..100 {
            let mut biggest = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    biggest = biggest.max(g[p * n + q].abs());
                }
            }
            if biggest < 1e-13 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let gpq = g[p * n + q];
                    if gpq.abs() < 1e-300 {
                        continue;
                    }
                    let tau = (g[q * n + q] - g[p * n + p]) / (2.0 * gpq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..n {
                        let gip = g[i * n + p];
                        let giq = g[i * n + q];
                        g[i * n + p] = c * gip - s * giq;
                        g[i * n + q] = s * gip + c * giq;
                    }
                    for i in 0..n {
                        let gpi = g[p * n + i];
                        let gqi = g[q * n + i];
                        g[p * n + i] = c * gpi - s * gqi;
                        g[q * n + i] = s * gpi + c * gqi;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| g[i * n + i].max(0.0).sqrt()).collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        vals
    }

    #[test]
    fn discarded_norm_matches_full_decomposition_oracle() {
        let m = random_matrix(50, 40, 7);
        let all = oracle_singular_values(&m);
        let expected: f64 = all[10..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let svd = truncated_svd(&m, 10, 0).unwrap();
        assert_eq!(svd.rank(), 10);
        let rel = (svd.discarded_norm - expected).abs() / expected;
        assert!(rel < 1e-6, "discarded {} vs oracle {expected}", svd.discarded_norm);
        for (a, b) in svd.singular_values.iter().zip(&all[..10]) {
            assert!((a - b).abs() / b < 1e-8);
        }
    }

    #[test]
    fn residual_norm_equals_discarded_norm() {
        let m = random_matrix(35, 45, 3);
        let svd = truncated_svd(&m, 12, 0).unwrap();
        let recon = svd.reconstruct();
        let mut resid_sq = 0.0;
        for (a, b) in m.data().iter().zip(recon.data()) {
            resid_sq += (a - b) * (a - b);
        }
        let resid = resid_sq.sqrt();
        assert!(
            (resid - svd.discarded_norm).abs() <= 1e-6 * resid.max(1e-12),
            "residual {resid} vs discarded {}",
            svd.discarded_norm
        );
    }

    #[test]
    fn factors_are_orthonormal() {
        let m = random_matrix(60, 25, 11);
        let svd = truncated_svd(&m, 25, 0).unwrap();
        let k = svd.rank();
        let l = svd.left.data();
        for j1 in 0..k {
            for j2 in j1..k {
                let mut dot = 0.0;
                for i in 0..60 {
                    dot += l[i * k + j1] * l[i * k + j2];
                }
                let want = if j1 == j2 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "left {j1},{j2}: {dot}");
            }
        }
        let r = svd.right_t.data();
        let n = svd.right_t.dims()[1];
        for j1 in 0..k {
            for j2 in j1..k {
                let mut dot = 0.0;
                for i in 0..n {
                    dot += r[j1 * n + i] * r[j2 * n + i];
                }
                let want = if j1 == j2 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "right {j1},{j2}: {dot}");
            }
        }
    }

    #[test]
    fn randomized_path_is_deterministic_and_accurate_on_low_rank() {
        // 600x580 rank-5 matrix forces the randomized path.
        let (rows, cols, true_rank) = (600, 580, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u: Vec<f64> = (0..rows * true_rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..true_rank * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for x in 0..true_rank {
                let c = u[i * true_rank + x];
                for j in 0..cols {
                    data[i * cols + j] += c * v[x * cols + j];
                }
            }
        }
        let m = DenseTensor::new(vec![rows, cols], data).unwrap();
        let s1 = truncated_svd(&m, 5, 42).unwrap();
        let s2 = truncated_svd(&m, 5, 42).unwrap();
        assert_eq!(s1.singular_values, s2.singular_values);
        assert_eq!(s1.left.data(), s2.left.data());
        let norm = m.frobenius_norm();
        assert!(
            s1.discarded_norm <= 1e-8 * norm,
            "discarded {} for norm {norm}",
            s1.discarded_norm
        );
    }

    #[test]
    fn zero_matrix_keeps_one_orthonormal_pair() {
        let m = DenseTensor::zeros(vec![6, 4]).unwrap();
        let svd = truncated_svd(&m, 3, 0).unwrap();
        assert_eq!(svd.rank(), 1);
        assert_eq!(svd.singular_values[0], 0.0);
        assert_eq!(svd.discarded_norm, 0.0);
        let lnorm: f64 = svd.left.data().iter().map(|v| v * v).sum();
        assert!((lnorm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t3 = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(matches!(truncated_svd(&t3, 1, 0), Err(Error::Argument(_))));
        let m = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert!(matches!(truncated_svd(&m, 0, 0), Err(Error::Argument(_))));
        let bad = DenseTensor::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(truncated_svd(&bad, 1, 0), Err(Error::Numeric(_))));
    }
}
