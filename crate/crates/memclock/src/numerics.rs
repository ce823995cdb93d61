//! Dense matrix arithmetic, a deterministic counter-based RNG, and an
//! ordinary-least-squares line fit.
//!
//! Everything in the experiments is at most 64x64, so products are naive
//! triple loops and clarity wins over speed. All scalars are f64; 32-bit
//! precision cannot reach the ~1e-10 residuals the identity tests demand.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64 entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data. Errors unless `data.len() == rows * cols`
    /// and both dimensions are positive.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape {
                context: "Matrix::new",
                detail: format!("dimensions must be positive, got {rows}x{cols}"),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::Shape {
                context: "Matrix::new",
                detail: format!("data length {} does not match {rows}x{cols}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-dimension matrix");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// 1x1 wrapper, used for scalar-model gradients.
    pub fn scalar(value: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Standard product. Errors with both shapes when the inner dimensions
    /// disagree.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::MatmulShape {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: rhs.rows,
                right_cols: rhs.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(i, k) * rhs.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entrywise sum. Panics on shape mismatch — shape agreement here is a
    /// programming invariant, unlike matmul conformability, which depends on
    /// runtime configuration.
    pub fn add(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// self + s * rhs, the workhorse of every update rule.
    pub fn add_scaled(&self, rhs: &Matrix, s: f64) -> Matrix {
        self.zip_with(rhs, |a, b| a + s * b)
    }

    /// Entrywise transform.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Entrywise combination of two matrices of identical shape. Shape
    /// mismatch panics: entrywise pairing is a programming invariant,
    /// unlike matmul conformability, which depends on runtime configuration.
    pub fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "entrywise op on mismatched shapes"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// Copy the listed columns (in order) into a new matrix. Errors on an
    /// empty list or an out-of-range index.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Matrix> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut out = Matrix::zeros(self.rows, indices.len());
        for (jj, &j) in indices.iter().enumerate() {
            if j >= self.cols {
                return Err(Error::BatchIndex {
                    index: j,
                    n: self.cols,
                });
            }
            for i in 0..self.rows {
                out.set(i, jj, self.get(i, j));
            }
        }
        Ok(out)
    }
}

/// SplitMix64 increment: the golden-ratio gamma.
pub const RNG_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
/// First SplitMix64 mixing multiplier.
pub const RNG_MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
/// Second SplitMix64 mixing multiplier.
pub const RNG_MIX2: u64 = 0x94D0_49BB_1331_11EB;

/// Counter-based deterministic generator (SplitMix64).
///
/// Draw `k` is a fixed bijective mix of `seed + k*RNG_GAMMA`, so the stream
/// is a pure function of `(seed, k)`: same seed, same draws, on any platform
/// — only u64 arithmetic and exact power-of-two f64 scaling are involved.
/// Gaussians come from the Box-Muller pair transform of two uniforms; the
/// second member of each pair is cached and returned on the next call.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    counter: u64,
    gauss_spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            counter: 0,
            gauss_spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(RNG_GAMMA));
        z = (z ^ (z >> 30)).wrapping_mul(RNG_MIX1);
        z = (z ^ (z >> 27)).wrapping_mul(RNG_MIX2);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1): the top 53 bits scaled by 2^-53.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on (u1, u2]-style uniforms.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        // 1 - uniform() lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gauss_spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform index in [0, n) via the multiply-shift reduction (no modulo
    /// bias at these sizes).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// Least-squares line through (xs, ys).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// |slope|, kept explicit because the sensitivity diagnostics consume it.
    pub abs_slope: f64,
}

/// Ordinary least squares for a single regressor, computed in centered form
/// for stability. Errors on length mismatch, fewer than two points, or
/// degenerate (all-equal) abscissae rather than returning NaN.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<OlsFit> {
    if xs.len() != ys.len() {
        return Err(Error::InsufficientData {
            detail: format!(
                "ols_fit length mismatch: {} xs vs {} ys",
                xs.len(),
                ys.len()
            ),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            detail: format!("ols_fit needs at least 2 points, got {n}"),
        });
    }
    let x_mean = xs.iter().sum::<f64>() / n as f64;
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(Error::Degenerate {
            detail: "ols_fit abscissae are all equal".to_string(),
        });
    }
    let slope = sxy / sxx;
    Ok(OlsFit {
        slope,
        intercept: y_mean - slope * x_mean,
        abs_slope: slope.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_preserves() {
        let m = mat(2, 2, &[1.5, -2.0, 0.25, 7.0]);
        let i = Matrix::identity(2);
        assert_eq!(i.matmul(&m).unwrap(), m);
        assert_eq!(m.matmul(&i).unwrap(), m);
    }

    #[test]
    fn matmul_one_by_one() {
        let p = Matrix::scalar(2.0).matmul(&Matrix::scalar(3.0)).unwrap();
        assert_eq!(p.get(0, 0), 6.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(17);
        let a = Matrix::from_fn(3, 2, |_, _| rng.gaussian());
        let b = Matrix::from_fn(2, 4, |_, _| rng.gaussian());
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() <= 1e-15 * acc.abs().max(1.0));
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(3, 2);
        let b = Matrix::zeros(3, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3x2"), "message was: {msg}");
    }

    #[test]
    fn transpose_involution_and_trivials() {
        assert_eq!(Matrix::identity(2).transpose(), Matrix::identity(2));
        let ones = Matrix::from_fn(2, 3, |_, _| 1.0);
        let t = ones.transpose();
        assert_eq!(t.shape(), (3, 2));
        assert!(t.as_slice().iter().all(|&v| v == 1.0));
        let mut rng = Rng::new(3);
        let m = Matrix::from_fn(3, 3, |_, _| rng.gaussian());
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn frobenius_values() {
        assert_eq!(Matrix::zeros(4, 4).frobenius_norm(), 0.0);
        assert!((Matrix::identity(2).frobenius_norm() - 2f64.sqrt()).abs() < 1e-15);
        let m = mat(1, 2, &[3.0, 4.0]);
        assert_eq!(m.frobenius_norm(), 5.0);
    }

    #[test]
    fn rotation_preserves_frobenius() {
        let theta: f64 = 0.7;
        let q = mat(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let mut rng = Rng::new(5);
        let m = Matrix::from_fn(2, 3, |_, _| rng.gaussian());
        let qm = q.matmul(&m).unwrap();
        assert!((qm.frobenius_norm() - m.frobenius_norm()).abs() < 1e-10);
    }

    #[test]
    fn select_columns_basics() {
        let m = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = m.select_columns(&[2, 0]).unwrap();
        assert_eq!(s, mat(2, 2, &[3.0, 1.0, 6.0, 4.0]));
        assert!(matches!(m.select_columns(&[]), Err(Error::EmptyBatch)));
        assert!(matches!(
            m.select_columns(&[3]),
            Err(Error::BatchIndex { index: 3, n: 3 })
        ));
    }

    #[test]
    fn rng_same_seed_same_stream() {
        let mut a = Rng::new(0xDEAD_BEEF);
        let mut b = Rng::new(0xDEAD_BEEF);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn rng_different_seeds_differ_early() {
        let pairs = [(0u64, 1u64), (42, 43), (7, 1_000_003)];
        for (s1, s2) in pairs {
            let mut a = Rng::new(s1);
            let mut b = Rng::new(s2);
            assert!(
                (0..100).any(|_| a.next_u64() != b.next_u64()),
                "seeds {s1} and {s2} agree on first 100 draws"
            );
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::new(11);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(2024);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = rng.gaussian();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn ols_exact_affine() {
        let fit = ols_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14);
        assert!((fit.intercept - 1.0).abs() < 1e-14);
        assert_eq!(fit.abs_slope, fit.slope.abs());
    }

    #[test]
    fn ols_constant_ys_zero_slope() {
        let fit = ols_fit(&[1.0, 2.0, 5.0], &[4.0, 4.0, 4.0]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.intercept, 4.0);
    }

    #[test]
    fn ols_matches_normal_equations_oracle() {
        let mut rng = Rng::new(99);
        let xs: Vec<f64> = (0..25).map(|_| rng.gaussian() * 3.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 1.7 * x - 0.4 + rng.gaussian() * 0.5)
            .collect();
        let fit = ols_fit(&xs, &ys).unwrap();
        // Solve [[n, Sx], [Sx, Sxx]] [c, m]^T = [Sy, Sxy] by Cramer's rule.
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let det = n * sxx - sx * sx;
        let slope = (n * sxy - sx * sy) / det;
        let intercept = (sy * sxx - sx * sxy) / det;
        assert!((fit.slope - slope).abs() <= 1e-12 * slope.abs());
        assert!((fit.intercept - intercept).abs() <= 1e-12 * intercept.abs().max(1.0));
    }

    #[test]
    fn ols_residual_orthogonality() {
        let mut rng = Rng::new(123);
        let xs: Vec<f64> = (0..40).map(|_| rng.uniform() * 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -0.3 * x + 2.0 + rng.gaussian()).collect();
        let fit = ols_fit(&xs, &ys).unwrap();
        let mut r_sum = 0.0;
        let mut rx_sum = 0.0;
        for (&x, &y) in xs.iter().zip(&ys) {
            let r = y - (fit.intercept + fit.slope * x);
            r_sum += r;
            rx_sum += r * x;
        }
        assert!(r_sum.abs() <= 1e-9, "sum residuals {r_sum}");
        assert!(rx_sum.abs() <= 1e-9, "sum x-weighted residuals {rx_sum}");
    }

    #[test]
    fn ols_error_paths() {
        assert!(ols_fit(&[1.0], &[1.0]).is_err());
        assert!(ols_fit(&[1.0, 2.0], &[1.0]).is_err());
        let err = ols_fit(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }));
    }
}
