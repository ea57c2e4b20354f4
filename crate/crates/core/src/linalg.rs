//! Small dense linear algebra on the `n × n` block-scalar factor.
//!
//! A [`BlockMatrix`] `A` stands for the `nd × nd` operator `A ⊗ I_d`. Its
//! action on a [`State`] mixes the `n` blocks of length `d`:
//! `out[i] = Σ_j A[i, j] · x[j]`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// Row-major `n × n` real matrix representing `A ⊗ I_d`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatrix {
    order: usize,
    entries: Vec<f64>,
}

impl fmt::Debug for BlockMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for row in self.entries.chunks(self.order.max(1)) {
            list.entry(&row);
        }
        list.finish()
    }
}

impl Index<(usize, usize)> for BlockMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.order + j]
    }
}

impl IndexMut<(usize, usize)> for BlockMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.entries[i * self.order + j]
    }
}

impl BlockMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            entries: vec![0.0; order * order],
        }
    }

    pub fn identity(order: usize) -> Self {
        Self::diagonal(&vec![1.0; order])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major entries; `entries.len()` must be a square.
    pub fn from_row_major(order: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != order * order {
            return Err(Error::DimensionMismatch {
                expected: order * order,
                got: entries.len(),
            });
        }
        Ok(Self { order, entries })
    }

    /// Convenience constructor for literals. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let order = rows.len();
        let mut entries = Vec::with_capacity(order * order);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), order, "BlockMatrix::from_rows: row length");
            entries.extend_from_slice(r);
        }
        Self { order, entries }
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.order..(i + 1) * self.order]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let n = self.order;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.order, rhs.order, "BlockMatrix::matmul: order mismatch");
        let n = self.order;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.entries[i * n + j] += a * rhs.entries[k * n + j];
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            order: self.order,
            entries: self.entries.iter().map(|v| v * s).collect(),
        }
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.order, rhs.order, "BlockMatrix: order mismatch");
        Self {
            order: self.order,
            entries: self
                .entries
                .iter()
                .zip(&rhs.entries)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.order)
            .map(|j| (0..self.order).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self[(i, i)]).sum()
    }

    /// Applies `A ⊗ I_d` to a flat block-major vector of length `n·d`.
    pub fn apply_flat(&self, x: &[f64], out: &mut [f64]) {
        let n = self.order;
        debug_assert_eq!(x.len(), out.len());
        debug_assert_eq!(x.len() % n.max(1), 0);
        let d = x.len() / n.max(1);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let dst = &mut out[i * d..(i + 1) * d];
            for j in 0..n {
                let a = self[(i, j)];
                if a == 0.0 {
                    continue;
                }
                for (o, &s) in dst.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                    *o += a * s;
                }
            }
        }
    }

    /// Applies `A ⊗ I_d` to a state.
    pub fn apply(&self, x: &State) -> State {
        assert_eq!(self.order, x.order(), "BlockMatrix::apply: order mismatch");
        let mut out = State::zeros(x.order(), x.dim());
        self.apply_flat(x.as_slice(), out.as_mut_slice());
        out
    }

    /// Expands to the dense `nd × nd` matrix `A ⊗ I_d` (row-major).
    pub fn kron_identity(&self, d: usize) -> Vec<f64> {
        let n = self.order;
        let m = n * d;
        let mut out = vec![0.0; m * m];
        for i in 0..n {
            for j in 0..n {
                for k in 0..d {
                    out[(i * d + k) * m + j * d + k] = self[(i, j)];
                }
            }
        }
        out
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = self`. Fails on a non-positive pivot.
    pub fn cholesky(&self) -> Result<Self> {
        let n = self.order;
        let mut l = Self::zeros(n);
        for j in 0..n {
            let mut diag = self[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    time: f64::NAN,
                    min_eigenvalue: self.symmetric_eigenvalues().into_iter().fold(f64::INFINITY, f64::min),
                });
            }
            let ljj = math::sqrt(diag);
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(l)
    }

    /// Solves `self · X = rhs` by LU decomposition with partial pivoting.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        let n = self.order;
        assert_eq!(n, rhs.order, "BlockMatrix::solve: order mismatch");
        let mut a = self.entries.clone();
        let mut b = rhs.entries.clone();
        let scale = self.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Singular);
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
                .unwrap_or(col);
            if a[pivot * n + col].abs() <= f64::EPSILON * scale * 1e-4 {
                return Err(Error::Singular);
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                    b.swap(col * n + j, pivot * n + j);
                }
            }
            let p = a[col * n + col];
            for row in col + 1..n {
                let factor = a[row * n + col] / p;
                if factor == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[row * n + j] -= factor * a[col * n + j];
                }
                for j in 0..n {
                    b[row * n + j] -= factor * b[col * n + j];
                }
            }
        }
        for col in (0..n).rev() {
            let p = a[col * n + col];
            for j in 0..n {
                let mut s = b[col * n + j];
                for k in col + 1..n {
                    s -= a[col * n + k] * b[k * n + j];
                }
                b[col * n + j] = s / p;
            }
        }
        Ok(Self { order: n, entries: b })
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.order))
    }

    /// `exp(self · t)` by scaling and squaring with a degree-13 Padé kernel.
    pub fn exp(&self, t: f64) -> Result<Self> {
        if !t.is_finite() || !self.is_finite() {
            return Err(Error::NonFinite("matrix_exp"));
        }
        let n = self.order;
        let a = self.scale(t);
        let norm = a.norm1();
        if norm == 0.0 {
            return Ok(Self::identity(n));
        }
        const THETA_13: f64 = 5.371920351148152;
        const B: [f64; 14] = [
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ];
        let squarings = if norm > THETA_13 {
            math::ceil(math::log2(norm / THETA_13)).max(0.0) as i32
        } else {
            0
        };
        let a = a.scale(math::powf(2.0, -f64::from(squarings)));
        let ident = Self::identity(n);
        let a2 = a.matmul(&a);
        let a4 = a2.matmul(&a2);
        let a6 = a4.matmul(&a2);

        let u_inner = a6
            .matmul(&a6.scale(B[13]).add(&a4.scale(B[11])).add(&a2.scale(B[9])))
            .add(&a6.scale(B[7]))
            .add(&a4.scale(B[5]))
            .add(&a2.scale(B[3]))
            .add(&ident.scale(B[1]));
        let u = a.matmul(&u_inner);
        let v = a6
            .matmul(&a6.scale(B[12]).add(&a4.scale(B[10])).add(&a2.scale(B[8])))
            .add(&a6.scale(B[6]))
            .add(&a4.scale(B[4]))
            .add(&a2.scale(B[2]))
            .add(&ident.scale(B[0]));

        let mut r = v.sub(&u).solve(&v.add(&u))?;
        for _ in 0..squarings {
            r = r.matmul(&r);
        }
        if !r.is_finite() {
            return Err(Error::NonFinite("matrix_exp"));
        }
        Ok(r)
    }

    /// Coefficients `c` of the characteristic polynomial
    /// `det(λI − A) = λⁿ + c[1] λⁿ⁻¹ + … + c[n]`, with `c[0] = 1`
    /// (Faddeev–LeVerrier recursion).
    pub fn characteristic_polynomial(&self) -> Vec<f64> {
        let n = self.order;
        let mut coeffs = vec![0.0; n + 1];
        coeffs[0] = 1.0;
        let mut m = Self::zeros(n);
        let ident = Self::identity(n);
        for k in 1..=n {
            m = self.matmul(&m).add(&ident.scale(coeffs[k - 1]));
            coeffs[k] = -self.matmul(&m).trace() / k as f64;
        }
        coeffs
    }

    /// Eigenvalues as `(re, im)` pairs, from the roots of the characteristic
    /// polynomial (Aberth iteration), sorted by real part.
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        let mut roots = polynomial_roots(&self.characteristic_polynomial());
        roots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        roots
    }

    /// Eigenvalues of the symmetric part `(A + Aᵀ)/2` by cyclic Jacobi rotations.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.order;
        let mut a = self.add(&self.transpose()).scale(0.5);
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a[(i, j)] * a[(i, j)];
                    }
                }
            }
            if off <= 1e-30 * (1.0 + a.max_abs() * a.max_abs()) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / math::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[(i, i)]).collect()
    }
}

#[derive(Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
    fn div(self, o: Self) -> Self {
        let den = o.re * o.re + o.im * o.im;
        Self::new(
            (self.re * o.re + self.im * o.im) / den,
            (self.im * o.re - self.re * o.im) / den,
        )
    }
    fn abs(self) -> f64 {
        libm::hypot(self.re, self.im)
    }
}

/// Roots of the monic polynomial `λⁿ + c[1] λⁿ⁻¹ + … + c[n]`.
fn polynomial_roots(coeffs: &[f64]) -> Vec<(f64, f64)> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let eval = |z: Complex| -> (Complex, Complex) {
        let mut p = Complex::new(1.0, 0.0);
        let mut dp = Complex::new(0.0, 0.0);
        for &c in &coeffs[1..] {
            dp = dp.mul(z).add(p);
            p = p.mul(z).add(Complex::new(c, 0.0));
        }
        (p, dp)
    };
    let radius = 1.0 + coeffs[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<Complex> = (0..n)
        .map(|k| {
            let angle = 2.0 * core::f64::consts::PI * (k as f64 + 0.25) / n as f64 + 0.4;
            Complex::new(radius * 0.5 * math::cos(angle), radius * 0.5 * math::sin(angle))
        })
        .collect();
    for _ in 0..2000 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let (p, dp) = eval(z[i]);
            if p.abs() == 0.0 {
                continue;
            }
            let ratio = p.div(dp);
            let mut repulsion = Complex::new(0.0, 0.0);
            for (j, &zj) in z.iter().enumerate() {
                if j != i {
                    let diff = z[i].sub(zj);
                    if diff.abs() > 0.0 {
                        repulsion = repulsion.add(Complex::new(1.0, 0.0).div(diff));
                    }
                }
            }
            let denom = Complex::new(1.0, 0.0).sub(ratio.mul(repulsion));
            let step = ratio.div(denom);
            if step.re.is_finite() && step.im.is_finite() {
                z[i] = z[i].sub(step);
                max_step = max_step.max(step.abs() / (1.0 + z[i].abs()));
            }
        }
        if max_step < 1e-15 {
            break;
        }
    }
    z.into_iter().map(|c| (c.re, c.im)).collect()
}

/// A point in `ℝ^{nd}` stored as `n` consecutive blocks of length `d`.
///
/// Block 0 is the data variable `q`; blocks `1..n` are the auxiliary
/// variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl State {
    pub fn zeros(order: usize, dim: usize) -> Self {
        Self {
            order,
            dim,
            data: vec![0.0; order * dim],
        }
    }

    pub fn from_vec(order: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != order * dim {
            return Err(Error::DimensionMismatch {
                expected: order * dim,
                got: data.len(),
            });
        }
        Ok(Self { order, dim, data })
    }

    /// A state whose data block is `q` and whose auxiliary blocks are zero.
    pub fn from_data(order: usize, q: &[f64]) -> Self {
        let mut s = Self::zeros(order, q.len());
        s.block_mut(0).copy_from_slice(q);
        s
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_block(&self) -> &[f64] {
        self.block(self.order - 1)
    }

    pub fn data_block(&self) -> &[f64] {
        self.block(0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &State) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }
}
