//! Small dense complex linear algebra: Hermitian matrices, Cholesky square
//! roots and a cyclic Jacobi eigensolver.
//!
//! Sizes here are tiny (at most 16 microphones), so everything is stored
//! row-major in a flat `Vec` and written out explicitly.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative tolerance of the conjugate-symmetry check.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Relative regularization added to the undesired covariance before whitening.
pub const REGULARIZATION: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 10_000;
const JACOBI_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    n: usize,
    data: Vec<C64>,
}

impl HermitianMatrix {
    /// Builds a matrix from row-major entries, checking conjugate symmetry.
    pub fn new(n: usize, data: Vec<C64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::Dimension(format!(
                "expected {} entries for order {n}, got {}",
                n * n,
                data.len()
            )));
        }
        let m = Self { n, data };
        let scale = m.max_abs();
        if m.hermitian_deviation() > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Dimension("matrix is not Hermitian".into()));
        }
        Ok(m)
    }

    /// Builds from a generator; only the upper triangle (including the
    /// diagonal) is evaluated, the rest is mirrored.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            data[i * n + i] = C64::new(f(i, i).re, 0.0);
            for j in i + 1..n {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v.conj();
            }
        }
        Self { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = C64::new(v, 0.0);
        }
        m
    }

    /// v·vᴴ
    pub fn outer(v: &[C64]) -> Self {
        Self::from_upper(v.len(), |i, j| v[i] * v[j].conj())
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.data[i * self.n + i].re).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// max |A − Aᴴ| over all entries.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.n;
        let mut dev = 0.0f64;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        dev
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::Dimension(format!("order {} vs {}", self.n, other.n)));
        }
        Ok(Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// In-place `self = alpha·self + (1 − alpha)·v·vᴴ`.
    pub fn smooth_outer(&mut self, alpha: f64, v: &[C64]) {
        let n = self.n;
        debug_assert_eq!(v.len(), n);
        let beta = 1.0 - alpha;
        for i in 0..n {
            let vi = v[i] * beta;
            for j in i..n {
                let upd = self.data[i * n + j] * alpha + vi * v[j].conj();
                self.data[i * n + j] = upd;
                self.data[j * n + i] = upd.conj();
            }
            // keep the diagonal exactly real
            self.data[i * n + i].im = 0.0;
        }
    }

    /// Principal submatrix on the contiguous index range.
    pub fn block(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.n || range.is_empty() {
            return Err(Error::Dimension(format!("block {range:?} out of order {}", self.n)));
        }
        let m = range.len();
        let mut data = Vec::with_capacity(m * m);
        for i in range.clone() {
            data.extend_from_slice(&self.data[i * self.n + range.start..i * self.n + range.end]);
        }
        Ok(Self { n: m, data })
    }

    /// Adds `delta · trace/N · I`; an all-zero matrix gets `delta · I`.
    pub fn regularized(&self, delta: f64) -> Self {
        let mean_diag = self.trace() / self.n as f64;
        let load = if mean_diag > 0.0 { delta * mean_diag } else { delta };
        let mut out = self.clone();
        for i in 0..self.n {
            out.data[i * self.n + i] += load;
        }
        out
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.data[i * self.n + j] * v[j]).sum())
            .collect()
    }
}

/// Lower-triangular square root `L` with `L·Lᴴ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    data: Vec<C64>,
}

impl LowerTriangular {
    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| (0..=i).map(|j| self.data[i * self.n + j] * v[j]).sum())
            .collect()
    }

    /// Forward substitution for `L x = b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.n;
        let mut x = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.data[i * n + j] * x[j];
            }
            x[i] = acc / self.data[i * n + i].re;
        }
        x
    }

    /// `L·Lᴴ`, used to check reconstructions.
    pub fn reconstruct(&self) -> HermitianMatrix {
        let n = self.n;
        HermitianMatrix::from_upper(n, |i, j| {
            (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k).conj()).sum()
        })
    }

    /// `L⁻¹ A L⁻ᴴ`, Hermitian by construction.
    pub fn whiten(&self, a: &HermitianMatrix) -> HermitianMatrix {
        let n = self.n;
        // Y = L⁻¹ A, solved column by column
        let mut y = vec![C64::new(0.0, 0.0); n * n];
        let mut col = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = a.get(i, j);
            }
            for (i, v) in self.solve(&col).into_iter().enumerate() {
                y[i * n + j] = v;
            }
        }
        // W = L⁻¹ Yᴴ, since A = Aᴴ
        let mut w = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            for i in 0..n {
                col[i] = y[j * n + i].conj();
            }
            for (i, v) in self.solve(&col).into_iter().enumerate() {
                w[i * n + j] = v;
            }
        }
        HermitianMatrix::from_upper(n, |i, j| (w[i * n + j] + w[j * n + i].conj()) * 0.5)
    }
}

/// Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky_sqrt(m: &HermitianMatrix) -> Result<LowerTriangular> {
    let n = m.n;
    let mut l = vec![C64::new(0.0, 0.0); n * n];
    for j in 0..n {
        let mut d = m.get(j, j).re;
        for k in 0..j {
            d -= l[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, bin: None });
        }
        let djj = d.sqrt();
        l[j * n + j] = C64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k].conj();
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(LowerTriangular { n, data: l })
}

/// Eigenvalues and eigenvectors of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// `vectors[i]` belongs to `values[i]`; unit norm.
    pub vectors: Vec<Vec<C64>>,
}

/// Full eigendecomposition by cyclic complex Jacobi rotations.
pub fn eigh(m: &HermitianMatrix) -> Result<Eigen> {
    let n = m.n;
    let mut a = m.data.clone();
    let mut v = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        v[i * n + i] = C64::new(1.0, 0.0);
    }
    let scale = m.frobenius();
    let off = |a: &[C64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut converged = scale == 0.0 || n == 1;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                let mag = apq.norm();
                if mag <= f64::MIN_POSITIVE {
                    continue;
                }
                let phase = apq / mag;
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // J = diag(1, e^{-iφ}) · [[c, s], [−s, c]] on the (p, q) plane
                let jpp = C64::new(c, 0.0);
                let jpq = C64::new(s, 0.0);
                let jqp = -phase.conj() * s;
                let jqq = phase.conj() * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = akp * jpp + akq * jqp;
                    a[k * n + q] = akp * jpq + akq * jqq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = jpp.conj() * apk + jqp.conj() * aqk;
                    a[q * n + k] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                a[p * n + q] = C64::new(0.0, 0.0);
                a[q * n + p] = C64::new(0.0, 0.0);
                a[p * n + p].im = 0.0;
                a[q * n + q].im = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = vkp * jpp + vkq * jqp;
                    v[k * n + q] = vkp * jpq + vkq * jqq;
                }
            }
        }
        converged = off(&a) <= JACOBI_TOL * scale;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].re.total_cmp(&a[j * n + j].re));
    Ok(Eigen {
        values: order.iter().map(|&i| a[i * n + i].re).collect(),
        vectors: order
            .iter()
            .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
            .collect(),
    })
}

/// Rotates `v` so that its largest-magnitude entry is real and positive.
pub fn fix_phase(v: &mut [C64]) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    if best_mag > 0.0 {
        let rot = v[best].conj() / best_mag;
        for z in v.iter_mut() {
            *z *= rot;
        }
        v[best].im = 0.0;
    }
}

/// Largest eigenvalue with its unit eigenvector (phase-fixed).
pub fn principal_eigenpair(m: &HermitianMatrix) -> Result<(f64, Vec<C64>)> {
    let mut e = eigh(m)?;
    let value = *e.values.last().expect("order >= 1");
    let mut vec = e.vectors.pop().expect("order >= 1");
    fix_phase(&mut vec);
    Ok((value, vec))
}

pub fn principal_eigenvector(m: &HermitianMatrix) -> Result<Vec<C64>> {
    principal_eigenpair(m).map(|(_, v)| v)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn pd_matrix() -> impl Strategy<Value = HermitianMatrix> {
        (1usize..9).prop_flat_map(|n| {
            prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n * (n + 1)).prop_map(move |raw| {
                let cols: Vec<Vec<C64>> = raw.chunks(n).map(|c| c.iter().map(|&(r, i)| C64::new(r, i)).collect()).collect();
                let m = HermitianMatrix::from_upper(n, |i, j| cols.iter().map(|v| v[i] * v[j].conj()).sum());
                m.add(&HermitianMatrix::identity(n).scaled(1e-3)).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cholesky_reconstructs(m in pd_matrix()) {
            let l = cholesky_sqrt(&m).unwrap();
            let err = l.reconstruct().add(&m.scaled(-1.0)).unwrap().frobenius();
            prop_assert!(err <= 1e-8 * m.frobenius());
            prop_assert!(m.hermitian_deviation() <= 1e-10 * m.max_abs());
        }

        #[test]
        fn principal_vector_ignores_positive_scale(m in pd_matrix(), s in 1e-3..1e3f64) {
            let (l0, v0) = principal_eigenpair(&m).unwrap();
            let v1 = principal_eigenvector(&m.scaled(s)).unwrap();
            // only a separated top eigenvalue has a well-defined direction
            let vals = eigh(&m).unwrap().values;
            prop_assume!(vals.len() == 1 || l0 - vals[vals.len() - 2] > 1e-6 * l0);
            let overlap: C64 = v0.iter().zip(&v1).map(|(a, b)| a.conj() * b).sum();
            prop_assert!((overlap.norm() - 1.0).abs() <= 1e-8);
        }
    }
}
