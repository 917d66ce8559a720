//! Small complex dense linear algebra.
//!
//! Everything here works in `f64` and sums in ascending index order, so
//! results are reproducible bit-for-bit across runs. The only factorization
//! offered is the dominant left singular pair, computed by power iteration on
//! `H·Hᴴ`.

use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};

/// Dense complex vector with at least one entry and no NaN/Inf values.
#[derive(Debug, Clone, PartialEq)]
pub struct CVec(Vec<Complex64>);

impl CVec {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("vector must have at least one entry".into()));
        }
        if let Some(i) = entries.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidArgument(format!("non-finite entry at index {i}")));
        }
        Ok(Self(entries))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len >= 1, "CVec length must be positive");
        Self(vec![Complex64::new(0.0, 0.0); len])
    }

    /// Unit basis vector `e_index`.
    pub fn basis(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[index] = Complex64::new(1.0, 0.0);
        v
    }

    /// Builds a vector from `[re_0, .., re_{n-1}, im_0, .., im_{n-1}]`.
    pub fn from_stacked(stacked: &[f64]) -> Result<Self> {
        if stacked.len() % 2 != 0 {
            return Err(Error::InvalidArgument("stacked length must be even".into()));
        }
        let n = stacked.len() / 2;
        Self::new((0..n).map(|i| Complex64::new(stacked[i], stacked[n + i])).collect())
    }

    /// Real parts followed by imaginary parts.
    pub fn to_stacked(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.re).chain(self.0.iter().map(|z| z.im)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        Self(self.0.iter().map(|z| z * alpha).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }
}

impl std::ops::Index<usize> for CVec {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    entries: Vec<Complex64>,
    rows: usize,
    cols: usize,
}

impl CMat {
    pub fn new(rows: usize, cols: usize, entries: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
        }
        check_dim(rows * cols, entries.len())?;
        if entries.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { entries, rows, cols })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            entries[i * n + i] = Complex64::new(1.0, 0.0);
        }
        Self { entries, rows: n, cols: n }
    }

    pub fn from_columns(columns: &[CVec]) -> Result<Self> {
        let first = columns.first().ok_or_else(|| Error::InvalidArgument("no columns".into()))?;
        let rows = first.len();
        let cols = columns.len();
        let mut entries = vec![Complex64::new(0.0, 0.0); rows * cols];
        for (j, col) in columns.iter().enumerate() {
            check_dim(rows, col.len())?;
            for (i, z) in col.as_slice().iter().enumerate() {
                entries[i * cols + j] = *z;
            }
        }
        Ok(Self { entries, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.entries[r * self.cols + c]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn column(&self, j: usize) -> CVec {
        CVec((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        Self {
            entries: self.entries.iter().map(|z| z * alpha).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// `M·x`.
    pub fn matvec(&self, x: &CVec) -> Result<CVec> {
        check_dim(self.cols, x.len())?;
        let out = (0..self.rows)
            .map(|i| {
                let row = &self.entries[i * self.cols..(i + 1) * self.cols];
                row.iter()
                    .zip(x.as_slice())
                    .fold(Complex64::new(0.0, 0.0), |acc, (m, v)| acc + m * v)
            })
            .collect();
        Ok(CVec(out))
    }
}

/// Hermitian inner product `aᴴb = Σ conj(a_j)·b_j`.
pub fn cdot(a: &CVec, b: &CVec) -> Result<Complex64> {
    check_dim(a.len(), b.len())?;
    Ok(cdot_slices(a.as_slice(), b.as_slice()))
}

pub(crate) fn cdot_slices(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

/// `Mᴴ·x`; entry `j` is `cdot(column_j(M), x)` with the same summation order.
pub fn matvec_adjoint(m: &CMat, x: &CVec) -> Result<CVec> {
    check_dim(m.rows, x.len())?;
    let mut out = vec![Complex64::new(0.0, 0.0); m.cols];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..m.rows {
            acc += m.get(i, j).conj() * x[i];
        }
        *o = acc;
    }
    Ok(CVec(out))
}

/// Rotates `u` so that its largest-modulus entry (lowest index on ties) is
/// real and nonnegative.
pub fn phase_normalize(u: &CVec) -> CVec {
    let mut best = 0;
    let mut best_mod = u[0].norm();
    for (i, z) in u.as_slice().iter().enumerate().skip(1) {
        let m = z.norm();
        if m > best_mod {
            best = i;
            best_mod = m;
        }
    }
    if best_mod == 0.0 {
        return u.clone();
    }
    let rot = u[best].conj() / best_mod;
    let mut out = u.scale(rot);
    out.0[best] = Complex64::new(best_mod, 0.0);
    out
}

fn normalized(v: Vec<Complex64>) -> Option<CVec> {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    (n > 0.0).then(|| CVec(v.into_iter().map(|z| z / n).collect()))
}

/// Dominant left singular pair `(u, sigma)` of `h`, by power iteration on
/// `H·Hᴴ`.
///
/// The iteration starts from the normalized all-ones vector. If `Hᴴ` maps
/// the start to zero it restarts from `e_0`, then from the basis vector of
/// the row with the largest norm (which always has a nonzero image).
/// Convergence is declared once `‖H·Hᴴu − σ²u‖ ≤ tol·σ²`. The returned `u`
/// is phase normalized and `sigma = ‖Hᴴu‖`.
pub fn dominant_left_sv(h: &CMat, tol: f64, max_iter: usize) -> Result<(CVec, f64)> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument("tol must be > 0 and max_iter >= 1".into()));
    }
    if h.entries.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let n = h.rows;
    let starts = {
        let heaviest = (0..n)
            .map(|i| {
                let row = &h.entries[i * h.cols..(i + 1) * h.cols];
                (i, row.iter().map(|z| z.norm_sqr()).sum::<f64>())
            })
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        [
            CVec(vec![Complex64::new(1.0 / (n as f64).sqrt(), 0.0); n]),
            CVec::basis(n, 0),
            CVec::basis(n, heaviest),
        ]
    };

    let mut v = None;
    for s in starts {
        let w = matvec_adjoint(h, &s)?;
        if w.norm() > 0.0 {
            v = Some(s);
            break;
        }
    }
    let mut v = v.expect("nonzero matrix has a row with a nonzero image");

    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let w = matvec_adjoint(h, &v)?;
        let lambda = w.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>();
        let z = h.matvec(&w)?;
        residual = z
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| (a - b * lambda).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / lambda;
        if residual <= tol {
            let u = phase_normalize(&v);
            let sigma = matvec_adjoint(h, &u)?.norm();
            return Ok((u, sigma));
        }
        v = match normalized(z.0) {
            Some(next) => next,
            None => break,
        };
    }
    let u = phase_normalize(&v);
    let sigma = matvec_adjoint(h, &u)?.norm();
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
        last: Box::new((u, sigma)),
    })
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let fp = f(&probe);
            probe[j] = x[j] - h;
            let fm = f(&probe);
            probe[j] = x[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::new((0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
            .unwrap()
    }

    fn random_cmat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
        let e = (0..rows * cols)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        CMat::new(rows, cols, e).unwrap()
    }

    /// Cyclic Jacobi eigen-decomposition of a real symmetric matrix.
    /// Returns eigenvalues and eigenvectors (as columns of a row-major matrix).
    fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i * n + j] * a[i * n + j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let cs = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * cs;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = cs * akp - sn * akq;
                        a[k * n + q] = sn * akp + cs * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = cs * apk - sn * aqk;
                        a[q * n + k] = sn * apk + cs * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = cs * vkp - sn * vkq;
                        v[k * n + q] = sn * vkp + cs * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i * n + i]).collect(), v)
    }

    #[test]
    fn cdot_examples() {
        let e1 = CVec::basis(3, 0);
        assert_eq!(cdot(&e1, &e1).unwrap(), c(1.0, 0.0));
        let a = CVec::new(vec![c(1.0, 1.0)]).unwrap();
        assert_eq!(cdot(&a, &a).unwrap(), c(2.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_cvec(&mut rng, 7);
            let b = random_cvec(&mut rng, 7);
            let ab = cdot(&a, &b).unwrap();
            let ba = cdot(&b, &a).unwrap();
            assert!((ab - ba.conj()).norm() < 1e-14);
            let aa = cdot(&a, &a).unwrap();
            assert_eq!(aa.im, 0.0);
            assert!(aa.re > 0.0);
        }
        assert_eq!(cdot(&CVec::zeros(4), &CVec::zeros(4)).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn cdot_dimension_mismatch() {
        let err = cdot(&CVec::zeros(2), &CVec::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, actual: 3 }));
    }

    #[test]
    fn cvec_rejects_bad_input() {
        assert!(CVec::new(vec![]).is_err());
        assert!(CVec::new(vec![c(f64::NAN, 0.0)]).is_err());
        assert!(CMat::new(2, 2, vec![c(0.0, 0.0); 3]).is_err());
    }

    #[test]
    fn matvec_adjoint_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_cvec(&mut rng, 3);
        assert_eq!(matvec_adjoint(&CMat::identity(3), &x).unwrap(), x);

        let u = {
            let v = random_cvec(&mut rng, 5);
            v.scale(c(1.0 / v.norm(), 0.0))
        };
        let m = CMat::from_columns(&[u.clone()]).unwrap();
        let out = matvec_adjoint(&m, &u).unwrap();
        assert!((out[0] - c(1.0, 0.0)).norm() < 1e-15);

        let m = random_cmat(&mut rng, 3, 4);
        let x = random_cvec(&mut rng, 3);
        let out = matvec_adjoint(&m, &x).unwrap();
        for j in 0..4 {
            let direct = cdot(&m.column(j), &x).unwrap();
            assert!((out[j] - direct).norm() < 1e-14);
            // same summation order, so equality is exact
            assert_eq!(out[j], direct);
        }
        assert!(matvec_adjoint(&m, &CVec::zeros(4)).is_err());
    }

    #[test]
    fn dominant_sv_identity() {
        let h = CMat::identity(3);
        let (u, sigma) = dominant_left_sv(&h, 1e-10, 100).unwrap();
        assert!((sigma - 1.0).abs() < 1e-12);
        assert!((u.norm() - 1.0).abs() < 1e-12);
        let check = matvec_adjoint(&h, &u).unwrap().norm();
        assert!((check - sigma).abs() <= 1e-10 * sigma);
    }

    #[test]
    fn dominant_sv_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u0 = random_cvec(&mut rng, 4);
        let u0 = u0.scale(c(1.0 / u0.norm(), 0.0));
        let v0 = random_cvec(&mut rng, 6);
        let v0 = v0.scale(c(1.0 / v0.norm(), 0.0));
        let mut e = Vec::new();
        for i in 0..4 {
            for j in 0..6 {
                e.push(u0[i] * v0[j].conj());
            }
        }
        let h = CMat::new(4, 6, e).unwrap();
        let (u, sigma) = dominant_left_sv(&h, 1e-10, 100).unwrap();
        assert!((sigma - 1.0).abs() < 1e-12);
        let expected = phase_normalize(&u0);
        for i in 0..4 {
            assert!((u[i] - expected[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn dominant_sv_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let h = random_cmat(&mut rng, 4, 3);
            // Gram matrix G = H Hᴴ, realified as [[Re, -Im], [Im, Re]] (8×8 symmetric)
            let n = 4;
            let mut g = vec![c(0.0, 0.0); n * n];
            for i in 0..n {
                for j in 0..n {
                    g[i * n + j] = (0..3).map(|k| h.get(i, k) * h.get(j, k).conj()).sum();
                }
            }
            let m = 2 * n;
            let mut real = vec![0.0; m * m];
            for i in 0..n {
                for j in 0..n {
                    real[i * m + j] = g[i * n + j].re;
                    real[i * m + n + j] = -g[i * n + j].im;
                    real[(n + i) * m + j] = g[i * n + j].im;
                    real[(n + i) * m + n + j] = g[i * n + j].re;
                }
            }
            let (vals, vecs) = jacobi_eigen(real, m);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
            // top eigenvalue appears twice: span{[Re u; Im u], [-Im u; Re u]}
            let top = [order[0], order[1]];
            assert!((vals[top[0]] - vals[top[1]]).abs() < 1e-10);

            let (u, sigma) = dominant_left_sv(&h, 1e-10, 10_000).unwrap();
            assert!((sigma * sigma - vals[top[0]]).abs() < 1e-9 * vals[top[0]]);
            let x: Vec<f64> = u.to_stacked();
            let mut rest = x.clone();
            for &col in &top {
                let coef: f64 = (0..m).map(|r| vecs[r * m + col] * x[r]).sum();
                for r in 0..m {
                    rest[r] -= coef * vecs[r * m + col];
                }
            }
            let sin_angle = rest.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(sin_angle < 1e-8, "subspace angle {sin_angle}");
        }
    }

    #[test]
    fn dominant_sv_errors() {
        let z = CMat::new(2, 2, vec![c(0.0, 0.0); 4]).unwrap();
        assert!(matches!(dominant_left_sv(&z, 1e-10, 10), Err(Error::ZeroMatrix)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_cmat(&mut rng, 5, 5);
        match dominant_left_sv(&h, 1e-14, 1) {
            Err(Error::NotConverged { last, .. }) => assert!((last.0.norm() - 1.0).abs() < 1e-12),
            other => panic!("expected NotConverged, got {other:?}"),
        }
        assert!(dominant_left_sv(&h, 0.0, 10).is_err());
    }

    #[test]
    fn dominant_sv_restarts_when_ones_is_orthogonal() {
        // Hᴴ·1 = 0: rows cancel
        let h = CMat::new(2, 1, vec![c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let (u, sigma) = dominant_left_sv(&h, 1e-12, 100).unwrap();
        assert!((sigma - 2f64.sqrt()).abs() < 1e-12);
        assert!((u[0] - c(0.5f64.sqrt(), 0.0)).norm() < 1e-12);

        // 1 and e_0 both in the null space of Hᴴ
        let h = CMat::new(3, 1, vec![c(0.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let (_, sigma) = dominant_left_sv(&h, 1e-12, 100).unwrap();
        assert!((sigma - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dominant_sv_scale_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_cmat(&mut rng, 6, 4);
        let (u1, s1) = dominant_left_sv(&h, 1e-12, 10_000).unwrap();
        let (u2, s2) = dominant_left_sv(&h.scale(c(3.5, 0.0)), 1e-12, 10_000).unwrap();
        assert!((s2 - 3.5 * s1).abs() < 1e-10 * s2);
        for i in 0..6 {
            assert!((u1[i] - u2[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn phase_normalize_tie_lowest_index() {
        let u = CVec::new(vec![c(0.0, 1.0), c(-1.0, 0.0)]).unwrap();
        let p = phase_normalize(&u);
        assert_eq!(p[0], c(1.0, 0.0));
        assert!((p[1] - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 4.2, &[1.0, 2.0, 3.0], 1e-5);
        assert_eq!(g, vec![0.0; 3]);
        // |s| over re/im stacking at s = 3 + 4j
        let g = finite_diff_grad(|x| (x[0] * x[0] + x[1] * x[1]).sqrt(), &[3.0, 4.0], 1e-6);
        assert!((g[0] - 0.6).abs() < 1e-9);
        assert!((g[1] - 0.8).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn dominant_sv_unit_norm(seed in 0u64..1000, rows in 1usize..6, cols in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_cmat(&mut rng, rows, cols);
            let (u, sigma) = match dominant_left_sv(&h, 1e-10, 100_000) {
                Ok(r) => r,
                Err(Error::NotConverged { last, .. }) => *last,
                Err(e) => panic!("{e}"),
            };
            proptest::prop_assert!((u.norm() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(sigma >= 0.0);
            let m = u.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max);
            let first_max = u.as_slice().iter().find(|z| z.norm() == m).unwrap();
            proptest::prop_assert!(first_max.im == 0.0 && first_max.re >= 0.0);
        }
    }
}
