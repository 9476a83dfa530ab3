//! Singular value decomposition and beamforming feedback matrices.
//!
//! The feedback matrix for a subcarrier is the right-singular matrix `V` of
//! its CSI, with each column's phase fixed so that its last entry is real and
//! nonnegative.

use std::cmp::Ordering;

use rand::Rng;

use crate::channel::{complex_gaussian, CsiTensor};
use crate::cmatrix::{vec_norm, CMatrix, C64};

const JACOBI_MAX_SWEEPS: usize = 80;
/// Below this magnitude the last-row anchor is treated as zero.
pub const ANCHOR_EPS: f64 = 1e-12;
/// Input unitarity tolerance of [`normalize_phase`].
pub const UNITARY_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BfmError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not unitary (residual {residual:e})")]
    NotUnitary { residual: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// `H = U · diag(sigma) · V^H`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdResult {
    pub u: CMatrix,
    /// `min(rows, cols)` singular values, descending.
    pub sigma: Vec<f64>,
    pub v: CMatrix,
}

impl SvdResult {
    pub fn sigma_matrix(&self) -> CMatrix {
        CMatrix::diag(&self.sigma, self.u.rows, self.v.rows)
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.u.matmul(&self.sigma_matrix()).matmul(&self.v.adjoint())
    }
}

/// SVD of an arbitrary complex matrix. 2x2 inputs take the closed-form path.
pub fn svd(h: &CMatrix) -> Result<SvdResult, BfmError> {
    if !h.is_finite() {
        return Err(BfmError::NonFinite);
    }
    if h.rows == 2 && h.cols == 2 {
        Ok(svd_2x2(h))
    } else {
        Ok(svd_jacobi(h))
    }
}

/// One-sided (Hestenes) Jacobi SVD. Works for any shape.
pub fn svd_jacobi(h: &CMatrix) -> SvdResult {
    let (m, n) = (h.rows, h.cols);
    let mut a = h.clone();
    let mut v = CMatrix::identity(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, C64::new(0.0, 0.0));
                for i in 0..m {
                    let (ap, aq) = (a[(i, p)], a[(i, q)]);
                    alpha += ap.norm_sqr();
                    beta += aq.norm_sqr();
                    gamma += ap.conj() * aq;
                }
                let g = gamma.norm();
                if g == 0.0 || g <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotate column q by e^{-jφ} so the pair's inner product is real,
                // then apply a real Jacobi rotation.
                let unphase = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.rows {
                        let xp = mat[(i, p)];
                        let xq = mat[(i, q)] * unphase;
                        mat[(i, p)] = xp * c - xq * s;
                        mat[(i, q)] = xp * s + xq * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| vec_norm(&a.column(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let k = m.min(n);
    let vn = CMatrix::from_rows(n, n, {
        let mut d = vec![C64::new(0.0, 0.0); n * n];
        for (dst, &src) in order.iter().enumerate() {
            for i in 0..n {
                d[i * n + dst] = v[(i, src)];
            }
        }
        d
    });
    let sigma: Vec<f64> = order.iter().take(k).map(|&j| norms[j]).collect();
    let tol = f64::EPSILON * m.max(n) as f64 * sigma.first().copied().unwrap_or(0.0);
    let mut ucols: Vec<Vec<C64>> = Vec::with_capacity(m);
    for (idx, &j) in order.iter().take(k).enumerate() {
        if sigma[idx] > tol {
            let col: Vec<C64> = a.column(j).iter().map(|x| x / sigma[idx]).collect();
            ucols.push(orthonormalize(&col, &ucols).unwrap_or(col));
        } else {
            break;
        }
    }
    complete_basis(&mut ucols, m);
    let mut u = CMatrix::zeros(m, m);
    for (j, col) in ucols.iter().enumerate() {
        u.set_column(j, col);
    }
    let mut out = SvdResult { u, sigma, v: vn };
    break_ties(&mut out);
    out
}

/// Gram-Schmidt one vector against an orthonormal set; `None` if it vanishes.
fn orthonormalize(x: &[C64], basis: &[Vec<C64>]) -> Option<Vec<C64>> {
    let mut w = x.to_vec();
    for _ in 0..2 {
        for b in basis {
            let proj: C64 = b.iter().zip(&w).map(|(bi, wi)| bi.conj() * wi).sum();
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= proj * bi;
            }
        }
    }
    let nrm = vec_norm(&w);
    (nrm > 1e-8).then(|| w.iter().map(|v| v / nrm).collect())
}

/// Extend an orthonormal set to a basis of `C^m` using the standard basis.
fn complete_basis(cols: &mut Vec<Vec<C64>>, m: usize) {
    let mut e = 0;
    while cols.len() < m && e < m {
        let mut unit = vec![C64::new(0.0, 0.0); m];
        unit[e] = C64::new(1.0, 0.0);
        if let Some(c) = orthonormalize(&unit, cols) {
            cols.push(c);
        }
        e += 1;
    }
}

/// Within runs of equal singular values, order columns lexicographically by
/// their phase-normalized right-singular vectors.
fn break_ties(r: &mut SvdResult) {
    let k = r.sigma.len();
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        let scale = r.sigma[0].max(f64::MIN_POSITIVE);
        while end < k && (r.sigma[start] - r.sigma[end]).abs() <= 1e-12 * scale {
            end += 1;
        }
        if end - start > 1 {
            let key = |j: usize| -> Vec<f64> {
                let mut col = r.v.column(j);
                normalize_column(&mut col);
                col.iter().flat_map(|c| [c.re, c.im]).collect()
            };
            let mut idx: Vec<usize> = (start..end).collect();
            idx.sort_by(|&x, &y| {
                key(x).iter().zip(key(y).iter()).map(|(a, b)| b.total_cmp(a)).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
            });
            let (u0, v0) = (r.u.clone(), r.v.clone());
            for (dst, &src) in (start..end).zip(&idx) {
                r.u.set_column(dst, &u0.column(src));
                r.v.set_column(dst, &v0.column(src));
            }
        }
        start = end;
    }
}

/// Closed-form SVD of a 2x2 matrix via the eigen-decomposition of `H^H H`.
pub fn svd_2x2(h: &CMatrix) -> SvdResult {
    debug_assert!(h.rows == 2 && h.cols == 2);
    let (h11, h12, h21, h22) = (h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]);
    let a = h11.norm_sqr() + h21.norm_sqr();
    let d = h12.norm_sqr() + h22.norm_sqr();
    let b = h11.conj() * h12 + h21.conj() * h22;
    let half_gap = ((a - d) / 2.0).hypot(b.norm());
    let lambda1 = (a + d) / 2.0 + half_gap;
    let sigma1 = lambda1.max(0.0).sqrt();
    let det = (h11 * h22 - h12 * h21).norm();
    let sigma2 = if sigma1 > 0.0 { (det / sigma1).min(sigma1) } else { 0.0 };

    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let v1 = if b.norm() == 0.0 {
        if a >= d { [one, zero] } else { [zero, one] }
    } else {
        let r1 = [b, C64::new(lambda1 - a, 0.0)];
        let r2 = [C64::new(lambda1 - d, 0.0), b.conj()];
        let pick = if vec_norm(&r1) >= vec_norm(&r2) { r1 } else { r2 };
        let nrm = vec_norm(&pick);
        [pick[0] / nrm, pick[1] / nrm]
    };
    let v2 = [-v1[1].conj(), v1[0].conj()];
    let hv1 = [h11 * v1[0] + h12 * v1[1], h21 * v1[0] + h22 * v1[1]];
    let u1 = if sigma1 > 0.0 {
        let nrm = vec_norm(&hv1);
        [hv1[0] / nrm, hv1[1] / nrm]
    } else {
        [one, zero]
    };
    let comp = [-u1[1].conj(), u1[0].conj()];
    let hv2 = [h11 * v2[0] + h12 * v2[1], h21 * v2[0] + h22 * v2[1]];
    let proj = comp[0].conj() * hv2[0] + comp[1].conj() * hv2[1];
    let phase = if proj.norm() > 0.0 { proj / proj.norm() } else { one };
    let u2 = [comp[0] * phase, comp[1] * phase];

    let u = CMatrix::from_rows(2, 2, vec![u1[0], u2[0], u1[1], u2[1]]);
    let v = CMatrix::from_rows(2, 2, vec![v1[0], v2[0], v1[1], v2[1]]);
    let mut out = SvdResult { u, sigma: vec![sigma1, sigma2], v };
    break_ties(&mut out);
    out
}

/// Index of the phase anchor of a column: its last entry, or the first
/// largest-magnitude entry when the last one is (numerically) zero.
fn anchor_index(col: &[C64]) -> usize {
    let last = col.len() - 1;
    if col[last].norm() >= ANCHOR_EPS {
        return last;
    }
    let mut best = 0;
    for (i, v) in col.iter().enumerate() {
        if v.norm() > col[best].norm() {
            best = i;
        }
    }
    best
}

fn normalize_column(col: &mut [C64]) {
    let k = anchor_index(col);
    let mag = col[k].norm();
    if mag == 0.0 {
        return;
    }
    let rot = col[k].conj() / mag;
    for v in col.iter_mut() {
        *v *= rot;
    }
    col[k] = C64::new(mag, 0.0);
}

/// Rotate each column by a unit-modulus scalar so its anchor entry is real
/// and nonnegative. Idempotent.
pub fn normalize_phase(v: &CMatrix) -> Result<CMatrix, BfmError> {
    if !v.is_finite() {
        return Err(BfmError::NonFinite);
    }
    if v.rows != v.cols {
        return Err(BfmError::Shape(format!("feedback matrix must be square, got {}x{}", v.rows, v.cols)));
    }
    let residual = v.unitarity_residual();
    if residual > UNITARY_TOL {
        return Err(BfmError::NotUnitary { residual });
    }
    let mut out = v.clone();
    for j in 0..v.cols {
        let mut col = v.column(j);
        normalize_column(&mut col);
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Phase-normalized right-singular matrices for all subcarriers, indexed `(k, row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BfmTensor {
    pub n_tx: usize,
    pub subcarriers: Vec<i32>,
    pub v: Vec<C64>,
}

impl BfmTensor {
    pub fn n_subcarriers(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn matrix(&self, k: usize) -> CMatrix {
        let n = self.n_tx * self.n_tx;
        CMatrix::from_rows(self.n_tx, self.n_tx, self.v[k * n..(k + 1) * n].to_vec())
    }
}

pub fn compute_bfm(csi: &CsiTensor) -> Result<BfmTensor, BfmError> {
    let mut v = Vec::with_capacity(csi.n_subcarriers() * csi.n_tx * csi.n_tx);
    for k in 0..csi.n_subcarriers() {
        let s = svd(&csi.matrix(k))?;
        v.extend(normalize_phase(&s.v)?.data);
    }
    Ok(BfmTensor { n_tx: csi.n_tx, subcarriers: csi.subcarriers.clone(), v })
}

/// Eigenbeam transmission: precode with `V`, pass through `H` plus noise, and
/// decode with `U^H`. Without noise the result equals `diag(sigma) · x`.
pub fn esdm_shape<R: Rng + ?Sized>(h: &CMatrix, x: &[C64], noise_var: f64, rng: &mut R) -> Result<Vec<C64>, BfmError> {
    if x.len() != h.cols {
        return Err(BfmError::Shape(format!("x has {} entries, H has {} columns", x.len(), h.cols)));
    }
    let s = svd(h)?;
    let mut y = h.matvec(&s.v.matvec(x));
    if noise_var > 0.0 {
        for v in &mut y {
            *v += complex_gaussian(rng, noise_var);
        }
    }
    Ok(s.u.adjoint().matvec(&y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = stream(seed, Domain::Realization, 99);
        CMatrix::from_rows(rows, cols, (0..rows * cols).map(|_| complex_gaussian(&mut rng, 1.0)).collect())
    }

    #[test]
    fn identity_and_anti_diagonal() {
        let s = svd(&CMatrix::identity(2)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0]);
        assert!(s.reconstruct().sub(&CMatrix::identity(2)).frobenius() < 1e-15);
        let h = CMatrix::from_real(2, 2, &[0.0, 2.0, 1.0, 0.0]);
        for r in [svd(&h).unwrap(), svd_jacobi(&h)] {
            assert!((r.sigma[0] - 2.0).abs() < 1e-14 && (r.sigma[1] - 1.0).abs() < 1e-14);
            assert!(r.reconstruct().sub(&h).frobenius() < 1e-14);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut h = CMatrix::identity(2);
        h[(0, 1)] = c(f64::NAN, 0.0);
        assert_eq!(svd(&h), Err(BfmError::NonFinite));
    }

    #[test]
    fn rectangular_shapes() {
        for (m, n) in [(1, 1), (1, 3), (3, 1), (2, 3), (3, 2), (4, 4)] {
            let h = random_matrix(m, n, (m * 10 + n) as u64);
            let s = svd(&h).unwrap();
            assert_eq!(s.sigma.len(), m.min(n));
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.reconstruct().sub(&h).frobenius() < 1e-12 * h.frobenius().max(1.0), "{m}x{n}");
            assert!(s.u.unitarity_residual() < 1e-12);
            assert!(s.v.unitarity_residual() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_matrix() {
        let h = CMatrix::from_rows(2, 2, vec![c(1.0, 1.0), c(2.0, 2.0), c(0.5, -0.5), c(1.0, -1.0)]);
        for s in [svd_2x2(&h), svd_jacobi(&h)] {
            assert!(s.sigma[1] < 1e-12);
            assert!(s.u.unitarity_residual() < 1e-12);
            assert!(s.reconstruct().sub(&h).frobenius() < 1e-12);
        }
        let z = CMatrix::zeros(2, 2);
        let s = svd(&z).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        assert!(s.u.unitarity_residual() < 1e-15 && s.v.unitarity_residual() < 1e-15);
    }

    #[test]
    fn normalize_phase_examples() {
        let i2 = CMatrix::identity(2);
        assert_eq!(normalize_phase(&i2).unwrap(), i2);
        let mut rotated = i2.clone();
        rotated[(0, 0)] = C64::from_polar(1.0, std::f64::consts::PI / 3.0);
        let n = normalize_phase(&rotated).unwrap();
        assert!(n.sub(&i2).frobenius() < 1e-15);
        // Column (1, 0)·e^{j0.7}: last entry is zero, fallback anchors the first.
        let mut col = vec![C64::from_polar(1.0, 0.7), c(0.0, 0.0)];
        normalize_column(&mut col);
        assert_eq!(col, vec![c(1.0, 0.0), c(0.0, 0.0)]);
        assert!(matches!(normalize_phase(&CMatrix::from_real(2, 2, &[1.0, 1.0, 0.0, 1.0])), Err(BfmError::NotUnitary { .. })));
    }

    #[test]
    fn esdm_examples() {
        let mut rng = stream(0, Domain::Noise, 0);
        let r = esdm_shape(&CMatrix::identity(2), &[c(1.0, 0.0), c(2.0, 0.0)], 0.0, &mut rng).unwrap();
        assert!((r[0] - c(1.0, 0.0)).norm() < 1e-12 && (r[1] - c(2.0, 0.0)).norm() < 1e-12);
        let r = esdm_shape(&CMatrix::diag(&[3.0, 2.0], 2, 2), &[c(1.0, 0.0), c(1.0, 0.0)], 0.0, &mut rng).unwrap();
        assert!((r[0] - c(3.0, 0.0)).norm() < 1e-12 && (r[1] - c(2.0, 0.0)).norm() < 1e-12);
        assert!(esdm_shape(&CMatrix::identity(2), &[c(1.0, 0.0)], 0.0, &mut rng).is_err());
    }

    /// Singular values of a 2x2 matrix from the characteristic polynomial of
    /// `H^H H`: `λ² − tr·λ + det = 0`.
    fn char_poly_sigma(h: &CMatrix) -> [f64; 2] {
        let g = h.adjoint().matmul(h);
        let tr = g[(0, 0)].re + g[(1, 1)].re;
        let det = (g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)]).re;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        [(tr / 2.0 + disc).sqrt(), (tr / 2.0 - disc).max(0.0).sqrt()]
    }

    #[test]
    fn sigma_matches_characteristic_polynomial() {
        for seed in 0..500 {
            let h = random_matrix(2, 2, seed);
            let s = svd(&h).unwrap();
            let want = char_poly_sigma(&h);
            assert!((s.sigma[0] - want[0]).abs() < 1e-9 && (s.sigma[1] - want[1]).abs() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn closed_form_matches_jacobi_on_many_inputs() {
        let mut rng = stream(12, Domain::Realization, 0);
        for _ in 0..10_000 {
            let h = CMatrix::from_rows(2, 2, (0..4).map(|_| complex_gaussian(&mut rng, 1.0)).collect());
            let (a, b) = (svd_2x2(&h), svd_jacobi(&h));
            assert!((a.sigma[0] - b.sigma[0]).abs() < 1e-9 && (a.sigma[1] - b.sigma[1]).abs() < 1e-9);
            // Singular vectors agree once both are phase-normalized.
            let (va, vb) = (normalize_phase(&a.v).unwrap(), normalize_phase(&b.v).unwrap());
            if a.sigma[0] - a.sigma[1] > 1e-6 {
                assert!(va.sub(&vb).frobenius() < 1e-9, "{:?} vs {:?}", va, vb);
            }
            assert!(a.reconstruct().sub(&h).frobenius() < 1e-9 * h.frobenius());
        }
    }

    #[test]
    fn agrees_with_nalgebra() {
        for (m, n, seed) in [(2, 2, 1), (3, 3, 2), (4, 2, 3), (2, 4, 4), (4, 4, 5)] {
            let h = random_matrix(m, n, seed);
            let na = nalgebra::DMatrix::from_fn(m, n, |i, j| h[(i, j)]);
            let mut want: Vec<f64> = na.svd(false, false).singular_values.iter().copied().collect();
            want.sort_by(|a, b| b.total_cmp(a));
            let got = svd(&h).unwrap().sigma;
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10, "{m}x{n}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn bfm_scale_invariance() {
        let profile = crate::channel::load_profile("model-b").unwrap();
        let config = crate::channel::SimConfig::default();
        let csi = crate::channel::simulate_csi(&profile, &config, 3);
        let base = compute_bfm(&csi).unwrap();
        for c in [0.25, 3.0, 1e3] {
            let scaled = compute_bfm(&csi.scaled(c)).unwrap();
            let diff = base.v.iter().zip(&scaled.v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-9, "scale {c}: {diff}");
        }
        let ident = CsiTensor { n_rx: 2, n_tx: 2, subcarriers: vec![1, 2, 3], h: CMatrix::identity(2).data.repeat(3) };
        let b = compute_bfm(&ident).unwrap();
        assert_eq!(b.v, CMatrix::identity(2).data.repeat(3));
        assert_eq!(b.subcarriers, vec![1, 2, 3]);
    }

    #[test]
    fn bfm_invariants_over_draws() {
        let profile = crate::channel::load_profile("model-b").unwrap();
        let config = crate::channel::SimConfig::default();
        for index in 0..1000u64 {
            let csi = crate::channel::simulate_csi(&profile, &config, index);
            // One subcarrier per draw keeps the check fast; rotate through bins.
            let k = (index as usize * 37) % csi.n_subcarriers();
            let one = CsiTensor { subcarriers: vec![csi.subcarriers[k]], h: csi.matrix(k).data, ..csi.clone() };
            let bfm = compute_bfm(&one).unwrap();
            let v = bfm.matrix(0);
            assert!(v.unitarity_residual() < 1e-9);
            for col in 0..2 {
                let anchor = if v[(1, col)].norm() >= 1e-12 { v[(1, col)] } else { v[(0, col)] };
                assert!(anchor.im.abs() < 1e-12 && anchor.re >= 0.0, "draw {index}");
            }
        }
    }

    #[test]
    fn esdm_diagonalizes_random_channels() {
        let mut rng = stream(4, Domain::Noise, 1);
        for seed in 0..200 {
            let h = random_matrix(2, 2, 1000 + seed);
            let x = vec![complex_gaussian(&mut rng, 1.0), complex_gaussian(&mut rng, 1.0)];
            let r = esdm_shape(&h, &x, 0.0, &mut rng).unwrap();
            let s = svd(&h).unwrap();
            let err: f64 = (0..2).map(|i| (r[i] - x[i] * s.sigma[i]).norm_sqr()).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * vec_norm(&x));
            let d = s.u.adjoint().matmul(&h).matmul(&s.v).sub(&s.sigma_matrix());
            assert!(d.frobenius() < 1e-6 * h.frobenius());
        }
    }

    fn unit_phases() -> impl Strategy<Value = [f64; 2]> {
        [-PI..PI, -PI..PI]
    }

    proptest! {
        #[test]
        fn normalize_phase_is_idempotent_and_phase_invariant(seed in 0u64..10_000, phases in unit_phases()) {
            let s = svd(&random_matrix(2, 2, seed)).unwrap();
            let n = normalize_phase(&s.v).unwrap();
            prop_assert!(normalize_phase(&n).unwrap().sub(&n).frobenius() < 1e-12);
            let mut rotated = s.v.clone();
            for (col, ph) in phases.iter().enumerate() {
                let c = rotated.column(col).iter().map(|v| v * C64::from_polar(1.0, *ph)).collect::<Vec<_>>();
                rotated.set_column(col, &c);
            }
            prop_assert!(normalize_phase(&rotated).unwrap().sub(&n).frobenius() < 1e-12);
        }

        #[test]
        fn reconstruction_and_unitarity(seed in 0u64..1_000_000) {
            let h = random_matrix(2, 2, seed);
            let s = svd(&h).unwrap();
            prop_assert!(s.reconstruct().sub(&h).frobenius() < 1e-6 * h.frobenius());
            prop_assert!(s.u.unitarity_residual() < 1e-9 && s.v.unitarity_residual() < 1e-9);
            prop_assert!(s.sigma[0] >= s.sigma[1] && s.sigma[1] >= 0.0);
        }
    }
}
