//! Eigen-decomposition of the normalised operator.
//!
//! [`dense_eigh`] is a cyclic Jacobi solver used as the reference and for
//! small graphs. [`lanczos_extreme`] computes only the bottom/top ends of
//! the spectrum of a sparse operator, using a fully reorthogonalised Krylov
//! basis plus deflation passes that pick up repeated eigenvalues a single
//! start vector cannot see.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::NormalizedGraph;
use crate::linalg::{dot, norm2, tridiagonal_eigh, Matrix};

pub const DEFAULT_DENSE_CAP: usize = 4096;

/// A symmetric linear operator that can be applied to a vector.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl SymmetricOperator for NormalizedGraph {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv(x, y)
    }
}

impl SymmetricOperator for Matrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(self.row(i), x);
        }
    }
}

/// Which end of the (ascending) spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    /// Smallest eigenvalues.
    Low,
    /// Largest eigenvalues.
    High,
}

/// Eigenpairs sorted by ascending eigenvalue.
///
/// The first `bottom` pairs come from the low end of the operator's
/// spectrum and the rest from the high end. For a complete system the
/// split is a bookkeeping choice (half/half by default) and can be moved
/// with [`EigenSystem::with_bottom_count`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
    complete: bool,
    source_n: usize,
    bottom: usize,
}

impl EigenSystem {
    pub fn from_parts(
        eigenvalues: Vec<f64>,
        eigenvectors: Matrix,
        complete: bool,
        source_n: usize,
        bottom: usize,
    ) -> Result<Self> {
        if eigenvectors.rows() != source_n || eigenvectors.cols() != eigenvalues.len() {
            return Err(Error::Shape(format!(
                "eigenvectors are {}x{}, expected {}x{}",
                eigenvectors.rows(),
                eigenvectors.cols(),
                source_n,
                eigenvalues.len()
            )));
        }
        if bottom > eigenvalues.len() {
            return Err(Error::InvalidParameter(format!(
                "bottom count {bottom} exceeds {} pairs",
                eigenvalues.len()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter(
                "eigenvalues must be sorted ascending".into(),
            ));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            complete,
            source_n,
            bottom,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.eigenvectors.col(j)
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    /// Pairs taken from the low end of the spectrum (indices `0..bottom`).
    pub fn bottom_count(&self) -> usize {
        self.bottom
    }

    /// Pairs taken from the high end (indices `bottom..len`).
    pub fn top_count(&self) -> usize {
        self.len() - self.bottom
    }

    pub fn with_bottom_count(mut self, bottom: usize) -> Result<Self> {
        if bottom > self.len() {
            return Err(Error::InvalidParameter(format!(
                "bottom count {bottom} exceeds {} pairs",
                self.len()
            )));
        }
        self.bottom = bottom;
        Ok(self)
    }

    /// The `k_low` smallest and `k_high` largest pairs as one system.
    pub fn extremes(&self, k_low: usize, k_high: usize) -> Result<Self> {
        let low = select_band(self, Band::Low, k_low)?;
        let high = select_band(self, Band::High, k_high)?;
        if k_low + k_high > self.len() {
            return Err(Error::InvalidParameter(format!(
                "bands of {k_low} + {k_high} overlap in {} pairs",
                self.len()
            )));
        }
        let mut values = low.eigenvalues;
        values.extend_from_slice(&high.eigenvalues);
        let mut vectors = Matrix::zeros(self.source_n, values.len());
        for j in 0..k_low {
            vectors.set_col(j, &low.eigenvectors.col(j));
        }
        for j in 0..k_high {
            vectors.set_col(k_low + j, &high.eigenvectors.col(j));
        }
        Ok(Self {
            eigenvalues: values,
            eigenvectors: vectors,
            complete: self.complete && k_low + k_high == self.len(),
            source_n: self.source_n,
            bottom: k_low,
        })
    }

    /// max |UᵀU − I|.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.eigenvectors.t_matmul(&self.eigenvectors);
        g.max_abs_diff(&Matrix::identity(self.len()))
    }

    /// ‖A u_j − λ_j u_j‖₂ for every stored pair.
    pub fn residuals<O: SymmetricOperator + ?Sized>(&self, op: &O) -> Vec<f64> {
        let n = self.source_n;
        let mut y = vec![0.0; n];
        (0..self.len())
            .map(|j| {
                let u = self.vector(j);
                op.apply(&u, &mut y);
                let lam = self.eigenvalues[j];
                y.iter()
                    .zip(&u)
                    .map(|(a, b)| (a - lam * b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Sub-system holding `count` pairs from one end, order preserved.
pub fn select_band(es: &EigenSystem, which: Band, count: usize) -> Result<EigenSystem> {
    let (available, name) = match (which, es.complete) {
        (_, true) => (es.len(), if which == Band::Low { "low" } else { "high" }),
        (Band::Low, false) => (es.bottom_count(), "low"),
        (Band::High, false) => (es.top_count(), "high"),
    };
    if count > available {
        return Err(Error::BandTooSmall {
            band: name,
            requested: count,
            available,
        });
    }
    let cols: Vec<usize> = match which {
        Band::Low => (0..count).collect(),
        Band::High => (es.len() - count..es.len()).collect(),
    };
    Ok(EigenSystem {
        eigenvalues: cols.iter().map(|&j| es.eigenvalues[j]).collect(),
        eigenvectors: es.eigenvectors.select_cols(&cols),
        complete: es.complete && count == es.len(),
        source_n: es.source_n,
        bottom: if which == Band::Low { count } else { 0 },
    })
}

/// Flip a vector so its largest-magnitude component (first on ties) is
/// positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

pub fn dense_eigh(m: &Matrix) -> Result<EigenSystem> {
    dense_eigh_with_cap(m, DEFAULT_DENSE_CAP)
}

/// Full symmetric eigen-decomposition by cyclic Jacobi rotations.
pub fn dense_eigh_with_cap(m: &Matrix, cap: usize) -> Result<EigenSystem> {
    let (n, nc) = m.shape();
    if n != nc {
        return Err(Error::Shape(format!("matrix is {n}x{nc}, not square")));
    }
    if n > cap {
        return Err(Error::DimensionCap { n, cap });
    }
    let asym = m.max_abs_diff(&m.transpose());
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    // Symmetrise exactly so the rotation updates can treat rows as columns.
    let mut a = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let fro = m.frobenius_norm();
    let target = 1e-12 * fro;
    // vt row k holds eigenvector k.
    let mut vt = Matrix::identity(n);

    let off_norm = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) > target {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                worst_residual: off_norm(&a),
                residuals: vec![],
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate_sym(&mut a, p, q, c, s, app, aqq, apq, t);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]).then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut v = vt.row(i).to_vec();
        fix_sign(&mut v);
        vectors.set_col(k, &v);
    }
    Ok(EigenSystem {
        eigenvalues: values,
        eigenvectors: vectors,
        complete: true,
        source_n: n,
        bottom: n / 2,
    })
}

/// Apply the Jacobi rotation J(p, q) as Jᵀ A J to a symmetric matrix.
#[allow(clippy::too_many_arguments)]
fn rotate_sym(
    a: &mut Matrix,
    p: usize,
    q: usize,
    c: f64,
    s: f64,
    app: f64,
    aqq: f64,
    apq: f64,
    t: f64,
) {
    let n = a.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = a[(p, k)];
        let akq = a[(q, k)];
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        a[(p, k)] = np;
        a[(k, p)] = np;
        a[(q, k)] = nq;
        a[(k, q)] = nq;
    }
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
}

fn rotate_rows(vt: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = vt.cols();
    for k in 0..n {
        let vp = vt[(p, k)];
        let vq = vt[(q, k)];
        vt[(p, k)] = c * vp - s * vq;
        vt[(q, k)] = s * vp + c * vq;
    }
}

/// Bottom `k_low` and top `k_high` eigenpairs of a sparse symmetric operator.
///
/// Every returned pair has true residual `‖A u − λ u‖₂ <= tol`. `max_iter`
/// bounds the total number of Lanczos steps across all passes.
pub fn lanczos_extreme<O: SymmetricOperator + ?Sized>(
    op: &O,
    k_low: usize,
    k_high: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EigenSystem> {
    let n = op.dim();
    if k_low + k_high > n {
        return Err(Error::InvalidParameter(format!(
            "k_low + k_high = {} exceeds dimension {n}",
            k_low + k_high
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if k_low + k_high == 0 {
        return EigenSystem::from_parts(vec![], Matrix::zeros(n, 0), false, n, 0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = max_iter;
    let mut locked: Vec<(f64, Vec<f64>)> = Vec::new();

    let first = deflated_pass(op, &locked, k_low, k_high, tol, &mut budget, &mut rng)?;
    locked.extend(first);

    // Extra passes on the deflated operator: anything found beyond the
    // current k-th extreme value was hidden from the first Krylov space
    // (a repeated eigenvalue or a misconverged Ritz value).
    while locked.len() < n {
        let mut vals: Vec<f64> = locked.iter().map(|p| p.0).collect();
        vals.sort_by(f64::total_cmp);
        let low_threshold = (k_low > 0).then(|| vals[k_low - 1]);
        let high_threshold = (k_high > 0).then(|| vals[vals.len() - k_high]);
        let extra = deflated_pass(
            op,
            &locked,
            usize::from(k_low > 0),
            usize::from(k_high > 0),
            tol,
            &mut budget,
            &mut rng,
        )?;
        let mut found = false;
        for (theta, y) in extra {
            let beyond_low = low_threshold.is_some_and(|t| theta < t - tol);
            let beyond_high = high_threshold.is_some_and(|t| theta > t + tol);
            if beyond_low || beyond_high {
                locked.push((theta, y));
                found = true;
            }
        }
        if !found {
            break;
        }
    }

    locked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = locked.len();
    let mut chosen: Vec<&(f64, Vec<f64>)> = locked[..k_low].iter().collect();
    chosen.extend(locked[m - k_high..].iter());

    let mut values = Vec::with_capacity(chosen.len());
    let mut vectors = Matrix::zeros(n, chosen.len());
    for (j, (theta, y)) in chosen.into_iter().enumerate() {
        let mut v = y.clone();
        fix_sign(&mut v);
        values.push(*theta);
        vectors.set_col(j, &v);
    }
    let es = EigenSystem {
        eigenvalues: values,
        eigenvectors: vectors,
        complete: k_low + k_high == n,
        source_n: n,
        bottom: k_low,
    };
    let residuals = es.residuals(op);
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::NoConvergence {
            iterations: max_iter - budget,
            worst_residual: worst,
            residuals,
        });
    }
    Ok(es)
}

fn orthogonalize(w: &mut [f64], against: impl Iterator<Item = impl AsRef<[f64]>> + Clone) {
    // Two rounds of classical Gram-Schmidt.
    for _ in 0..2 {
        for v in against.clone() {
            let v = v.as_ref();
            let proj = dot(w, v);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= proj * vi;
            }
        }
    }
}

fn random_start(
    n: usize,
    rng: &mut ChaCha8Rng,
    locked: &[(f64, Vec<f64>)],
    basis: &[Vec<f64>],
) -> Option<Vec<f64>> {
    for _ in 0..8 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        orthogonalize(
            &mut v,
            locked
                .iter()
                .map(|p| p.1.as_slice())
                .chain(basis.iter().map(Vec::as_slice)),
        );
        let nv = norm2(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

/// One Lanczos run on the operator with `locked` deflated out. Returns the
/// `want_low` smallest and `want_high` largest converged Ritz pairs.
fn deflated_pass<O: SymmetricOperator + ?Sized>(
    op: &O,
    locked: &[(f64, Vec<f64>)],
    want_low: usize,
    want_high: usize,
    tol: f64,
    budget: &mut usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = op.dim();
    let space = n - locked.len();
    let want_low = want_low.min(space);
    let want_high = want_high.min(space - want_low);
    if want_low + want_high == 0 {
        return Ok(vec![]);
    }

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let Some(mut v) = random_start(n, rng, locked, &basis) else {
        return Ok(vec![]);
    };
    let mut w = vec![0.0; n];
    let mut last_estimates: Vec<f64> = Vec::new();

    loop {
        if *budget == 0 {
            return Err(Error::NoConvergence {
                iterations: basis.len(),
                worst_residual: last_estimates.iter().copied().fold(f64::NAN, f64::max),
                residuals: last_estimates,
            });
        }
        *budget -= 1;

        op.apply(&v, &mut w);
        let a = dot(&w, &v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= a * vi;
        }
        if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
            for (wi, pi) in w.iter_mut().zip(prev.iter()) {
                *wi -= b * pi;
            }
        }
        basis.push(std::mem::take(&mut v));
        alpha.push(a);
        orthogonalize(
            &mut w,
            locked
                .iter()
                .map(|p| p.1.as_slice())
                .chain(basis.iter().map(Vec::as_slice)),
        );
        let mut b = norm2(&w);
        let m = basis.len();
        let exhausted = m == space;
        let breakdown = b <= 1e-10 * (a.abs() + beta.last().copied().unwrap_or(0.0)).max(1e-300);

        let enough = m >= want_low + want_high;
        if enough && (m.is_multiple_of(5) || exhausted || breakdown) {
            let off: Vec<f64> = beta.clone();
            let (theta, s) = tridiagonal_eigh(&alpha, &off)?;
            let mut idx: Vec<usize> = (0..want_low).collect();
            idx.extend(m - want_high..m);
            let coupling = if breakdown || exhausted { 0.0 } else { b };
            last_estimates = idx
                .iter()
                .map(|&i| (coupling * s[(m - 1, i)]).abs())
                .collect();
            if last_estimates.iter().all(|&r| r <= 0.5 * tol) {
                let pairs: Vec<(f64, Vec<f64>)> = idx
                    .iter()
                    .map(|&i| {
                        let mut y = vec![0.0; n];
                        for (k, q) in basis.iter().enumerate() {
                            let c = s[(k, i)];
                            for (yi, qi) in y.iter_mut().zip(q) {
                                *yi += c * qi;
                            }
                        }
                        let ny = norm2(&y);
                        y.iter_mut().for_each(|x| *x /= ny);
                        (theta[i], y)
                    })
                    .collect();
                let mut au = vec![0.0; n];
                let ok = pairs.iter().all(|(t, y)| {
                    op.apply(y, &mut au);
                    let r: f64 = au
                        .iter()
                        .zip(y)
                        .map(|(p, q)| (p - t * q).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    r <= tol
                });
                if ok || exhausted {
                    return Ok(pairs);
                }
            }
        }
        if exhausted {
            return Err(Error::NoConvergence {
                iterations: m,
                worst_residual: last_estimates.iter().copied().fold(f64::NAN, f64::max),
                residuals: last_estimates,
            });
        }

        if breakdown {
            // Invariant subspace: restart with a fresh direction; T becomes
            // block diagonal.
            match random_start(n, rng, locked, &basis) {
                Some(fresh) => {
                    v = fresh;
                    b = 0.0;
                }
                None => {
                    return Err(Error::NoConvergence {
                        iterations: m,
                        worst_residual: f64::NAN,
                        residuals: last_estimates,
                    })
                }
            }
        } else {
            v = w.iter().map(|x| x / b).collect();
        }
        beta.push(b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, sym_normalize};

    #[test]
    fn identity_spectrum() {
        let es = dense_eigh(&Matrix::identity(3)).unwrap();
        assert_eq!(es.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_edge_spectrum() {
        let ng = sym_normalize(&build_graph(2, &[(0, 1)]).unwrap());
        let es = dense_eigh(&ng.to_dense()).unwrap();
        assert!(es.values()[0].abs() < 1e-15);
        assert!((es.values()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_asymmetric_and_oversized() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(dense_eigh(&m), Err(Error::NotSymmetric(_))));
        assert!(matches!(
            dense_eigh_with_cap(&Matrix::identity(5), 4),
            Err(Error::DimensionCap { n: 5, cap: 4 })
        ));
    }

    #[test]
    fn band_selection() {
        let ng = sym_normalize(&build_graph(2, &[(0, 1)]).unwrap());
        let es = dense_eigh(&ng.to_dense()).unwrap();
        assert!(select_band(&es, Band::High, 0).unwrap().is_empty());
        let low = select_band(&es, Band::Low, 1).unwrap();
        assert_eq!(low.len(), 1);
        assert!(low.values()[0].abs() < 1e-15);
        assert!(matches!(
            select_band(&es, Band::High, 3),
            Err(Error::BandTooSmall { .. })
        ));
        let top = select_band(&es, Band::High, 1).unwrap();
        assert!(matches!(
            select_band(&top, Band::High, 2),
            Err(Error::BandTooSmall { .. })
        ));
        assert!(matches!(
            select_band(&top, Band::Low, 1),
            Err(Error::BandTooSmall { .. })
        ));
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
    }

    #[test]
    fn lanczos_top_of_path() {
        let g = build_graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let ng = sym_normalize(&g);
        let es = lanczos_extreme(&ng, 0, 1, 1e-10, 500, 3).unwrap();
        assert!((es.values()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lanczos_finds_repeated_top_eigenvalue() {
        // Two disjoint triangles: eigenvalue 1 has multiplicity 2.
        let g = build_graph(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let ng = sym_normalize(&g);
        let es = lanczos_extreme(&ng, 0, 2, 1e-10, 500, 1).unwrap();
        assert!((es.values()[0] - 1.0).abs() < 1e-10);
        assert!((es.values()[1] - 1.0).abs() < 1e-10);
        assert!(es.orthogonality_error() < 1e-8);
    }

    #[test]
    fn lanczos_rejects_oversized_request() {
        let ng = sym_normalize(&build_graph(3, &[(0, 1)]).unwrap());
        assert!(lanczos_extreme(&ng, 2, 2, 1e-8, 100, 0).is_err());
    }
}
