//! Approximation lab: least-squares polynomial fits over a spectrum and
//! numerical checks of the error-dominance and dimension claims for
//! piecewise (adaptive) polynomial filters.
//!
//! Fits restricted to a short run of points use an affinely rescaled
//! monomial basis `((λ − c) / h)^p`. It spans the same polynomials as the
//! raw basis, so residuals are unchanged, but the conditioning stays sane
//! when a support is narrow.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, numerical_rank, orthonormal_q, Matrix, PivotedQr};

/// Columns whose pivoted-QR remainder drops below this fraction of the
/// leading one are treated as dependent.
pub const LSTSQ_RANK_TOL: f64 = 1e-12;
/// Singular values above `RANK_TOL * σ_max` count toward numerical rank.
pub const RANK_TOL: f64 = 1e-9;

/// Rows `(1, λ, λ², …, λ^K)`.
pub fn vandermonde(spectrum: &[f64], k: usize) -> Matrix {
    let mut v = Matrix::zeros(spectrum.len(), k + 1);
    for (i, &lam) in spectrum.iter().enumerate() {
        let mut x = 1.0;
        for p in 0..=k {
            v[(i, p)] = x;
            x *= lam;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub gamma: Vec<f64>,
    pub residual_vec: Vec<f64>,
    pub residual_norm: f64,
}

/// Least-squares fit `min ‖target − V γ‖₂` by column-pivoted QR.
pub fn lstsq(v: &Matrix, target: &[f64]) -> Result<FitResult> {
    let (m, n) = v.shape();
    if target.len() != m {
        return Err(Error::Shape(format!(
            "target has {} entries, matrix has {m} rows",
            target.len()
        )));
    }
    if m < n {
        return Err(Error::Shape(format!(
            "underdetermined system: {m} rows, {n} columns"
        )));
    }
    if n == 0 {
        return Ok(FitResult {
            gamma: vec![],
            residual_norm: norm2(target),
            residual_vec: target.to_vec(),
        });
    }
    let qr = PivotedQr::new(v, LSTSQ_RANK_TOL);
    let gamma = qr.solve(target)?;
    let residual_vec = qr.residual(target);
    Ok(FitResult {
        gamma,
        residual_norm: norm2(&residual_vec),
        residual_vec,
    })
}

/// Polynomial in the rescaled variable `(λ − center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPoly {
    pub center: f64,
    pub scale: f64,
    pub coeffs: Vec<f64>,
}

impl LocalPoly {
    pub fn eval(&self, lam: f64) -> f64 {
        let x = (lam - self.center) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn zero() -> Self {
        Self {
            center: 0.0,
            scale: 1.0,
            coeffs: vec![],
        }
    }
}

/// Degree-`degree` least-squares fit over `points` in a rescaled basis.
pub fn fit_local(points: &[f64], target: &[f64], degree: usize) -> Result<(LocalPoly, FitResult)> {
    if points.is_empty() {
        return Ok((
            LocalPoly::zero(),
            FitResult {
                gamma: vec![],
                residual_vec: vec![],
                residual_norm: 0.0,
            },
        ));
    }
    let lo = points.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let scale = if half > 0.0 { half } else { 1.0 };
    let xs: Vec<f64> = points.iter().map(|&p| (p - center) / scale).collect();
    let fit = lstsq(&vandermonde(&xs, degree), target)?;
    let poly = LocalPoly {
        center,
        scale,
        coeffs: fit.gamma.clone(),
    };
    Ok((poly, fit))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxProblem {
    pub spectrum: Vec<f64>,
    pub target: Vec<f64>,
    pub k: usize,
    pub k_prime: usize,
    pub supports: Vec<Range<usize>>,
}

impl ApproxProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.spectrum.len();
        if self.target.len() != n {
            return Err(Error::Shape(format!(
                "target has {} entries, spectrum has {n}",
                self.target.len()
            )));
        }
        if self
            .spectrum
            .iter()
            .chain(&self.target)
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("approximation problem input".into()));
        }
        if self.k_prime > self.k {
            return Err(Error::DegreeOrder {
                k: self.k,
                k_prime: self.k_prime,
            });
        }
        let mut sorted = self.spectrum.clone();
        sorted.sort_by(f64::total_cmp);
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::SpectrumNotDistinct(w[0]));
        }
        for (i, s) in self.supports.iter().enumerate() {
            if s.end > n || s.start > s.end {
                return Err(Error::InvalidParameter(format!(
                    "support {i} ({}..{}) lies outside 0..{n}",
                    s.start, s.end
                )));
            }
            if s.len() <= self.k {
                return Err(Error::SupportTooSmall {
                    index: i,
                    size: s.len(),
                    min: self.k,
                });
            }
        }
        for i in 0..self.supports.len() {
            for j in (i + 1)..self.supports.len() {
                let (a, b) = (&self.supports[i], &self.supports[j]);
                if a.start < b.end && b.start < a.end {
                    return Err(Error::SupportsOverlap(i, j));
                }
            }
        }
        Ok(())
    }

    /// Indices covered by no support, ascending.
    pub fn complement(&self) -> Vec<usize> {
        let mut covered = vec![false; self.spectrum.len()];
        for s in &self.supports {
            for c in &mut covered[s.clone()] {
                *c = true;
            }
        }
        (0..covered.len()).filter(|&i| !covered[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OracleCase {
    /// Adaptive degree equals the global degree.
    EqualDegree,
    /// Adaptive degree strictly below the global degree.
    LowerDegree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub err_single: f64,
    pub err_multi: f64,
    pub case: OracleCase,
    /// Relative mismatch between `‖e_g‖²` assembled from the fitted pieces
    /// and the sum of per-piece squared residuals (equal-degree case only).
    pub decomposition_gap: Option<f64>,
}

fn gather(values: &[f64], idx: impl IntoIterator<Item = usize>) -> Vec<f64> {
    idx.into_iter().map(|i| values[i]).collect()
}

/// Residual norms of the best single degree-K fit and of the piecewise
/// construction (global term plus adaptive pieces on the supports).
pub fn thm41_oracle(p: &ApproxProblem) -> Result<(f64, f64)> {
    oracle_report(p).map(|r| (r.err_single, r.err_multi))
}

pub fn oracle_report(p: &ApproxProblem) -> Result<OracleReport> {
    p.validate()?;
    let global = lstsq(&vandermonde(&p.spectrum, p.k), &p.target)?;
    let err_single = global.residual_norm;

    if p.k_prime == p.k {
        // Independent degree-K fits on the complement and on every support.
        let comp = p.complement();
        let comp_deg = p.k.min(comp.len().saturating_sub(1));
        let (comp_poly, comp_fit) = fit_local(
            &gather(&p.spectrum, comp.iter().copied()),
            &gather(&p.target, comp.iter().copied()),
            comp_deg,
        )?;
        let mut pieces_sq = comp_fit.residual_norm.powi(2);
        let mut assembled = vec![0.0; p.spectrum.len()];
        for &i in &comp {
            assembled[i] = p.target[i] - comp_poly.eval(p.spectrum[i]);
        }
        for s in &p.supports {
            let (poly, fit) = fit_local(&p.spectrum[s.clone()], &p.target[s.clone()], p.k)?;
            pieces_sq += fit.residual_norm.powi(2);
            for i in s.clone() {
                assembled[i] = p.target[i] - poly.eval(p.spectrum[i]);
            }
        }
        let total_sq = dot(&assembled, &assembled);
        // When every piece interpolates, both energies are round-off and
        // their ratio is noise; floor the scale at ε‖y‖².
        let floor = f64::EPSILON * dot(&p.target, &p.target);
        let denom = total_sq.max(pieces_sq).max(floor).max(f64::MIN_POSITIVE);
        Ok(OracleReport {
            err_single,
            err_multi: pieces_sq.sqrt(),
            case: OracleCase::EqualDegree,
            decomposition_gap: Some((total_sq - pieces_sq).abs() / denom),
        })
    } else {
        // Keep the global fit and correct its residual on each support.
        let mut resid = global.residual_vec.clone();
        for s in &p.supports {
            let (_, fit) = fit_local(&p.spectrum[s.clone()], &resid[s.clone()], p.k_prime)?;
            resid[s.clone()].copy_from_slice(&fit.residual_vec);
        }
        Ok(OracleReport {
            err_single,
            err_multi: norm2(&resid),
            case: OracleCase::LowerDegree,
            decomposition_gap: None,
        })
    }
}

fn check_dim_args(n: usize, k: usize, k_prime: usize, t: usize) -> Result<()> {
    if k_prime > k {
        return Err(Error::DegreeOrder { k, k_prime });
    }
    if t > 0 {
        if 2 * t >= n {
            return Err(Error::InvalidParameter(format!(
                "t = {t} must be below n/2 = {}",
                n / 2
            )));
        }
        if t < k_prime + 1 {
            return Err(Error::InvalidParameter(format!(
                "t = {t} must be at least K' + 1 = {}",
                k_prime + 1
            )));
        }
    }
    if n < 2 * t + k + 1 {
        return Err(Error::InvalidParameter(format!(
            "n − 2t = {} must be at least K + 1 = {}",
            n as isize - 2 * t as isize,
            k + 1
        )));
    }
    Ok(())
}

fn distinct_sorted(spectrum: &[f64]) -> Result<Vec<f64>> {
    let mut s = spectrum.to_vec();
    s.sort_by(f64::total_cmp);
    if let Some(w) = s.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::SpectrumNotDistinct(w[0]));
    }
    Ok(s)
}

/// Which column families go into a filter-space basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisParts {
    pub global: bool,
    pub masked: bool,
}

/// Evaluation basis over the (sorted) spectrum: global monomials of degree
/// ≤ K, then monomials of degree ≤ K' masked to the top t and bottom t
/// points. Columns are unit-normalised, which leaves the rank unchanged.
pub fn filter_basis(
    spectrum: &[f64],
    k: usize,
    k_prime: usize,
    t: usize,
    parts: BasisParts,
) -> Result<Matrix> {
    let s = distinct_sorted(spectrum)?;
    let n = s.len();
    check_dim_args(n, k, k_prime, t)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if parts.global {
        for p in 0..=k {
            cols.push(s.iter().map(|&l| l.powi(p as i32)).collect());
        }
    }
    if parts.masked && t > 0 {
        for range in [n - t..n, 0..t] {
            for p in 0..=k_prime {
                let mut c = vec![0.0; n];
                for i in range.clone() {
                    c[i] = s[i].powi(p as i32);
                }
                cols.push(c);
            }
        }
    }
    let mut m = Matrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        let nrm = norm2(c);
        let scaled: Vec<f64> = c
            .iter()
            .map(|x| if nrm > 0.0 { x / nrm } else { 0.0 })
            .collect();
        m.set_col(j, &scaled);
    }
    Ok(m)
}

/// Dimension of the span of global plus adaptive polynomial filters.
pub fn filter_space_dim(spectrum: &[f64], k: usize, k_prime: usize, t: usize) -> Result<usize> {
    let parts = BasisParts {
        global: true,
        masked: true,
    };
    Ok(numerical_rank(
        &filter_basis(spectrum, k, k_prime, t, parts)?,
        RANK_TOL,
    ))
}

/// Rank of the masked (adaptive) columns alone.
pub fn masked_space_dim(spectrum: &[f64], k: usize, k_prime: usize, t: usize) -> Result<usize> {
    let parts = BasisParts {
        global: false,
        masked: true,
    };
    Ok(numerical_rank(
        &filter_basis(spectrum, k, k_prime, t, parts)?,
        RANK_TOL,
    ))
}

/// Seeded Haar-like orthogonal matrix: Q from the QR of a Gaussian matrix.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    orthonormal_q(&Matrix::from_vec(n, n, data).expect("square buffer"))
}

/// Rank of `{ vec(Uᵀ diag(b) U) }` over the filter basis columns `b`.
pub fn graph_space_dim_with(
    spectrum: &[f64],
    k: usize,
    k_prime: usize,
    t: usize,
    u: &Matrix,
) -> Result<usize> {
    let parts = BasisParts {
        global: true,
        masked: true,
    };
    let basis = filter_basis(spectrum, k, k_prime, t, parts)?;
    let n = basis.rows();
    if u.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "orthogonal factor is {}x{}, expected {n}x{n}",
            u.rows(),
            u.cols()
        )));
    }
    let mut stacked = Matrix::zeros(n * n, basis.cols());
    for j in 0..basis.cols() {
        let b = basis.col(j);
        let mut scaled = u.clone();
        for (i, &bi) in b.iter().enumerate() {
            for x in scaled.row_mut(i) {
                *x *= bi;
            }
        }
        let g = u.t_matmul(&scaled);
        stacked.set_col(j, g.as_slice());
    }
    Ok(numerical_rank(&stacked, RANK_TOL))
}

/// [`graph_space_dim_with`] using a seeded random orthogonal `U`.
pub fn graph_space_dim(
    spectrum: &[f64],
    k: usize,
    k_prime: usize,
    t: usize,
    seed: u64,
) -> Result<usize> {
    let u = random_orthogonal(spectrum.len(), seed);
    graph_space_dim_with(spectrum, k, k_prime, t, &u)
}

/// `n` distinct points in [−1, 1]: a jittered uniform grid, seeded.
pub fn random_spectrum(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let h = 2.0 / n as f64;
    (0..n)
        .map(|i| -1.0 + h * (i as f64 + 0.5 + 0.8 * (rng.random::<f64>() - 0.5)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaveformSpec {
    /// Seeded sum of three sinusoids and four Gaussian bumps.
    Composite,
    /// Power-basis coefficients of an exact polynomial.
    Polynomial(Vec<f64>),
}

/// Sample the waveform on `grid`.
pub fn waveform_values(spec: &WaveformSpec, grid: &[f64], seed: u64) -> Vec<f64> {
    match spec {
        WaveformSpec::Polynomial(c) => grid
            .iter()
            .map(|&x| c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci))
            .collect(),
        WaveformSpec::Composite => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let waves: Vec<(f64, f64, f64)> = (0..3)
                .map(|i| {
                    let amp = rng.random_range(0.5..1.5);
                    let freq = rng.random_range(4.0..9.0) * (1.0 + 0.37 * i as f64);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (amp, freq, phase)
                })
                .collect();
            let bumps: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| {
                    let amp = rng.random_range(-2.0..2.0);
                    let center = rng.random_range(-0.9..0.9);
                    let width = rng.random_range(0.02..0.08);
                    (amp, center, width)
                })
                .collect();
            grid.iter()
                .map(|&x| {
                    let s: f64 = waves.iter().map(|&(a, f, ph)| a * (f * x + ph).sin()).sum();
                    let b: f64 = bumps
                        .iter()
                        .map(|&(a, c, w)| a * (-((x - c) / w).powi(2)).exp())
                        .sum();
                    s + b
                })
                .collect()
        }
    }
}

/// `grid_n` equally spaced points on [−1, 1].
pub fn uniform_grid(grid_n: usize) -> Vec<f64> {
    if grid_n == 1 {
        return vec![0.0];
    }
    (0..grid_n)
        .map(|i| -1.0 + 2.0 * i as f64 / (grid_n - 1) as f64)
        .collect()
}

/// `m` contiguous equal-count ranges tiling `0..n`; remainder to the first.
pub fn equal_supports(n: usize, m: usize) -> Vec<Range<usize>> {
    if m == 0 {
        return vec![];
    }
    let base = n / m;
    let extra = n % m;
    let mut start = 0;
    (0..m)
        .map(|i| {
            let end = start + base + usize::from(i < extra);
            let r = start..end;
            start = end;
            r
        })
        .collect()
}

/// RMSE of one global fit of degree `k_single` and of the global fit
/// corrected by degree-`k_adaptive` pieces on `m_adaptive` tiles.
pub fn waveform_experiment(
    spec: &WaveformSpec,
    grid_n: usize,
    k_single: usize,
    k_adaptive: usize,
    m_adaptive: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if grid_n < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least 2 points, got {grid_n}"
        )));
    }
    let grid = uniform_grid(grid_n);
    let problem = ApproxProblem {
        target: waveform_values(spec, &grid, seed),
        spectrum: grid,
        k: k_single,
        k_prime: k_adaptive,
        supports: equal_supports(grid_n, m_adaptive),
    };
    problem.validate()?;
    // Always the corrected-global construction, even when the degrees match.
    let global = lstsq(&vandermonde(&problem.spectrum, k_single), &problem.target)?;
    let mut resid = global.residual_vec.clone();
    for s in &problem.supports {
        let (_, fit) = fit_local(&problem.spectrum[s.clone()], &resid[s.clone()], k_adaptive)?;
        resid[s.clone()].copy_from_slice(&fit.residual_vec);
    }
    let rms = |v: &[f64]| (dot(v, v) / v.len() as f64).sqrt();
    Ok((rms(&global.residual_vec), rms(&resid)))
}

/// Random instance for the fuzz suite on an `n`-point spectrum.
pub fn random_problem(n: usize, rng: &mut impl Rng) -> ApproxProblem {
    let spectrum = random_spectrum(n, rng);
    let k = rng.random_range(2..=10usize);
    let k_prime = rng.random_range(1..=k);
    let mut m = rng.random_range(1..=4usize);
    while m * (k + 1) > n {
        m -= 1;
    }
    let slack_total = n - m * (k + 1);
    // Each support gets K+1 points plus a random share of the slack; the
    // rest is spread over the m + 1 gaps.
    let mut extra: Vec<usize> = (0..m)
        .map(|_| rng.random_range(0..=slack_total / (2 * m)))
        .collect();
    let used: usize = extra.iter().sum();
    let mut gaps = vec![0usize; m + 1];
    for _ in 0..(slack_total - used) {
        gaps[rng.random_range(0..=m)] += 1;
    }
    let mut supports = Vec::with_capacity(m);
    let mut pos = gaps[0];
    for (i, e) in extra.iter_mut().enumerate() {
        let len = k + 1 + *e;
        supports.push(pos..pos + len);
        pos += len + gaps[i + 1];
    }
    let target = random_target(&spectrum, rng);
    ApproxProblem {
        spectrum,
        target,
        k,
        k_prime,
        supports,
    }
}

fn random_target(spectrum: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    match rng.random_range(0..3) {
        0 => spectrum
            .iter()
            .map(|_| rng.sample(StandardNormal))
            .collect(),
        1 => {
            let cut = rng.random_range(-0.8..0.8);
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            spectrum
                .iter()
                .map(|&l| if l < cut { a } else { b })
                .collect()
        }
        _ => {
            let f = rng.random_range(1.0..20.0);
            let ph = rng.random_range(0.0..std::f64::consts::TAU);
            spectrum
                .iter()
                .map(|&l| (f * l + ph).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub trials: usize,
    pub violations: usize,
    /// Largest `err_multi − err_single` observed (negative when the
    /// piecewise fit always wins).
    pub max_gap: f64,
    pub equal_degree_trials: usize,
    pub max_decomposition_gap: f64,
}

/// Per-trial generator seeded from `(seed, trial)`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Randomised check of `err_multi ≤ err_single + 1e-9`.
pub fn dominance_suite(trials: usize, n: usize, seed: u64) -> Result<SuiteSummary> {
    let mut summary = SuiteSummary {
        trials,
        violations: 0,
        max_gap: f64::NEG_INFINITY,
        equal_degree_trials: 0,
        max_decomposition_gap: 0.0,
    };
    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial as u64);
        let p = random_problem(n, &mut rng);
        let r = oracle_report(&p)?;
        let gap = r.err_multi - r.err_single;
        summary.max_gap = summary.max_gap.max(gap);
        if gap > 1e-9 {
            summary.violations += 1;
        }
        if let Some(d) = r.decomposition_gap {
            summary.equal_degree_trials += 1;
            summary.max_decomposition_gap = summary.max_decomposition_gap.max(d);
        }
    }
    Ok(summary)
}
