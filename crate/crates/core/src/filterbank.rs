//! Spectral partitions and the piecewise-polynomial filter bank.
//!
//! Frequencies follow the normalised-adjacency convention: eigenvalues of Ã
//! near 1 are smooth (low-frequency) signals and eigenvalues near -1 are
//! oscillatory (high-frequency) ones. The low-frequency band is therefore
//! built from the *top* eigenpairs of an [`EigenSystem`] and the
//! high-frequency band from the *bottom* eigenpairs.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::EigenSystem;

/// A contiguous run of eigenpair indices sharing one polynomial piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// First eigenpair index (into the ascending [`EigenSystem`]).
    pub start: usize,
    /// One past the last index.
    pub end: usize,
    pub lam_min: f64,
    pub lam_max: f64,
}

impl Bin {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Bins over the low-frequency (top) and high-frequency (bottom) bands,
/// each list ordered by ascending eigenvalue.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub low_bins: Vec<Bin>,
    pub high_bins: Vec<Bin>,
}

impl PartitionSpec {
    /// Largest eigenpair index referenced, plus one.
    pub fn max_index(&self) -> usize {
        self.low_bins
            .iter()
            .chain(&self.high_bins)
            .map(|b| b.end)
            .max()
            .unwrap_or(0)
    }
}

fn equal_count_bins(values: &[f64], range: Range<usize>, bins: usize) -> Vec<Bin> {
    let total = range.len();
    if bins == 0 {
        return vec![];
    }
    let base = total / bins;
    let extra = total % bins;
    let mut out = Vec::with_capacity(bins);
    let mut start = range.start;
    for i in 0..bins {
        let size = base + usize::from(i < extra);
        let end = start + size;
        out.push(Bin {
            start,
            end,
            lam_min: values[start],
            lam_max: values[end - 1],
        });
        start = end;
    }
    out
}

/// Equal-count contiguous bins over each band; the remainder goes to the
/// first (lowest-λ) bins.
pub fn make_partitions(es: &EigenSystem, m_low: usize, m_high: usize) -> Result<PartitionSpec> {
    let top = es.top_count();
    let bottom = es.bottom_count();
    if m_low > top {
        return Err(Error::BandTooSmall {
            band: "low-frequency",
            requested: m_low,
            available: top,
        });
    }
    if m_high > bottom {
        return Err(Error::BandTooSmall {
            band: "high-frequency",
            requested: m_high,
            available: bottom,
        });
    }
    let values = es.values();
    Ok(PartitionSpec {
        low_bins: equal_count_bins(values, bottom..es.len(), m_low),
        high_bins: equal_count_bins(values, 0..bottom, m_high),
    })
}

/// Horner evaluation of `Σ_p coeffs[p] λ^p`.
pub fn eval_piece(coeffs: &[f64], lam: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * lam + c)
}

/// Derivative-free helper: `λ^p` for `p = 0..len`.
pub(crate) fn monomials(lam: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut x = 1.0;
    for _ in 0..len {
        out.push(x);
        x *= lam;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub partition: PartitionSpec,
    pub low_coeffs: Vec<Vec<f64>>,
    pub high_coeffs: Vec<Vec<f64>>,
    pub gpr_coeffs: Vec<f64>,
    pub eta_low: f64,
    pub eta_high: f64,
    pub eta_gpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Etas {
    pub low: f64,
    pub high: f64,
    pub gpr: f64,
}

impl Etas {
    /// `η_l = η_h = eta`, `η_gpr = 1 − eta`.
    pub fn tied(eta: f64) -> Self {
        Self {
            low: eta,
            high: eta,
            gpr: 1.0 - eta,
        }
    }
}

impl FilterBank {
    /// Bank with every adaptive piece of degree `order` set to zero.
    pub fn new(partition: PartitionSpec, order: usize, gpr_coeffs: Vec<f64>, etas: Etas) -> Self {
        let low_coeffs = vec![vec![0.0; order + 1]; partition.low_bins.len()];
        let high_coeffs = vec![vec![0.0; order + 1]; partition.high_bins.len()];
        Self {
            partition,
            low_coeffs,
            high_coeffs,
            gpr_coeffs,
            eta_low: etas.low,
            eta_high: etas.high,
            eta_gpr: etas.gpr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.low_coeffs.len() != self.partition.low_bins.len()
            || self.high_coeffs.len() != self.partition.high_bins.len()
        {
            return Err(Error::Shape(
                "coefficient lists do not match the partition".into(),
            ));
        }
        let all_finite = self
            .low_coeffs
            .iter()
            .chain(&self.high_coeffs)
            .flatten()
            .chain(&self.gpr_coeffs)
            .chain([&self.eta_low, &self.eta_high, &self.eta_gpr])
            .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("filter bank entry".into()));
        }
        if self
            .low_coeffs
            .iter()
            .chain(&self.high_coeffs)
            .any(|c| c.is_empty())
        {
            return Err(Error::Shape("empty polynomial piece".into()));
        }
        Ok(())
    }

    /// Pieces in band order: `(eta, bin, coeffs)`.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, &Bin, &Vec<f64>)> {
        let low = self
            .partition
            .low_bins
            .iter()
            .zip(&self.low_coeffs)
            .map(|(b, c)| (self.eta_low, b, c));
        let high = self
            .partition
            .high_bins
            .iter()
            .zip(&self.high_coeffs)
            .map(|(b, c)| (self.eta_high, b, c));
        low.chain(high)
    }

    /// Number of trainable filter coefficients.
    pub fn coeff_count(&self) -> usize {
        self.low_coeffs
            .iter()
            .chain(&self.high_coeffs)
            .map(Vec::len)
            .sum::<usize>()
            + self.gpr_coeffs.len()
    }
}

/// Total response at every stored eigenvalue.
pub fn freq_response(fb: &FilterBank, es: &EigenSystem) -> Result<Vec<f64>> {
    if fb.partition.max_index() > es.len() {
        return Err(Error::BandTooSmall {
            band: "partition",
            requested: fb.partition.max_index(),
            available: es.len(),
        });
    }
    let values = es.values();
    let mut out: Vec<f64> = values
        .iter()
        .map(|&lam| fb.eta_gpr * eval_piece(&fb.gpr_coeffs, lam))
        .collect();
    for (eta, bin, coeffs) in fb.pieces() {
        for j in bin.range() {
            out[j] += eta * eval_piece(coeffs, values[j]);
        }
    }
    Ok(out)
}

fn band_penalty(bins: &[Bin], coeffs: &[Vec<f64>]) -> f64 {
    bins.windows(2)
        .zip(coeffs.windows(2))
        .map(|(b, c)| {
            let a = b[0].lam_max;
            let z = b[1].lam_min;
            let w = (-(a - z).powi(2)).exp();
            let d = eval_piece(&c[0], a) - eval_piece(&c[1], z);
            w * d * d
        })
        .fold(0.0, |acc, x| acc + x)
}

/// Knot-smoothness penalty, summed within each band over consecutive bins.
pub fn boundary_penalty(fb: &FilterBank) -> f64 {
    band_penalty(&fb.partition.low_bins, &fb.low_coeffs)
        + band_penalty(&fb.partition.high_bins, &fb.high_coeffs)
}

fn band_penalty_grad(bins: &[Bin], coeffs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut grads: Vec<Vec<f64>> = coeffs.iter().map(|c| vec![0.0; c.len()]).collect();
    for i in 0..bins.len().saturating_sub(1) {
        let a = bins[i].lam_max;
        let z = bins[i + 1].lam_min;
        let w = (-(a - z).powi(2)).exp();
        let d = eval_piece(&coeffs[i], a) - eval_piece(&coeffs[i + 1], z);
        for (g, m) in grads[i].iter_mut().zip(monomials(a, coeffs[i].len())) {
            *g += 2.0 * w * d * m;
        }
        for (g, m) in grads[i + 1]
            .iter_mut()
            .zip(monomials(z, coeffs[i + 1].len()))
        {
            *g -= 2.0 * w * d * m;
        }
    }
    grads
}

/// Gradient of [`boundary_penalty`] w.r.t. the low and high coefficients.
pub fn boundary_penalty_grad(fb: &FilterBank) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (
        band_penalty_grad(&fb.partition.low_bins, &fb.low_coeffs),
        band_penalty_grad(&fb.partition.high_bins, &fb.high_coeffs),
    )
}

/// Σ |h_i(σ_i^max) − h_{i+1}(σ_{i+1}^min)| over consecutive bins in both bands.
pub fn knot_discontinuity(fb: &FilterBank) -> f64 {
    let band = |bins: &[Bin], coeffs: &[Vec<f64>]| -> f64 {
        bins.windows(2)
            .zip(coeffs.windows(2))
            .map(|(b, c)| (eval_piece(&c[0], b[0].lam_max) - eval_piece(&c[1], b[1].lam_min)).abs())
            .fold(0.0, |acc, x| acc + x)
    };
    band(&fb.partition.low_bins, &fb.low_coeffs) + band(&fb.partition.high_bins, &fb.high_coeffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Ppr,
    Nppr,
    Random,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppr" => Ok(Self::Ppr),
            "nppr" => Ok(Self::Nppr),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidParameter(format!(
                "unknown init scheme {other:?}"
            ))),
        }
    }
}

/// Initial coefficients of the global polynomial (length `k + 1`).
///
/// PPR: `α(1−α)^p` for `p < k` and `(1−α)^k` last, summing to one.
/// NPPR: `(−α)^p` scaled to unit 1-norm. Random: uniform in [−1, 1] scaled
/// to unit 1-norm.
pub fn gpr_init(scheme: InitScheme, alpha: f64, k: usize, seed: u64) -> Result<Vec<f64>> {
    if matches!(scheme, InitScheme::Ppr | InitScheme::Nppr) && !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let coeffs = match scheme {
        InitScheme::Ppr => {
            let keep = 1.0 - alpha;
            let mut out: Vec<f64> = (0..k).map(|p| alpha * keep.powf(p as f64)).collect();
            out.push(keep.powf(k as f64));
            out
        }
        InitScheme::Nppr => {
            let raw = monomials(-alpha, k + 1);
            normalize_l1(raw)
        }
        InitScheme::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..=k).map(|_| rng.random_range(-1.0..=1.0)).collect();
            normalize_l1(raw)
        }
    };
    Ok(coeffs)
}

fn normalize_l1(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().map(|x| x.abs()).sum();
    if s == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / s).collect()
}
