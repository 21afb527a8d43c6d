//! The piecewise-polynomial filtered predictor: an MLP produces Z₀, the
//! filter bank propagates it, and the result feeds a row softmax.
//!
//! Gradients are derived by hand; `backward` mirrors `forward` step by step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{boundary_penalty, boundary_penalty_grad, eval_piece, FilterBank};
use crate::graph::NormalizedGraph;
use crate::linalg::Matrix;
use crate::spectral::EigenSystem;

/// Everything the forward pass reads besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct GraphContext<'a> {
    pub x: &'a Matrix,
    pub graph: &'a NormalizedGraph,
    pub eigen: &'a EigenSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub hidden: usize,
    pub c: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Linear → ReLU → dropout → linear.
    #[default]
    Mlp,
    /// A single linear map `X W1 + b1` (`w2`/`b2` stay empty).
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub head: Head,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub filter: FilterBank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl ModelParams {
    /// Weights and biases uniform in ±1/√fan_in; the filter is taken as is.
    pub fn init(dims: Dims, head: Head, filter: FilterBank, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out1 = match head {
            Head::Mlp => dims.hidden,
            Head::Linear => dims.c,
        };
        let b = 1.0 / (dims.d.max(1) as f64).sqrt();
        let w1 = uniform_matrix(dims.d, out1, b, &mut rng);
        let b1 = (0..out1).map(|_| rng.random_range(-b..=b)).collect();
        let (w2, b2) = match head {
            Head::Mlp => {
                let b = 1.0 / (dims.hidden.max(1) as f64).sqrt();
                let w2 = uniform_matrix(dims.hidden, dims.c, b, &mut rng);
                let b2 = (0..dims.c).map(|_| rng.random_range(-b..=b)).collect();
                (w2, b2)
            }
            Head::Linear => (Matrix::zeros(0, 0), vec![]),
        };
        Self {
            dims,
            head,
            w1,
            b1,
            w2,
            b2,
            filter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { d, hidden, c } = self.dims;
        let ok = match self.head {
            Head::Mlp => {
                self.w1.shape() == (d, hidden)
                    && self.b1.len() == hidden
                    && self.w2.shape() == (hidden, c)
                    && self.b2.len() == c
            }
            Head::Linear => {
                self.w1.shape() == (d, c)
                    && self.b1.len() == c
                    && self.w2.rows() == 0
                    && self.b2.is_empty()
            }
        };
        if !ok {
            return Err(Error::Shape("MLP parameters do not match dims".into()));
        }
        if !self.w1.is_finite()
            || !self.w2.is_finite()
            || self.b1.iter().chain(&self.b2).any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("MLP parameters".into()));
        }
        self.filter.validate()
    }

    /// Trainable values in a fixed order: w1, b1, w2, b2, low pieces, high
    /// pieces, gpr coefficients. The η weights are hyperparameters.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        for c in self
            .filter
            .low_coeffs
            .iter()
            .chain(&self.filter.high_coeffs)
        {
            v.extend_from_slice(c);
        }
        v.extend_from_slice(&self.filter.gpr_coeffs);
        v
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flatten_len() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, model has {}",
                flat.len(),
                self.flatten_len()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.w1.as_mut_slice());
        take(&mut self.b1);
        take(self.w2.as_mut_slice());
        take(&mut self.b2);
        for c in self
            .filter
            .low_coeffs
            .iter_mut()
            .chain(self.filter.high_coeffs.iter_mut())
        {
            take(c);
        }
        take(&mut self.filter.gpr_coeffs);
        Ok(())
    }

    pub fn flatten_len(&self) -> usize {
        self.w1.as_slice().len()
            + self.b1.len()
            + self.w2.as_slice().len()
            + self.b2.len()
            + self.filter.coeff_count()
    }
}

/// Gradients laid out like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub low_coeffs: Vec<Vec<f64>>,
    pub high_coeffs: Vec<Vec<f64>>,
    pub gpr_coeffs: Vec<f64>,
}

impl Gradients {
    /// Same order as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        for c in self.low_coeffs.iter().chain(&self.high_coeffs) {
            v.extend_from_slice(c);
        }
        v.extend_from_slice(&self.gpr_coeffs);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub h1_pre: Matrix,
    pub h1: Matrix,
    /// Inverted-dropout multipliers (0 or 1/(1−p)); `None` when inactive.
    pub mask: Option<Matrix>,
    pub z0: Matrix,
    /// `U_iᵀ Z₀` per piece, low bins then high bins.
    pub projections: Vec<Matrix>,
    /// `Ã^k Z₀` for k = 0..=K.
    pub powers: Vec<Matrix>,
    pub logits: Matrix,
    pub probs: Matrix,
}

fn add_bias(m: &mut Matrix, b: &[f64]) {
    for i in 0..m.rows() {
        for (x, bi) in m.row_mut(i).iter_mut().zip(b) {
            *x += bi;
        }
    }
}

fn col_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (acc, x) in s.iter_mut().zip(m.row(i)) {
            *acc += x;
        }
    }
    s
}

pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut p = z.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - mx).exp();
            s += *x;
        }
        for x in row.iter_mut() {
            *x /= s;
        }
    }
    p
}

fn check_context(params: &ModelParams, ctx: &GraphContext) -> Result<()> {
    params.validate()?;
    let n = ctx.graph.n();
    if ctx.x.shape() != (n, params.dims.d) {
        return Err(Error::Shape(format!(
            "features are {}x{}, expected {n}x{}",
            ctx.x.rows(),
            ctx.x.cols(),
            params.dims.d
        )));
    }
    if ctx.eigen.source_n() != n {
        return Err(Error::Shape(format!(
            "eigensystem is for n = {}, graph has n = {n}",
            ctx.eigen.source_n()
        )));
    }
    let need = params.filter.partition.max_index();
    if need > ctx.eigen.len() {
        return Err(Error::BandTooSmall {
            band: "partition",
            requested: need,
            available: ctx.eigen.len(),
        });
    }
    Ok(())
}

/// Dropout multipliers for an `rows x cols` activation.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Forward pass; train mode draws a seeded hidden-layer dropout mask.
pub fn forward(
    params: &ModelParams,
    ctx: &GraphContext,
    mode: Mode,
    dropout: f64,
    seed: u64,
) -> Result<ForwardTrace> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidParameter(format!(
            "dropout must lie in [0, 1), got {dropout}"
        )));
    }
    let mask = match (mode, params.head) {
        (Mode::Train, Head::Mlp) if dropout > 0.0 => Some(dropout_mask(
            ctx.x.rows(),
            params.dims.hidden,
            dropout,
            seed,
        )),
        _ => None,
    };
    forward_with_mask(params, ctx, mode, mask)
}

/// Forward pass with an explicit dropout mask.
pub fn forward_with_mask(
    params: &ModelParams,
    ctx: &GraphContext,
    mode: Mode,
    mask: Option<Matrix>,
) -> Result<ForwardTrace> {
    check_context(params, ctx)?;
    let mut h1_pre = ctx.x.matmul(&params.w1);
    add_bias(&mut h1_pre, &params.b1);
    let (h1, z0) = match params.head {
        Head::Linear => (h1_pre.clone(), h1_pre.clone()),
        Head::Mlp => {
            let mut h1 = h1_pre.clone();
            for x in h1.as_mut_slice() {
                *x = x.max(0.0);
            }
            let dropped = match &mask {
                Some(m) => {
                    if m.shape() != h1.shape() {
                        return Err(Error::Shape("dropout mask shape".into()));
                    }
                    hadamard(&h1, m)
                }
                None => h1.clone(),
            };
            let mut z0 = dropped.matmul(&params.w2);
            add_bias(&mut z0, &params.b2);
            (h1, z0)
        }
    };

    let fb = &params.filter;
    let es = ctx.eigen;
    let vecs = es.vectors();
    let values = es.values();
    let mut logits = Matrix::zeros(z0.rows(), z0.cols());
    let mut projections = Vec::new();
    for (eta, bin, coeffs) in fb.pieces() {
        let u = vecs.select_cols(&(bin.start..bin.end).collect::<Vec<_>>());
        let proj = u.t_matmul(&z0);
        let mut scaled = proj.clone();
        for (r, j) in bin.range().enumerate() {
            let g = eta * eval_piece(coeffs, values[j]);
            for x in scaled.row_mut(r) {
                *x *= g;
            }
        }
        logits.axpy(1.0, &u.matmul(&scaled));
        projections.push(proj);
    }
    let mut powers = Vec::with_capacity(fb.gpr_coeffs.len());
    let mut cur = z0.clone();
    for (k, &g) in fb.gpr_coeffs.iter().enumerate() {
        if k > 0 {
            cur = ctx.graph.spmm(&cur)?;
        }
        logits.axpy(fb.eta_gpr * g, &cur);
        powers.push(cur.clone());
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    let probs = softmax_rows(&logits);
    Ok(ForwardTrace {
        mode,
        h1_pre,
        h1,
        mask,
        z0,
        projections,
        powers,
        logits,
        probs,
    })
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// `Σ_k γ_k Ã^k Z` by repeated sparse products.
pub fn gpr_apply_spatial(fb: &FilterBank, ng: &NormalizedGraph, z: &Matrix) -> Result<Matrix> {
    let mut acc = Matrix::zeros(z.rows(), z.cols());
    let mut cur = z.clone();
    for (k, &g) in fb.gpr_coeffs.iter().enumerate() {
        if k > 0 {
            cur = ng.spmm(&cur)?;
        }
        acc.axpy(g, &cur);
    }
    Ok(acc)
}

/// `U diag(Σ_k γ_k λ^k) Uᵀ Z` over the stored eigenpairs.
pub fn gpr_apply_spectral(fb: &FilterBank, es: &EigenSystem, z: &Matrix) -> Matrix {
    let u = es.vectors();
    let mut proj = u.t_matmul(z);
    for (j, &lam) in es.values().iter().enumerate() {
        let g = eval_piece(&fb.gpr_coeffs, lam);
        for x in proj.row_mut(j) {
            *x *= g;
        }
    }
    u.matmul(&proj)
}

fn check_mask(n: usize, labels: &[usize], mask: &[usize], c: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::InvalidParameter("empty training mask".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    if let Some(&i) = mask.iter().find(|&&i| i >= n || labels[i] >= c) {
        return Err(Error::Label(format!(
            "masked row {i} is out of range or mislabelled"
        )));
    }
    Ok(())
}

/// Mean cross-entropy over the masked rows (from logits, via log-sum-exp).
pub fn cross_entropy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    check_mask(logits.rows(), labels, mask, logits.cols())?;
    let total: f64 = mask
        .iter()
        .map(|&i| {
            let row = logits.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
            lse - row[labels[i]]
        })
        .sum();
    Ok(total / mask.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub weight_decay: f64,
    pub boundary_weight: f64,
}

fn weight_norm_sq(params: &ModelParams) -> f64 {
    params.w1.frobenius_dot(&params.w1) + params.w2.frobenius_dot(&params.w2)
}

pub fn loss(
    params: &ModelParams,
    trace: &ForwardTrace,
    labels: &[usize],
    train_mask: &[usize],
    w: LossWeights,
) -> Result<f64> {
    let ce = cross_entropy(&trace.logits, labels, train_mask)?;
    let mut total = ce + w.weight_decay * weight_norm_sq(params);
    if w.boundary_weight != 0.0 {
        total += w.boundary_weight * boundary_penalty(&params.filter);
    }
    Ok(total)
}

pub fn backward(
    params: &ModelParams,
    ctx: &GraphContext,
    trace: &ForwardTrace,
    labels: &[usize],
    train_mask: &[usize],
    w: LossWeights,
) -> Result<Gradients> {
    let n = trace.logits.rows();
    let c = trace.logits.cols();
    check_mask(n, labels, train_mask, c)?;
    let fb = &params.filter;
    let pieces = fb.partition.low_bins.len() + fb.partition.high_bins.len();
    if trace.projections.len() != pieces
        || trace.powers.len() != fb.gpr_coeffs.len()
        || trace.z0.shape() != (n, c)
    {
        return Err(Error::Shape("trace does not match the parameters".into()));
    }

    // dL/dZ for mean cross-entropy.
    let mut g = Matrix::zeros(n, c);
    let inv = 1.0 / train_mask.len() as f64;
    for &i in train_mask {
        let p = trace.probs.row(i);
        let row = g.row_mut(i);
        for (k, x) in row.iter_mut().enumerate() {
            *x = inv * p[k];
        }
        row[labels[i]] -= inv;
    }

    let gpr_grad: Vec<f64> = trace
        .powers
        .iter()
        .map(|pk| fb.eta_gpr * g.frobenius_dot(pk))
        .collect();

    // Z₀ gradient through the GPR term: Σ_k γ_k Ã^k G by Horner.
    let mut dz0 = Matrix::zeros(n, c);
    if let Some((&last, rest)) = fb.gpr_coeffs.split_last() {
        let mut acc = g.clone();
        acc.scale(last);
        for &gk in rest.iter().rev() {
            acc = ctx.graph.spmm(&acc)?;
            acc.axpy(gk, &g);
        }
        dz0.axpy(fb.eta_gpr, &acc);
    }

    let values = ctx.eigen.values();
    let vecs = ctx.eigen.vectors();
    let mut piece_grads: Vec<Vec<f64>> = Vec::with_capacity(pieces);
    for ((eta, bin, coeffs), proj) in fb.pieces().zip(&trace.projections) {
        let u = vecs.select_cols(&(bin.start..bin.end).collect::<Vec<_>>());
        let q = u.t_matmul(&g);
        let mut grad = vec![0.0; coeffs.len()];
        let mut scaled = q.clone();
        for (r, j) in bin.range().enumerate() {
            let lam = values[j];
            let s = crate::linalg::dot(q.row(r), proj.row(r));
            let mut x = 1.0;
            for gp in grad.iter_mut() {
                *gp += eta * x * s;
                x *= lam;
            }
            let h = eta * eval_piece(coeffs, lam);
            for v in scaled.row_mut(r) {
                *v *= h;
            }
        }
        dz0.axpy(1.0, &u.matmul(&scaled));
        piece_grads.push(grad);
    }
    let n_low = fb.partition.low_bins.len();
    let mut high_coeffs = piece_grads.split_off(n_low);
    let mut low_coeffs = piece_grads;
    if w.boundary_weight != 0.0 {
        let (bl, bh) = boundary_penalty_grad(fb);
        for (dst, src) in low_coeffs
            .iter_mut()
            .zip(bl)
            .chain(high_coeffs.iter_mut().zip(bh))
        {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w.boundary_weight * s;
            }
        }
    }

    let (dw1, db1, dw2, db2) = match params.head {
        Head::Linear => {
            let mut dw1 = ctx.x.t_matmul(&dz0);
            dw1.axpy(2.0 * w.weight_decay, &params.w1);
            (dw1, col_sums(&dz0), Matrix::zeros(0, 0), vec![])
        }
        Head::Mlp => {
            let dropped = match &trace.mask {
                Some(m) => hadamard(&trace.h1, m),
                None => trace.h1.clone(),
            };
            let mut dw2 = dropped.t_matmul(&dz0);
            dw2.axpy(2.0 * w.weight_decay, &params.w2);
            let db2 = col_sums(&dz0);
            let mut dh = dz0.matmul_t(&params.w2);
            if let Some(m) = &trace.mask {
                dh = hadamard(&dh, m);
            }
            for (d, &pre) in dh.as_mut_slice().iter_mut().zip(trace.h1_pre.as_slice()) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            let mut dw1 = ctx.x.t_matmul(&dh);
            dw1.axpy(2.0 * w.weight_decay, &params.w1);
            (dw1, col_sums(&dh), dw2, db2)
        }
    };

    Ok(Gradients {
        w1: dw1,
        b1: db1,
        w2: dw2,
        b2: db2,
        low_coeffs,
        high_coeffs,
        gpr_coeffs: gpr_grad,
    })
}

/// Row argmax of the logits; ties go to the smaller class index.
pub fn predict(trace: &ForwardTrace) -> Vec<usize> {
    argmax_rows(&trace.logits)
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of `idx` whose prediction matches the label.
pub fn accuracy(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let hits = idx.iter().filter(|&&i| pred[i] == labels[i]).count();
    hits as f64 / idx.len() as f64
}
