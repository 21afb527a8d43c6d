//! Full-graph training with Adam, step learning-rate decay and early
//! stopping on validation accuracy, plus a seeded random search.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{gpr_init, make_partitions, Etas, FilterBank, InitScheme};
use crate::graph::{Dataset, NormalizedGraph};
use crate::model::{
    accuracy, backward, cross_entropy, forward, loss, predict, Dims, GraphContext, Head,
    LossWeights, Mode, ModelParams,
};
use crate::spectral::EigenSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Bins over the low-frequency (top-λ) band.
    pub m_low: usize,
    /// Bins over the high-frequency (bottom-λ) band.
    pub m_high: usize,
    /// Degree of every adaptive piece.
    pub order: usize,
    /// Degree K of the global polynomial.
    pub gpr_order: usize,
    pub eta_low: f64,
    pub eta_high: f64,
    pub eta_gpr: f64,
    pub init: InitScheme,
    pub alpha: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let e = Etas::tied(0.5);
        Self {
            m_low: 2,
            m_high: 2,
            order: 3,
            gpr_order: 10,
            eta_low: e.low,
            eta_high: e.high,
            eta_gpr: e.gpr,
            init: InitScheme::Ppr,
            alpha: 0.1,
        }
    }
}

impl FilterConfig {
    pub fn etas(&self) -> Etas {
        Etas {
            low: self.eta_low,
            high: self.eta_high,
            gpr: self.eta_gpr,
        }
    }

    pub fn set_tied_eta(&mut self, eta: f64) {
        let e = Etas::tied(eta);
        self.eta_low = e.low;
        self.eta_high = e.high;
        self.eta_gpr = e.gpr;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub boundary_weight: f64,
    pub hidden: usize,
    pub head: Head,
    pub filter: FilterConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            lr_decay: 0.99,
            lr_decay_every: 50,
            weight_decay: 5e-4,
            dropout: 0.5,
            max_epochs: 1000,
            patience: 200,
            seed: 0,
            boundary_weight: 0.0,
            hidden: 64,
            head: Head::Mlp,
            filter: FilterConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "patience must lie in 1..={} (got {})",
                self.max_epochs, self.patience
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.weight_decay < 0.0 || self.boundary_weight < 0.0 {
            return bad("regularisation weights must be non-negative".into());
        }
        if self.head == Head::Mlp && self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        Ok(())
    }
}

/// `lr · decay^⌊epoch / every⌋`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / config.lr_decay_every.max(1)) as i32;
    config.lr * config.lr_decay.powi(steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub train_acc_at_best: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochLog>,
    pub best: ModelParams,
}

/// Fresh model for `ds` under `config`.
pub fn init_model(ds: &Dataset, es: &EigenSystem, config: &TrainConfig) -> Result<ModelParams> {
    let f = &config.filter;
    let partition = make_partitions(es, f.m_low, f.m_high)?;
    let gpr = gpr_init(f.init, f.alpha, f.gpr_order, config.seed)?;
    let bank = FilterBank::new(partition, f.order, gpr, f.etas());
    let dims = Dims {
        d: ds.features.cols(),
        hidden: config.hidden,
        c: ds.num_classes,
    };
    Ok(ModelParams::init(dims, config.head, bank, config.seed))
}

/// Per-epoch dropout seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Accuracies of `params` on the three splits, plus validation loss.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    ng: &NormalizedGraph,
    es: &EigenSystem,
) -> Result<(f64, f64, f64, f64)> {
    let ctx = GraphContext {
        x: &ds.features,
        graph: ng,
        eigen: es,
    };
    let t = forward(params, &ctx, Mode::Eval, 0.0, 0)?;
    let pred = predict(&t);
    let val_loss = if ds.val.is_empty() {
        f64::NAN
    } else {
        cross_entropy(&t.logits, &ds.labels, &ds.val)?
    };
    Ok((
        accuracy(&pred, &ds.labels, &ds.train),
        accuracy(&pred, &ds.labels, &ds.val),
        accuracy(&pred, &ds.labels, &ds.test),
        val_loss,
    ))
}

pub fn train_loop(
    ds: &Dataset,
    ng: &NormalizedGraph,
    es: &EigenSystem,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    ds.validate()?;
    if ds.train.is_empty() || ds.val.is_empty() || ds.test.is_empty() {
        return Err(Error::InvalidParameter(
            "train, val and test splits must be nonempty".into(),
        ));
    }
    let mut params = init_model(ds, es, config)?;
    let ctx = GraphContext {
        x: &ds.features,
        graph: ng,
        eigen: es,
    };
    let weights = LossWeights {
        weight_decay: config.weight_decay,
        boundary_weight: config.boundary_weight,
    };
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut history: Vec<EpochLog> = Vec::new();
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let abort = |epoch: usize, reason: String, history: &[EpochLog]| Error::TrainingAborted {
        epoch,
        reason,
        losses: history.iter().map(|h| h.loss).collect(),
    };

    for epoch in 0..config.max_epochs {
        let lr = lr_at(config, epoch);
        let trace = forward(
            &params,
            &ctx,
            Mode::Train,
            config.dropout,
            epoch_seed(config.seed, epoch),
        )
        .map_err(|e| abort(epoch, e.to_string(), &history))?;
        let l = loss(&params, &trace, &ds.labels, &ds.train, weights)?;
        if !l.is_finite() {
            return Err(abort(epoch, format!("loss is {l}"), &history));
        }
        let grads = backward(&params, &ctx, &trace, &ds.labels, &ds.train, weights)?;
        adam_step(&mut flat, &grads.flatten(), &mut adam, lr)
            .map_err(|e| abort(epoch, e.to_string(), &history))?;
        params.unflatten(&flat)?;

        let (train_acc, val_acc, _, val_loss) =
            evaluate(&params, ds, ng, es).map_err(|e| abort(epoch, e.to_string(), &history))?;
        history.push(EpochLog {
            epoch,
            loss: l,
            train_acc,
            val_acc,
            val_loss,
            lr,
        });
        let improved = match &best {
            None => true,
            Some((acc, vl, _, _)) => val_acc > *acc || (val_acc == *acc && val_loss < *vl),
        };
        if improved {
            best = Some((val_acc, val_loss, epoch, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.2);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }

    let (best_val_acc, _, best_epoch, best_params) =
        best.ok_or_else(|| Error::InvalidParameter("max_epochs must be positive".into()))?;
    let (train_acc_at_best, _, test_acc, _) = evaluate(&best_params, ds, ng, es)?;
    Ok(TrainResult {
        best_val_acc,
        test_acc,
        train_acc_at_best,
        best_epoch,
        epochs_run: history.len(),
        history,
        best: best_params,
    })
}

/// Sweep lists for [`random_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub bins: Vec<usize>,
    pub orders: Vec<usize>,
    pub k_extreme: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            bins: vec![2, 3, 4, 5, 10, 20],
            orders: (1..=10).collect(),
            k_extreme: vec![32, 64, 128, 256, 512, 1024],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTrial {
    pub trial: usize,
    pub m_low: usize,
    pub m_high: usize,
    pub order: usize,
    pub k_extreme: usize,
    pub eta: f64,
    /// Infeasible samples discarded before this one.
    pub resampled: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
}

pub const MAX_RESAMPLES: usize = 100;

/// Sample `trials` configurations around `base`; return the result with the
/// highest validation accuracy (earliest trial on ties) and the trial log.
pub fn random_search(
    ds: &Dataset,
    ng: &NormalizedGraph,
    es: &EigenSystem,
    base: &TrainConfig,
    space: &SearchSpace,
    trials: usize,
    seed: u64,
) -> Result<(TrainResult, Vec<SearchTrial>)> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if space.bins.is_empty() || space.orders.is_empty() || space.k_extreme.is_empty() {
        return Err(Error::InvalidParameter(
            "search space lists must be nonempty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(trials);
    let mut best: Option<TrainResult> = None;
    for trial in 0..trials {
        let mut resampled = 0;
        let (m_low, m_high, order, k, eta) = loop {
            let m_low = *space.bins.choose(&mut rng).expect("nonempty");
            let m_high = *space.bins.choose(&mut rng).expect("nonempty");
            let order = *space.orders.choose(&mut rng).expect("nonempty");
            let k = *space.k_extreme.choose(&mut rng).expect("nonempty");
            let mut eta: f64 = rng.random();
            while eta == 0.0 {
                eta = rng.random();
            }
            let feasible =
                k <= es.bottom_count() && k <= es.top_count() && m_low <= k && m_high <= k;
            if feasible {
                break (m_low, m_high, order, k, eta);
            }
            resampled += 1;
            if resampled >= MAX_RESAMPLES {
                return Err(Error::NoFeasibleConfig(resampled));
            }
        };
        let sub = es.extremes(k, k)?;
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(trial as u64);
        cfg.filter.m_low = m_low;
        cfg.filter.m_high = m_high;
        cfg.filter.order = order;
        cfg.filter.set_tied_eta(eta);
        let result = train_loop(ds, ng, &sub, &cfg)?;
        log.push(SearchTrial {
            trial,
            m_low,
            m_high,
            order,
            k_extreme: k,
            eta,
            resampled,
            best_val_acc: result.best_val_acc,
            test_acc: result.test_acc,
            best_epoch: result.best_epoch,
        });
        if best
            .as_ref()
            .is_none_or(|b| result.best_val_acc > b.best_val_acc)
        {
            best = Some(result);
        }
    }
    Ok((best.expect("at least one trial"), log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(&c, 0), 0.01);
        assert_eq!(lr_at(&c, 49), 0.01);
        assert!((lr_at(&c, 100) - 0.009801).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient() {
        let mut p = vec![1.5, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_is_sign() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[3.0, -0.2], &mut s, 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-7);
    }

    #[test]
    fn adam_two_steps_by_hand() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        // Hand-unrolled recursion with g = 1.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (m1, v1) = (1.0 - b1, 1.0 - b2);
        let x1 = -lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let (m2, v2) = (b1 * m1 + (1.0 - b1), b2 * v1 + (1.0 - b2));
        let x2 = x1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p[0] - x2).abs() < 1e-15);
        assert!((x2 + 0.2).abs() < 1e-7);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s, 0.1),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn config_contract() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.patience = 0;
        assert!(c.validate().is_err());
        c.patience = c.max_epochs + 1;
        assert!(c.validate().is_err());
        c.patience = 10;
        c.lr_decay = 1.5;
        assert!(c.validate().is_err());
    }
}
