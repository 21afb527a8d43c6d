use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specfilt::filterbank::{gpr_init, make_partitions, Etas, FilterBank, InitScheme};
use specfilt::graph::sym_normalize;
use specfilt::linalg::Matrix;
use specfilt::model::{
    backward, forward, loss, Dims, GraphContext, Head, LossWeights, Mode, ModelParams,
};
use specfilt::spectral::dense_eigh;
use specfilt::synth::{synth_csbm, CsbmParams};

struct Fixture {
    x: Matrix,
    ng: specfilt::graph::NormalizedGraph,
    es: specfilt::spectral::EigenSystem,
    labels: Vec<usize>,
    train: Vec<usize>,
}

fn fixture() -> Fixture {
    let ds = synth_csbm(&CsbmParams {
        n: 30,
        classes: 3,
        p_in: 0.2,
        p_out: 0.1,
        feat_dim: 8,
        class_separation: 1.0,
        seed: 5,
    })
    .unwrap();
    let ng = sym_normalize(&ds.graph);
    let es = dense_eigh(&ng.to_dense()).unwrap().extremes(4, 4).unwrap();
    let mut train = ds.train.clone();
    train.extend(&ds.val);
    Fixture {
        x: ds.features,
        ng,
        es,
        labels: ds.labels,
        train,
    }
}

fn params(f: &Fixture, head: Head) -> ModelParams {
    let part = make_partitions(&f.es, 2, 2).unwrap();
    let gpr = gpr_init(InitScheme::Ppr, 0.2, 3, 0).unwrap();
    let mut fb = FilterBank::new(
        part,
        2,
        gpr,
        Etas {
            low: 0.6,
            high: 0.7,
            gpr: 0.4,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for c in fb.low_coeffs.iter_mut().chain(fb.high_coeffs.iter_mut()) {
        for x in c.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    ModelParams::init(
        Dims {
            d: 8,
            hidden: 8,
            c: 3,
        },
        head,
        fb,
        23,
    )
}

/// Largest per-group relative error `‖a − f‖ / max(‖a‖, ‖f‖)` between the
/// analytic gradient and central differences.
fn max_group_error(head: Head, weights: LossWeights) -> f64 {
    let f = fixture();
    let p = params(&f, head);
    let ctx = GraphContext {
        x: &f.x,
        graph: &f.ng,
        eigen: &f.es,
    };
    let objective = |q: &ModelParams| {
        let t = forward(q, &ctx, Mode::Eval, 0.0, 0).unwrap();
        loss(q, &t, &f.labels, &f.train, weights).unwrap()
    };
    let t = forward(&p, &ctx, Mode::Eval, 0.0, 0).unwrap();
    let g = backward(&p, &ctx, &t, &f.labels, &f.train, weights).unwrap();
    let analytic = g.flatten();
    let flat = p.flatten();
    let h = 1e-6;
    let mut numeric = vec![0.0; flat.len()];
    let mut q = p.clone();
    for i in 0..flat.len() {
        let mut v = flat.clone();
        v[i] = flat[i] + h;
        q.unflatten(&v).unwrap();
        let plus = objective(&q);
        v[i] = flat[i] - h;
        q.unflatten(&v).unwrap();
        let minus = objective(&q);
        numeric[i] = (plus - minus) / (2.0 * h);
    }
    let sizes = [
        g.w1.as_slice().len(),
        g.b1.len(),
        g.w2.as_slice().len(),
        g.b2.len(),
        g.low_coeffs.iter().map(Vec::len).sum(),
        g.high_coeffs.iter().map(Vec::len).sum(),
        g.gpr_coeffs.len(),
    ];
    let mut start = 0;
    let mut worst: f64 = 0.0;
    for s in sizes {
        let a = &analytic[start..start + s];
        let n = &numeric[start..start + s];
        start += s;
        if s == 0 {
            continue;
        }
        let diff: f64 = a
            .iter()
            .zip(n)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = specfilt::linalg::norm2(a).max(specfilt::linalg::norm2(n));
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

#[test]
fn mlp_gradients_match_central_differences() {
    let e = max_group_error(
        Head::Mlp,
        LossWeights {
            weight_decay: 5e-3,
            boundary_weight: 0.3,
        },
    );
    assert!(e <= 1e-5, "relative error {e:e}");
}

#[test]
fn linear_head_gradients_match_central_differences() {
    let e = max_group_error(
        Head::Linear,
        LossWeights {
            weight_decay: 1e-2,
            boundary_weight: 0.0,
        },
    );
    assert!(e <= 1e-5, "relative error {e:e}");
}

#[test]
fn doubling_boundary_weight_doubles_its_gradient_share() {
    let f = fixture();
    let p = params(&f, Head::Mlp);
    let ctx = GraphContext {
        x: &f.x,
        graph: &f.ng,
        eigen: &f.es,
    };
    let t = forward(&p, &ctx, Mode::Eval, 0.0, 0).unwrap();
    let grad = |bw: f64| {
        backward(
            &p,
            &ctx,
            &t,
            &f.labels,
            &f.train,
            LossWeights {
                weight_decay: 0.0,
                boundary_weight: bw,
            },
        )
        .unwrap()
    };
    let g0 = grad(0.0);
    let g1 = grad(1.0);
    let g2 = grad(2.0);
    for ((a, b), c) in g0
        .low_coeffs
        .iter()
        .flatten()
        .zip(g1.low_coeffs.iter().flatten())
        .zip(g2.low_coeffs.iter().flatten())
    {
        let one = b - a;
        let two = c - a;
        assert!((two - 2.0 * one).abs() <= 1e-12 * (1.0 + one.abs()));
    }
}

#[test]
fn perfect_fit_has_vanishing_gradients() {
    let f = fixture();
    let mut p = params(&f, Head::Linear);
    // Huge one-hot logits: with an identity GPR term and no pieces, set Z₀
    // directly through a linear head on one-hot features.
    let n = f.labels.len();
    let mut x = Matrix::zeros(n, 3);
    for (i, &l) in f.labels.iter().enumerate() {
        x[(i, l)] = 1.0;
    }
    p.dims.d = 3;
    p.w1 = Matrix::identity(3);
    p.w1.scale(200.0);
    p.b1 = vec![0.0; 3];
    p.filter = FilterBank::new(
        Default::default(),
        0,
        vec![1.0],
        Etas {
            low: 0.0,
            high: 0.0,
            gpr: 1.0,
        },
    );
    let ctx = GraphContext {
        x: &x,
        graph: &f.ng,
        eigen: &f.es,
    };
    let t = forward(&p, &ctx, Mode::Eval, 0.0, 0).unwrap();
    let w = LossWeights {
        weight_decay: 0.0,
        boundary_weight: 0.0,
    };
    assert_eq!(loss(&p, &t, &f.labels, &f.train, w).unwrap(), 0.0);
    let g = backward(&p, &ctx, &t, &f.labels, &f.train, w).unwrap();
    assert!(g.flatten().iter().all(|x| x.abs() <= 1e-12));
}
