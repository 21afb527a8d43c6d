//! Contextual stochastic-block-model fixtures with controllable homophily.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CsbmParams {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feat_dim: usize,
    /// Euclidean distance between any two class means.
    pub class_separation: f64,
    pub seed: u64,
}

/// Sample a cSBM dataset.
///
/// Node `i` belongs to class `i % classes`. Every pair `u < v` is linked
/// with probability `p_in` (same class) or `p_out`. Features are unit
/// Gaussians around class means placed `class_separation` apart. The split
/// is a seeded 48/32/20 permutation.
pub fn synth_csbm(p: &CsbmParams) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&p.p_in) || !(0.0..=1.0).contains(&p.p_out) {
        return Err(Error::InvalidParameter(format!(
            "edge probabilities must lie in [0, 1] (p_in={}, p_out={})",
            p.p_in, p.p_out
        )));
    }
    if p.classes < 2 || p.n < p.classes {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= classes <= n (classes={}, n={})",
            p.classes, p.n
        )));
    }
    if p.feat_dim == 0 {
        return Err(Error::InvalidParameter("feat_dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let labels: Vec<usize> = (0..p.n).map(|i| i % p.classes).collect();

    let mut edges = Vec::new();
    for u in 0..p.n {
        for v in (u + 1)..p.n {
            let prob = if labels[u] == labels[v] {
                p.p_in
            } else {
                p.p_out
            };
            if rng.random::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::new(p.n, &edges)?;

    let means = class_means(p, &mut rng);
    let mut features = Matrix::zeros(p.n, p.feat_dim);
    for (i, &c) in labels.iter().enumerate() {
        let row = features.row_mut(i);
        for (j, x) in row.iter_mut().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            *x = means[c][j] + noise;
        }
    }

    let mut order: Vec<usize> = (0..p.n).collect();
    order.shuffle(&mut rng);
    let n_train = p.n * 48 / 100;
    let n_val = p.n * 32 / 100;
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let ds = Dataset {
        graph,
        features,
        labels,
        num_classes: p.classes,
        train,
        val,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

fn class_means(p: &CsbmParams, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let scale = p.class_separation / 2f64.sqrt();
    if p.classes <= p.feat_dim {
        // Scaled axis vectors: every pair sits exactly `class_separation` apart.
        (0..p.classes)
            .map(|c| {
                let mut m = vec![0.0; p.feat_dim];
                m[c] = scale;
                m
            })
            .collect()
    } else {
        (0..p.classes)
            .map(|_| {
                let v: Vec<f64> = (0..p.feat_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * scale / norm).collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_homophily;

    fn params(p_in: f64, p_out: f64) -> CsbmParams {
        CsbmParams {
            n: 40,
            classes: 2,
            p_in,
            p_out,
            feat_dim: 4,
            class_separation: 2.0,
            seed: 11,
        }
    }

    #[test]
    fn pure_within_class_edges_are_homophilic() {
        let ds = synth_csbm(&params(1.0, 0.0)).unwrap();
        assert_eq!(edge_homophily(&ds.graph, &ds.labels).unwrap(), 1.0);
    }

    #[test]
    fn pure_between_class_edges_are_heterophilic() {
        let ds = synth_csbm(&params(0.0, 1.0)).unwrap();
        assert_eq!(edge_homophily(&ds.graph, &ds.labels).unwrap(), 0.0);
    }

    #[test]
    fn seeded_output_is_identical() {
        let a = synth_csbm(&params(0.3, 0.1)).unwrap();
        let b = synth_csbm(&params(0.3, 0.1)).unwrap();
        assert_eq!(a, b);
        let bits_a: Vec<u64> = a.features.as_slice().iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = b.features.as_slice().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn split_sizes_and_balance() {
        let ds = synth_csbm(&CsbmParams {
            n: 100,
            ..params(0.1, 0.1)
        })
        .unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (48, 32, 20));
        let ones = ds.labels.iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 50);
    }

    #[test]
    fn empty_graph_is_allowed() {
        let ds = synth_csbm(&params(0.0, 0.0)).unwrap();
        assert_eq!(ds.graph.edge_count(), 0);
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(synth_csbm(&params(1.5, 0.0)).is_err());
    }
}
