//! Sparse undirected graphs, the self-loop normalised operator, and the
//! feature statistics used to track over-smoothing.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Undirected simple graph in compressed-sparse-row form.
///
/// Both directions of every edge are stored; self-loops and duplicates are
/// removed at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Graph {
    /// Build from raw index pairs: symmetrise, dedupe, drop self-loops.
    pub fn new(n: usize, raw_edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(src, dst) in raw_edges {
            if src >= n || dst >= n {
                return Err(Error::EdgeOutOfRange { src, dst, n });
            }
            if src == dst {
                continue;
            }
            adj[src].push(dst);
            adj[dst].push(src);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut nbrs in adj {
            nbrs.sort_unstable();
            nbrs.dedup();
            col_idx.extend(nbrs);
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|u| self.neighbors(u).iter().all(|&v| self.has_edge(v, u)))
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[u]..self.row_ptr[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.row_ptr[u + 1] - self.row_ptr[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.col_idx.len() / 2
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in CSR order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Stored (directed) entries, both directions.
    pub fn directed_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }
}

/// `build_graph` under its operation name.
pub fn build_graph(n: usize, raw_edges: &[(usize, usize)]) -> Result<Graph> {
    Graph::new(n, raw_edges)
}

/// Ã = D^{-1/2} (A + I) D^{-1/2} in CSR form, where D is the degree matrix
/// of A + I.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    n: usize,
    values: Vec<f64>,
    col_idx: Vec<usize>,
    row_ptr: Vec<usize>,
}

impl NormalizedGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    /// `y = Ã x`.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `Ã X` for a dense `n x c` block.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(Error::Shape(format!(
                "operator has {} rows, input has {}",
                self.n,
                x.rows()
            )));
        }
        let c = x.cols();
        let mut out = Matrix::zeros(self.n, c);
        for i in 0..self.n {
            let o = out.row_mut(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let w = self.values[k];
                for (oj, xj) in o.iter_mut().zip(x.row(self.col_idx[k])) {
                    *oj += w * xj;
                }
            }
        }
        Ok(out)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    /// Largest |Ã_ij − Ã_ji| over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }
}

pub fn sym_normalize(g: &Graph) -> NormalizedGraph {
    let n = g.n();
    // Degrees of A + I. Each entry is 1/sqrt(d_u d_v) from one rounding of
    // the product, so Ã is exactly symmetric.
    let deg: Vec<f64> = (0..n).map(|u| (g.degree(u) + 1) as f64).collect();
    let weight = |u: usize, v: usize| 1.0 / (deg[u] * deg[v]).sqrt();
    let mut values = Vec::with_capacity(g.col_idx.len() + n);
    let mut col_idx = Vec::with_capacity(g.col_idx.len() + n);
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    for u in 0..n {
        let mut self_done = false;
        for &v in g.neighbors(u) {
            if !self_done && v > u {
                col_idx.push(u);
                values.push(weight(u, u));
                self_done = true;
            }
            col_idx.push(v);
            values.push(weight(u, v));
        }
        if !self_done {
            col_idx.push(u);
            values.push(weight(u, u));
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedGraph {
        n,
        values,
        col_idx,
        row_ptr,
    }
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn edge_homophily(g: &Graph, labels: &[usize]) -> Result<f64> {
    if labels.len() != g.n() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.n()
        )));
    }
    let (same, total) = edge_label_counts(g, labels);
    if total == 0 {
        return Err(Error::NoEdges);
    }
    Ok(same as f64 / total as f64)
}

/// Fraction of undirected edges joining differently labelled nodes.
pub fn edge_heterophily(g: &Graph, labels: &[usize]) -> Result<f64> {
    Ok(1.0 - edge_homophily(g, labels)?)
}

fn edge_label_counts(g: &Graph, labels: &[usize]) -> (usize, usize) {
    let mut same = 0;
    let mut total = 0;
    for (u, v) in g.undirected_edges() {
        total += 1;
        if labels[u] == labels[v] {
            same += 1;
        }
    }
    (same, total)
}

/// Ã^j X by j successive sparse products.
pub fn apply_power(ng: &NormalizedGraph, x: &Matrix, j: usize) -> Result<Matrix> {
    if x.rows() != ng.n() {
        return Err(Error::Shape(format!(
            "operator has {} rows, input has {}",
            ng.n(),
            x.rows()
        )));
    }
    let mut cur = x.clone();
    for _ in 0..j {
        cur = ng.spmm(&cur)?;
    }
    Ok(cur)
}

/// Mean Euclidean distance over all unordered row pairs.
pub fn pairwise_distance_mean(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Shape(format!("need at least 2 rows, got {n}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = x.row(i);
        for j in (i + 1)..n {
            let b = x.row(j);
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            total += d2.sqrt();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(total / pairs)
}

/// Mean over columns of the per-column population variance.
pub fn feature_variance_mean(x: &Matrix) -> Result<f64> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Shape(format!("need at least 2 rows, got {n}")));
    }
    if d == 0 {
        return Err(Error::Shape("matrix has no columns".into()));
    }
    let mut total = 0.0;
    for j in 0..d {
        let mean = (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / n as f64;
        total += var;
    }
    Ok(total / d as f64)
}

/// Node features, labels and the train/val/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Check shapes, label range and split disjointness.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.features.rows() != n {
            return Err(Error::Shape(format!(
                "features have {} rows, graph has {n} nodes",
                self.features.rows()
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Label(format!(
                "{} labels for {n} nodes",
                self.labels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Label(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.num_classes)
        {
            return Err(Error::Label(format!(
                "node {i} has label {l} >= class count {}",
                self.num_classes
            )));
        }
        let mut owner: Vec<Option<&'static str>> = vec![None; n];
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in split {
                if i >= n {
                    return Err(Error::Label(format!(
                        "{name} split references node {i} >= {n}"
                    )));
                }
                if let Some(first) = owner[i] {
                    return Err(Error::OverlappingSplits {
                        index: i,
                        first,
                        second: name,
                    });
                }
                owner[i] = Some(name);
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }
}
