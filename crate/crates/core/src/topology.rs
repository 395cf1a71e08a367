//! Communication graphs, Laplacians and spectral gaps.

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigensolve, Mat, DEFAULT_ZERO_TOL};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyKind {
    Line(usize),
    Grid2d { rows: usize, cols: usize },
    Complete(usize),
    Custom { n: usize, edges: Vec<(usize, usize)> },
}

/// Undirected simple connected graph with positive edge weights `μ_kl`.
#[derive(Debug, Clone)]
pub struct CommunicationGraph<S> {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<S>,
}

impl<S: Scalar> CommunicationGraph<S> {
    /// Validates and builds a graph. Edges are stored with `k < l`.
    pub fn new(n: usize, edges: Vec<(usize, usize)>, weights: Vec<S>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph needs at least one node".into()));
        }
        if edges.len() != weights.len() {
            return Err(Error::Graph(format!(
                "{} edges but {} weights",
                edges.len(),
                weights.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut normalized = Vec::with_capacity(edges.len());
        for (e, (&(k, l), &w)) in edges.iter().zip(&weights).enumerate() {
            if k >= n || l >= n {
                return Err(Error::Graph(format!(
                    "edge {e} ({k},{l}) references a node outside 0..{n}"
                )));
            }
            if k == l {
                return Err(Error::Graph(format!("edge {e} is a self-loop on node {k}")));
            }
            if !(w > S::zero()) || !w.is_finite() {
                return Err(Error::Graph(format!("edge {e} ({k},{l}) has weight {w}")));
            }
            let key = (k.min(l), k.max(l));
            if !seen.insert(key) {
                return Err(Error::Graph(format!("edge {e} ({k},{l}) is a duplicate")));
            }
            normalized.push(key);
        }
        let mut dsu = DisjointSets::new(n);
        for &(k, l) in &normalized {
            dsu.union(k, l);
        }
        let root = dsu.find(0);
        if let Some(stray) = (1..n).find(|&v| dsu.find(v) != root) {
            return Err(Error::Graph(format!(
                "graph is disconnected: node {stray} is not reachable from node 0"
            )));
        }
        Ok(Self {
            n,
            edges: normalized,
            weights,
        })
    }

    pub fn with_unit_weights(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let w = vec![S::one(); edges.len()];
        Self::new(n, edges, w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `L_kk = Σ μ_kl²`, `L_kl = −μ_kl²`.
    pub fn laplacian(&self) -> Mat<S> {
        let mut l = Mat::zeros(self.n, self.n);
        for (&(k, m), &w) in self.edges.iter().zip(&self.weights) {
            let w2 = w * w;
            l[(k, k)] += w2;
            l[(m, m)] += w2;
            l[(k, m)] -= w2;
            l[(m, k)] -= w2;
        }
        l
    }

    /// n × E matrix whose column for edge (k, l) is `μ_kl (e_k − e_l)`.
    pub fn incidence(&self) -> Mat<S> {
        let mut a = Mat::zeros(self.n, self.edges.len());
        for (e, (&(k, l), &w)) in self.edges.iter().zip(&self.weights).enumerate() {
            a[(k, e)] = w;
            a[(l, e)] = -w;
        }
        a
    }

    /// Applies `L` to each column of the n × d matrix `y`.
    pub fn apply_laplacian(&self, y: &Mat<S>) -> Mat<S> {
        let mut out = Mat::zeros(y.rows(), y.cols());
        for (&(k, l), &w) in self.edges.iter().zip(&self.weights) {
            let w2 = w * w;
            for c in 0..y.cols() {
                let diff = w2 * (y[(k, c)] - y[(l, c)]);
                out[(k, c)] += diff;
                out[(l, c)] -= diff;
            }
        }
        out
    }

    pub fn spectrum(&self) -> Result<GraphSpectrum<S>> {
        let spec = symmetric_eigensolve(&self.laplacian(), S::of(DEFAULT_ZERO_TOL), false)?;
        if spec.kernel_dim != 1 {
            return Err(Error::KernelDimension(spec.kernel_dim));
        }
        let lambda_max = spec.lambda_max();
        let lambda_min_pos = spec.lambda_min_pos();
        Ok(GraphSpectrum {
            lambda_min_pos,
            lambda_max,
            gamma: lambda_min_pos.map(|l| l / lambda_max),
        })
    }
}

/// Laplacian spectral quantities. For a single node there is no positive
/// eigenvalue, so the gap is undefined.
#[derive(Debug, Clone, Copy)]
pub struct GraphSpectrum<S> {
    pub lambda_min_pos: Option<S>,
    pub lambda_max: S,
    pub gamma: Option<S>,
}

pub fn build_topology<S: Scalar>(kind: &TopologyKind) -> Result<CommunicationGraph<S>> {
    match *kind {
        TopologyKind::Line(n) => {
            CommunicationGraph::with_unit_weights(n, (1..n).map(|k| (k - 1, k)).collect())
        }
        TopologyKind::Complete(n) => {
            let edges = (0..n)
                .flat_map(|k| (k + 1..n).map(move |l| (k, l)))
                .collect();
            CommunicationGraph::with_unit_weights(n, edges)
        }
        TopologyKind::Grid2d { rows, cols } => {
            if rows == 0 || cols == 0 {
                return Err(Error::Graph(format!("grid of size {rows}x{cols}")));
            }
            let id = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push((id(r, c), id(r, c + 1)));
                    }
                    if r + 1 < rows {
                        edges.push((id(r, c), id(r + 1, c)));
                    }
                }
            }
            CommunicationGraph::with_unit_weights(rows * cols, edges)
        }
        TopologyKind::Custom { n, ref edges } => {
            CommunicationGraph::with_unit_weights(n, edges.clone())
        }
    }
}

/// `γ = λ_min⁺(L) / λ_max(L)`.
pub fn spectral_gap<S: Scalar>(g: &CommunicationGraph<S>) -> Result<S> {
    g.spectrum()?
        .gamma
        .ok_or_else(|| Error::Graph("spectral gap undefined for a single node".into()))
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}
