//! Frame graphs: cosine-similarity and temporal-chain adjacency, plus the
//! symmetric degree-normalized aggregation coefficients used by the
//! message-passing layers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json_atomic};
use crate::matrix::{dot, Matrix};

/// Largest rounding excursion outside `[-1, 1]` tolerated before clamping.
pub const SIMILARITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Cosine,
    Temporal,
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GraphKind::Cosine => "cosine",
            GraphKind::Temporal => "temporal",
        })
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(GraphKind::Cosine),
            "temporal" => Ok(GraphKind::Temporal),
            other => Err(Error::Config(format!("unknown graph kind {other:?}"))),
        }
    }
}

/// Pairwise cosine similarities, symmetric, clamped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Node features with a symmetric, self-loop-free adjacency.
///
/// Self-loops are implicit: `degree_hat[i] = 1 + |N(i)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub features: Matrix,
    adjacency: Vec<bool>,
    pub degree_hat: Vec<f64>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Self-edges and
    /// out-of-range indices are rejected; duplicates are merged.
    pub fn from_edges(features: Matrix, edges: &[(usize, usize)]) -> Result<Self> {
        let n = features.rows();
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Shape(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::Invalid(format!("self-edge at node {i}")));
            }
            adjacency[i * n + j] = true;
            adjacency[j * n + i] = true;
        }
        Ok(Self::from_adjacency(features, adjacency))
    }

    fn from_adjacency(features: Matrix, adjacency: Vec<bool>) -> Self {
        let n = features.rows();
        let degree_hat = (0..n)
            .map(|i| 1.0 + adjacency[i * n..(i + 1) * n].iter().filter(|&&a| a).count() as f64)
            .collect();
        Self { features, adjacency, degree_hat }
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n() + j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n();
        self.adjacency[i * n..(i + 1) * n].iter().enumerate().filter_map(|(j, &a)| a.then_some(j))
    }

    /// Undirected edges as `(i, j)` with `i < j`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency[i * n + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count() / 2
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Graph {
        let n = self.n();
        assert_eq!(perm.len(), n);
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = self.adjacency[perm[i] * n + perm[j]];
            }
        }
        Graph::from_adjacency(self.features.permute_rows(perm), adjacency)
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.n(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            degree_hat: self.degree_hat.clone(),
        }
    }
}

/// JSON dump of a graph's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub degree_hat: Vec<f64>,
}

pub fn cosine_similarity_matrix(x: &Matrix) -> Result<SimilarityMatrix> {
    if !x.is_finite() {
        return Err(Error::Invalid("non-finite feature value".into()));
    }
    let n = x.rows();
    let norms: Vec<f64> = x.iter_rows().map(|r| dot(r, r).sqrt()).collect();
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        values[(i, i)] = 1.0;
        for j in i + 1..n {
            if norms[j] == 0.0 {
                continue;
            }
            let s = dot(x.row(i), x.row(j)) / (norms[i] * norms[j]);
            debug_assert!(s.abs() <= 1.0 + SIMILARITY_SLACK, "similarity {s}");
            let s = s.clamp(-1.0, 1.0);
            values[(i, j)] = s;
            values[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix { values })
}

pub fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > -1.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must lie in (-1, 1], got {gamma}")))
    }
}

/// Connects every pair of distinct frames whose cosine similarity is at
/// least `gamma`.
pub fn build_cosine_graph(x: &Matrix, gamma: f64) -> Result<Graph> {
    validate_gamma(gamma)?;
    let sim = cosine_similarity_matrix(x)?;
    let n = x.rows();
    let nonzero: Vec<bool> = x.iter_rows().map(|r| r.iter().any(|&v| v != 0.0)).collect();
    let mut adjacency = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            // zero rows keep only their implicit self-loop
            if nonzero[i] && nonzero[j] && sim.get(i, j) >= gamma {
                adjacency[i * n + j] = true;
                adjacency[j * n + i] = true;
            }
        }
    }
    Ok(Graph::from_adjacency(x.clone(), adjacency))
}

/// Chain graph linking each frame to its predecessor and successor.
pub fn build_temporal_graph(x: &Matrix) -> Result<Graph> {
    if !x.is_finite() {
        return Err(Error::Invalid("non-finite feature value".into()));
    }
    let edges: Vec<_> = (1..x.rows()).map(|i| (i - 1, i)).collect();
    Graph::from_edges(x.clone(), &edges)
}

pub fn build_graph(x: &Matrix, kind: GraphKind, gamma: f64) -> Result<Graph> {
    match kind {
        GraphKind::Cosine => build_cosine_graph(x, gamma),
        GraphKind::Temporal => build_temporal_graph(x),
    }
}

/// Sparse symmetric aggregation matrix with entries `1/sqrt(d̂_i d̂_j)`,
/// stored row-compressed with ascending column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCoefficients {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl NormCoefficients {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// Entry `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    /// `C · H`. Since `C` is symmetric this is also the backward map.
    pub fn aggregate(&self, h: &Matrix) -> Matrix {
        assert_eq!(h.rows(), self.n, "aggregation over wrong node count");
        let mut out = Matrix::zeros(self.n, h.cols());
        for i in 0..self.n {
            let dst = out.row_mut(i);
            for (j, c) in self.row(i) {
                crate::matrix::axpy(c, h.row(j), dst);
            }
        }
        out
    }
}

/// Aggregation coefficients over `N(i) ∪ {i}`.
pub fn norm_coefficients(g: &Graph) -> NormCoefficients {
    norm_coefficients_with(g, true)
}

/// Aggregation coefficients; `include_self = false` drops the diagonal while
/// keeping the `+1` in the degree.
pub fn norm_coefficients_with(g: &Graph, include_self: bool) -> NormCoefficients {
    let n = g.n();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        for j in 0..n {
            if (i == j && include_self) || g.has_edge(i, j) {
                cols.push(j);
                values.push(1.0 / (g.degree_hat[i] * g.degree_hat[j]).sqrt());
            }
        }
        row_ptr.push(cols.len());
    }
    NormCoefficients { n, row_ptr, cols, values }
}

pub fn dot_string(g: &Graph) -> String {
    let mut out = String::from("graph G {\n");
    for i in 0..g.n() {
        let _ = writeln!(out, "  {i};");
    }
    for (i, j) in g.edges() {
        let _ = writeln!(out, "  {i} -- {j};");
    }
    out.push_str("}\n");
    out
}

/// Writes the graph in Graphviz DOT format.
pub fn export_dot(g: &Graph, path: &Path) -> Result<()> {
    write_atomic(path, dot_string(g).as_bytes())
}

pub fn export_json(g: &Graph, path: &Path) -> Result<()> {
    write_json_atomic(path, &g.to_json())
}
