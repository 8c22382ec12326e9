//! Symmetrically normalised propagation matrix `D^-1/2 (A + I) D^-1/2`.
//!
//! Stored as compressed rows (plus the transpose, for backward passes). The
//! `apply` family works on row-stacked batches: an input with `B * N` rows is
//! treated as `B` independent `N`-row blocks that each get multiplied by the
//! matrix.

use ndarray::{Array2, ArrayView2};

use super::MobilityGraph;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        for &(r, _, _) in &triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            row_ptr,
            cols: triplets.iter().map(|t| t.1).collect(),
            vals: triplets.iter().map(|t| t.2).collect(),
        }
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    fn apply_blocks(&self, n: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let (rows, width) = x.dim();
        let mut out = Array2::zeros((rows, width));
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("fresh array");
        for block in 0..rows / n {
            let base = block * n;
            for i in 0..n {
                let o = (base + i) * width;
                for (j, v) in self.row(i) {
                    let s = (base + j) * width;
                    for (d, &xv) in dst[o..o + width].iter_mut().zip(&src[s..s + width]) {
                        *d += v * xv;
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    n: usize,
    forward: Csr,
    transpose: Csr,
}

/// Builds `D^-1/2 (A + I) D^-1/2` where `D` holds the row sums of `A + I`.
pub fn propagation_matrix(graph: &MobilityGraph) -> Result<PropagationMatrix> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::EmptyData(
            "propagation matrix of an empty graph".into(),
        ));
    }
    let mut degree = vec![1.0; n];
    for e in graph.edges() {
        degree[e.source] += e.weight;
    }
    let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0 / degree[i])).collect();
    triplets.extend(graph.edges().iter().map(|e| {
        let norm = (degree[e.source] * degree[e.target]).sqrt();
        (e.source, e.target, e.weight / norm)
    }));
    let transposed = triplets.iter().map(|&(r, c, v)| (c, r, v)).collect();
    Ok(PropagationMatrix {
        n,
        forward: Csr::from_triplets(n, triplets),
        transpose: Csr::from_triplets(n, transposed),
    })
}

impl PropagationMatrix {
    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self {
            n,
            forward: Csr::from_triplets(n, triplets.clone()),
            transpose: Csr::from_triplets(n, triplets),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.forward.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.forward
            .row(i)
            .find(|&(c, _)| c == j)
            .map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.forward.row(i) {
                m[[i, j]] = v;
            }
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.forward.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Returns `P · X` for each `N`-row block of `x`.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows(x.nrows())?;
        Ok(self.forward.apply_blocks(self.n, x))
    }

    /// Returns `Pᵀ · X` for each `N`-row block of `x`.
    pub fn apply_transpose(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_rows(x.nrows())?;
        Ok(self.transpose.apply_blocks(self.n, x))
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if !rows.is_multiple_of(self.n) {
            return Err(Error::shape(
                "propagation rows",
                format!("multiple of {}", self.n),
                rows,
            ));
        }
        Ok(())
    }

    /// Relabels nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.forward.row(i) {
                triplets.push((inverse[i], inverse[j], v));
            }
        }
        let transposed = triplets.iter().map(|&(r, c, v)| (c, r, v)).collect();
        Self {
            n: self.n,
            forward: Csr::from_triplets(self.n, triplets),
            transpose: Csr::from_triplets(self.n, transposed),
        }
    }
}
