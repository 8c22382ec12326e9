use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamBlocks;
use crate::error::{Error, Result};
use crate::graph::PropagationMatrix;

/// Weight matrix and bias of one graph convolution `P · X · W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConvWeights {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl GraphConvWeights {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((in_dim, out_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((in_dim, out_dim), || {
                rng.random_range(-limit..=limit)
            }),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// `input · W + b` for an already propagated input.
    pub(crate) fn affine(&self, propagated: &Array2<f64>) -> Array2<f64> {
        let mut out = propagated.dot(&self.weight);
        out += &self.bias;
        out
    }

    /// Accumulates `dW += inputᵀ · upstream` and `db += Σ_rows upstream`.
    pub(crate) fn accumulate(
        &self,
        propagated: &Array2<f64>,
        upstream: &Array2<f64>,
        grad: &mut Self,
    ) {
        ndarray::linalg::general_mat_mul(1.0, &propagated.t(), upstream, 1.0, &mut grad.weight);
        grad.bias += &upstream.sum_axis(Axis(0));
    }

    /// `upstream · Wᵀ`, the gradient with respect to the propagated input.
    pub(crate) fn input_grad(&self, upstream: &Array2<f64>) -> Array2<f64> {
        upstream.dot(&self.weight.t())
    }

    pub(crate) fn check_input(&self, context: &'static str, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(context, self.in_dim(), x.ncols()));
        }
        Ok(())
    }
}

impl ParamBlocks for GraphConvWeights {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(
            format!("{prefix}.weight"),
            self.weight.as_slice().expect("standard layout"),
        );
        f(
            format!("{prefix}.bias"),
            self.bias.as_slice().expect("standard layout"),
        );
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64])) {
        f(
            format!("{prefix}.weight"),
            self.weight.as_slice_mut().expect("standard layout"),
        );
        f(
            format!("{prefix}.bias"),
            self.bias.as_slice_mut().expect("standard layout"),
        );
    }
}

/// One graph convolution `P · X · W + b` without activation. `x` may stack
/// several `N`-row blocks.
pub fn graph_conv(
    x: &Array2<f64>,
    weights: &GraphConvWeights,
    p: &PropagationMatrix,
) -> Result<Array2<f64>> {
    weights.check_input("graph_conv input", x)?;
    let propagated = p.apply(x.view())?;
    Ok(weights.affine(&propagated))
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;

    use super::*;
    use crate::graph::{propagation_matrix, Edge, MobilityGraph};

    #[test]
    fn identity_passes_through() {
        let x = array![[1.0, -2.0], [0.5, 3.0], [4.0, 0.0]];
        let w = GraphConvWeights {
            weight: Array2::eye(2),
            bias: Array1::zeros(2),
        };
        assert_eq!(
            graph_conv(&x, &w, &PropagationMatrix::identity(3)).unwrap(),
            x
        );
    }

    #[test]
    fn two_node_average() {
        let g = MobilityGraph::undirected(
            vec!["a".into(), "b".into()],
            [Edge {
                source: 0,
                target: 1,
                weight: 1.0,
            }],
        )
        .unwrap();
        let p = propagation_matrix(&g).unwrap();
        let w = GraphConvWeights {
            weight: array![[1.0]],
            bias: array![0.0],
        };
        assert_eq!(
            graph_conv(&array![[1.0], [3.0]], &w, &p).unwrap(),
            array![[2.0], [2.0]]
        );
    }

    #[test]
    fn output_shape_and_mismatch() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = GraphConvWeights::glorot(3, 5, &mut rng);
        let out = graph_conv(&Array2::ones((8, 3)), &w, &PropagationMatrix::identity(4)).unwrap();
        assert_eq!(out.dim(), (8, 5));
        assert!(graph_conv(&Array2::ones((4, 2)), &w, &PropagationMatrix::identity(4)).is_err());
        assert!(graph_conv(&Array2::ones((3, 3)), &w, &PropagationMatrix::identity(4)).is_err());
    }
}
