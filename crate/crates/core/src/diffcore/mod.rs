//! Dense `f64` tensors, a reverse-mode differentiation graph, Adam, and
//! seeded initialization.

mod adam;
mod graph;
mod init;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub(crate) use graph::gemm;
pub use graph::{Gradients, Graph, NodeId};
pub use init::{init_from, seeded_init, stream_id, stream_rng, InitScheme, Prng, PRNG_NAME};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch at node {node} ({op}): input shapes {shapes:?}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("node {0} is not part of this graph")]
    UnknownNode(usize),
    #[error("backward called before node {0} was evaluated")]
    NotEvaluated(usize),
    #[error("loss must have a single element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("adam: {params} parameters, {grads} gradients, state for {state}")]
    ParamCount {
        params: usize,
        grads: usize,
        state: usize,
    },
    #[error("adam: parameter {index} has shape {param:?} but gradient {grad:?}")]
    AdamShape {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("adam: gradient {0} is not finite")]
    NonFiniteGradient(usize),
    #[error("unknown init scheme '{0}'")]
    UnknownScheme(String),
}

/// Central finite-difference gradient of a scalar function, one coordinate
/// at a time.
pub fn finite_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
