//! XGIR: a small tensor-operator graph IR with model file I/O, validation,
//! dense reference execution, and FLOP/byte cost accounting.
//!
//! Everything downstream (pruning, rewriting, fusion, sparse execution,
//! search) transforms [`Graph`] values and is checked against
//! [`exec::execute_reference`] and [`flops::count_flops`].
//!
//! Graphs are immutable once built and safe to share across threads. The
//! executor may parallelize across output channels (feature `parallel`), but
//! per-output accumulation order is fixed, so results are bitwise identical
//! run to run at any thread count.

pub mod exec;
pub mod flops;
pub mod graph;
pub mod io;
pub mod ops;
pub mod par;
pub mod tensor;
pub mod topo;
pub mod validate;
pub mod zoo;

pub use graph::{Graph, GraphBuilder, GraphError, GraphInput, NodeId, OperatorNode, ValueId};
pub use ops::Op;
pub use tensor::{DType, Tensor, TensorError};

/// Max relative error between two tensors, damped by the expected tensor's
/// scale: `max_i |a_i - e_i| / (|e_i| + max_j |e_j|)`.
///
/// The scale term in the denominator is the hybrid absolute/relative
/// comparison convention: elements that cancel to near zero are judged
/// against the output's overall magnitude, so a few ulps of rounding noise
/// on a cancelled element never dominates, while any error above `tol *
/// scale` in absolute terms is still caught. Returns 0.0 for identical
/// tensors and `f32::INFINITY` on shape mismatch.
pub fn max_rel_error(actual: &Tensor, expected: &Tensor) -> f32 {
    if actual.shape() != expected.shape() {
        return f32::INFINITY;
    }
    let scale = expected
        .data()
        .iter()
        .fold(0.0f32, |m, v| m.max(v.abs()))
        .max(f32::MIN_POSITIVE);
    actual
        .data()
        .iter()
        .zip(expected.data())
        .fold(0.0f32, |worst, (a, e)| {
            worst.max((a - e).abs() / (e.abs() + scale))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_zero_for_identical() {
        let t = Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 3.0, 0.0]).unwrap();
        assert_eq!(max_rel_error(&t, &t), 0.0);
    }

    #[test]
    fn rel_error_scale_damping_tolerates_cancellation() {
        // A 1e-7 absolute wobble on an element that cancelled to ~0 must not
        // register as a huge relative error when the tensor scale is O(1).
        let e = Tensor::from_vec(vec![2], vec![1.0, 0.0]).unwrap();
        let a = Tensor::from_vec(vec![2], vec![1.0, 1e-7]).unwrap();
        assert!(max_rel_error(&a, &e) < 1e-6);
        // While an error at the scale of the output is reported as such.
        let b = Tensor::from_vec(vec![2], vec![1.0, 0.5]).unwrap();
        assert!(max_rel_error(&b, &e) > 0.2);
    }

    #[test]
    fn rel_error_shape_mismatch_is_infinite() {
        let a = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(max_rel_error(&a, &b).is_infinite());
    }
}
