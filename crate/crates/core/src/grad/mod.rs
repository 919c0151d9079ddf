//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then walks the tape in reverse from a scalar root. The op set is small on
//! purpose: matrix products, elementwise arithmetic, `tanh`/`relu`,
//! reductions, cosine similarity, column concat/slice and a stop-gradient
//! barrier. That is enough to train the world model and to push a planning
//! cost back through an unrolled rollout onto the actions.
//!
//! ```
//! use straightlab::grad::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data()[0], 6.0);
//! ```

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Gradients, Graph, Var, COSINE_NORM_FLOOR};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cosine_examples() {
        let cases = [([1.0, 0.0], [0.0, 1.0], 0.0), ([2.0, 2.0], [3.0, 3.0], 1.0), ([1.0, 1.0], [1.0, 0.0], 0.5f64.sqrt())];
        for (u, v, want) in cases {
            let mut g = Graph::new();
            let a = g.constant(Tensor::row(&u));
            let b = g.constant(Tensor::row(&v));
            let c = g.cosine(a, b).unwrap();
            assert!(close(g.value(c).data()[0], want, 1e-9), "{u:?} {v:?}");
        }
    }

    #[test]
    fn cosine_zero_norm_is_degenerate() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(&[0.0, 0.0]));
        let b = g.constant(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(g.cosine(a, b), Err(Error::DegenerateVelocity { .. })));
        assert!(matches!(g.row_cosine(b, a), Err(Error::DegenerateVelocity { .. })));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn stop_gradient_target() {
        // f(x) = mse(x, sg(x)) has zero gradient everywhere.
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.7));
        let t = g.stop_gradient(x);
        let f = g.mse(x, t).unwrap();
        assert_eq!(g.backward(f).unwrap().get(x).unwrap().data(), &[0.0]);

        // f(x) = mse(2x, sg(x)) at x = 1: 2 * (2 - 1) * 2 = 4.
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.0));
        let two_x = g.scale(x, 2.0).unwrap();
        let t = g.stop_gradient(x);
        let f = g.mse(two_x, t).unwrap();
        assert_eq!(g.backward(f).unwrap().get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn gradient_blocked_behind_stop_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(&[0.3, -0.2]));
        let h = g.tanh(w).unwrap();
        let blocked = g.stop_gradient(h);
        let s = g.sum(blocked).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get_or_zeros(w, g.value(w)).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, c), Err(Error::Dimension { .. })));
        assert!(matches!(g.slice(a, 2, 5), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(g.scale(a, 10.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p, 0.01);
        st.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        let moved = 1.0 - p[0].data()[0];
        assert!(close(moved, 0.01 / (1.0 + 1e-8), 1e-15));
    }

    #[test]
    fn adam_zero_grad_keeps_params_and_decays_moments() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut st = AdamState::new(&p, 0.1);
        st.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        let before = p[0].data()[0];
        let (m0, v0) = (st.first_moment(0).data()[0], st.second_moment(0).data()[0]);
        let mut q = vec![Tensor::scalar(5.0)];
        let mut fresh = AdamState::new(&q, 0.1);
        fresh.step(&mut q, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(q[0].data()[0], 5.0);
        st.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert!(st.first_moment(0).data()[0] < m0);
        assert!(st.second_moment(0).data()[0] < v0);
        // the decayed momentum still moves the parameter in the old direction
        assert!(p[0].data()[0] < before);
    }

    #[test]
    fn adam_on_square_shrinks_magnitude() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p, 0.1);
        let mut last = 1.0f64;
        for _ in 0..2 {
            let x = p[0].data()[0];
            st.step(&mut p, &[Tensor::scalar(2.0 * x)]).unwrap();
            let now = p[0].data()[0].abs();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p, 0.1);
        assert!(st.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
    }
}
