//! Adaptive-moment parameter optimizer (Adam).

use super::{GradientSet, MlpNetwork, NnError};

/// Default learning rate for the full training stack.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Adam state for one network: first/second moment accumulators aligned with
/// the network's canonical parameter chunks, plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Fresh state (zero moments) shaped for `net`.
    pub fn new(net: &MlpNetwork) -> Self {
        Self::with_learning_rate(net, DEFAULT_LEARNING_RATE)
    }

    pub fn with_learning_rate(net: &MlpNetwork, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .parameters()
            .iter()
            .map(|(_, p)| vec![0.0; p.len()])
            .collect();
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one Adam update to `net` in place. Rejects non-finite
    /// gradients without touching parameters or moments.
    pub fn step(&mut self, net: &mut MlpNetwork, grads: &GradientSet) -> Result<(), NnError> {
        let chunks = grads.chunks();
        if chunks.len() != self.m.len() {
            return Err(NnError::ShapeMismatch);
        }
        for (i, (name, param)) in net.parameters().iter().enumerate() {
            if chunks[i].len() != param.len() {
                return Err(NnError::ShapeMismatch);
            }
            if chunks[i].iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);

        let mut updated: Vec<Vec<f64>> =
            net.parameters().iter().map(|(_, p)| p.to_vec()).collect();
        for (i, params) in updated.iter_mut().enumerate() {
            let g = &chunks[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..params.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                params[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        net.set_param_chunks(&updated)
    }

    /// Moment arrays in canonical chunk order, for checkpointing.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    ) -> Self {
        OptimizerState {
            learning_rate,
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn tiny_net(seed: u64) -> MlpNetwork {
        MlpNetwork::new(&[2, 3, 1], &mut stream_rng(seed, 0)).unwrap()
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_parameters_unchanged() {
        let mut net = tiny_net(1);
        let before: Vec<Vec<f64>> = net.parameters().iter().map(|(_, p)| p.to_vec()).collect();
        let grads = net.gradients();
        let mut opt = OptimizerState::new(&net);
        opt.step(&mut net, &grads).unwrap();
        let after: Vec<Vec<f64>> = net.parameters().iter().map(|(_, p)| p.to_vec()).collect();
        assert_eq!(before, after);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut net = tiny_net(2);
        let mut grads = net.gradients();
        // Poison one entry via backward-accumulated NaN: scale a unit grad.
        let (out, tape) = net.forward(&[0.1, -0.2]).unwrap();
        assert_eq!(out.len(), 1);
        net.backward(&tape, &[f64::NAN], &mut grads).unwrap();
        let mut opt = OptimizerState::new(&net);
        let err = opt.step(&mut net, &grads);
        assert!(matches!(err, Err(NnError::NonFiniteGradient(_))));
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let run = || {
            let mut net = tiny_net(3);
            let mut grads = net.gradients();
            let (_, tape) = net.forward(&[0.5, 0.5]).unwrap();
            net.backward(&tape, &[1.0], &mut grads).unwrap();
            let mut opt = OptimizerState::new(&net);
            opt.step(&mut net, &grads).unwrap();
            net.parameters()
                .iter()
                .flat_map(|(_, p)| p.iter().copied())
                .collect::<Vec<f64>>()
        };
        assert_eq!(run(), run());
    }

    /// Gradient descent on f(w) = w^2/2 per parameter (gradient = w) must
    /// drive every |w| below 1e-3 within 1e4 steps at the default rate.
    #[test]
    fn converges_on_quadratic_bowl() {
        let mut net = tiny_net(4);
        // Put one parameter exactly at 1 so the scalar case is covered too.
        let mut chunks: Vec<Vec<f64>> = net.parameters().iter().map(|(_, p)| p.to_vec()).collect();
        chunks[0][0] = 1.0;
        net.set_param_chunks(&chunks).unwrap();

        let mut opt = OptimizerState::new(&net);
        let mut grads = net.gradients();
        for _ in 0..10_000 {
            for (g, (_, p)) in grads.chunks_mut().iter_mut().zip(net.parameters().iter()) {
                g.copy_from_slice(p);
            }
            opt.step(&mut net, &grads).unwrap();
        }
        let worst = net
            .parameters()
            .iter()
            .flat_map(|(_, p)| p.iter().copied())
            .fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(worst < 1e-3, "largest |w| after 1e4 steps: {worst}");
    }
}
