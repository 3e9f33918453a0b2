use super::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter or moment is touched, so a non-finite gradient leaves the state
/// unchanged.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!("parameter {i}: {} values, {} grads", p.len(), g.len())));
        }
        if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i} contains {bad}")));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(value: f64) -> Vec<Tensor> {
        vec![Tensor::from_vec(&[1], vec![value]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(0.7);
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &[vec![0.0]], &mut s).unwrap();
        assert_eq!(p[0].data(), &[0.7]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = one(0.0);
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &[vec![1.0]], &mut s).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert!((p[0].data()[0] + 9.9999999e-4).abs() < 1e-13);
    }

    #[test]
    fn two_steps_closed_form() {
        let mut p = one(0.0);
        let mut s = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &[vec![1.0]], &mut s).unwrap();
        adam_step(&mut p, &[vec![1.0]], &mut s).unwrap();
        // With a constant gradient both bias-corrected moments equal 1 at every step.
        assert!((p[0].data()[0] + 1.9999e-3).abs() < 1e-6);
        assert!((p[0].data()[0] + 2e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = one(0.5);
        let mut s = AdamState::new(&p, 1e-3);
        assert!(matches!(adam_step(&mut p, &[vec![f64::NAN]], &mut s), Err(Error::NonFinite(_))));
        assert_eq!(s.t, 0);
        assert_eq!(p[0].data(), &[0.5]);
    }

    #[test]
    fn deterministic_updates() {
        let base = vec![Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap()];
        let g = vec![vec![0.5, -1.5, 2.0]];
        let run = || {
            let mut p = base.clone();
            let mut s = AdamState::new(&p, 1e-3);
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut s).unwrap();
            }
            (p, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
