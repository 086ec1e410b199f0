use super::{DiffError, Tensor};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Moment accumulators and step counter for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for parameters with the given element counts.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        Self::new(lr, &sizes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.second[i]
    }
}

/// Moments of parameters whose gradient stays zero decay geometrically into
/// the subnormal range, where arithmetic is drastically slower. Such values
/// contribute nothing measurable to an update, so they are zeroed.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Applies one Adam update in place and advances the step counter.
///
/// `params[i]` is paired with `grads[i]`; all gradients are validated before
/// any parameter is touched.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(DiffError::ParamCount {
            params: params.len(),
            grads: grads.len(),
            state: state.first.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first[i].len() != p.numel() {
            return Err(DiffError::AdamShape {
                index: i,
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(DiffError::NonFiniteGradient(i));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = flush(b1 * *mi + (1.0 - b1) * gi);
            *vi = flush(b2 * *vi + (1.0 - b2) * gi * gi);
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut state = AdamState::for_params(1e-3, &[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let alpha = 0.01;
        let mut p = Tensor::vector(vec![2.0]);
        let g = Tensor::vector(vec![1.0]);
        let mut state = AdamState::for_params(alpha, &[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
        let update = p.data()[0] - 2.0;
        assert!((update + alpha).abs() < 1e-9, "update {update}");
    }

    /// Hand-stepped recurrence for f(x) = x², x0 = 1, lr = 0.1:
    ///   t=1: g=2,      m=0.2,    v=0.004,     x=0.9000000005
    ///   t=2: g≈1.8,    m≈0.36,   v≈0.007236,  x≈0.8004122287
    ///   t=3: g≈1.6008, m≈0.4841, v≈0.009791,  x≈0.7015862729
    #[test]
    fn three_step_trace_on_quadratic() {
        let lr = 0.1;
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let mut x_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x_ref -= lr * mh / (vh.sqrt() + eps);
            expected.push(x_ref);
        }
        let frozen = [0.900_000_000_5, 0.800_412_228_691_792_8, 0.701_586_272_946_030_3];
        for (e, f) in expected.iter().zip(frozen) {
            assert!((e - f).abs() < 1e-12, "{e} vs {f}");
        }

        let mut p = Tensor::vector(vec![1.0]);
        let mut state = AdamState::for_params(lr, &[&p]);
        for want in expected {
            let g = Tensor::vector(vec![2.0 * p.data()[0]]);
            adam_step(&mut [&mut p], &[&g], &mut state).unwrap();
            assert!((p.data()[0] - want).abs() < 1e-15);
        }
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![f64::NAN]);
        let mut state = AdamState::for_params(0.1, &[&p]);
        assert!(matches!(
            adam_step(&mut [&mut p], &[&g], &mut state),
            Err(DiffError::NonFiniteGradient(0))
        ));
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![1.0]);
        let mut state = AdamState::for_params(0.1, &[&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut state).is_err());
    }

    #[test]
    fn decaying_moments_never_go_subnormal() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut state = AdamState::for_params(1e-3, &[&p]);
        adam_step(&mut [&mut p], &[&Tensor::vector(vec![1.0])], &mut state).unwrap();
        let zero = Tensor::zeros(&[1]);
        for _ in 0..8000 {
            adam_step(&mut [&mut p], &[&zero], &mut state).unwrap();
            let (m, v) = (state.first_moment(0)[0], state.second_moment(0)[0]);
            assert!(!m.is_subnormal() && !v.is_subnormal());
        }
        assert_eq!(state.first_moment(0)[0], 0.0);
    }
}
