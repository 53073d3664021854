use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<F>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected update. Arithmetic is carried out in `f64` per element.
pub fn adam_step<F: Real>(
    params: &mut [&mut Tensor<F>],
    grads: &[Tensor<F>],
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam",
            format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam",
                format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NumericAbort(format!("non-finite gradient for parameter {i}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g[k].f64();
            let mk = cfg.beta1 * m[k].f64() + (1.0 - cfg.beta1) * gk;
            let vk = cfg.beta2 * v[k].f64() + (1.0 - cfg.beta2) * gk * gk;
            m[k] = F::of(mk);
            v[k] = F::of(vk);
            let update = cfg.learning_rate * (mk / c1) / ((vk / c2).sqrt() + cfg.epsilon);
            *w = F::of(w.f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn unit_gradient_first_step_moves_by_learning_rate() {
        let mut p = scalar(0.5);
        let mut st = AdamState::<f64>::new([p.shape()]);
        adam_step(&mut [&mut p], &[scalar(1.0)], &mut st, &AdamConfig::default()).unwrap();
        assert!((0.5 - p.data()[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = scalar(2.0);
        let mut st = AdamState::<f64>::new([p.shape()]);
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &[scalar(1.0)], &mut st, &cfg).unwrap();
        let (before, m1, v1) = (p.data()[0], st.m[0].data()[0], st.v[0].data()[0]);
        // zero gradient still applies the remaining momentum, so reset it first
        st.m[0] = scalar(0.0);
        adam_step(&mut [&mut p], &[scalar(0.0)], &mut st, &cfg).unwrap();
        assert_eq!(p.data()[0], before);
        assert_eq!(st.v[0].data()[0], 0.999 * v1);
        assert!(m1 > 0.0);
    }

    #[test]
    fn matches_scalar_reimplementation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 6;
        let init: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };

        let mut p = Tensor::from_f64(&[2, 3], &init).unwrap();
        let mut st = AdamState::<f64>::new([p.shape()]);
        for g in &grads {
            adam_step(&mut [&mut p], &[Tensor::from_f64(&[2, 3], g).unwrap()], &mut st, &cfg).unwrap();
        }

        for k in 0..n {
            let (mut w, mut m, mut v) = (init[k], 0.0f64, 0.0f64);
            for (step, g) in grads.iter().enumerate() {
                let t = (step + 1) as i32;
                m = 0.9 * m + 0.1 * g[k];
                v = 0.999 * v + 0.001 * g[k] * g[k];
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                w -= 0.01 * mh / (vh.sqrt() + 1e-8);
            }
            assert!((p.data()[k] - w).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let mut p = scalar(0.0);
        let mut st = AdamState::<f64>::new([p.shape()]);
        let cfg = AdamConfig::default();
        assert!(matches!(
            adam_step(&mut [&mut p], &[scalar(f64::NAN)], &mut st, &cfg),
            Err(Error::NumericAbort(_))
        ));
        assert_eq!(st.t, 0);
        let wrong = Tensor::<f64>::zeros(&[1, 2]);
        assert!(adam_step(&mut [&mut p], &[wrong], &mut st, &cfg).is_err());
    }
}
