use super::{Gradients, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer state with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", config.lr)));
        }
        Ok(Adam { config, step: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Update `params` in place. `leaves[i]` is the tape handle through which
    /// `params[i]` entered the computation; its entry in `grads` drives the
    /// update. Nothing is modified if any gradient is missing or non-finite.
    pub fn step(&mut self, params: &mut [Tensor], leaves: &[Tensor], grads: &Gradients) -> Result<()> {
        if params.len() != leaves.len() {
            return Err(Error::InvalidArgument(format!("{} parameters but {} leaves", params.len(), leaves.len())));
        }
        let mut gs = Vec::with_capacity(params.len());
        for (i, (p, leaf)) in params.iter().zip(leaves).enumerate() {
            let g = grads.get(leaf).ok_or_else(|| Error::MissingGradient(format!("#{i}")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape("optimizer_step", &[p.shape(), g.shape()]));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(format!("#{i}")));
            }
            gs.push(g.data());
        }
        self.apply(params, &gs);
        Ok(())
    }

    /// Update from raw gradient slices aligned with `params`.
    pub fn step_raw(&mut self, params: &mut [Tensor], grads: &[&[f64]]) -> Result<()> {
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if g.len() != p.numel() {
                return Err(Error::MissingGradient(format!("#{i}")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("#{i}")));
            }
        }
        self.apply(params, grads);
        Ok(())
    }

    fn apply(&mut self, params: &mut [Tensor], grads: &[&[f64]]) {
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(self.first.iter_mut()).zip(self.second.iter_mut()) {
            let mut data = p.to_vec();
            for (((x, &gv), mv), vv) in data.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
            *p = Tensor::raw(p.shape().to_vec(), data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn quad_grads(params: &[Tensor], tape: &Tape, coef: f64) -> (Vec<Tensor>, Gradients) {
        let leaves: Vec<Tensor> = params.iter().map(|p| tape.leaf(p)).collect();
        let mut terms = Vec::new();
        for l in &leaves {
            terms.push(tape.sum(&tape.scale(l, coef).unwrap()).unwrap());
        }
        let mut loss = terms[0].clone();
        for t in &terms[1..] {
            loss = tape.add(&loss, t).unwrap();
        }
        let g = tape.backward(&loss).unwrap();
        (leaves, g)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0]), Tensor::scalar(0.5)];
        let before = params.clone();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        // Prime moments with a nonzero step, then feed zeros.
        opt.step_raw(&mut params, &[&[1.0, 1.0], &[1.0]]).unwrap();
        let primed = opt.moments().0[0].clone();
        let after_prime = params.clone();
        opt.step_raw(&mut params, &[&[0.0, 0.0], &[0.0]]).unwrap();
        let (m, _) = opt.moments();
        assert!(m[0][0].abs() < primed[0].abs());
        // Moments still carry momentum, so compare against a cold optimizer too.
        let mut cold = Adam::new(AdamConfig::default()).unwrap();
        let mut p2 = before.clone();
        cold.step_raw(&mut p2, &[&[0.0, 0.0], &[0.0]]).unwrap();
        assert_eq!(p2, before);
        assert_ne!(after_prime, before);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = vec![Tensor::scalar(3.0)];
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let mut prev = p[0].item();
        for _ in 0..100 {
            let tape = Tape::new();
            let (leaves, g) = quad_grads(&p, &tape, 0.7);
            opt.step(&mut p, &leaves, &g).unwrap();
            assert!(p[0].item() < prev);
            prev = p[0].item();
        }
        assert_eq!(opt.step_count(), 100);
    }

    #[test]
    fn counter_increments_by_one() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        assert_eq!(opt.step_count(), 0);
        opt.step_raw(&mut p, &[&[0.3]]).unwrap();
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn rejects_missing_and_non_finite() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let tape = Tape::new();
        let a = tape.leaf(&p[0]);
        let b = Tensor::scalar(2.0); // never entered the tape
        let loss = tape.mul(&a, &a).unwrap();
        let g = tape.backward(&loss).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut p, &[a.clone(), b], &g), Err(Error::MissingGradient(_))));
        assert!(matches!(opt.step_raw(&mut p, &[&[f64::NAN], &[0.0]]), Err(Error::NonFiniteGradient(_))));
        assert_eq!(opt.step_count(), 0);
        assert!(Adam::new(AdamConfig { lr: 0.0, ..Default::default() }).is_err());
    }
}
