//! Central finite-difference checks of reverse-mode gradients.

use super::{Tape, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: usize,
    /// Entries whose relative error is below `rel_tol`.
    pub within_rel: usize,
    pub max_rel_err: f64,
    /// Largest absolute error among entries that missed `rel_tol`.
    pub max_abs_err_outside: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_fraction: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        let frac = self.within_rel as f64 / self.entries.max(1) as f64;
        frac >= self.min_fraction && self.max_abs_err_outside < self.abs_tol
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_fraction: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-5, rel_tol: 1e-4, abs_tol: 1e-6, min_fraction: 0.99 }
    }
}

impl GradCheck {
    /// Compare gradients of the scalar `f(inputs)` against central
    /// differences, perturbing every entry of every input.
    pub fn run<F>(&self, f: F, inputs: &[Tensor]) -> Result<GradCheckReport>
    where
        F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
    {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&tape, &leaves)?;
        let grads = tape.backward(&loss)?;

        let eval = |xs: &[Tensor]| -> Result<f64> {
            let t = Tape::new();
            Ok(f(&t, xs)?.item())
        };

        let mut report = GradCheckReport {
            entries: 0,
            within_rel: 0,
            max_rel_err: 0.0,
            max_abs_err_outside: 0.0,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            min_fraction: self.min_fraction,
        };
        let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
        for (i, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(leaf).expect("every leaf has a gradient").to_vec();
            let base = inputs[i].to_vec();
            for j in 0..base.len() {
                let mut plus = base.clone();
                plus[j] += self.step;
                probe[i] = Tensor::new(inputs[i].shape(), plus)?;
                let fp = eval(&probe)?;
                let mut minus = base.clone();
                minus[j] -= self.step;
                probe[i] = Tensor::new(inputs[i].shape(), minus)?;
                let fm = eval(&probe)?;
                let numeric = (fp - fm) / (2.0 * self.step);

                let abs = (analytic[j] - numeric).abs();
                let scale = analytic[j].abs().max(numeric.abs());
                let rel = if scale == 0.0 { 0.0 } else { abs / scale };
                report.entries += 1;
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel < self.rel_tol {
                    report.within_rel += 1;
                } else {
                    report.max_abs_err_outside = report.max_abs_err_outside.max(abs);
                }
            }
            probe[i] = inputs[i].detach();
        }
        Ok(report)
    }
}
