use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// SNR sentinel for a noiseless channel.
pub const NOISELESS: f64 = f64::INFINITY;

const NORM_TOL: f64 = 1e-9;

/// Real channel symbols. `normalized` records that the mean squared value
/// was set to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFrame {
    pub data: Vec<f64>,
    pub normalized: bool,
}

impl SymbolFrame {
    pub fn new(data: Vec<f64>) -> Self {
        SymbolFrame { data, normalized: false }
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Scale to unit mean power. An all-zero frame has no direction and is
    /// left as is, unflagged.
    pub fn normalize(mut self) -> Self {
        let p = self.mean_power();
        if p > 0.0 {
            let s = p.sqrt().recip();
            self.data.iter_mut().for_each(|v| *v *= s);
            self.normalized = true;
        }
        self
    }

    pub fn check_normalized(&self) -> Result<()> {
        let p = self.mean_power();
        if !self.normalized || (p - 1.0).abs() > NORM_TOL {
            return Err(Error::Unnormalized(p));
        }
        Ok(())
    }
}

/// `y = x + n` with `n ~ N(0, 10^(-snr_db/10))` per component.
pub fn awgn_channel(frame: &SymbolFrame, snr_db: f64, seed: u64) -> Result<SymbolFrame> {
    frame.check_normalized()?;
    if snr_db == NOISELESS {
        return Ok(frame.clone());
    }
    let std = 10f64.powf(-snr_db / 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = frame
        .data
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + std * z
        })
        .collect();
    Ok(SymbolFrame { data, normalized: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized() {
        let f = SymbolFrame::new(vec![3.0, 4.0]);
        assert!(matches!(awgn_channel(&f, 0.0, 1), Err(Error::Unnormalized(_))));
        let zero = SymbolFrame::new(vec![0.0; 4]).normalize();
        assert!(awgn_channel(&zero, 0.0, 1).is_err());
    }
}
