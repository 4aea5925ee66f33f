use crate::error::Result;
use crate::tensor::{Tape, Tensor};
use crate::wireless::NetworkConfig;

/// Energy efficiency of each sample, `(B,)`, from real/imaginary parts of
/// channels and beamformers, all `(B, K, Nt)`.
///
/// `g[b,k,j] = |h_kᴴ w_j|²`; the diagonal is the desired signal and the rest of
/// row `k` is interference at user `k`.
pub fn ee_on_tape(
    tape: &Tape,
    h_re: &Tensor,
    h_im: &Tensor,
    w_re: &Tensor,
    w_im: &Tensor,
    config: &NetworkConfig,
) -> Result<Tensor> {
    let (b, k) = (h_re.shape()[0], h_re.shape()[1]);
    let wr_t = tape.transpose(w_re, 1, 2)?;
    let wi_t = tape.transpose(w_im, 1, 2)?;
    let re = tape.add(&tape.matmul(h_re, &wr_t)?, &tape.matmul(h_im, &wi_t)?)?;
    let im = tape.sub(&tape.matmul(h_re, &wi_t)?, &tape.matmul(h_im, &wr_t)?)?;
    let g = tape.add(&tape.square(&re)?, &tape.square(&im)?)?;

    let eye = Tensor::new(&[k, k], (0..k * k).map(|i| f64::from(i % (k + 1) == 0)).collect())?;
    let signal = tape.sum_axis(&tape.mul(&g, &eye)?, 2)?;
    let interference = tape.sub(&tape.sum_axis(&g, 2)?, &signal)?;
    let sinr = tape.div(&signal, &tape.add_scalar(&interference, config.noise_power)?)?;
    let rates = tape.scale(&tape.log(&tape.add_scalar(&sinr, 1.0)?)?, std::f64::consts::LOG2_E)?;
    let sum_rate = tape.sum_axis(&rates, 1)?;

    let w2 = tape.add(&tape.square(w_re)?, &tape.square(w_im)?)?;
    let power = tape.sum_axis(&tape.reshape(&w2, &[b, w2.numel() / b])?, 1)?;
    tape.div(&sum_rate, &tape.add_scalar(&power, config.p_circuit)?)
}
