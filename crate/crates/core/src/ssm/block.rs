use std::sync::Arc;

use super::{a_log_init, delta_bias_init, select_parameters, SelectiveScan, SsmParams};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{Init, ParamId, ParamStore, Params, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MambaBlockConfig {
    pub d_model: usize,
    pub d_state: usize,
    /// Width of the gated inner branch is `expand * d_model`.
    pub expand: usize,
    pub conv_width: usize,
    pub pre_norm: bool,
    pub residual: bool,
}

impl Default for MambaBlockConfig {
    fn default() -> Self {
        MambaBlockConfig { d_model: 16, d_state: 16, expand: 2, conv_width: 4, pre_norm: true, residual: true }
    }
}

impl MambaBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.expand == 0 || self.conv_width == 0 {
            return Err(Error::InvalidArgument(format!("block extents must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }
}

/// Gated selective-SSM block:
///
/// ```text
/// (xi, z) = split(in_proj(norm(x)))
/// u = silu(causal_conv(xi))
/// y = scan(u; Δ(u), A, B(u), C(u)) + D ⊙ u
/// out = x + out_proj(y ⊙ silu(z))
/// ```
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub config: MambaBlockConfig,
    norm: Option<LayerNorm>,
    in_proj: Linear,
    conv_w: ParamId,
    conv_b: ParamId,
    a_log: ParamId,
    w_b: ParamId,
    w_c: ParamId,
    w_delta: ParamId,
    delta_bias: ParamId,
    d_skip: ParamId,
    out_proj: Linear,
}

impl MambaBlock {
    pub fn new(store: &mut ParamStore, name: &str, config: MambaBlockConfig) -> Result<Self> {
        config.validate()?;
        let (d, e, n, k) = (config.d_model, config.d_inner(), config.d_state, config.conv_width);
        let norm = config.pre_norm.then(|| LayerNorm::new(store, &format!("{name}.norm"), d));
        let in_proj = Linear::new(store, &format!("{name}.in_proj"), d, 2 * e, false);
        let cs = 1.0 / (k as f64).sqrt();
        let conv_w = store.init(&format!("{name}.conv.w"), &[k, e], Init::Uniform(-cs, cs));
        let conv_b = store.init(&format!("{name}.conv.b"), &[e], Init::Zeros);
        let a_log = store.insert(&format!("{name}.a_log"), a_log_init(e, n));
        let w_b = store.init(&format!("{name}.w_b"), &[e, n], Init::Xavier);
        let w_c = store.init(&format!("{name}.w_c"), &[e, n], Init::Xavier);
        let ds = 0.1 / (e as f64).sqrt();
        let w_delta = store.init(&format!("{name}.w_delta"), &[e, e], Init::Uniform(-ds, ds));
        let bias_name = format!("{name}.delta_bias");
        let bias = delta_bias_init(e, &mut store.rng_for(&bias_name));
        let delta_bias = store.insert(&bias_name, bias);
        let d_skip = store.init(&format!("{name}.d_skip"), &[e], Init::Ones);
        let out_proj = Linear::new(store, &format!("{name}.out_proj"), e, d, false);
        Ok(MambaBlock { config, norm, in_proj, conv_w, conv_b, a_log, w_b, w_c, w_delta, delta_bias, d_skip, out_proj })
    }

    pub fn out_proj(&self) -> ParamId {
        self.out_proj.weight()
    }

    pub fn ssm_params(&self, p: &Params) -> SsmParams {
        SsmParams {
            a_log: p[self.a_log].clone(),
            w_b: p[self.w_b].clone(),
            w_c: p[self.w_c].clone(),
            w_delta: p[self.w_delta].clone(),
            delta_bias: p[self.delta_bias].clone(),
        }
    }

    /// Depthwise causal convolution along axis 1 of `(B, L, E)`, built from
    /// shifted copies so each output step sees only itself and the past.
    fn causal_conv(&self, tape: &Tape, p: &Params, x: &Tensor) -> Result<Tensor> {
        let (b, l, e) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let k = self.config.conv_width;
        let mut acc: Option<Tensor> = None;
        for lag in 0..k.min(l) {
            let tap = tape.reshape(&tape.slice(&p[self.conv_w], 0, k - 1 - lag, 1)?, &[e])?;
            let shifted = if lag == 0 {
                x.clone()
            } else {
                let head = tape.slice(x, 1, 0, l - lag)?;
                tape.concat(&[&Tensor::zeros(&[b, lag, e]), &head], 1)?
            };
            let term = tape.mul(&shifted, &tap)?;
            acc = Some(match acc {
                Some(a) => tape.add(&a, &term)?,
                None => term,
            });
        }
        tape.add(&acc.expect("conv width is positive"), &p[self.conv_b])
    }

    /// Apply the block to `(L, D)` or `(B, L, D)`; output has the input shape.
    pub fn forward(&self, tape: &Tape, p: &Params, x: &Tensor) -> Result<Tensor> {
        let d = self.config.d_model;
        let batched = match x.shape() {
            [_, _, dd] if *dd == d => x.clone(),
            [l, dd] if *dd == d => tape.reshape(x, &[1, *l, d])?,
            s => return Err(Error::shape("mamba_block", &[s, &[d]])),
        };
        let e = self.config.d_inner();
        let h = match &self.norm {
            Some(norm) => norm.forward(tape, p, &batched)?,
            None => batched.clone(),
        };
        let proj = self.in_proj.forward(tape, p, &h)?;
        let xi = tape.slice_last(&proj, 0, e)?;
        let z = tape.slice_last(&proj, e, e)?;
        let u = tape.silu(&self.causal_conv(tape, p, &xi)?)?;

        let ssm = self.ssm_params(p);
        let sel = select_parameters(tape, &u, &ssm)?;
        let a = ssm.a(tape)?;
        let y = tape.apply_custom(Arc::new(SelectiveScan), &[&u, &sel.delta, &a, &sel.b, &sel.c])?;
        let y = tape.add(&y, &tape.mul(&u, &p[self.d_skip])?)?;
        let gated = tape.mul(&y, &tape.silu(&z)?)?;
        let mut out = self.out_proj.forward(tape, p, &gated)?;
        if self.config.residual {
            out = tape.add(&batched, &out)?;
        }
        tape.reshape(&out, x.shape())
    }
}
