//! Selective state-space model.
//!
//! A channel `d` carries `N` state entries with diagonal continuous dynamics
//! `A[d, n] < 0`. Per step the input picks a step size `Δ_t[d] > 0` and the
//! projections `B_t`, `C_t`, and the state advances as
//!
//! ```text
//! h_t = exp(Δ_t A) ⊙ h_{t-1} + (Δ_t B_t) x_t
//! y_t = <C_t, h_t>
//! ```
//!
//! The two executions in [`scan`] compute the same recurrence: a sequential
//! loop, and a work-efficient prefix scan over affine maps.

mod bench;
mod block;
mod op;
pub mod scan;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

pub use bench::{attention_reference, benchmark_scan, random_scan_inputs, write_scan_csv, ScanBenchRow, ScanImpl};
pub(crate) use bench::{time_round_robin, Body};
pub use block::{MambaBlock, MambaBlockConfig};
pub use op::SelectiveScan;
pub use scan::{scan_parallel, scan_sequential, ScanStats};

/// Lower and upper bound of the step size at initialization.
pub const DELTA_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

/// Inverse of softplus, for choosing biases that hit a target step size.
pub fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// `a_log[d, n] = ln(n + 1)`, so the effective `A[d, n] = -(n + 1)`.
pub fn a_log_init(d: usize, n: usize) -> Tensor {
    let row: Vec<f64> = (1..=n).map(|k| (k as f64).ln()).collect();
    Tensor::new(&[d, n], row.repeat(d)).expect("positive extents")
}

/// Step-size biases log-uniform over [`DELTA_INIT_RANGE`] after softplus.
pub fn delta_bias_init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Tensor {
    let (lo, hi) = DELTA_INIT_RANGE;
    let data = (0..d)
        .map(|_| {
            let u: f64 = rng.gen();
            inv_softplus((lo.ln() + u * (hi.ln() - lo.ln())).exp())
        })
        .collect();
    Tensor::vector(data)
}

/// Weights of the selective part of one SSM layer over `D` channels with
/// `N` states each. `A` is stored as its log-magnitude.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub a_log: Tensor,
    pub w_b: Tensor,
    pub w_c: Tensor,
    pub w_delta: Tensor,
    pub delta_bias: Tensor,
}

impl SsmParams {
    pub fn init<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        SsmParams {
            a_log: a_log_init(d, n),
            w_b: Tensor::uniform(&[d, n], -s, s, rng),
            w_c: Tensor::uniform(&[d, n], -s, s, rng),
            w_delta: Tensor::uniform(&[d, d], -0.1 * s, 0.1 * s, rng),
            delta_bias: delta_bias_init(d, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_size(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Effective continuous transition `A = -exp(a_log)`, strictly negative.
    pub fn a(&self, tape: &Tape) -> Result<Tensor> {
        tape.neg(&tape.exp(&self.a_log)?)
    }
}

/// Input-dependent step sizes and projections for a sequence.
#[derive(Clone, Debug)]
pub struct Selection {
    pub delta: Tensor,
    pub b: Tensor,
    pub c: Tensor,
}

/// `Δ = softplus(x W_Δ + bias)`, `B = x W_B`, `C = x W_C`, for `x` of shape
/// `(..., L, D)`.
pub fn select_parameters(tape: &Tape, x: &Tensor, p: &SsmParams) -> Result<Selection> {
    let d = p.channels();
    if x.rank() < 2 || x.shape()[x.rank() - 1] != d {
        return Err(Error::shape("select_parameters", &[x.shape(), &[d]]));
    }
    let pre = tape.add(&tape.matmul(x, &p.w_delta)?, &p.delta_bias)?;
    Ok(Selection { delta: tape.softplus(&pre)?, b: tape.matmul(x, &p.w_b)?, c: tape.matmul(x, &p.w_c)? })
}

/// Zero-order-hold transition `Ā_t = exp(Δ_t A)` and the Euler input term
/// `B̄_t = Δ_t B_t`, both of shape `(L, D, N)`.
pub fn discretize(a: &Tensor, delta: &Tensor, b: &Tensor) -> Result<(Tensor, Tensor)> {
    let (d, n) = dims2(a, "discretize")?;
    let (l, dd) = dims2(delta, "discretize")?;
    let (lb, nb) = dims2(b, "discretize")?;
    if dd != d || lb != l || nb != n {
        return Err(Error::shape("discretize", &[a.shape(), delta.shape(), b.shape()]));
    }
    if let Some(&bad) = delta.data().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositiveStep(bad));
    }
    if let Some(&bad) = a.data().iter().find(|v| !(**v < 0.0)) {
        return Err(Error::InvalidArgument(format!("transition entries must be negative, found {bad}")));
    }
    let mut abar = Vec::with_capacity(l * d * n);
    let mut bbar = Vec::with_capacity(l * d * n);
    for t in 0..l {
        for c in 0..d {
            let dt = delta.data()[t * d + c];
            for s in 0..n {
                abar.push((dt * a.data()[c * n + s]).exp());
                bbar.push(dt * b.data()[t * n + s]);
            }
        }
    }
    Ok((Tensor::new(&[l, d, n], abar)?, Tensor::new(&[l, d, n], bbar)?))
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(Error::shape(op, &[s])),
    }
}

/// Discretized scan inputs for one sequence.
///
/// `abar` and `bbar` are `(L, D, N)` row-major; `x` is `(L, D)` and `c` is
/// `(L, N)`.
#[derive(Clone, Debug)]
pub struct ScanInputs {
    l: usize,
    d: usize,
    n: usize,
    x: Vec<f64>,
    abar: Vec<f64>,
    bbar: Vec<f64>,
    c: Vec<f64>,
}

impl ScanInputs {
    /// Discretize `(x, Δ, A, B, C)`.
    pub fn new(x: &Tensor, delta: &Tensor, a: &Tensor, b: &Tensor, c: &Tensor) -> Result<Self> {
        let (abar, bbar) = discretize(a, delta, b)?;
        Self::from_discretized(x, &abar, &bbar, c)
    }

    pub fn from_discretized(x: &Tensor, abar: &Tensor, bbar: &Tensor, c: &Tensor) -> Result<Self> {
        let (l, d) = dims2(x, "scan")?;
        let (lc, n) = dims2(c, "scan")?;
        let want = [l, d, n];
        if lc != l || abar.shape() != want || bbar.shape() != want {
            return Err(Error::shape("scan", &[x.shape(), abar.shape(), bbar.shape(), c.shape()]));
        }
        Ok(ScanInputs { l, d, n, x: x.to_vec(), abar: abar.to_vec(), bbar: bbar.to_vec(), c: c.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn state_size(&self) -> usize {
        self.n
    }

    pub fn abar(&self) -> &[f64] {
        &self.abar
    }

    pub fn bbar(&self) -> &[f64] {
        &self.bbar
    }

    /// Insert a step with `Δ = 0` before position `k`: `Ā = 1`, `B̄ = 0`.
    /// The discretization rejects zero steps, so the limit is written
    /// directly. Input and readout of the new step are copied from the
    /// neighbour and have no effect on the state.
    pub fn insert_null_step(&mut self, k: usize) {
        assert!(k <= self.l, "insert position {k} beyond length {}", self.l);
        let (d, n) = (self.d, self.n);
        let src = k.min(self.l - 1);
        let xrow = self.x[src * d..(src + 1) * d].to_vec();
        let crow = self.c[src * n..(src + 1) * n].to_vec();
        self.x.splice(k * d..k * d, xrow);
        self.c.splice(k * n..k * n, crow);
        self.abar.splice(k * d * n..k * d * n, std::iter::repeat_n(1.0, d * n));
        self.bbar.splice(k * d * n..k * d * n, std::iter::repeat_n(0.0, d * n));
        self.l += 1;
    }

    /// `max_t ‖B̄_t ⊙ x_t‖∞`, the largest single-step input to the state.
    pub fn max_drive(&self) -> f64 {
        self.drive().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `B̄_t ⊙ x_t` broadcast over the state axis, `(L, D, N)`.
    pub(crate) fn drive(&self) -> Vec<f64> {
        let (d, n) = (self.d, self.n);
        let mut u = self.bbar.clone();
        for t in 0..self.l {
            for c in 0..d {
                let xv = self.x[t * d + c];
                let base = (t * d + c) * n;
                u[base..base + n].iter_mut().for_each(|v| *v *= xv);
            }
        }
        u
    }

    /// `y_t[d] = <C_t, h_t[d]>` for every step, given all states `(L, D, N)`.
    pub(crate) fn readout(&self, hs: &[f64]) -> Vec<f64> {
        let (d, n) = (self.d, self.n);
        let mut y = vec![0.0; self.l * d];
        for t in 0..self.l {
            let c = &self.c[t * n..(t + 1) * n];
            for ch in 0..d {
                let base = (t * d + ch) * n;
                y[t * d + ch] = crate::tensor::dot(c, &hs[base..base + n]);
            }
        }
        y
    }
}

/// Hidden state after `t` steps, `(D, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanState {
    pub h: Vec<f64>,
    pub t: usize,
}

impl ScanState {
    pub fn zeros(d: usize, n: usize) -> Self {
        ScanState { h: vec![0.0; d * n], t: 0 }
    }

    pub fn max_abs(&self) -> f64 {
        self.h.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
