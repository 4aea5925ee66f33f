use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{ops, CustomOp, Saved, Tensor};

/// Fused selective scan with a hand-written reverse pass.
///
/// Inputs `u (B,L,D)`, `Δ (B,L,D)`, `A (D,N)`, `B (B,L,N)`, `C (B,L,N)`;
/// output `y (B,L,D)` from a zero initial state. When recorded, all hidden
/// states are kept for the backward sweep; untracked calls keep none.
#[derive(Debug, Default)]
pub struct SelectiveScan;

struct Dims {
    b: usize,
    l: usize,
    d: usize,
    n: usize,
}

fn dims(inputs: &[&Tensor]) -> Result<Dims> {
    let shapes: Vec<&[usize]> = inputs.iter().map(|t| t.shape()).collect();
    let bad = || Error::shape("selective_scan", &shapes);
    if inputs.len() != 5 {
        return Err(bad());
    }
    let &[b, l, d] = shapes[0] else { return Err(bad()) };
    let &[_, n] = shapes[2] else { return Err(bad()) };
    if shapes[1] != [b, l, d] || shapes[2] != [d, n] || shapes[3] != [b, l, n] || shapes[4] != [b, l, n] {
        return Err(bad());
    }
    Ok(Dims { b, l, d, n })
}

/// The recurrence from a zero state, copying every hidden state into `hs`
/// when given.
fn run(inputs: &[&Tensor], Dims { b, l, d, n }: Dims, mut hs: Option<&mut [f64]>) -> Tensor {
    let (u, dt, a, bm, cm) = (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data(), inputs[4].data());
    ops::add((b * l * d * n * 6) as u64);
    let mut y = vec![0.0; b * l * d];
    let mut h = vec![0.0; d * n];
    for bi in 0..b {
        h.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..l {
            let row = bi * l + t;
            let brow = &bm[row * n..(row + 1) * n];
            let crow = &cm[row * n..(row + 1) * n];
            for c in 0..d {
                let delta = dt[row * d + c];
                let x = u[row * d + c];
                let hc = &mut h[c * n..(c + 1) * n];
                let ac = &a[c * n..(c + 1) * n];
                let mut acc = 0.0;
                for s in 0..n {
                    hc[s] = (delta * ac[s]).exp() * hc[s] + delta * brow[s] * x;
                    acc += crow[s] * hc[s];
                }
                y[row * d + c] = acc;
            }
            if let Some(hs) = hs.as_deref_mut() {
                hs[row * d * n..(row + 1) * d * n].copy_from_slice(&h);
            }
        }
    }
    Tensor::raw(vec![b, l, d], y)
}

impl CustomOp for SelectiveScan {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Saved)> {
        let Dims { b, l, d, n } = dims(inputs)?;
        let mut hs = vec![0.0; b * l * d * n];
        let y = run(inputs, Dims { b, l, d, n }, Some(&mut hs));
        let saved: Saved = Some(Arc::new(hs));
        Ok((y, saved))
    }

    fn forward_untracked(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let dims = dims(inputs)?;
        Ok(run(inputs, dims, None))
    }

    fn backward(
        &self,
        inputs: &[Tensor],
        _output: &Tensor,
        saved: &Saved,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let Dims { b, l, d, n } = dims(&refs).expect("validated in forward");
        let hs = saved.as_ref().and_then(|s| s.downcast_ref::<Vec<f64>>()).expect("selective_scan saves hidden states");
        let (u, dt, a, bm, cm) =
            (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data(), inputs[4].data());
        ops::add((b * l * d * n * 12) as u64);
        let mut gu = vec![0.0; b * l * d];
        let mut gdt = vec![0.0; b * l * d];
        let mut ga = vec![0.0; d * n];
        let mut gb = vec![0.0; b * l * n];
        let mut gc = vec![0.0; b * l * n];
        // Adjoint of h_t, accumulated backwards through the transitions.
        let mut g = vec![0.0; d * n];
        for bi in 0..b {
            g.iter_mut().for_each(|v| *v = 0.0);
            for t in (0..l).rev() {
                let row = bi * l + t;
                let h_t = &hs[row * d * n..(row + 1) * d * n];
                let brow = &bm[row * n..(row + 1) * n];
                let crow = &cm[row * n..(row + 1) * n];
                for c in 0..d {
                    let gy = grad[row * d + c];
                    let delta = dt[row * d + c];
                    let x = u[row * d + c];
                    let next_delta = if t + 1 < l { dt[(row + 1) * d + c] } else { 0.0 };
                    let ac = &a[c * n..(c + 1) * n];
                    let adj = &mut g[c * n..(c + 1) * n];
                    let mut g_delta = 0.0;
                    let mut g_x = 0.0;
                    for s in 0..n {
                        let hv = h_t[c * n + s];
                        gc[row * n + s] += gy * hv;
                        // Carry from step t+1 uses that step's transition.
                        let carry = if t + 1 < l { (next_delta * ac[s]).exp() * adj[s] } else { 0.0 };
                        let gs = gy * crow[s] + carry;
                        adj[s] = gs;
                        let h_prev = if t > 0 { hs[(row - 1) * d * n + c * n + s] } else { 0.0 };
                        let abar = (delta * ac[s]).exp();
                        let g_abar = gs * h_prev;
                        g_delta += g_abar * abar * ac[s] + gs * brow[s] * x;
                        ga[c * n + s] += g_abar * abar * delta;
                        gb[row * n + s] += gs * delta * x;
                        g_x += gs * delta * brow[s];
                    }
                    gdt[row * d + c] = g_delta;
                    gu[row * d + c] = g_x;
                }
            }
        }
        let pick = |i: usize, v: Vec<f64>| needs[i].then_some(v);
        vec![pick(0, gu), pick(1, gdt), pick(2, ga), pick(3, gb), pick(4, gc)]
    }
}
