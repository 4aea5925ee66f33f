//! Raw loops behind the primitives. Everything here works on flat row-major
//! slices and bumps the thread-local operation counter.

use std::cell::Cell;

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

/// Thread-local counter of floating point work performed by tensor kernels.
///
/// Counts are instruction-agnostic: a multiply-add is two, an elementwise
/// transcendental is one.
pub mod ops {
    use super::OPS;

    pub fn reset() {
        OPS.with(|c| c.set(0));
    }

    pub fn count() -> u64 {
        OPS.with(|c| c.get())
    }

    pub fn add(n: u64) {
        OPS.with(|c| c.set(c.get() + n));
    }

    /// Operations performed while running `f`.
    pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
        let before = count();
        let out = f();
        (out, count() - before)
    }
}

/// `c[m,n] (+)= a[m,k] * b[k,n]`
///
/// Blocks of 4 rows by 4 columns accumulate in registers across the whole
/// `k` loop; ragged edges fall back to row-wise updates.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    ops::add(2 * (m * k * n) as u64);
    const R: usize = 4;
    const C: usize = 4;
    let (mb, nb) = (m / R * R, n / C * C);
    for i in (0..mb).step_by(R) {
        for j in (0..nb).step_by(C) {
            let mut acc = [[0.0f64; C]; R];
            for p in 0..k {
                let bv = &b[p * n + j..p * n + j + C];
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for (x, &y) in row.iter_mut().zip(bv) {
                        *x += av * y;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                for (x, &v) in c[(i + r) * n + j..(i + r) * n + j + C].iter_mut().zip(row) {
                    *x += v;
                }
            }
        }
    }
    let axpy_rows = |c: &mut [f64], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        for i in rows {
            for p in 0..k {
                let av = a[i * k + p];
                let brow = &b[p * n + cols.start..p * n + cols.end];
                for (cv, &bv) in c[i * n + cols.start..i * n + cols.end].iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    };
    if nb < n {
        axpy_rows(c, 0..mb, nb..n);
    }
    axpy_rows(c, mb..m, 0..n);
}

/// `c[m,n] (+)= a[m,k] * b[n,k]^T`
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    ops::add(2 * (m * k * n) as u64);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(arow, brow);
        }
    }
}

/// `c[k,n] (+)= a[m,k]^T * b[m,n]`
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    ops::add(2 * (m * k * n) as u64);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// True when `small` equals a trailing run of `big`'s extents.
pub fn is_suffix(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Split a shape around `axis` into (outer, extent, inner) block sizes.
pub fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
