//! Same-size 2-D convolution with exact backward passes, ReLU, instance
//! normalization and box mean filtering.
//!
//! Conventions shared by everything here:
//! - "same" zero padding: outputs keep the input's spatial shape, taps that
//!   fall outside the input contribute zero, and there are no bias terms;
//! - reductions accumulate in f64 and results are cast back to the storage
//!   type at the end;
//! - [`conv2d_naive`] is the reference implementation; [`conv2d`] is the
//!   loop-reordered parallel path and must agree with it within 1e-6 (the two
//!   use the same per-output reduction order, so they in fact agree bitwise).

use rayon::prelude::*;

use crate::error::{DclError, Result};
use crate::tensor::{Kernel4, Map2, Scalar, Tensor3};

fn check_conv_shapes<T: Scalar>(input: &Tensor3<T>, kernel: &Kernel4<T>) -> Result<()> {
    if input.channels() != kernel.cin() {
        return Err(DclError::ChannelMismatch { input: input.channels(), kernel: kernel.cin() });
    }
    Ok(())
}

/// Zero-padded stride-1 convolution, reference path: six nested loops.
pub fn conv2d_naive<T: Scalar>(input: &Tensor3<T>, kernel: &Kernel4<T>) -> Result<Tensor3<T>> {
    check_conv_shapes(input, kernel)?;
    let (h, w) = input.spatial_shape();
    let (kh, kw, cin, cout) = (kernel.kh(), kernel.kw(), kernel.cin(), kernel.cout());
    let (ph, pw) = (kh as isize / 2, kw as isize / 2);

    let mut out = Tensor3::zeros(h, w, cout);
    for i in 0..h {
        for j in 0..w {
            for o in 0..cout {
                let mut acc = 0.0f64;
                for di in 0..kh {
                    let ii = i as isize + di as isize - ph;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let jj = j as isize + dj as isize - pw;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        for c in 0..cin {
                            acc += input.at(ii as usize, jj as usize, c).f64()
                                * kernel.at(di, dj, c, o).f64();
                        }
                    }
                }
                out.set(i, j, o, T::of(acc));
            }
        }
    }
    Ok(out)
}

/// Zero-padded stride-1 convolution, optimized path.
///
/// Converts input and weights to f64 once, walks output rows in parallel and
/// keeps the innermost loop over output channels contiguous in both the
/// weight array and the per-pixel accumulator. The reduction order over
/// `(di, dj, c)` for each output element matches [`conv2d_naive`].
pub fn conv2d<T: Scalar>(input: &Tensor3<T>, kernel: &Kernel4<T>) -> Result<Tensor3<T>> {
    check_conv_shapes(input, kernel)?;
    let (h, w) = input.spatial_shape();
    let (kh, kw, cin, cout) = (kernel.kh(), kernel.kw(), kernel.cin(), kernel.cout());
    let (ph, pw) = (kh / 2, kw / 2);

    let xin: Vec<f64> = input.data().iter().map(|v| v.f64()).collect();
    let wts: Vec<f64> = kernel.weights().iter().map(|v| v.f64()).collect();

    let mut out = Tensor3::zeros(h, w, cout);
    let row_len = w * cout;
    out.data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, out_row)| {
            let mut acc = vec![0.0f64; cout];
            for j in 0..w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for di in 0..kh {
                    let ii = i as isize + di as isize - ph as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let in_row = ii as usize * w;
                    for dj in 0..kw {
                        let jj = j as isize + dj as isize - pw as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let in_base = (in_row + jj as usize) * cin;
                        let w_base = (di * kw + dj) * cin * cout;
                        for c in 0..cin {
                            let x = xin[in_base + c];
                            let ws = &wts[w_base + c * cout..w_base + (c + 1) * cout];
                            for (a, &wv) in acc.iter_mut().zip(ws) {
                                *a += x * wv;
                            }
                        }
                    }
                }
                for (o, &a) in acc.iter().enumerate() {
                    out_row[j * cout + o] = T::of(a);
                }
            }
        });
    Ok(out)
}

/// Exact gradients of `sum(d_out ⊙ conv2d(input, kernel))` with respect to
/// the input and the kernel weights.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor3<T>,
    kernel: &Kernel4<T>,
    d_out: &Tensor3<T>,
) -> Result<(Tensor3<T>, Kernel4<T>)> {
    check_conv_shapes(input, kernel)?;
    let (h, w) = input.spatial_shape();
    let (kh, kw, cin, cout) = (kernel.kh(), kernel.kw(), kernel.cin(), kernel.cout());
    if d_out.spatial_shape() != (h, w) || d_out.channels() != cout {
        return Err(DclError::ShapeMismatch(format!(
            "cotangent {}x{}x{} does not match output {}x{}x{}",
            d_out.height(),
            d_out.width(),
            d_out.channels(),
            h,
            w,
            cout
        )));
    }
    let (ph, pw) = (kh / 2, kw / 2);

    let xin: Vec<f64> = input.data().iter().map(|v| v.f64()).collect();
    let wts: Vec<f64> = kernel.weights().iter().map(|v| v.f64()).collect();
    let dys: Vec<f64> = d_out.data().iter().map(|v| v.f64()).collect();

    // dIn[p,q,c] = sum_{di,dj,o} dOut[p-di+ph, q-dj+pw, o] * w[di,dj,c,o]
    let mut d_input = Tensor3::zeros(h, w, cin);
    let row_len = w * cin;
    d_input
        .data_mut()
        .par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(p, din_row)| {
            let mut acc = vec![0.0f64; cin];
            for q in 0..w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for di in 0..kh {
                    let oi = p as isize - di as isize + ph as isize;
                    if oi < 0 || oi >= h as isize {
                        continue;
                    }
                    let out_row = oi as usize * w;
                    for dj in 0..kw {
                        let oj = q as isize - dj as isize + pw as isize;
                        if oj < 0 || oj >= w as isize {
                            continue;
                        }
                        let dy_base = (out_row + oj as usize) * cout;
                        let w_base = (di * kw + dj) * cin * cout;
                        for (c, a) in acc.iter_mut().enumerate() {
                            let ws = &wts[w_base + c * cout..w_base + (c + 1) * cout];
                            let dys = &dys[dy_base..dy_base + cout];
                            for (&wv, &dy) in ws.iter().zip(dys) {
                                *a += wv * dy;
                            }
                        }
                    }
                }
                for (c, &a) in acc.iter().enumerate() {
                    din_row[q * cin + c] = T::of(a);
                }
            }
        });

    // dW[di,dj,c,o] = sum_{i,j} dOut[i,j,o] * in[i+di-ph, j+dj-pw, c]
    let mut d_weights = vec![0.0f64; kh * kw * cin * cout];
    d_weights
        .par_chunks_mut(cin * cout)
        .enumerate()
        .for_each(|(tap, block)| {
            let (di, dj) = (tap / kw, tap % kw);
            for i in 0..h {
                let ii = i as isize + di as isize - ph as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let in_row = ii as usize * w;
                let out_row = i * w;
                for j in 0..w {
                    let jj = j as isize + dj as isize - pw as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let in_base = (in_row + jj as usize) * cin;
                    let dy_base = (out_row + j) * cout;
                    for c in 0..cin {
                        let x = xin[in_base + c];
                        let row = &mut block[c * cout..(c + 1) * cout];
                        let dys = &dys[dy_base..dy_base + cout];
                        for (acc, &dy) in row.iter_mut().zip(dys) {
                            *acc += x * dy;
                        }
                    }
                }
            }
        });

    let d_kernel = Kernel4::from_vec(
        kh,
        kw,
        cin,
        cout,
        d_weights.into_iter().map(T::of).collect(),
    )?;
    Ok((d_input, d_kernel))
}

/// Elementwise `max(x, 0)`.
pub fn relu<T: Scalar>(x: &Tensor3<T>) -> Tensor3<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Gradient of ReLU: passes `d_out` where the pre-activation was > 0.
pub fn relu_backward<T: Scalar>(pre: &Tensor3<T>, d_out: &Tensor3<T>) -> Tensor3<T> {
    debug_assert!(pre.same_shape(d_out));
    let mut d_in = d_out.clone();
    for (g, &x) in d_in.data_mut().iter_mut().zip(pre.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    d_in
}

/// Per-channel spatial statistics used by instance normalization.
fn channel_moments<T: Scalar>(x: &Tensor3<T>, c: usize) -> (f64, f64) {
    let (h, w) = x.spatial_shape();
    let n = (h * w) as f64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            let v = x.at(i, j, c).f64();
            sum += v;
            sum_sq += v * v;
        }
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    (mean, var)
}

/// Instance normalization: each channel is shifted and scaled to zero spatial
/// mean and unit variance (population variance, no learned affine terms).
pub fn instance_norm<T: Scalar>(x: &Tensor3<T>, eps: f64) -> Result<Tensor3<T>> {
    if !(eps > 0.0) {
        return Err(DclError::Config(format!("instance norm eps must be > 0, got {eps}")));
    }
    let (h, w) = x.spatial_shape();
    let mut out = Tensor3::zeros(h, w, x.channels());
    for c in 0..x.channels() {
        let (mean, var) = channel_moments(x, c);
        let inv_std = 1.0 / (var + eps).sqrt();
        for i in 0..h {
            for j in 0..w {
                out.set(i, j, c, T::of((x.at(i, j, c).f64() - mean) * inv_std));
            }
        }
    }
    Ok(out)
}

/// Exact gradient of [`instance_norm`] with respect to its input.
///
/// With `x̂ = (x − μ)/√(σ² + eps)` and spatial size N, per channel:
/// `dx = inv_std · (g − mean(g) − x̂ · mean(g ⊙ x̂))`.
pub fn instance_norm_backward<T: Scalar>(
    x: &Tensor3<T>,
    eps: f64,
    d_out: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    if !(eps > 0.0) {
        return Err(DclError::Config(format!("instance norm eps must be > 0, got {eps}")));
    }
    if !x.same_shape(d_out) {
        return Err(DclError::ShapeMismatch("instance norm cotangent shape".into()));
    }
    let (h, w) = x.spatial_shape();
    let n = (h * w) as f64;
    let mut d_in = Tensor3::zeros(h, w, x.channels());
    for c in 0..x.channels() {
        let (mean, var) = channel_moments(x, c);
        let inv_std = 1.0 / (var + eps).sqrt();
        let mut g_sum = 0.0f64;
        let mut gx_sum = 0.0f64;
        for i in 0..h {
            for j in 0..w {
                let g = d_out.at(i, j, c).f64();
                let xh = (x.at(i, j, c).f64() - mean) * inv_std;
                g_sum += g;
                gx_sum += g * xh;
            }
        }
        let g_mean = g_sum / n;
        let gx_mean = gx_sum / n;
        for i in 0..h {
            for j in 0..w {
                let g = d_out.at(i, j, c).f64();
                let xh = (x.at(i, j, c).f64() - mean) * inv_std;
                d_in.set(i, j, c, T::of(inv_std * (g - g_mean - xh * gx_mean)));
            }
        }
    }
    Ok(d_in)
}

/// window×window mean filter with zero padding; the divisor stays window²
/// even where the window hangs over the border, matching convolution with a
/// constant averaging kernel.
///
/// Implemented with a summed-area table; the naive double loop lives in the
/// tests as the oracle.
pub fn box_mean_filter<T: Scalar>(x: &Map2<T>, window: usize) -> Result<Map2<T>> {
    if window % 2 == 0 || window == 0 {
        return Err(DclError::BadWindow(window));
    }
    let (h, w) = (x.height(), x.width());
    let r = window / 2;

    // sat[i+1][j+1] = sum of x[0..=i][0..=j]
    let mut sat = vec![0.0f64; (h + 1) * (w + 1)];
    for i in 0..h {
        let mut row_sum = 0.0f64;
        for j in 0..w {
            row_sum += x.at(i, j).f64();
            sat[(i + 1) * (w + 1) + (j + 1)] = sat[i * (w + 1) + (j + 1)] + row_sum;
        }
    }

    let norm = 1.0 / (window * window) as f64;
    let mut out = Map2::zeros(h, w);
    for i in 0..h {
        let i0 = i.saturating_sub(r);
        let i1 = (i + r + 1).min(h);
        for j in 0..w {
            let j0 = j.saturating_sub(r);
            let j1 = (j + r + 1).min(w);
            let sum = sat[i1 * (w + 1) + j1] - sat[i0 * (w + 1) + j1] - sat[i1 * (w + 1) + j0]
                + sat[i0 * (w + 1) + j0];
            out.set(i, j, T::of(sum * norm));
        }
    }
    Ok(out)
}
