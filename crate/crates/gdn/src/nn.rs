//! Layer kernels on channel-planar 2D data with periodic boundaries, each
//! with its reverse-mode counterpart.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Exact GeLU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Spatial layout of channel-planar data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Planes {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Planes {
    pub fn area(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.channels * self.area()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn wrap_table(n_out: usize, n_in: usize, stride: usize, tap: usize) -> Vec<usize> {
    (0..n_out).map(|i| (stride * i + tap + n_in - 1) % n_in).collect()
}

/// 3x3 periodic convolution. `weight` is `[c_out][c_in][3][3]`.
pub fn conv3x3(x: &[f64], inp: Planes, weight: &[f64], bias: &[f64], c_out: usize, stride: usize) -> (Vec<f64>, Planes) {
    let out = Planes { channels: c_out, rows: inp.rows / stride, cols: inp.cols / stride };
    debug_assert_eq!(x.len(), inp.len());
    debug_assert_eq!(weight.len(), c_out * inp.channels * 9);
    let area = out.area();
    let mut y = vec![0.0; out.len()];
    let rows: Vec<Vec<usize>> = (0..3).map(|t| wrap_table(out.rows, inp.rows, stride, t)).collect();
    let cols: Vec<Vec<usize>> = (0..3).map(|t| wrap_table(out.cols, inp.cols, stride, t)).collect();
    for o in 0..c_out {
        let yo = &mut y[o * area..(o + 1) * area];
        yo.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..inp.channels {
            let xc = &x[c * inp.area()..(c + 1) * inp.area()];
            for di in 0..3 {
                for dj in 0..3 {
                    let w = weight[((o * inp.channels + c) * 3 + di) * 3 + dj];
                    for (i, &r) in rows[di].iter().enumerate() {
                        let xr = &xc[r * inp.cols..(r + 1) * inp.cols];
                        let yr = &mut yo[i * out.cols..(i + 1) * out.cols];
                        for (yv, &col) in yr.iter_mut().zip(&cols[dj]) {
                            *yv += w * xr[col];
                        }
                    }
                }
            }
        }
    }
    (y, out)
}

/// Accumulates weight and bias gradients and returns the input sensitivity.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    x: &[f64],
    inp: Planes,
    weight: &[f64],
    c_out: usize,
    stride: usize,
    y_bar: &[f64],
    w_bar: &mut [f64],
    b_bar: &mut [f64],
) -> Vec<f64> {
    let out = Planes { channels: c_out, rows: inp.rows / stride, cols: inp.cols / stride };
    let area = out.area();
    let mut x_bar = vec![0.0; inp.len()];
    let rows: Vec<Vec<usize>> = (0..3).map(|t| wrap_table(out.rows, inp.rows, stride, t)).collect();
    let cols: Vec<Vec<usize>> = (0..3).map(|t| wrap_table(out.cols, inp.cols, stride, t)).collect();
    for o in 0..c_out {
        let yo = &y_bar[o * area..(o + 1) * area];
        b_bar[o] += yo.iter().sum::<f64>();
        for c in 0..inp.channels {
            let xc = &x[c * inp.area()..(c + 1) * inp.area()];
            let xbc = &mut x_bar[c * inp.area()..(c + 1) * inp.area()];
            for di in 0..3 {
                for dj in 0..3 {
                    let k = ((o * inp.channels + c) * 3 + di) * 3 + dj;
                    let w = weight[k];
                    let mut gw = 0.0;
                    for (i, &r) in rows[di].iter().enumerate() {
                        let yr = &yo[i * out.cols..(i + 1) * out.cols];
                        let base = r * inp.cols;
                        for (&g, &col) in yr.iter().zip(&cols[dj]) {
                            gw += g * xc[base + col];
                            xbc[base + col] += w * g;
                        }
                    }
                    w_bar[k] += gw;
                }
            }
        }
    }
    x_bar
}

/// Node-aligned periodic bilinear upsampling by two.
pub fn upsample2(x: &[f64], inp: Planes) -> (Vec<f64>, Planes) {
    let out = Planes { channels: inp.channels, rows: 2 * inp.rows, cols: 2 * inp.cols };
    let mut y = vec![0.0; out.len()];
    for c in 0..inp.channels {
        let xc = &x[c * inp.area()..(c + 1) * inp.area()];
        let yc = &mut y[c * out.area()..(c + 1) * out.area()];
        for i in 0..out.rows {
            let (r0, r1, wr) = taps(i, inp.rows);
            for j in 0..out.cols {
                let (c0, c1, wc) = taps(j, inp.cols);
                yc[i * out.cols + j] = (1.0 - wr) * ((1.0 - wc) * xc[r0 * inp.cols + c0] + wc * xc[r0 * inp.cols + c1])
                    + wr * ((1.0 - wc) * xc[r1 * inp.cols + c0] + wc * xc[r1 * inp.cols + c1]);
            }
        }
    }
    (y, out)
}

#[inline]
fn taps(i: usize, n: usize) -> (usize, usize, f64) {
    let lo = i / 2;
    let hi = (lo + 1) % n;
    (lo, hi, if i % 2 == 1 { 0.5 } else { 0.0 })
}

pub fn upsample2_backward(y_bar: &[f64], inp: Planes) -> Vec<f64> {
    let out = Planes { channels: inp.channels, rows: 2 * inp.rows, cols: 2 * inp.cols };
    let mut x_bar = vec![0.0; inp.len()];
    for c in 0..inp.channels {
        let yc = &y_bar[c * out.area()..(c + 1) * out.area()];
        let xc = &mut x_bar[c * inp.area()..(c + 1) * inp.area()];
        for i in 0..out.rows {
            let (r0, r1, wr) = taps(i, inp.rows);
            for j in 0..out.cols {
                let (c0, c1, wc) = taps(j, inp.cols);
                let g = yc[i * out.cols + j];
                xc[r0 * inp.cols + c0] += (1.0 - wr) * (1.0 - wc) * g;
                xc[r0 * inp.cols + c1] += (1.0 - wr) * wc * g;
                xc[r1 * inp.cols + c0] += wr * (1.0 - wc) * g;
                xc[r1 * inp.cols + c1] += wr * wc * g;
            }
        }
    }
    x_bar
}

/// Per-site affine channel map `y = W x + b`, `W` being `[c_out][c_in]`.
pub fn pointwise(x: &[f64], c_in: usize, area: usize, weight: &[f64], bias: &[f64], c_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; c_out * area];
    for o in 0..c_out {
        let yo = &mut y[o * area..(o + 1) * area];
        yo.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..c_in {
            let w = weight[o * c_in + c];
            if w == 0.0 {
                continue;
            }
            for (yv, xv) in yo.iter_mut().zip(&x[c * area..(c + 1) * area]) {
                *yv += w * xv;
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward(
    x: &[f64],
    c_in: usize,
    area: usize,
    weight: &[f64],
    c_out: usize,
    y_bar: &[f64],
    w_bar: &mut [f64],
    b_bar: &mut [f64],
) -> Vec<f64> {
    let mut x_bar = vec![0.0; c_in * area];
    for o in 0..c_out {
        let go = &y_bar[o * area..(o + 1) * area];
        b_bar[o] += go.iter().sum::<f64>();
        for c in 0..c_in {
            let xc = &x[c * area..(c + 1) * area];
            w_bar[o * c_in + c] += go.iter().zip(xc).map(|(g, v)| g * v).sum::<f64>();
            let w = weight[o * c_in + c];
            for (xb, g) in x_bar[c * area..(c + 1) * area].iter_mut().zip(go) {
                *xb += w * g;
            }
        }
    }
    x_bar
}
