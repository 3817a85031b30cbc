//! FFT plans, the diagonal metric operators `L = (alpha * Lap + Id)^c` and
//! `K = L^-1`, and truncated spectral convolution.
//!
//! The Laplacian symbol is the one of the periodic 3-point stencil measured
//! in grid cells, `sum_a 2 (1 - cos(2 pi k_a / N_a))`, so `alpha` is a
//! squared length in cells and the operators keep their conditioning under
//! grid refinement.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{ChannelField, Grid, VectorField};

/// Multi-dimensional complex FFT over a [`Grid`], built from 1D transforms.
#[derive(Clone)]
pub struct FftPlan {
    grid: Grid,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FftPlan").field("dims", &self.grid.dims()).finish()
    }
}

impl FftPlan {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let dims = grid.dims3();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { grid, forward, inverse }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Unnormalized forward transform of every length-`n` block of `buf`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.forward);
    }

    /// Inverse transform normalized by `1 / n`, so `inverse(forward(x)) = x`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.inverse);
        let s = 1.0 / self.grid.len() as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Real part of the normalized inverse transform.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    fn run(&self, buf: &mut [Complex64], ffts: &[Arc<dyn Fft<f64>>]) {
        let n = self.grid.len();
        assert_eq!(buf.len() % n, 0, "buffer is not a whole number of grid blocks");
        let dims = self.grid.dims3();
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for (axis, fft) in ffts.iter().enumerate() {
            let len = dims[axis];
            if len == 1 {
                continue;
            }
            let inner: usize = dims[axis + 1..].iter().product();
            scratch.resize(fft.get_inplace_scratch_len(), Complex64::default());
            if inner == 1 {
                fft.process_with_scratch(buf, &mut scratch);
                continue;
            }
            let block = len * inner;
            line.resize(block, Complex64::default());
            for chunk in buf.chunks_exact_mut(block) {
                for i in 0..len {
                    for j in 0..inner {
                        line[j * len + i] = chunk[i * inner + j];
                    }
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for i in 0..len {
                    for j in 0..inner {
                        chunk[i * inner + j] = line[j * len + i];
                    }
                }
            }
        }
    }
}

/// Which diagonal operator of a [`FourierMultiplier`] to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    L,
    K,
}

/// Precomputed real, even symbols of `L` and `K` on one grid.
#[derive(Debug, Clone)]
pub struct FourierMultiplier {
    grid: Grid,
    alpha: f64,
    exponent: u32,
    l: Vec<f64>,
    k: Vec<f64>,
    plan: FftPlan,
}

/// Stencil Laplacian symbol in cell units at integer frequency `k` of `n`.
fn axis_symbol(k: usize, n: usize) -> f64 {
    2.0 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos())
}

impl FourierMultiplier {
    pub fn new(grid: Grid, alpha: f64, exponent: u32) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if exponent == 0 {
            return Err(Error::InvalidArgument("operator exponent must be >= 1".into()));
        }
        let dims = grid.dims3();
        let axis: Vec<Vec<f64>> = dims
            .iter()
            .map(|&n| (0..n).map(|k| axis_symbol(k, n)).collect())
            .collect();
        let mut l = Vec::with_capacity(grid.len());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let lap = axis[0][i] + axis[1][j] + axis[2][k];
                    l.push((alpha * lap + 1.0).powi(exponent as i32));
                }
            }
        }
        let k = l.iter().map(|x| 1.0 / x).collect();
        Ok(Self { grid, alpha, exponent, l, k, plan: FftPlan::new(grid) })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn plan(&self) -> &FftPlan {
        &self.plan
    }

    /// Symbol of `L` at every frequency bin, in FFT order.
    pub fn l_symbol(&self) -> &[f64] {
        &self.l
    }

    pub fn k_symbol(&self) -> &[f64] {
        &self.k
    }

    pub fn symbol(&self, op: Operator) -> &[f64] {
        match op {
            Operator::L => &self.l,
            Operator::K => &self.k,
        }
    }

    /// Applies `op` in place to every grid-sized plane of `data`.
    /// Planes are transformed two at a time as the real and imaginary parts
    /// of one complex signal, which is exact because the symbol is real and
    /// even.
    pub fn apply_planes(&self, op: Operator, data: &mut [f64]) {
        let n = self.grid.len();
        assert_eq!(data.len() % n, 0, "data is not a whole number of planes");
        let sym = self.symbol(op);
        let planes = data.len() / n;
        let mut buf = vec![Complex64::default(); n];
        let mut p = 0;
        while p < planes {
            let pair = p + 1 < planes;
            {
                let a = &data[p * n..(p + 1) * n];
                if pair {
                    let b = &data[(p + 1) * n..(p + 2) * n];
                    for ((z, &x), &y) in buf.iter_mut().zip(a).zip(b) {
                        *z = Complex64::new(x, y);
                    }
                } else {
                    for (z, &x) in buf.iter_mut().zip(a) {
                        *z = Complex64::new(x, 0.0);
                    }
                }
            }
            self.plan.forward(&mut buf);
            for (z, s) in buf.iter_mut().zip(sym) {
                *z *= *s;
            }
            self.plan.inverse(&mut buf);
            for (x, z) in data[p * n..(p + 1) * n].iter_mut().zip(&buf) {
                *x = z.re;
            }
            if pair {
                for (y, z) in data[(p + 1) * n..(p + 2) * n].iter_mut().zip(&buf) {
                    *y = z.im;
                }
            }
            p += 2;
        }
    }

    fn apply_vector(&self, op: Operator, v: &VectorField) -> Result<VectorField> {
        self.grid.check_same(v.grid())?;
        let mut data = v.data().to_vec();
        self.apply_planes(op, &mut data);
        VectorField::new(self.grid, data)
    }

    pub fn apply_l(&self, v: &VectorField) -> Result<VectorField> {
        self.apply_vector(Operator::L, v)
    }

    pub fn apply_k(&self, m: &VectorField) -> Result<VectorField> {
        self.apply_vector(Operator::K, m)
    }

    /// `K` applied to every channel.
    pub fn smooth(&self, u: &ChannelField) -> Result<ChannelField> {
        self.grid.check_same(u.grid())?;
        let mut data = u.data().to_vec();
        self.apply_planes(Operator::K, &mut data);
        ChannelField::new(self.grid, u.channels(), data)
    }
}

pub fn apply_l(v: &VectorField, mult: &FourierMultiplier) -> Result<VectorField> {
    mult.apply_l(v)
}

pub fn apply_k(m: &VectorField, mult: &FourierMultiplier) -> Result<VectorField> {
    mult.apply_k(m)
}

pub fn smooth(u: &ChannelField, mult: &FourierMultiplier) -> Result<ChannelField> {
    mult.smooth(u)
}

/// Complex channel-mixing weights on the Fourier modes with
/// `|k_a| <= k_max` on every axis.
///
/// Weights are laid out as `[mode][out][in]`, modes enumerated row-major
/// over signed frequencies `-k_max..=k_max` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralKernel {
    ndim: usize,
    k_max: usize,
    c_in: usize,
    c_out: usize,
    weights: Vec<Complex64>,
}

impl SpectralKernel {
    pub fn new(
        ndim: usize,
        k_max: usize,
        c_in: usize,
        c_out: usize,
        weights: Vec<Complex64>,
    ) -> Result<Self> {
        if !(2..=3).contains(&ndim) || k_max == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel shape ndim={ndim} k_max={k_max} c_in={c_in} c_out={c_out}"
            )));
        }
        let modes = (2 * k_max + 1).pow(ndim as u32);
        if weights.len() != modes * c_in * c_out {
            return Err(Error::Shape(format!(
                "{} kernel weights, expected {}",
                weights.len(),
                modes * c_in * c_out
            )));
        }
        if !weights.iter().all(|w| w.re.is_finite() && w.im.is_finite()) {
            return Err(Error::NonFinite("spectral kernel".into()));
        }
        Ok(Self { ndim, k_max, c_in, c_out, weights })
    }

    pub fn zeros(ndim: usize, k_max: usize, c_in: usize, c_out: usize) -> Result<Self> {
        let modes = (2 * k_max + 1).pow(ndim as u32);
        Self::new(ndim, k_max, c_in, c_out, vec![Complex64::default(); modes * c_in * c_out])
    }

    /// Identity channel map at every retained mode.
    pub fn identity(ndim: usize, k_max: usize, channels: usize) -> Result<Self> {
        let mut k = Self::zeros(ndim, k_max, channels, channels)?;
        for m in 0..k.mode_count() {
            for c in 0..channels {
                *k.weight_mut(m, c, c) = Complex64::new(1.0, 0.0);
            }
        }
        Ok(k)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn channels_in(&self) -> usize {
        self.c_in
    }

    pub fn channels_out(&self) -> usize {
        self.c_out
    }

    pub fn mode_count(&self) -> usize {
        (2 * self.k_max + 1).pow(self.ndim as u32)
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Complex64] {
        &mut self.weights
    }

    pub fn weight(&self, mode: usize, out: usize, inp: usize) -> Complex64 {
        self.weights[(mode * self.c_out + out) * self.c_in + inp]
    }

    pub fn weight_mut(&mut self, mode: usize, out: usize, inp: usize) -> &mut Complex64 {
        &mut self.weights[(mode * self.c_out + out) * self.c_in + inp]
    }

    /// Signed frequency per axis of mode index `mode`.
    pub fn signed_mode(&self, mode: usize) -> [i64; 3] {
        let side = 2 * self.k_max + 1;
        let mut f = [0i64; 3];
        let mut rem = mode;
        for a in (0..self.ndim).rev() {
            f[a] = (rem % side) as i64 - self.k_max as i64;
            rem /= side;
        }
        f
    }

    /// `(mode, bin)` pairs of the retained modes on `grid`. When `k_max`
    /// reaches the Nyquist frequency the two aliases `+-N/2` share one bin;
    /// only the first is kept.
    pub fn mode_bins(&self, grid: &Grid) -> Result<Vec<(usize, usize)>> {
        if grid.ndim() != self.ndim {
            return Err(Error::Shape(format!(
                "{}D kernel on a {}D grid",
                self.ndim,
                grid.ndim()
            )));
        }
        if let Some(&n) = grid.dims().iter().find(|&&n| self.k_max > n / 2) {
            return Err(Error::InvalidArgument(format!(
                "k_max {} exceeds half the axis size {n}",
                self.k_max
            )));
        }
        let dims = grid.dims3();
        let mut seen = vec![false; grid.len()];
        let mut out = Vec::with_capacity(self.mode_count());
        for m in 0..self.mode_count() {
            let f = self.signed_mode(m);
            let mut c = [0usize; 3];
            for a in 0..self.ndim {
                c[a] = f[a].rem_euclid(dims[a] as i64) as usize;
            }
            let bin = grid.index(c);
            if !seen[bin] {
                seen[bin] = true;
                out.push((m, bin));
            }
        }
        Ok(out)
    }

    fn check_input(&self, plan: &FftPlan, channels: usize) -> Result<Vec<(usize, usize)>> {
        if channels != self.c_in {
            return Err(Error::Shape(format!(
                "{channels} input channels for a kernel expecting {}",
                self.c_in
            )));
        }
        self.mode_bins(plan.grid())
    }

    /// Forward pass on raw channel planes. Returns the input spectrum (kept
    /// for the backward pass) and the real output planes.
    pub fn forward_planes(&self, plan: &FftPlan, x: &[f64]) -> Result<(Vec<Complex64>, Vec<f64>)> {
        let n = plan.grid().len();
        if x.len() != n * self.c_in {
            return Err(Error::Shape(format!(
                "{} input values, expected {}",
                x.len(),
                n * self.c_in
            )));
        }
        let bins = self.check_input(plan, x.len() / n)?;
        let x_hat = plan.forward_real(x);
        let mut y_hat = vec![Complex64::default(); n * self.c_out];
        for &(m, bin) in &bins {
            for o in 0..self.c_out {
                let mut acc = Complex64::default();
                for c in 0..self.c_in {
                    acc += self.weight(m, o, c) * x_hat[c * n + bin];
                }
                y_hat[o * n + bin] = acc;
            }
        }
        let y = plan.inverse_real(&y_hat);
        Ok((x_hat, y))
    }

    /// Reverse-mode sensitivities of the forward pass: returns the input
    /// sensitivity planes and the weight gradient (same layout as weights).
    pub fn backward_planes(
        &self,
        plan: &FftPlan,
        x_hat: &[Complex64],
        y_bar: &[f64],
    ) -> Result<(Vec<f64>, Vec<Complex64>)> {
        let n = plan.grid().len();
        if y_bar.len() != n * self.c_out || x_hat.len() != n * self.c_in {
            return Err(Error::Shape("spectral backward buffers".into()));
        }
        let bins = self.check_input(plan, self.c_in)?;
        let yb_hat = plan.forward_real(y_bar);
        let inv_n = 1.0 / n as f64;
        let mut xb_hat = vec![Complex64::default(); n * self.c_in];
        let mut w_bar = vec![Complex64::default(); self.weights.len()];
        for &(m, bin) in &bins {
            for o in 0..self.c_out {
                let g = yb_hat[o * n + bin];
                for c in 0..self.c_in {
                    let w = self.weight(m, o, c);
                    xb_hat[c * n + bin] += w.conj() * g;
                    w_bar[(m * self.c_out + o) * self.c_in + c] +=
                        g * x_hat[c * n + bin].conj() * inv_n;
                }
            }
        }
        Ok((plan.inverse_real(&xb_hat), w_bar))
    }
}

/// Truncated spectral convolution of a multi-channel field.
pub fn spectral_conv(u: &ChannelField, kernel: &SpectralKernel) -> Result<ChannelField> {
    let plan = FftPlan::new(*u.grid());
    spectral_conv_with(&plan, u, kernel)
}

pub fn spectral_conv_with(
    plan: &FftPlan,
    u: &ChannelField,
    kernel: &SpectralKernel,
) -> Result<ChannelField> {
    plan.grid().check_same(u.grid())?;
    if u.channels() != kernel.channels_in() {
        return Err(Error::Shape(format!(
            "{} input channels for a kernel expecting {}",
            u.channels(),
            kernel.channels_in()
        )));
    }
    let (_, y) = kernel.forward_planes(plan, u.data())?;
    ChannelField::new(*u.grid(), kernel.channels_out(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(grid: Grid, rng: &mut ChaCha8Rng) -> VectorField {
        let data = (0..grid.len() * grid.ndim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        VectorField::new(grid, data).unwrap()
    }

    fn naive_dft(grid: &Grid, x: &[f64]) -> Vec<Complex64> {
        let n = grid.len();
        (0..n)
            .map(|k| {
                let kc = grid.coords(k);
                let mut acc = Complex64::default();
                for (j, &xj) in x.iter().enumerate() {
                    let jc = grid.coords(j);
                    let mut phase = 0.0;
                    for a in 0..3 {
                        phase += (kc[a] * jc[a]) as f64 / grid.dims3()[a] as f64;
                    }
                    acc += xj * Complex64::from_polar(1.0, -2.0 * PI * phase);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn fft_matches_naive_dft_in_2d_and_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dims in [vec![8usize, 6], vec![4, 6, 5]] {
            let g = Grid::new(&dims).unwrap();
            let x: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = FftPlan::new(g).forward_real(&x);
            let slow = naive_dft(&g, &x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn fft_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Grid::new(&[16, 8, 4]).unwrap();
        let plan = FftPlan::new(g);
        let x: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let back = plan.inverse_real(&plan.forward_real(&x));
        let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-12 * scale);
    }

    #[test]
    fn multiplier_invariants() {
        let g = Grid::square(32).unwrap();
        let m = FourierMultiplier::new(g, 3.0, 3).unwrap();
        assert_eq!(m.l_symbol()[0], 1.0);
        assert!(m.l_symbol().iter().all(|&x| x >= 1.0));
        assert!(m.k_symbol().iter().all(|&x| x > 0.0 && x <= 1.0));
        assert!(FourierMultiplier::new(g, 0.0, 3).is_err());
        assert!(FourierMultiplier::new(g, 1.0, 0).is_err());
    }

    #[test]
    fn constant_field_is_fixed_by_l_and_zero_by_k() {
        let g = Grid::square(16).unwrap();
        let m = FourierMultiplier::new(g, 3.0, 3).unwrap();
        let c = VectorField::constant(g, &[0.7, -1.1]).unwrap();
        let lc = m.apply_l(&c).unwrap();
        for (a, b) in lc.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(m.apply_k(&VectorField::zeros(g)).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_mode_scaled_by_closed_form_symbol() {
        let g = Grid::square(32).unwrap();
        let (alpha, c) = (2.0, 2);
        let m = FourierMultiplier::new(g, alpha, c).unwrap();
        let (kx, ky) = (3usize, 5usize);
        let v = VectorField::from_fn(g, |p| {
            let t = 2.0 * PI * (kx as f64 * p[0] + ky as f64 * p[1]);
            [t.cos(), t.sin(), 0.0]
        });
        let lap = 2.0 * (1.0 - (2.0 * PI * kx as f64 / 32.0).cos())
            + 2.0 * (1.0 - (2.0 * PI * ky as f64 / 32.0).cos());
        let sym = (alpha * lap + 1.0).powi(c as i32);
        let lv = m.apply_l(&v).unwrap();
        for (a, b) in lv.data().iter().zip(v.data()) {
            assert!((a - sym * b).abs() < 1e-10 * sym);
        }
    }

    #[test]
    fn k_contracts_energy_except_on_constants() {
        let g = Grid::square(16).unwrap();
        let m = FourierMultiplier::new(g, 3.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_vector(g, &mut rng);
        let kv = m.apply_k(&v).unwrap();
        assert!(kv.norm_sq() < v.norm_sq());
        let c = VectorField::constant(g, &[1.0, 2.0]).unwrap();
        let kc = m.apply_k(&c).unwrap();
        assert!((kc.norm_sq() - c.norm_sq()).abs() < 1e-10);
    }

    #[test]
    fn l_and_k_commute_and_invert() {
        let g = Grid::new(&[8, 8, 8]).unwrap();
        let m = FourierMultiplier::new(g, 0.5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_vector(g, &mut rng);
        let lk = m.apply_l(&m.apply_k(&v).unwrap()).unwrap();
        let kl = m.apply_k(&m.apply_l(&v).unwrap()).unwrap();
        let scale = v.norm_sq().sqrt();
        let d1 = lk.axpy(-1.0, &v).unwrap().norm_sq().sqrt();
        let d2 = kl.axpy(-1.0, &lk).unwrap().norm_sq().sqrt();
        assert!(d1 < 1e-10 * scale && d2 < 1e-10 * scale);
    }

    #[test]
    fn smoothing_attenuates_white_noise_bands_by_the_symbol() {
        let g = Grid::square(32).unwrap();
        let m = FourierMultiplier::new(g, 1.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = ChannelField::new(g, 1, data.clone()).unwrap();
        let s = m.smooth(&u).unwrap();
        let plan = m.plan();
        let before = plan.forward_real(&data);
        let after = plan.forward_real(s.data());
        // high band: bins whose symbol exceeds 20
        let (mut e_in, mut e_out, mut e_pred) = (0.0, 0.0, 0.0);
        for k in 0..g.len() {
            if m.l_symbol()[k] > 20.0 {
                e_in += before[k].norm_sqr();
                e_out += after[k].norm_sqr();
                e_pred += before[k].norm_sqr() * m.k_symbol()[k].powi(2);
            }
        }
        assert!(e_in > 0.0 && e_out < e_in / 400.0);
        assert!((e_out - e_pred).abs() < 1e-10 * e_pred.max(1e-30) + 1e-20);

        let ss = m.smooth(&s).unwrap();
        let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        assert!(energy(ss.data()) <= energy(s.data()));

        let c = ChannelField::from(ScalarField::constant(g, 0.25));
        for v in m.smooth(&c).unwrap().data() {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn spectral_conv_reductions() {
        let g = Grid::square(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..2 * g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = ChannelField::new(g, 2, data).unwrap();

        let id = SpectralKernel::identity(2, 4, 2).unwrap();
        let y = spectral_conv(&u, &id).unwrap();
        for (a, b) in y.data().iter().zip(u.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero = SpectralKernel::zeros(2, 2, 2, 3).unwrap();
        let y = spectral_conv(&u, &zero).unwrap();
        assert_eq!(y.channels(), 3);
        assert!(y.data().iter().all(|&v| v == 0.0));

        let one = ChannelField::new(g, 1, u.channel(0).to_vec()).unwrap();
        let mut k = SpectralKernel::zeros(2, 2, 1, 1).unwrap();
        let center = k.mode_count() / 2;
        assert_eq!(k.signed_mode(center), [0, 0, 0]);
        *k.weight_mut(center, 0, 0) = Complex64::new(1.7, 0.0);
        let mean = one.data().iter().sum::<f64>() / g.len() as f64;
        for v in spectral_conv(&one, &k).unwrap().data() {
            assert!((v - 1.7 * mean).abs() < 1e-12);
        }

        assert!(spectral_conv(&one, &id).is_err());
        let too_big = SpectralKernel::identity(2, 5, 1).unwrap();
        assert!(spectral_conv(&one, &too_big).is_err());
    }

    #[test]
    fn spectral_conv_backward_matches_finite_differences() {
        let g = Grid::square(8).unwrap();
        let plan = FftPlan::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ci, co, kmax) = (2, 3, 2);
        let modes = (2 * kmax + 1) * (2 * kmax + 1);
        let w: Vec<Complex64> = (0..modes * ci * co)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let kernel = SpectralKernel::new(2, kmax, ci, co, w).unwrap();
        let x: Vec<f64> = (0..ci * g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..co * g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |k: &SpectralKernel, x: &[f64]| -> f64 {
            let (_, y) = k.forward_planes(&plan, x).unwrap();
            y.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (x_hat, _) = kernel.forward_planes(&plan, &x).unwrap();
        let (x_bar, w_bar) = kernel.backward_planes(&plan, &x_hat, &probe).unwrap();
        let eps = 1e-6;
        for i in [0, 17, 90] {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (loss(&kernel, &xp) - loss(&kernel, &xm)) / (2.0 * eps);
            assert!((fd - x_bar[i]).abs() < 1e-7, "{fd} vs {}", x_bar[i]);
        }
        for i in [0, 5, 31, 70] {
            for (dir, part) in [(Complex64::new(eps, 0.0), 0), (Complex64::new(0.0, eps), 1)] {
                let mut kp = kernel.clone();
                kp.weights_mut()[i] += dir;
                let mut km = kernel.clone();
                km.weights_mut()[i] -= dir;
                let fd = (loss(&kp, &x) - loss(&km, &x)) / (2.0 * eps);
                let an = if part == 0 { w_bar[i].re } else { w_bar[i].im };
                assert!((fd - an).abs() < 1e-7, "{fd} vs {an}");
            }
        }
    }
}
