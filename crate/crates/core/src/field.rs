//! Grid geometry and the field types living on it, plus multilinear
//! interpolation, warping, composition and central-difference operators.
//!
//! Storage is row-major with the last axis contiguous. Unused axes of a 2D
//! grid have size 1, so every routine can treat the grid as three axes.
//! Multi-component fields are stored as consecutive component planes.

use crate::error::{Error, Result};

/// Regular grid on the periodic domain. Positions are in torus coordinates,
/// so with the default spacing the domain is the unit torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    ndim: usize,
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl Grid {
    /// Unit-torus grid: spacing `1 / dims` on every axis.
    pub fn new(dims: &[usize]) -> Result<Self> {
        let spacing: Vec<f64> = dims.iter().map(|&n| 1.0 / n.max(1) as f64).collect();
        Self::with_spacing(dims, &spacing)
    }

    pub fn with_spacing(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        let ndim = dims.len();
        if !(2..=3).contains(&ndim) {
            return Err(Error::InvalidGrid(format!("dimensionality {ndim} not in {{2, 3}}")));
        }
        if spacing.len() != ndim {
            return Err(Error::InvalidGrid(format!(
                "{} spacings for {ndim} axes",
                spacing.len()
            )));
        }
        if let Some(&n) = dims.iter().find(|&&n| n < 4) {
            return Err(Error::InvalidGrid(format!("axis size {n} < 4")));
        }
        if let Some(&h) = spacing.iter().find(|&&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::InvalidGrid(format!("spacing {h} must be positive and finite")));
        }
        let mut d = [1usize; 3];
        let mut s = [1.0f64; 3];
        d[..ndim].copy_from_slice(dims);
        s[..ndim].copy_from_slice(spacing);
        Ok(Self { ndim, dims: d, spacing: s })
    }

    /// Square 2D unit-torus grid of `n × n` nodes.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(&[n, n])
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.ndim]
    }

    /// Axis sizes padded to three axes with trailing ones.
    pub fn dims3(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing3(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn strides(&self) -> [usize; 3] {
        [self.dims[1] * self.dims[2], self.dims[2], 1]
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [s0, s1, _] = self.strides();
        [idx / s0, (idx % s0) / s1, idx % s1]
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        let [s0, s1, _] = self.strides();
        c[0] * s0 + c[1] * s1 + c[2]
    }

    /// Torus position of node `idx`.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut p = [0.0; 3];
        for a in 0..self.ndim {
            p[a] = c[a] as f64 * self.spacing[a];
        }
        p
    }

    /// Grid with every axis divided by `factor`, covering the same domain.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.dims().iter().any(|&n| n % factor != 0) {
            return Err(Error::InvalidGrid(format!(
                "dims {:?} not divisible by {factor}",
                self.dims()
            )));
        }
        let dims: Vec<usize> = self.dims().iter().map(|&n| n / factor).collect();
        let spacing: Vec<f64> = self.spacing().iter().map(|&h| h * factor as f64).collect();
        Self::with_spacing(&dims, &spacing)
    }

    /// Grid with every axis multiplied by `factor`, covering the same domain.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        let dims: Vec<usize> = self.dims().iter().map(|&n| n * factor).collect();
        let spacing: Vec<f64> = self.spacing().iter().map(|&h| h / factor as f64).collect();
        Self::with_spacing(&dims, &spacing)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.dims().to_vec(),
                right: other.dims().to_vec(),
            })
        }
    }

    /// Multilinear interpolation stencil at torus position `p`.
    pub(crate) fn corners(&self, p: &[f64; 3]) -> Corners {
        let [s0, s1, _] = self.strides();
        let strides = [s0, s1, 1];
        let mut base = [(0usize, 0usize, 0.0f64); 3];
        for a in 0..self.ndim {
            base[a] = locate(p[a], self.spacing[a], self.dims[a]);
        }
        let count = 1usize << self.ndim;
        let mut c = Corners { count, idx: [0; 8], w: [0.0; 8], dw: [[0.0; 8]; 3] };
        for k in 0..count {
            let mut idx = 0;
            let mut w = 1.0;
            for a in 0..self.ndim {
                let (i0, i1, f) = base[a];
                if k >> a & 1 == 1 {
                    idx += i1 * strides[a];
                    w *= f;
                } else {
                    idx += i0 * strides[a];
                    w *= 1.0 - f;
                }
            }
            c.idx[k] = idx;
            c.w[k] = w;
            for a in 0..self.ndim {
                let mut dw = 1.0 / self.spacing[a];
                for b in 0..self.ndim {
                    let (_, _, f) = base[b];
                    let hi = k >> b & 1 == 1;
                    if b == a {
                        if !hi {
                            dw = -dw;
                        }
                    } else {
                        dw *= if hi { f } else { 1.0 - f };
                    }
                }
                c.dw[a][k] = dw;
            }
        }
        c
    }
}

#[inline]
fn locate(p: f64, h: f64, n: usize) -> (usize, usize, f64) {
    let q = p / h;
    let fl = q.floor();
    let frac = q - fl;
    let i0 = (fl as i64).rem_euclid(n as i64) as usize;
    let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
    (i0, i1, frac)
}

/// Corner indices and weights of a multilinear stencil, with the weight
/// derivatives with respect to each position coordinate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Corners {
    pub count: usize,
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub dw: [[f64; 8]; 3],
}

impl Corners {
    #[inline]
    pub fn sample(&self, f: &[f64]) -> f64 {
        (0..self.count).map(|k| self.w[k] * f[self.idx[k]]).sum()
    }

    #[inline]
    pub fn gradient(&self, f: &[f64], ndim: usize) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate().take(ndim) {
            *ga = (0..self.count).map(|k| self.dw[a][k] * f[self.idx[k]]).sum();
        }
        g
    }

    #[inline]
    pub fn scatter(&self, f: &mut [f64], value: f64) {
        for k in 0..self.count {
            f[self.idx[k]] += self.w[k] * value;
        }
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values, "scalar field")?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at every node position.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn sample(&self, p: &[f64; 3]) -> f64 {
        self.grid.corners(p).sample(&self.values)
    }
}

/// `ndim` real components per grid node, stored as component planes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let want = grid.ndim() * grid.len();
        if data.len() != want {
            return Err(Error::Shape(format!(
                "{} vector components, expected {want}",
                data.len()
            )));
        }
        check_finite(&data, "vector field")?;
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, data: vec![0.0; grid.ndim() * grid.len()] }
    }

    /// Spatially constant field.
    pub fn constant(grid: Grid, value: &[f64]) -> Result<Self> {
        if value.len() != grid.ndim() {
            return Err(Error::Shape(format!(
                "constant of length {} for a {}D grid",
                value.len(),
                grid.ndim()
            )));
        }
        let n = grid.len();
        let mut data = Vec::with_capacity(n * grid.ndim());
        for &c in value {
            data.extend(std::iter::repeat(c).take(n));
        }
        Self::new(grid, data)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64; 3]) -> [f64; 3]) -> Self {
        let n = grid.len();
        let d = grid.ndim();
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let v = f(&grid.position(i));
            for c in 0..d {
                data[c * n + i] = v[c];
            }
        }
        Self { grid, data }
    }

    pub(crate) fn from_raw(grid: Grid, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), grid.len() * grid.ndim());
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ndim(&self) -> usize {
        self.grid.ndim()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Vector at node `idx`.
    pub fn at(&self, idx: usize) -> [f64; 3] {
        let n = self.grid.len();
        let mut v = [0.0; 3];
        for (c, vc) in v.iter_mut().enumerate().take(self.ndim()) {
            *vc = self.data[c * n + idx];
        }
        v
    }

    /// Interpolated vector at torus position `p`.
    pub fn sample(&self, p: &[f64; 3]) -> [f64; 3] {
        let corners = self.grid.corners(p);
        let mut v = [0.0; 3];
        for (c, vc) in v.iter_mut().enumerate().take(self.ndim()) {
            *vc = corners.sample(self.component(c));
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Plain Euclidean sum of squares of all components (no cell volume).
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|v| a * v).collect() }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &VectorField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x + a * y).collect();
        Ok(Self { grid: self.grid, data })
    }

    pub(crate) fn add_scaled_mut(&mut self, a: f64, other: &VectorField) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }
}

/// Arbitrary number of real channels per node, stored as channel planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelField {
    grid: Grid,
    channels: usize,
    data: Vec<f64>,
}

impl ChannelField {
    pub fn new(grid: Grid, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * grid.len() {
            return Err(Error::Shape(format!(
                "{} values for {channels} channels of {} nodes",
                data.len(),
                grid.len()
            )));
        }
        check_finite(&data, "channel field")?;
        Ok(Self { grid, channels, data })
    }

    pub fn zeros(grid: Grid, channels: usize) -> Self {
        Self { grid, channels, data: vec![0.0; channels * grid.len()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl From<VectorField> for ChannelField {
    fn from(v: VectorField) -> Self {
        let channels = v.ndim();
        Self { grid: v.grid, channels, data: v.data }
    }
}

impl From<ScalarField> for ChannelField {
    fn from(s: ScalarField) -> Self {
        Self { grid: s.grid, channels: 1, data: s.values }
    }
}

impl TryFrom<ChannelField> for VectorField {
    type Error = Error;

    fn try_from(c: ChannelField) -> Result<Self> {
        if c.channels != c.grid.ndim() {
            return Err(Error::Shape(format!(
                "{} channels cannot form a {}D vector field",
                c.channels,
                c.grid.ndim()
            )));
        }
        Ok(Self { grid: c.grid, data: c.data })
    }
}

/// Diffeomorphism `phi(x) = x + u(x)` stored through its displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    displacement: VectorField,
}

impl Transform {
    pub fn identity(grid: Grid) -> Self {
        Self { displacement: VectorField::zeros(grid) }
    }

    pub fn from_displacement(displacement: VectorField) -> Self {
        Self { displacement }
    }

    /// Pure translation by `shift` (torus units).
    pub fn translation(grid: Grid, shift: &[f64]) -> Result<Self> {
        Ok(Self { displacement: VectorField::constant(grid, shift)? })
    }

    pub fn grid(&self) -> &Grid {
        self.displacement.grid()
    }

    pub fn displacement(&self) -> &VectorField {
        &self.displacement
    }

    pub fn into_displacement(self) -> VectorField {
        self.displacement
    }

    pub fn is_identity(&self) -> bool {
        self.displacement.data().iter().all(|&u| u == 0.0)
    }

    /// Mapped position `phi(x)` of node `idx`.
    pub fn map_node(&self, idx: usize) -> [f64; 3] {
        let grid = self.grid();
        let mut p = grid.position(idx);
        let n = grid.len();
        for (a, pa) in p.iter_mut().enumerate().take(grid.ndim()) {
            *pa += self.displacement.data()[a * n + idx];
        }
        p
    }
}

/// Per-node `d × d` matrix, entry `(i, j)` stored in plane `i * d + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    grid: Grid,
    data: Vec<f64>,
}

impl JacobianField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Plane holding `d v_i / d x_j`.
    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        let n = self.grid.len();
        let d = self.grid.ndim();
        let k = i * d + j;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn at(&self, idx: usize) -> [[f64; 3]; 3] {
        let d = self.grid.ndim();
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate().take(d) {
            for (j, mij) in row.iter_mut().enumerate().take(d) {
                *mij = self.entry(i, j)[idx];
            }
        }
        m
    }
}

fn check_point(p: &[f64], ndim: usize) -> Result<[f64; 3]> {
    if p.len() != ndim {
        return Err(Error::Shape(format!("{}-component position on a {ndim}D grid", p.len())));
    }
    if !p.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("interpolation position".into()));
    }
    let mut q = [0.0; 3];
    q[..ndim].copy_from_slice(p);
    Ok(q)
}

/// Multilinear interpolation of `f` with periodic wrap on every axis.
pub fn interpolate<P: AsRef<[f64]>>(f: &ScalarField, points: &[P]) -> Result<Vec<f64>> {
    let ndim = f.grid.ndim();
    points
        .iter()
        .map(|p| {
            let q = check_point(p.as_ref(), ndim)?;
            Ok(f.sample(&q))
        })
        .collect()
}

/// `f(x + u(x))` at every node.
pub fn warp(f: &ScalarField, phi: &Transform) -> Result<ScalarField> {
    f.grid.check_same(phi.grid())?;
    let grid = f.grid;
    let values = (0..grid.len())
        .map(|i| f.sample(&phi.map_node(i)))
        .collect();
    Ok(ScalarField::from_raw(grid, values))
}

/// Reverse-mode sensitivity of `warp(f, phi)` with respect to the
/// displacement of `phi`, given the upstream sensitivity on the output.
pub fn warp_vjp_displacement(
    f: &ScalarField,
    phi: &Transform,
    out_bar: &ScalarField,
) -> Result<VectorField> {
    f.grid.check_same(phi.grid())?;
    f.grid.check_same(out_bar.grid())?;
    let grid = f.grid;
    let n = grid.len();
    let d = grid.ndim();
    let mut bar = vec![0.0; d * n];
    for i in 0..n {
        let g = out_bar.values[i];
        if g == 0.0 {
            continue;
        }
        let grad = grid.corners(&phi.map_node(i)).gradient(&f.values, d);
        for a in 0..d {
            bar[a * n + i] = g * grad[a];
        }
    }
    Ok(VectorField::from_raw(grid, bar))
}

/// `(phi ∘ psi)(x) = phi(psi(x))`.
pub fn compose(phi: &Transform, psi: &Transform) -> Result<Transform> {
    phi.grid().check_same(psi.grid())?;
    let grid = *phi.grid();
    let n = grid.len();
    let d = grid.ndim();
    let mut data = psi.displacement.data.clone();
    for i in 0..n {
        let u = phi.displacement.sample(&psi.map_node(i));
        for a in 0..d {
            data[a * n + i] += u[a];
        }
    }
    Ok(Transform::from_displacement(VectorField::from_raw(grid, data)))
}

/// Central difference along `axis` with periodic wrap, written into `out`.
pub fn central_difference_into(grid: &Grid, f: &[f64], axis: usize, out: &mut [f64]) {
    let dims = grid.dims3();
    let n_axis = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let scale = 0.5 / grid.spacing3()[axis];
    let block = n_axis * inner;
    for o in 0..outer {
        let base = o * block;
        for i in 0..n_axis {
            let ip = if i + 1 == n_axis { 0 } else { i + 1 };
            let im = if i == 0 { n_axis - 1 } else { i - 1 };
            let dst = &mut out[base + i * inner..base + (i + 1) * inner];
            let fp = &f[base + ip * inner..base + (ip + 1) * inner];
            let fm = &f[base + im * inner..base + (im + 1) * inner];
            for ((d, a), b) in dst.iter_mut().zip(fp).zip(fm) {
                *d = (a - b) * scale;
            }
        }
    }
}

pub fn central_difference(grid: &Grid, f: &[f64], axis: usize) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    central_difference_into(grid, f, axis, &mut out);
    out
}

/// Entry `(i, j) = d v_i / d x_j` by periodic central differences.
pub fn jacobian(v: &VectorField) -> JacobianField {
    let grid = v.grid;
    let n = grid.len();
    let d = grid.ndim();
    let mut data = vec![0.0; d * d * n];
    for i in 0..d {
        for j in 0..d {
            let k = i * d + j;
            central_difference_into(&grid, v.component(i), j, &mut data[k * n..(k + 1) * n]);
        }
    }
    JacobianField { grid, data }
}

/// Trace of [`jacobian`], same stencil.
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid;
    let n = grid.len();
    let mut out = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for a in 0..grid.ndim() {
        central_difference_into(&grid, v.component(a), a, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o += t;
        }
    }
    ScalarField::from_raw(grid, out)
}

/// Pointwise `det(Id + Du)`.
pub fn det_jacobian(phi: &Transform) -> ScalarField {
    let grid = *phi.grid();
    let du = jacobian(phi.displacement());
    let n = grid.len();
    let values = (0..n)
        .map(|idx| {
            let mut m = du.at(idx);
            for (a, row) in m.iter_mut().enumerate().take(grid.ndim()) {
                row[a] += 1.0;
            }
            if grid.ndim() == 2 {
                m[0][0] * m[1][1] - m[0][1] * m[1][0]
            } else {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        })
        .collect();
    ScalarField::from_raw(grid, values)
}

/// `sum_x sum_i m_i(x) v_i(x)` times the cell volume.
pub fn dual_pairing(m: &VectorField, v: &VectorField) -> Result<f64> {
    m.grid.check_same(&v.grid)?;
    let s: f64 = m.data.iter().zip(&v.data).map(|(a, b)| a * b).sum();
    Ok(s * m.grid.cell_volume())
}
