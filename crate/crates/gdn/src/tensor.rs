//! Flat parameter tensors and a visitor over named parameter groups.

use num_complex::Complex64;
use rand::Rng;

/// Dense `f64` tensor. Complex tensors store interleaved `(re, im)` pairs,
/// so `data.len()` is twice the element count.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    complex: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()], complex: false }
    }

    pub fn complex_zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; 2 * shape.iter().product::<usize>()], complex: true }
    }

    pub fn from_data(shape: &[usize], data: Vec<f64>, complex: bool) -> Option<Self> {
        let n: usize = shape.iter().product();
        (data.len() == if complex { 2 * n } else { n }).then(|| Self { shape: shape.to_vec(), data, complex })
    }

    /// Uniform entries in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, complex: bool, rng: &mut impl Rng) -> Self {
        let mut t = if complex { Self::complex_zeros(shape) } else { Self::zeros(shape) };
        for x in t.data.iter_mut() {
            *x = rng.gen_range(-bound..=bound);
        }
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![0.0; self.data.len()], complex: self.complex }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn as_complex(&self) -> Vec<Complex64> {
        debug_assert!(self.complex);
        self.data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
    }

    pub fn add_complex(&mut self, values: &[Complex64]) {
        debug_assert!(self.complex);
        for (c, v) in self.data.chunks_exact_mut(2).zip(values) {
            c[0] += v.re;
            c[1] += v.im;
        }
    }
}

/// A structure made of named tensors. Gradients reuse the parameter type.
pub trait Parameters: Clone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, t| t.fill(0.0));
        z
    }

    fn count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// All values in visiting order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Inverse of [`Parameters::flatten`]; `values` must have [`Parameters::count`] entries.
    fn assign(&mut self, values: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[at..at + n]);
            at += n;
        });
    }

    fn add_scaled(&mut self, a: f64, other: &Self) {
        let flat = other.flatten();
        let mut at = 0;
        self.visit_mut(&mut |_, t| {
            for x in t.data_mut() {
                *x += a * flat[at];
                at += 1;
            }
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.is_finite());
        ok
    }
}
