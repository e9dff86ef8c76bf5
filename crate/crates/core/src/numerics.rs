//! Dense 64-bit linear algebra with hand-written backward rules, a named
//! parameter store, Adam, and a central-difference gradient checker.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    ShapeMismatch { op: &'static str, expected: (usize, usize), found: (usize, usize) },
    NonFinite { what: &'static str },
    DuplicateParameter(String),
    UnknownParameter(String),
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::ShapeMismatch { op, expected, found } => {
                write!(f, "{op}: shape mismatch, expected {}x{}, found {}x{}", expected.0, expected.1, found.0, found.1)
            }
            NumericsError::NonFinite { what } => write!(f, "non-finite value in {what}"),
            NumericsError::DuplicateParameter(n) => write!(f, "parameter {n:?} already exists"),
            NumericsError::UnknownParameter(n) => write!(f, "no parameter named {n:?}"),
        }
    }
}

impl core::error::Error for NumericsError {}

pub type Result<T> = core::result::Result<T, NumericsError>;

fn check(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(NumericsError::ShapeMismatch { op, expected, found })
    }
}

/// Row-major dense matrix. Vectors are stored as `k x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check("Matrix::from_vec", (rows * cols, 1), (data.len(), 1))?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn column(data: Vec<f64>) -> Self {
        Matrix { rows: data.len(), cols: 1, data }
    }

    /// Uniform in `±sqrt(6 / (rows + cols))`.
    pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (rows + cols) as f64);
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check("matvec", (self.cols, 1), (x.len(), 1))?;
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `self^T * y`.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        check("matvec_t", (self.rows, 1), (y.len(), 1))?;
        let mut out = vec![0.0; self.cols];
        for (r, &g) in y.iter().enumerate() {
            if g != 0.0 {
                axpy(g, self.row(r), &mut out);
            }
        }
        Ok(out)
    }

    /// `self += scale * a b^T`.
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) -> Result<()> {
        check("add_outer", (self.rows, self.cols), (a.len(), b.len()))?;
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                let cols = self.cols;
                axpy(scale * ar, b, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &Matrix) -> Result<()> {
        check("add_scaled", self.shape(), other.shape())?;
        axpy(scale, &other.data, &mut self.data);
        Ok(())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check("matmul", (self.cols, 0), (other.rows, 0))?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `w x + b`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check("affine bias", (w.rows(), 1), (b.len(), 1))?;
    let mut out = w.matvec(x)?;
    axpy(1.0, b, &mut out);
    Ok(out)
}

/// Accumulates `dW += g x^T`, `db += g` and returns `dx = W^T g`.
pub fn affine_backward(w: &Matrix, x: &[f64], grad_out: &[f64], dw: &mut Matrix, db: &mut [f64]) -> Result<Vec<f64>> {
    check("affine_backward", (w.rows(), 1), (grad_out.len(), 1))?;
    check("affine_backward bias", (db.len(), 1), (grad_out.len(), 1))?;
    dw.add_outer(1.0, grad_out, x)?;
    axpy(1.0, grad_out, db);
    w.matvec_t(grad_out)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient through relu given its pre-activation input.
pub fn relu_backward(input: &[f64], grad_out: &[f64]) -> Vec<f64> {
    input.iter().zip(grad_out).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| libm::exp(v - max)).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(x.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|&v| v - lse).collect()
}

/// Gradient through softmax given its output `y`: `y * (g - <g, y>)`.
pub fn softmax_backward(output: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let inner = dot(output, grad_out);
    output.iter().zip(grad_out).map(|(&y, &g)| y * (g - inner)).collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// Gradient through sigmoid given its output.
pub fn sigmoid_backward(output: &[f64], grad_out: &[f64]) -> Vec<f64> {
    output.iter().zip(grad_out).map(|(&y, &g)| g * y * (1.0 - y)).collect()
}

pub fn tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| libm::tanh(v)).collect()
}

/// Gradient through tanh given its output.
pub fn tanh_backward(output: &[f64], grad_out: &[f64]) -> Vec<f64> {
    output.iter().zip(grad_out).map(|(&y, &g)| g * (1.0 - y * y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Trainable tensors keyed by name, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Matrix) -> Result<ParamId> {
        if self.id(name).is_some() {
            return Err(NumericsError::DuplicateParameter(String::from(name)));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name: String::from(name), value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name).ok_or_else(|| NumericsError::UnknownParameter(String::from(name)))
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].grad
    }

    /// Value and gradient of the same parameter, borrowed together.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&Matrix, &mut Matrix) {
        let p = &mut self.params[id.0];
        (&p.value, &mut p.grad)
    }

    /// Weight value, weight gradient and bias gradient of an affine layer.
    /// Panics if `w == b`.
    pub fn affine_parts(&mut self, w: ParamId, b: ParamId) -> (&Matrix, &mut Matrix, &mut Matrix) {
        assert_ne!(w, b, "weight and bias must be distinct parameters");
        if w.0 < b.0 {
            let (lo, hi) = self.params.split_at_mut(b.0);
            let pw = &mut lo[w.0];
            (&pw.value, &mut pw.grad, &mut hi[0].grad)
        } else {
            let (lo, hi) = self.params.split_at_mut(w.0);
            let pw = &mut hi[0];
            (&pw.value, &mut pw.grad, &mut lo[b.0].grad)
        }
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }
}

/// Adam with bias correction. Moment buffers are created on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParameterStore) {
        if self.first.len() != store.len() {
            self.first = store.params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
            self.second = self.first.clone();
        }
        self.t += 1;
        let t = self.t as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for (k, p) in store.params.iter_mut().enumerate() {
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let w = p.value.data_mut();
            for (((wi, &g), mi), vi) in w.iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *wi -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
            p.grad.fill(0.0);
        }
    }
}

/// Loss value plus a fingerprint of every discrete choice made while
/// computing it (argmax trees, relu masks). Finite differences are only
/// meaningful where the fingerprint does not change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub region: u64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Probe { loss, region: 0 }
    }
}

/// 64-bit FNV-1a, used for [`Probe::region`].
#[derive(Debug, Clone, Copy)]
pub struct RegionHasher(u64);

impl Default for RegionHasher {
    fn default() -> Self {
        RegionHasher(0xcbf2_9ce4_8422_2325)
    }
}

impl RegionHasher {
    pub fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    pub fn write_signs(&mut self, xs: &[f64]) {
        let mut word = 0u64;
        for (k, &x) in xs.iter().enumerate() {
            if x > 0.0 {
                word |= 1 << (k % 64);
            }
            if k % 64 == 63 {
                self.write_u64(word);
                word = 0;
            }
        }
        self.write_u64(word);
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator so that entries whose
    /// true gradient is ~0 are compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly strided entries per parameter.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, tolerance: 1e-4, floor: 1e-6, max_entries: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Entries whose ±eps probes landed in a different region (kinks).
    pub skipped: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub worst_entry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.failures == 0)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }
}

/// Compares the gradients `loss_fn` accumulates into `store` against central
/// differences. `loss_fn` must be deterministic; gradients are zeroed before
/// each call and left zeroed on return.
pub fn grad_check<F>(store: &mut ParameterStore, mut loss_fn: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParameterStore) -> Probe,
{
    store.zero_grad();
    let base = loss_fn(store);
    if !base.loss.is_finite() {
        return Err(NumericsError::NonFinite { what: "loss" });
    }
    let analytic: Vec<Matrix> = store.params.iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();

    let mut params = Vec::with_capacity(store.len());
    #[allow(clippy::needless_range_loop)]
    for k in 0..store.len() {
        let id = ParamId(k);
        let size = store.value(id).data().len();
        let stride = match cfg.max_entries {
            Some(m) if m > 0 && size > m => size.div_ceil(m),
            _ => 1,
        };
        let mut report = ParamCheck {
            name: store.params[k].name.clone(),
            checked: 0,
            skipped: 0,
            failures: 0,
            max_rel_error: 0.0,
            worst_entry: None,
        };
        for e in (0..size).step_by(stride) {
            let orig = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = orig + cfg.eps;
            let plus = loss_fn(store);
            store.value_mut(id).data_mut()[e] = orig - cfg.eps;
            let minus = loss_fn(store);
            store.value_mut(id).data_mut()[e] = orig;
            store.zero_grad();
            if !plus.loss.is_finite() || !minus.loss.is_finite() {
                return Err(NumericsError::NonFinite { what: "perturbed loss" });
            }
            if plus.region != base.region || minus.region != base.region {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.eps);
            let a = analytic[k].data()[e];
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_entry = Some(e);
            }
            if rel > cfg.tolerance {
                report.failures += 1;
            }
        }
        params.push(report);
    }
    Ok(GradCheckReport { params, tolerance: cfg.tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetric() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, 0.0, -1000.0]);
        assert!((big[0] - 1.0).abs() < 1e-12 && big.iter().all(|p| p.is_finite()));
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + core::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn relu_forward_backward() {
        assert_eq!(relu(&[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(relu_backward(&[-1.0, 2.0], &[3.0, 4.0]), vec![0.0, 4.0]);
    }

    #[test]
    fn sigmoid_range() {
        let s = sigmoid(&[-800.0, 0.0, 800.0]);
        assert_eq!(s[1], 0.5);
        assert!(s[0] >= 0.0 && s[2] <= 1.0);
        let s = sigmoid(&[-30.0, 30.0]);
        assert!(s[0] > 0.0 && s[1] < 1.0);
    }

    #[test]
    fn shape_errors() {
        let w = Matrix::zeros(2, 3);
        assert!(matches!(affine(&w, &[1.0, 2.0], &[0.0, 0.0]), Err(NumericsError::ShapeMismatch { .. })));
        assert!(affine(&w, &[1.0, 2.0, 3.0], &[0.0]).is_err());
        assert!(Matrix::zeros(2, 2).matmul(&Matrix::zeros(3, 1)).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = a.transpose();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[14.0, 32.0, 32.0, 77.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]).unwrap(), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn store_names_unique() {
        let mut s = ParameterStore::new();
        s.add("w", Matrix::zeros(1, 1)).unwrap();
        assert!(matches!(s.add("w", Matrix::zeros(1, 1)), Err(NumericsError::DuplicateParameter(_))));
        assert!(s.require("v").is_err());
    }

    /// Random 4x3 affine layer followed by a fixed linear readout, checked
    /// against central differences.
    #[test]
    fn affine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParameterStore::new();
        let w = store.add("w", Matrix::xavier_uniform(4, 3, &mut rng)).unwrap();
        let b = store.add("b", Matrix::xavier_uniform(4, 1, &mut rng)).unwrap();
        let x = store.add("x", Matrix::xavier_uniform(3, 1, &mut rng)).unwrap();
        let readout = [0.3, -1.2, 0.7, 2.0];
        let report = grad_check(
            &mut store,
            |s| {
                let y = affine(s.value(w), s.value(x).data(), s.value(b).data()).unwrap();
                let loss: f64 = y.iter().zip(&readout).map(|(a, r)| a * a * r).sum();
                let g: Vec<f64> = y.iter().zip(&readout).map(|(a, r)| 2.0 * a * r).collect();
                let wv = s.value(w).clone();
                let xv = s.value(x).data().to_vec();
                let mut dw = Matrix::zeros(4, 3);
                let mut db = vec![0.0; 4];
                let dx = affine_backward(&wv, &xv, &g, &mut dw, &mut db).unwrap();
                s.grad_mut(w).add_scaled(1.0, &dw).unwrap();
                axpy(1.0, &db, s.grad_mut(b).data_mut());
                axpy(1.0, &dx, s.grad_mut(x).data_mut());
                Probe::smooth(loss)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
        assert_eq!(report.checked(), 12 + 4 + 3);
    }

    #[test]
    fn quadratic_gradient_exact() {
        let mut store = ParameterStore::new();
        let p = store.add("p", Matrix::column(vec![0.5, -1.5, 2.0])).unwrap();
        let report = grad_check(
            &mut store,
            |s| {
                let v = s.value(p).data().to_vec();
                let loss = v.iter().map(|x| x * x).sum::<f64>();
                for (g, x) in s.grad_mut(p).data_mut().iter_mut().zip(&v) {
                    *g += 2.0 * x;
                }
                Probe::smooth(loss)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-8, "{}", report.max_rel_error());
    }

    #[test]
    fn elementwise_backward_rules() {
        let x = [0.3, -0.8, 1.7];
        let g = [1.0, -2.0, 0.5];
        let fd = |f: &dyn Fn(&[f64]) -> f64, k: usize| {
            let mut p = x;
            p[k] += 1e-6;
            let mut m = x;
            m[k] -= 1e-6;
            (f(&p) - f(&m)) / 2e-6
        };
        let weighted = |ys: Vec<f64>| ys.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let sm = softmax_backward(&softmax(&x), &g);
        let sg = sigmoid_backward(&sigmoid(&x), &g);
        let th = tanh_backward(&tanh(&x), &g);
        for k in 0..3 {
            assert!((sm[k] - fd(&|v| weighted(softmax(v)), k)).abs() < 1e-8);
            assert!((sg[k] - fd(&|v| weighted(sigmoid(v)), k)).abs() < 1e-8);
            assert!((th[k] - fd(&|v| weighted(tanh(v)), k)).abs() < 1e-8);
        }
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let mut store = ParameterStore::new();
        let p = store.add("p", Matrix::column(vec![1.0, 2.0])).unwrap();
        let report = grad_check(
            &mut store,
            |s| {
                let v = s.value(p).data().to_vec();
                s.grad_mut(p).data_mut()[0] += 3.0 * v[0];
                s.grad_mut(p).data_mut()[1] += 2.0 * v[1];
                Probe::smooth(v[0] * v[0] + v[1] * v[1])
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.params[0].failures, 1);
        assert_eq!(report.params[0].worst_entry, Some(0));
    }

    #[test]
    fn kinks_are_skipped() {
        let mut store = ParameterStore::new();
        let p = store.add("p", Matrix::column(vec![0.0, 1.0])).unwrap();
        let report = grad_check(
            &mut store,
            |s| {
                let v = s.value(p).data().to_vec();
                let mut h = RegionHasher::default();
                h.write_signs(&v);
                s.grad_mut(p).data_mut()[1] += 1.0;
                Probe { loss: v.iter().map(|x| x.max(0.0)).sum(), region: h.finish() }
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.skipped(), 1);
        assert!(report.passed());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut store = ParameterStore::new();
        store.add("p", Matrix::column(vec![1.0])).unwrap();
        let err = grad_check(&mut store, |_| Probe::smooth(f64::NAN), GradCheckConfig::default());
        assert!(matches!(err, Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn adam_first_step() {
        let mut store = ParameterStore::new();
        let p = store.add("p", Matrix::column(vec![1.0])).unwrap();
        let mut adam = Adam::new(0.1);
        store.grad_mut(p).data_mut()[0] = 1.0;
        adam.step(&mut store);
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((store.value(p).data()[0] - expected).abs() < 1e-15);
        assert!((store.value(p).data()[0] - 0.9).abs() < 1e-6);
        assert_eq!(store.grad(p).data()[0], 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut store = ParameterStore::new();
        store.add("p", Matrix::column(vec![1.0, -2.0])).unwrap();
        let before = store.clone();
        Adam::new(0.1).step(&mut store);
        assert_eq!(store, before);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParameterStore::new();
        let id = a.add("w", Matrix::xavier_uniform(3, 2, &mut rng)).unwrap();
        let mut b = a.clone();
        let (mut oa, mut ob) = (Adam::new(0.01), Adam::new(0.01));
        for step in 0..5 {
            for s in [&mut a, &mut b] {
                for (k, g) in s.grad_mut(id).data_mut().iter_mut().enumerate() {
                    *g = (k as f64 - 2.5) * (step as f64 + 1.0);
                }
            }
            oa.step(&mut a);
            ob.step(&mut b);
        }
        assert_eq!(a, b);
    }
}
