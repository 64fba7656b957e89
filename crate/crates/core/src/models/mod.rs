//! Hypothesis spaces with hand-written parameter gradients.
//!
//! Four model kinds share one flat parameter vector with a named block
//! layout:
//!
//! | kind              | map                                                | blocks                          |
//! |-------------------|----------------------------------------------------|---------------------------------|
//! | `ResNetFlowMap`   | `x + τ (w1 σ(w0 x + b0) + b1)`                     | w0 d×n, b0 d, w1 n×d, b1 n      |
//! | `ScalarFnn`       | `w1ᵀ σ(w0 x + b0) + b1`                            | w0 d×n, b0 d, w1 d, b1 1        |
//! | `Polynomial`      | `Σ_k c_k φ_k((x - shift) / scale)`                 | coef K×m, input_shift, input_scale |
//! | `EnergyGradient`  | `-∇ₓ [1e-4‖x‖² + (w0ᵀx + b0)² + w2ᵀσ(w1 x + b1) + b2]` | w0 3, b0, w1 d×3, b1 d, w2 d, b2 |
//!
//! `σ` is the unit ELU. Polynomial features `φ_k` are all monomials of total
//! degree at most `d` in graded-lexicographic order; the shift/scale blocks
//! standardize inputs and are never trained.

mod io;
mod poly;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::SeedStream;

pub use io::{deserialize, read_model_file, serialize, write_model_file};
pub use poly::{monomial_count, monomial_exponents};

/// Anything a downstream algorithm can evaluate pointwise.
pub trait Surrogate: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, &mut out);
        out
    }
}

impl<T: Surrogate + ?Sized> Surrogate for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval_into(x, out)
    }
}

/// Adapts a closure `f(x, out)` to [`Surrogate`].
pub struct FnSurrogate<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnSurrogate<F> {
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self { input_dim, output_dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> Surrogate for FnSurrogate<F> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[inline]
pub fn elu(t: f64) -> f64 {
    if t >= 0.0 {
        t
    } else {
        t.exp_m1()
    }
}

#[inline]
pub fn elu_d1(t: f64) -> f64 {
    if t >= 0.0 {
        1.0
    } else {
        t.exp()
    }
}

/// Second derivative of ELU, taken as 0 at the kink.
#[inline]
pub fn elu_d2(t: f64) -> f64 {
    if t >= 0.0 {
        0.0
    } else {
        t.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    ResNetFlowMap,
    ScalarFnn,
    Polynomial,
    EnergyGradient,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ResNetFlowMap => "resnet_flow_map",
            ModelKind::ScalarFnn => "scalar_fnn",
            ModelKind::Polynomial => "polynomial",
            ModelKind::EnergyGradient => "energy_gradient",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "resnet_flow_map" | "resnet" => ModelKind::ResNetFlowMap,
            "scalar_fnn" | "fnn" => ModelKind::ScalarFnn,
            "polynomial" | "poly" => ModelKind::Polynomial,
            "energy_gradient" | "energy" => ModelKind::EnergyGradient,
            other => return Err(Error::invalid(format!("unknown model kind `{other}`"))),
        })
    }
}

/// Shape of a hypothesis space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden width, or maximum total degree for polynomials.
    pub width_or_degree: usize,
    /// τ of the residual flow map; zero for other kinds.
    pub step_scale: f64,
}

impl ModelSpec {
    pub fn resnet_flow_map(dim: usize, width: usize, step_scale: f64) -> Self {
        Self { kind: ModelKind::ResNetFlowMap, input_dim: dim, output_dim: dim, width_or_degree: width, step_scale }
    }

    pub fn scalar_fnn(input_dim: usize, width: usize) -> Self {
        Self { kind: ModelKind::ScalarFnn, input_dim, output_dim: 1, width_or_degree: width, step_scale: 0.0 }
    }

    pub fn polynomial(input_dim: usize, output_dim: usize, degree: usize) -> Self {
        Self { kind: ModelKind::Polynomial, input_dim, output_dim, width_or_degree: degree, step_scale: 0.0 }
    }

    pub fn energy_gradient(width: usize) -> Self {
        Self { kind: ModelKind::EnergyGradient, input_dim: 3, output_dim: 3, width_or_degree: width, step_scale: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !self.step_scale.is_finite() {
            return Err(Error::invalid("step scale must be finite"));
        }
        match self.kind {
            ModelKind::ResNetFlowMap if self.output_dim != self.input_dim => {
                Err(Error::invalid("flow map output dimension must equal input dimension"))
            }
            ModelKind::ScalarFnn if self.output_dim != 1 => Err(Error::invalid("scalar network has one output")),
            ModelKind::EnergyGradient if self.input_dim != 3 || self.output_dim != 3 => {
                Err(Error::invalid("energy-gradient model maps R^3 to R^3"))
            }
            ModelKind::ResNetFlowMap | ModelKind::ScalarFnn | ModelKind::EnergyGradient if self.width_or_degree == 0 => {
                Err(Error::invalid("hidden width must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn layout(&self) -> Vec<Block> {
        let (n, m, d) = (self.input_dim, self.output_dim, self.width_or_degree);
        let sizes: Vec<(&str, usize)> = match self.kind {
            ModelKind::ResNetFlowMap => vec![("w0", d * n), ("b0", d), ("w1", n * d), ("b1", n)],
            ModelKind::ScalarFnn => vec![("w0", d * n), ("b0", d), ("w1", d), ("b1", 1)],
            ModelKind::Polynomial => {
                vec![("coef", monomial_count(n, d) * m), ("input_shift", n), ("input_scale", n)]
            }
            ModelKind::EnergyGradient => {
                vec![("w0", 3), ("b0", 1), ("w1", d * 3), ("b1", d), ("w2", d), ("b2", 1)]
            }
        };
        let mut offset = 0;
        sizes
            .into_iter()
            .map(|(name, len)| {
                let b = Block { name: name.to_string(), offset, len };
                offset += len;
                b
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|b| b.len).sum()
    }
}

/// A named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    /// Frozen blocks hold input standardization and never receive gradient.
    pub fn is_frozen(&self) -> bool {
        self.name == "input_shift" || self.name == "input_scale"
    }
}

/// Flat parameters and their block table.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub layout: Vec<Block>,
}

impl ModelParams {
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.iter().find(|b| b.name == name).map(|b| &self.theta[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.iter().find(|b| b.name == name)?.range();
        Some(&mut self.theta[range])
    }

    pub fn block_of_index(&self, idx: usize) -> &str {
        self.layout
            .iter()
            .find(|b| b.range().contains(&idx))
            .map(|b| b.name.as_str())
            .unwrap_or("?")
    }
}

/// Samples with per-sample weights, optionally restricted to a subset.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub inputs: &'a Points,
    pub labels: &'a Points,
    pub weights: &'a [f64],
    pub indices: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn full(inputs: &'a Points, labels: &'a Points, weights: &'a [f64]) -> Self {
        Self { inputs, labels, weights, indices: None }
    }

    pub fn len(&self) -> usize {
        self.indices.map_or(self.inputs.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, k: usize) -> usize {
        self.indices.map_or(k, |ix| ix[k])
    }
}

/// A model: spec plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ModelParams,
    monomials: Vec<Vec<u32>>,
}

const GRAD_CHUNK: usize = 64;
const COERCIVE: f64 = 1e-4;

impl Model {
    pub fn new(spec: ModelSpec, theta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let expected: usize = layout.iter().map(|b| b.len).sum();
        if theta.len() != expected {
            return Err(Error::invalid(format!("expected {expected} parameters, got {}", theta.len())));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            let params = ModelParams { theta, layout };
            return Err(Error::NumericalOverflow {
                block: params.block_of_index(i).to_string(),
                context: "model construction".into(),
            });
        }
        let monomials = match spec.kind {
            ModelKind::Polynomial => monomial_exponents(spec.input_dim, spec.width_or_degree),
            _ => Vec::new(),
        };
        Ok(Self { spec, params: ModelParams { theta, layout }, monomials })
    }

    /// All trainable parameters zero; polynomial scaling set to identity.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut theta = vec![0.0; spec.parameter_count()];
        let layout = spec.layout();
        if let Some(b) = layout.iter().find(|b| b.name == "input_scale") {
            theta[b.range()].iter_mut().for_each(|v| *v = 1.0);
        }
        Self::new(spec, theta)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let (n, d) = (spec.input_dim, spec.width_or_degree);
        let fans: Vec<(&str, usize, usize)> = match spec.kind {
            ModelKind::ResNetFlowMap => vec![("w0", n, d), ("w1", d, n)],
            ModelKind::ScalarFnn => vec![("w0", n, d), ("w1", d, 1)],
            ModelKind::Polynomial => vec![],
            ModelKind::EnergyGradient => vec![("w0", 3, 1), ("w1", 3, d), ("w2", d, 1)],
        };
        let mut rng = SeedStream::new(seed);
        for (name, fan_in, fan_out) in fans {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in model.params.block_mut(name).expect("block exists") {
                *v = rng.uniform_in(-limit, limit);
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn theta(&self) -> &[f64] {
        &self.params.theta
    }

    /// Replaces θ, keeping the layout.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.spec, theta)
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.params.theta
    }

    fn block(&self, name: &str) -> &[f64] {
        self.params.block(name).expect("layout block")
    }

    /// `f_θ(x)` with dimension check.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.input_dim, got: x.len() });
        }
        Ok(self.eval(x))
    }

    /// `E_θ(x)` of an energy-gradient model.
    pub fn energy_value(&self, x: &[f64]) -> Result<f64> {
        if self.spec.kind != ModelKind::EnergyGradient {
            return Err(Error::invalid(format!("energy_value needs an energy model, got {}", self.spec.kind.as_str())));
        }
        if x.len() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: x.len() });
        }
        let (w0, b0, w1, b1, w2, b2) =
            (self.block("w0"), self.block("b0")[0], self.block("w1"), self.block("b1"), self.block("w2"), self.block("b2")[0]);
        let a = dot(w0, x) + b0;
        let nn: f64 = (0..self.spec.width_or_degree).map(|i| w2[i] * elu(dot(&w1[3 * i..3 * i + 3], x) + b1[i])).sum();
        Ok(COERCIVE * dot(x, x) + a * a + nn + b2)
    }

    /// Polynomial features of one input, in graded-lex order.
    pub fn polynomial_features(&self, x: &[f64]) -> Vec<f64> {
        let shift = self.block("input_shift");
        let scale = self.block("input_scale");
        let z: Vec<f64> = x.iter().zip(shift).zip(scale).map(|((v, s), c)| (v - s) / c).collect();
        self.monomials.iter().map(|e| monomial(&z, e)).collect()
    }

    /// For a scalar polynomial of degree ≤ 1: intercept and slopes in raw
    /// (unstandardized) input coordinates.
    pub fn polynomial_affine_coefficients(&self) -> Option<(f64, Vec<f64>)> {
        if self.spec.kind != ModelKind::Polynomial || self.spec.output_dim != 1 || self.spec.width_or_degree > 1 {
            return None;
        }
        let c = self.block("coef");
        let shift = self.block("input_shift");
        let scale = self.block("input_scale");
        let mut intercept = c[0];
        let mut slopes = vec![0.0; self.spec.input_dim];
        if self.spec.width_or_degree == 1 {
            for l in 0..self.spec.input_dim {
                slopes[l] = c[1 + l] / scale[l];
                intercept -= c[1 + l] * shift[l] / scale[l];
            }
        }
        Some((intercept, slopes))
    }

    /// `(1/B) Σ m_i ‖f_θ(x_i) - y_i‖²` and its exact gradient in θ.
    pub fn weighted_loss_gradient(&self, batch: Batch<'_>) -> Result<(f64, Vec<f64>)> {
        self.check_batch(&batch)?;
        let b = batch.len();
        let p = self.params.theta.len();
        if b == 0 {
            return Ok((0.0, vec![0.0; p]));
        }
        let inv_b = 1.0 / b as f64;
        let chunks: Vec<(f64, Vec<f64>)> = (0..b)
            .collect::<Vec<_>>()
            .par_chunks(GRAD_CHUNK)
            .map(|ks| {
                let mut grad = vec![0.0; p];
                let mut scratch = Scratch::new(&self.spec);
                let mut loss = 0.0;
                for &k in ks {
                    let i = batch.sample(k);
                    let m = batch.weights[i];
                    if m == 0.0 {
                        continue;
                    }
                    let sq = self.accumulate(batch.inputs.row(i), batch.labels.row(i), m * inv_b, &mut grad, &mut scratch);
                    loss += m * inv_b * sq;
                }
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; p];
        for (l, g) in chunks {
            loss += l;
            for (a, v) in grad.iter_mut().zip(&g) {
                *a += v;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NumericalOverflow { block: "output".into(), context: "weighted loss".into() });
        }
        if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow {
                block: self.params.block_of_index(i).to_string(),
                context: "weighted loss gradient".into(),
            });
        }
        Ok((loss, grad))
    }

    /// `(1/B) Σ m_i ‖f_θ(x_i) - y_i‖²` without the gradient.
    pub fn weighted_loss(&self, batch: Batch<'_>) -> Result<f64> {
        self.check_batch(&batch)?;
        let b = batch.len();
        if b == 0 {
            return Ok(0.0);
        }
        let parts: Vec<f64> = (0..b)
            .collect::<Vec<_>>()
            .par_chunks(GRAD_CHUNK)
            .map(|ks| {
                let mut out = vec![0.0; self.spec.output_dim];
                let mut acc = 0.0;
                for &k in ks {
                    let i = batch.sample(k);
                    let m = batch.weights[i];
                    if m == 0.0 {
                        continue;
                    }
                    self.eval_into(batch.inputs.row(i), &mut out);
                    let e: f64 = out.iter().zip(batch.labels.row(i)).map(|(f, y)| (f - y) * (f - y)).sum();
                    acc += m * e;
                }
                acc
            })
            .collect();
        let loss = parts.iter().sum::<f64>() / b as f64;
        if !loss.is_finite() {
            return Err(Error::NumericalOverflow { block: "output".into(), context: "weighted loss".into() });
        }
        Ok(loss)
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        if batch.inputs.dim() != self.spec.input_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.input_dim, got: batch.inputs.dim() });
        }
        if batch.labels.dim() != self.spec.output_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.output_dim, got: batch.labels.dim() });
        }
        if batch.labels.len() != batch.inputs.len() || batch.weights.len() != batch.inputs.len() {
            return Err(Error::invalid("inputs, labels and weights must have equal length"));
        }
        Ok(())
    }

    /// Adds `scale · ∇θ ‖f(x) - y‖²` into `grad`; returns `‖f(x) - y‖²`.
    fn accumulate(&self, x: &[f64], y: &[f64], scale: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
        let n = self.spec.input_dim;
        let d = self.spec.width_or_degree;
        let theta = &self.params.theta;
        let lay = &self.params.layout;
        match self.spec.kind {
            ModelKind::ResNetFlowMap | ModelKind::ScalarFnn => {
                let resnet = self.spec.kind == ModelKind::ResNetFlowMap;
                let tau = if resnet { self.spec.step_scale } else { 1.0 };
                let m_out = self.spec.output_dim;
                let (w0, b0, w1, b1) = (&lay[0], &lay[1], &lay[2], &lay[3]);
                for i in 0..d {
                    let z = theta[b0.offset + i] + dot(&theta[w0.offset + i * n..w0.offset + (i + 1) * n], x);
                    s.h[i] = elu(z);
                    s.hp[i] = elu_d1(z);
                }
                let mut loss = 0.0;
                for k in 0..m_out {
                    let row = &theta[w1.offset + k * d..w1.offset + (k + 1) * d];
                    let base = if resnet { x[k] } else { 0.0 };
                    let f = base + tau * (theta[b1.offset + k] + dot(row, &s.h[..d]));
                    let r = f - y[k];
                    loss += r * r;
                    s.g[k] = 2.0 * scale * r;
                }
                for k in 0..m_out {
                    let gk = tau * s.g[k];
                    grad[b1.offset + k] += gk;
                    let gw = &mut grad[w1.offset + k * d..w1.offset + (k + 1) * d];
                    for i in 0..d {
                        gw[i] += gk * s.h[i];
                    }
                }
                for i in 0..d {
                    let mut back = 0.0;
                    for k in 0..m_out {
                        back += s.g[k] * theta[w1.offset + k * d + i];
                    }
                    let back = tau * back * s.hp[i];
                    grad[b0.offset + i] += back;
                    let gw = &mut grad[w0.offset + i * n..w0.offset + (i + 1) * n];
                    for l in 0..n {
                        gw[l] += back * x[l];
                    }
                }
                loss
            }
            ModelKind::Polynomial => {
                let m_out = self.spec.output_dim;
                let coef = &lay[0];
                let shift = &theta[lay[1].range()];
                let sc = &theta[lay[2].range()];
                for l in 0..n {
                    s.z[l] = (x[l] - shift[l]) / sc[l];
                }
                for (k, e) in self.monomials.iter().enumerate() {
                    s.h[k] = monomial(&s.z[..n], e);
                }
                let kk = self.monomials.len();
                let mut loss = 0.0;
                for o in 0..m_out {
                    let f: f64 = (0..kk).map(|k| theta[coef.offset + k * m_out + o] * s.h[k]).sum();
                    let r = f - y[o];
                    loss += r * r;
                    let g = 2.0 * scale * r;
                    for k in 0..kk {
                        grad[coef.offset + k * m_out + o] += g * s.h[k];
                    }
                }
                loss
            }
            ModelKind::EnergyGradient => {
                let (w0, b0, w1, b1, w2) = (&lay[0], &lay[1], &lay[2], &lay[3], &lay[4]);
                let w0v = &theta[w0.range()];
                let a = dot(w0v, x) + theta[b0.offset];
                let mut f = [0.0; 3];
                for l in 0..3 {
                    f[l] = -(2.0 * COERCIVE * x[l] + 2.0 * a * w0v[l]);
                }
                for i in 0..d {
                    let row = &theta[w1.offset + 3 * i..w1.offset + 3 * i + 3];
                    let z = dot(row, x) + theta[b1.offset + i];
                    s.hp[i] = elu_d1(z);
                    s.h[i] = elu_d2(z);
                    let c = theta[w2.offset + i] * s.hp[i];
                    for l in 0..3 {
                        f[l] -= c * row[l];
                    }
                }
                let mut loss = 0.0;
                let mut g = [0.0; 3];
                for l in 0..3 {
                    let r = f[l] - y[l];
                    loss += r * r;
                    g[l] = 2.0 * scale * r;
                }
                let gw = dot(&g, w0v);
                for l in 0..3 {
                    grad[w0.offset + l] += -2.0 * (x[l] * gw + a * g[l]);
                }
                grad[b0.offset] += -2.0 * gw;
                for i in 0..d {
                    let row = &theta[w1.offset + 3 * i..w1.offset + 3 * i + 3];
                    let c = dot(row, &g);
                    let w2i = theta[w2.offset + i];
                    grad[w2.offset + i] += -s.hp[i] * c;
                    grad[b1.offset + i] += -w2i * s.h[i] * c;
                    for l in 0..3 {
                        grad[w1.offset + 3 * i + l] += -(w2i * s.hp[i] * g[l] + w2i * s.h[i] * c * x[l]);
                    }
                }
                loss
            }
        }
    }
}

struct Scratch {
    h: Vec<f64>,
    hp: Vec<f64>,
    g: Vec<f64>,
    z: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ModelSpec) -> Self {
        let width = match spec.kind {
            ModelKind::Polynomial => monomial_count(spec.input_dim, spec.width_or_degree),
            _ => spec.width_or_degree,
        };
        Self { h: vec![0.0; width], hp: vec![0.0; width], g: vec![0.0; spec.output_dim], z: vec![0.0; spec.input_dim] }
    }
}

impl Surrogate for Model {
    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.spec.input_dim;
        let d = self.spec.width_or_degree;
        let theta = &self.params.theta;
        let lay = &self.params.layout;
        match self.spec.kind {
            ModelKind::ResNetFlowMap | ModelKind::ScalarFnn => {
                let resnet = self.spec.kind == ModelKind::ResNetFlowMap;
                let tau = if resnet { self.spec.step_scale } else { 1.0 };
                let (w0, b0, w1, b1) = (&lay[0], &lay[1], &lay[2], &lay[3]);
                let m_out = self.spec.output_dim;
                for k in 0..m_out {
                    out[k] = theta[b1.offset + k];
                }
                for i in 0..d {
                    let z = theta[b0.offset + i] + dot(&theta[w0.offset + i * n..w0.offset + (i + 1) * n], x);
                    let h = elu(z);
                    for k in 0..m_out {
                        out[k] += theta[w1.offset + k * d + i] * h;
                    }
                }
                for k in 0..m_out {
                    out[k] *= tau;
                    if resnet {
                        out[k] += x[k];
                    }
                }
            }
            ModelKind::Polynomial => {
                let m_out = self.spec.output_dim;
                let coef = &lay[0];
                let shift = &theta[lay[1].range()];
                let sc = &theta[lay[2].range()];
                let mut zbuf = [0.0f64; 16];
                let mut zvec;
                let z: &mut [f64] = if n <= 16 {
                    &mut zbuf[..n]
                } else {
                    zvec = vec![0.0; n];
                    &mut zvec
                };
                for l in 0..n {
                    z[l] = (x[l] - shift[l]) / sc[l];
                }
                out[..m_out].iter_mut().for_each(|v| *v = 0.0);
                for (k, e) in self.monomials.iter().enumerate() {
                    let phi = monomial(z, e);
                    for o in 0..m_out {
                        out[o] += theta[coef.offset + k * m_out + o] * phi;
                    }
                }
            }
            ModelKind::EnergyGradient => {
                let (w0, b0, w1, b1, w2) = (&lay[0], &lay[1], &lay[2], &lay[3], &lay[4]);
                let w0v = &theta[w0.range()];
                let a = dot(w0v, x) + theta[b0.offset];
                for l in 0..3 {
                    out[l] = -(2.0 * COERCIVE * x[l] + 2.0 * a * w0v[l]);
                }
                for i in 0..d {
                    let row = &theta[w1.offset + 3 * i..w1.offset + 3 * i + 3];
                    let c = theta[w2.offset + i] * elu_d1(dot(row, x) + theta[b1.offset + i]);
                    for l in 0..3 {
                        out[l] -= c * row[l];
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn monomial(z: &[f64], exps: &[u32]) -> f64 {
    z.iter().zip(exps).fold(1.0, |acc, (v, &e)| if e == 0 { acc } else { acc * v.powi(e as i32) })
}

/// Fits a polynomial by exact weighted least squares (QR), standardizing
/// inputs by their sample mean and standard deviation first.
pub fn fit_polynomial(spec: ModelSpec, inputs: &Points, labels: &Points, weights: &[f64]) -> Result<Model> {
    if spec.kind != ModelKind::Polynomial {
        return Err(Error::invalid("least-squares fit is only defined for polynomials"));
    }
    spec.validate()?;
    let n = inputs.len();
    if n == 0 || labels.len() != n || weights.len() != n {
        return Err(Error::invalid("fit needs matching nonempty inputs, labels and weights"));
    }
    if inputs.dim() != spec.input_dim || labels.dim() != spec.output_dim {
        return Err(Error::DimensionMismatch { expected: spec.input_dim, got: inputs.dim() });
    }
    let mut model = Model::zeros(spec)?;
    let dim = spec.input_dim;
    let mut mean = vec![0.0; dim];
    for r in inputs.rows() {
        for l in 0..dim {
            mean[l] += r[l];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut std = vec![0.0; dim];
    for r in inputs.rows() {
        for l in 0..dim {
            std[l] += (r[l] - mean[l]).powi(2);
        }
    }
    for v in std.iter_mut() {
        *v = (*v / n as f64).sqrt();
        if !(*v > 0.0) {
            *v = 1.0;
        }
    }
    model.params.block_mut("input_shift").unwrap().copy_from_slice(&mean);
    model.params.block_mut("input_scale").unwrap().copy_from_slice(&std);

    let k = model.monomials.len();
    let mut design = nalgebra::DMatrix::<f64>::zeros(n, k);
    let mut rhs = nalgebra::DMatrix::<f64>::zeros(n, spec.output_dim);
    for i in 0..n {
        let sw = weights[i].max(0.0).sqrt();
        let feats = model.polynomial_features(inputs.row(i));
        for (j, f) in feats.iter().enumerate() {
            design[(i, j)] = sw * f;
        }
        for (o, y) in labels.row(i).iter().enumerate() {
            rhs[(i, o)] = sw * y;
        }
    }
    let qr = design.qr();
    let qty = qr.q().transpose() * rhs;
    let r = qr.r();
    let sol = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::invalid("polynomial design matrix is rank deficient"))?;
    let m_out = spec.output_dim;
    let coef = model.params.block_mut("coef").unwrap();
    for j in 0..k {
        for o in 0..m_out {
            coef[j * m_out + o] = sol[(j, o)];
        }
    }
    let theta = model.params.theta.clone();
    Model::new(spec, theta)
}

#[cfg(test)]
mod tests;
