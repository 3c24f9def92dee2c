//! Dense linear algebra and the two-layer prototype model.
//!
//! The model is a representation layer `C = relu(W_r x + b_r)` whose output
//! is viewed as a `rows x cols` feature map, followed by a decision layer
//! `softmax(W_d vec(C) + b_d)`. Gradients are computed by hand; a central
//! finite-difference routine is kept alongside as a checking oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor used by [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec: matrix has {} cols, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `self^T * y`
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "transposed matvec: matrix has {} rows, vector has {} entries",
                self.rows,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
        Ok(out)
    }

    /// `self += scale * a b^T`
    fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &bc) in row.iter_mut().zip(b) {
                *w += s * bc;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A `rows x cols` grid of reals stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape("feature map dimensions must be positive".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "feature map {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }
}

/// Affine layer `W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weights: Matrix::zeros(out_dim, in_dim), bias: vec![0.0; out_dim] }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let data = (0..out_dim * in_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self { weights: Matrix { rows: out_dim, cols: in_dim, data }, bias }
    }

    fn same_shape(&self, other: &Linear) -> bool {
        self.weights.rows == other.weights.rows
            && self.weights.cols == other.weights.cols
            && self.bias.len() == other.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(x)?;
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        Ok(z)
    }
}

/// Representation and decision weights of one local model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub repr: Linear,
    pub decision: Linear,
    pub proto_rows: usize,
    pub proto_cols: usize,
}

/// Gradient with one tensor per parameter tensor of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub repr: Linear,
    pub decision: Linear,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, proto_rows: usize, proto_cols: usize, num_classes: usize) -> Self {
        let proto_dim = proto_rows * proto_cols;
        Self {
            repr: Linear::zeros(proto_dim, input_dim),
            decision: Linear::zeros(num_classes, proto_dim),
            proto_rows,
            proto_cols,
        }
    }

    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        proto_rows: usize,
        proto_cols: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        let proto_dim = proto_rows * proto_cols;
        let repr = Linear::random(proto_dim, input_dim, rng);
        let decision = Linear::random(num_classes, proto_dim, rng);
        Self { repr, decision, proto_rows, proto_cols }
    }

    pub fn input_dim(&self) -> usize {
        self.repr.weights.cols
    }

    pub fn proto_dim(&self) -> usize {
        self.proto_rows * self.proto_cols
    }

    pub fn num_classes(&self) -> usize {
        self.decision.weights.rows
    }

    pub fn zero_gradient(&self) -> GradientBundle {
        GradientBundle {
            repr: Linear::zeros(self.repr.weights.rows, self.repr.weights.cols),
            decision: Linear::zeros(self.decision.weights.rows, self.decision.weights.cols),
        }
    }

    /// Parameter tensors in a fixed order: repr weights, repr bias,
    /// decision weights, decision bias.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.repr.weights.data, &self.repr.bias, &self.decision.weights.data, &self.decision.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.repr.weights.data,
            &mut self.repr.bias,
            &mut self.decision.weights.data,
            &mut self.decision.bias,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl GradientBundle {
    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.repr.weights.data, &self.repr.bias, &self.decision.weights.data, &self.decision.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.repr.weights.data,
            &mut self.repr.bias,
            &mut self.decision.weights.data,
            &mut self.decision.bias,
        ]
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        if !self.repr.same_shape(&other.repr) || !self.decision.same_shape(&other.decision) {
            return Err(Error::Shape("gradient bundles differ in shape".into()));
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub pre_activation: Vec<f64>,
    pub proto: FeatureMap,
    pub probs: Vec<f64>,
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    Ok(())
}

pub fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Representation layer: `reshape(relu(W_r x + b_r))`.
pub fn forward_representation(params: &ModelParams, x: &[f64]) -> Result<FeatureMap> {
    check_input(params, x)?;
    let z = params.repr.forward(x)?;
    FeatureMap::new(params.proto_rows, params.proto_cols, z.into_iter().map(relu).collect())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Decision layer: `softmax(W_d vec(proto) + b_d)`.
pub fn forward_decision(params: &ModelParams, proto: &FeatureMap) -> Result<Vec<f64>> {
    if proto.len() != params.proto_dim() {
        return Err(Error::Shape(format!(
            "prototype has {} values, decision layer expects {}",
            proto.len(),
            params.proto_dim()
        )));
    }
    Ok(softmax(&params.decision.forward(&proto.values)?))
}

/// Full forward pass, keeping what backpropagation needs.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Activations> {
    check_input(params, x)?;
    let pre_activation = params.repr.forward(x)?;
    let proto = FeatureMap::new(
        params.proto_rows,
        params.proto_cols,
        pre_activation.iter().copied().map(relu).collect(),
    )?;
    let probs = forward_decision(params, &proto)?;
    Ok(Activations { pre_activation, proto, probs })
}

/// `-ln(max(probs[label], 1e-12))`
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::Index(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy + lambda * proto_term` for one sample.
///
/// `proto_loss_grad` is the derivative of the prototype term with respect to
/// the unpooled representation `C`, already chained through pooling.
pub fn backward(
    params: &ModelParams,
    x: &[f64],
    label: usize,
    proto_loss_grad: &FeatureMap,
    lambda: f64,
) -> Result<GradientBundle> {
    let act = forward(params, x)?;
    let mut grads = params.zero_gradient();
    accumulate_gradient(params, x, &act, label, 1.0, Some(proto_loss_grad), lambda, &mut grads)?;
    Ok(grads)
}

/// Adds `ce_weight * d(CE)/dw + lambda * d(proto)/dw` into `grads`, reusing
/// a precomputed forward pass.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_gradient(
    params: &ModelParams,
    x: &[f64],
    act: &Activations,
    label: usize,
    ce_weight: f64,
    proto_loss_grad: Option<&FeatureMap>,
    lambda: f64,
    grads: &mut GradientBundle,
) -> Result<()> {
    let num_classes = params.num_classes();
    if label >= num_classes {
        return Err(Error::Index(format!("label {label} out of range for {num_classes} classes")));
    }
    if let Some(g) = proto_loss_grad {
        if g.rows != params.proto_rows || g.cols != params.proto_cols {
            return Err(Error::Shape(format!(
                "prototype gradient is {}x{}, model prototype is {}x{}",
                g.rows, g.cols, params.proto_rows, params.proto_cols
            )));
        }
    }

    let mut dlogits = act.probs.clone();
    dlogits[label] -= 1.0;
    dlogits.iter_mut().for_each(|d| *d *= ce_weight);

    grads.decision.weights.add_outer(1.0, &dlogits, &act.proto.values);
    grads.decision.bias.iter_mut().zip(&dlogits).for_each(|(b, d)| *b += d);

    let mut dproto = params.decision.weights.matvec_transposed(&dlogits)?;
    if let Some(g) = proto_loss_grad {
        if lambda != 0.0 {
            dproto.iter_mut().zip(&g.values).for_each(|(d, gv)| *d += lambda * gv);
        }
    }
    let dpre: Vec<f64> = dproto
        .iter()
        .zip(&act.pre_activation)
        .map(|(d, &z)| if z > 0.0 { *d } else { 0.0 })
        .collect();

    grads.repr.weights.add_outer(1.0, &dpre, x);
    grads.repr.bias.iter_mut().zip(&dpre).for_each(|(b, d)| *b += d);
    Ok(())
}

/// `p <- p - eta * g` for every parameter.
pub fn sgd_step(params: &ModelParams, grads: &GradientBundle, eta: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, grads, eta)?;
    Ok(next)
}

pub fn sgd_step_in_place(params: &mut ModelParams, grads: &GradientBundle, eta: f64) -> Result<()> {
    if !params.repr.same_shape(&grads.repr) || !params.decision.same_shape(&grads.decision) {
        return Err(Error::Shape("gradient shape does not match parameters".into()));
    }
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        p.iter_mut().zip(g).for_each(|(pv, gv)| *pv -= eta * gv);
    }
    Ok(())
}

/// Central differences `(L(p+h) - L(p-h)) / 2h` for every scalar parameter.
pub fn finite_difference_gradient<F>(loss: F, params: &ModelParams, h: f64) -> GradientBundle
where
    F: Fn(&ModelParams) -> f64,
{
    let mut grads = params.zero_gradient();
    let mut probe = params.clone();
    for t in 0..4 {
        let len = params.tensors()[t].len();
        for i in 0..len {
            let orig = params.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let plus = loss(&probe);
            probe.tensors_mut()[t][i] = orig - h;
            let minus = loss(&probe);
            probe.tensors_mut()[t][i] = orig;
            grads.tensors_mut()[t][i] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}
