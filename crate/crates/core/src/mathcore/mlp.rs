use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ensure_finite, softmax, LabRng, Matrix, ProbVector, Vector};
use crate::error::{LabError, Result};

/// Elementwise nonlinearity. Only everywhere-differentiable kinds are offered,
/// so first-order expansions of the logits are well defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    /// Softplus, `ln(1 + e^x)`.
    SmoothRelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::SmoothRelu => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::SmoothRelu => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    /// Either `out` entries or empty for a bias-free layer.
    pub bias: Vector,
    pub activation: Activation,
}

/// Fully connected network producing logits.
///
/// The flat parameter order is, layer by layer, the weight matrix in
/// column-major order followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

/// Intermediate values of a batched forward pass; columns are examples.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `inputs[k]` feeds layer `k`; the last entry holds the logits.
    pub inputs: Vec<Matrix>,
    pub pre: Vec<Matrix>,
}

impl Trace {
    pub fn logits(&self) -> &Matrix {
        self.inputs.last().expect("trace always holds the input")
    }
}

/// Parameter-shaped gradient, one `(dW, db)` pair per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub layers: Vec<(Matrix, Vector)>,
}

impl Gradient {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (Matrix::zeros(l.weight.nrows(), l.weight.ncols()), Vector::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vector {
        let n = self.layers.iter().map(|(w, b)| w.len() + b.len()).sum();
        let mut out = Vec::with_capacity(n);
        for (w, b) in &self.layers {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        Vector::from_vec(out)
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            *w *= s;
            *b *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Gradient, s: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow * s;
            *b += ob * s;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers.iter().map(|(w, b)| w.norm_squared() + b.norm_squared()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::Shape("model needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weight.nrows() == 0 || l.weight.ncols() == 0 {
                return Err(LabError::Shape(format!("layer {k} has an empty weight")));
            }
            if !l.bias.is_empty() && l.bias.len() != l.weight.nrows() {
                return Err(LabError::Shape(format!("layer {k}: bias length {} vs {} rows", l.bias.len(), l.weight.nrows())));
            }
            if k > 0 && layers[k - 1].weight.nrows() != l.weight.ncols() {
                return Err(LabError::Shape(format!("layer {k} expects {} inputs", l.weight.ncols())));
            }
            ensure_finite(l.weight.as_slice(), "weight")?;
            ensure_finite(l.bias.as_slice(), "bias")?;
        }
        Ok(Self { layers })
    }

    /// Random network with layer sizes `dims = [in, hidden.., out]`, the given
    /// hidden activation and an identity output layer. Weights and biases are
    /// drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn random(dims: &[usize], hidden: Activation, rng: &mut LabRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(LabError::Shape(format!("invalid layer sizes {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let bound = 1.0 / (dims[k] as f64).sqrt();
            let weight = Matrix::from_fn(dims[k + 1], dims[k], |_, _| rng.random_range(-bound..bound));
            let bias = Vector::from_fn(dims[k + 1], |_, _| rng.random_range(-bound..bound));
            let activation = if k + 2 == dims.len() { Activation::Identity } else { hidden };
            layers.push(Layer { weight, bias, activation });
        }
        Self::new(layers)
    }

    /// Single bias-free linear layer `z = W x`.
    pub fn linear(weight: Matrix) -> Result<Self> {
        let bias = Vector::zeros(0);
        Self::new(vec![Layer { weight, bias, activation: Activation::Identity }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vector {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        Vector::from_vec(out)
    }

    pub fn set_params(&mut self, theta: &Vector) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(LabError::Shape(format!("{} parameters given, {} expected", theta.len(), self.num_params())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&theta.as_slice()[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&theta.as_slice()[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            Err(LabError::Shape(format!("input dimension {rows}, model expects {}", self.input_dim())))
        } else {
            Ok(())
        }
    }

    /// Logits for one input.
    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        self.check_input(x.len())?;
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = &l.weight * &h;
            if !l.bias.is_empty() {
                z += &l.bias;
            }
            z.apply(|v| *v = l.activation.apply(*v));
            h = z;
        }
        Ok(h)
    }

    pub fn predict(&self, x: &Vector) -> Result<ProbVector> {
        softmax(&self.forward(x)?)
    }

    /// Batched forward pass over the columns of `x`, keeping what backprop needs.
    pub fn forward_trace(&self, x: &Matrix) -> Result<Trace> {
        self.check_input(x.nrows())?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        for l in &self.layers {
            let h = inputs.last().expect("nonempty");
            let mut z = &l.weight * h;
            if !l.bias.is_empty() {
                for mut col in z.column_iter_mut() {
                    col += &l.bias;
                }
            }
            let a = z.map(|v| l.activation.apply(v));
            pre.push(z);
            inputs.push(a);
        }
        Ok(Trace { inputs, pre })
    }

    /// Logits for every column of `x`.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(x)?.inputs.pop().expect("nonempty"))
    }

    /// Backpropagates `dz` (∂L/∂logits, one column per example) and returns
    /// the gradient summed over the batch.
    pub fn backward(&self, trace: &Trace, dz: &Matrix) -> Gradient {
        let mut layers = vec![(Matrix::zeros(0, 0), Vector::zeros(0)); self.layers.len()];
        let mut delta = dz.clone();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if l.activation != Activation::Identity {
                delta.zip_apply(&trace.pre[k], |d, z| *d *= l.activation.derivative(z));
            }
            let gw = &delta * trace.inputs[k].transpose();
            let gb = if l.bias.is_empty() { Vector::zeros(0) } else { delta.column_sum() };
            if k > 0 {
                delta = l.weight.tr_mul(&delta);
            }
            layers[k] = (gw, gb);
        }
        Gradient { layers }
    }

    /// Vector-Jacobian product `(∂z/∂θ)ᵀ dz` for one input.
    pub fn vjp(&self, x: &Vector, dz: &Vector) -> Result<Gradient> {
        let trace = self.forward_trace(&Matrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        if dz.len() != self.output_dim() {
            return Err(LabError::Shape("cotangent length differs from output dimension".into()));
        }
        Ok(self.backward(&trace, &Matrix::from_column_slice(dz.len(), 1, dz.as_slice())))
    }

    /// `θ ← θ + scale·g`.
    pub fn apply_gradient(&mut self, g: &Gradient, scale: f64) {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(&g.layers) {
            l.weight.zip_apply(gw, |w, g| *w += scale * g);
            l.bias.zip_apply(gb, |b, g| *b += scale * g);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Logit Jacobian of one example, `V × num_params`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianBlock {
    pub matrix: Matrix,
    pub example_id: Option<usize>,
}

impl JacobianBlock {
    pub fn with_id(mut self, id: usize) -> Self {
        self.example_id = Some(id);
        self
    }
}

/// Exact logit Jacobian via one reverse pass per output dimension.
pub fn per_example_jacobian(model: &MlpModel, x: &Vector) -> Result<JacobianBlock> {
    let trace = model.forward_trace(&Matrix::from_column_slice(x.len(), 1, x.as_slice()))?;
    let v = model.output_dim();
    let mut matrix = Matrix::zeros(v, model.num_params());
    for i in 0..v {
        let mut dz = Matrix::zeros(v, 1);
        dz[(i, 0)] = 1.0;
        let row = model.backward(&trace, &dz).to_flat();
        matrix.set_row(i, &row.transpose());
    }
    Ok(JacobianBlock { matrix, example_id: None })
}
