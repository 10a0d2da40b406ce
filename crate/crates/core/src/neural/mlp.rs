use nalgebra::DVector;
use rand::Rng;

use crate::{textfmt, Error, RMat, Result};

/// One affine layer, y = W x + b.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: RMat,
    pub b: DVector<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: RMat::zeros(outputs, inputs),
            b: DVector::zeros(outputs),
        }
    }
}

/// Fully connected network: Linear, then (ReLU, Linear) per extra layer.
/// With one hidden layer this is W2 relu(W1 x + b1) + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    /// All-zero parameters for the given layer widths.
    pub fn zeros(inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut dims = vec![inputs];
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        Self {
            layers: dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect(),
        }
    }

    /// Weights and biases uniform in +-1/sqrt(fan_in), drawn layer by layer.
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(inputs, hidden, outputs);
        for layer in &mut p.layers {
            let bound = 1.0 / (layer.w.ncols() as f64).sqrt();
            for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *v = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.w.ncols(), l.w.nrows())).collect(),
        }
    }

    /// Visits every scalar parameter in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.w.shape() == b.w.shape() && a.b.len() == b.b.len())
    }

    /// Snapshot in the shared text matrix format: blocks `W1`, `b1`, `W2`, ...
    pub fn to_text(&self) -> String {
        let mut s = String::from("# mlp parameters\n");
        for (i, l) in self.layers.iter().enumerate() {
            textfmt::write_real_matrix(&mut s, &format!("W{}", i + 1), &l.w);
            let b = RMat::from_column_slice(l.b.len(), 1, l.b.as_slice());
            textfmt::write_real_matrix(&mut s, &format!("b{}", i + 1), &b);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut blocks = textfmt::read_matrices(text)?;
        let mut layers = Vec::new();
        let mut i = 1;
        while blocks.iter().any(|(n, _)| *n == format!("W{i}")) {
            let w = textfmt::to_real(&textfmt::take_block(&mut blocks, &format!("W{i}"))?)?;
            let b = textfmt::to_real(&textfmt::take_block(&mut blocks, &format!("b{i}"))?)?;
            if b.ncols() != 1 || b.nrows() != w.nrows() {
                return Err(Error::dim("mlp bias", w.nrows(), format!("{:?}", b.shape())));
            }
            layers.push(Dense {
                w,
                b: DVector::from_column_slice(b.as_slice()),
            });
            i += 1;
        }
        if layers.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: "no layers found".into(),
            });
        }
        Ok(Self { layers })
    }
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    /// Input to each layer (columns are samples); entry 0 is the network input.
    inputs: Vec<RMat>,
    /// Pre-activation of each hidden layer.
    pre: Vec<RMat>,
}

fn relu(x: &RMat) -> RMat {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Batched forward pass; each column of `x` is one input.
pub(crate) fn forward_batch(params: &MlpParams, x: &RMat) -> Result<(RMat, ForwardCache)> {
    if x.nrows() != params.input_dim() {
        return Err(Error::dim("mlp input", params.input_dim(), x.nrows()));
    }
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(params.layers.len()),
        pre: Vec::with_capacity(params.layers.len().saturating_sub(1)),
    };
    let mut cur = x.clone();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = &layer.w * &cur;
        for mut col in z.column_iter_mut() {
            col += &layer.b;
        }
        cache.inputs.push(cur);
        if i == last {
            cur = z;
        } else {
            cur = relu(&z);
            cache.pre.push(z);
        }
    }
    Ok((cur, cache))
}

/// Batched reverse pass. `upstream` holds dL/d(output) per column; parameter
/// gradients are summed over the batch. ReLU's subgradient at 0 is 0.
pub(crate) fn backward_batch(params: &MlpParams, cache: &ForwardCache, upstream: &RMat) -> Result<(MlpParams, RMat)> {
    if upstream.nrows() != params.output_dim() || upstream.ncols() != cache.inputs[0].ncols() {
        return Err(Error::dim(
            "mlp upstream",
            format!("{} x {}", params.output_dim(), cache.inputs[0].ncols()),
            format!("{} x {}", upstream.nrows(), upstream.ncols()),
        ));
    }
    let mut grads = params.zeros_like();
    let mut delta = upstream.clone();
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        grads.layers[i].w = &delta * cache.inputs[i].transpose();
        grads.layers[i].b = delta.column_sum();
        let mut back = layer.w.transpose() * &delta;
        if i > 0 {
            let pre = &cache.pre[i - 1];
            back.zip_apply(pre, |d, z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
        }
        delta = back;
    }
    Ok((grads, delta))
}

/// W_L relu(... relu(W_1 x + b_1) ...) + b_L for a single input vector.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    let x = RMat::from_column_slice(input.len(), 1, input);
    let (y, _) = forward_batch(params, &x)?;
    Ok(y.as_slice().to_vec())
}

/// Vector-Jacobian products for one input: (parameter gradients, input gradient).
pub fn mlp_backward(params: &MlpParams, input: &[f64], upstream: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
    let x = RMat::from_column_slice(input.len(), 1, input);
    let (_, cache) = forward_batch(params, &x)?;
    let u = RMat::from_column_slice(upstream.len(), 1, upstream);
    let (g, dx) = backward_batch(params, &cache, &u)?;
    Ok((g, dx.as_slice().to_vec()))
}
