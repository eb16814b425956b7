//! Feed-forward dense network `φ(x; W)` with hand-written backpropagation.
//!
//! Parameters live in one flat vector. Layer `l` maps `in_l -> out_l` and
//! occupies `in_l * out_l` weights stored row-major as an `in_l x out_l`
//! matrix (so a layer computes `A · W + b`), followed by `out_l` biases.
//! Layers are packed in order from input to output.

use serde::{Deserialize, Serialize};

use crate::ndcore::{gemm_into, shape_str, MatRef};
use crate::{Error, Matrix, Result, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn deriv(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Layer sizes `[p, h1, ..., hk, q]` with one activation per hidden layer.
/// The output layer is always the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::config(format!(
                "architecture needs input, at least one hidden and an output layer, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        if activations.len() != layer_sizes.len() - 2 {
            return Err(Error::config(format!(
                "{} hidden layers but {} activations",
                layer_sizes.len() - 2,
                activations.len()
            )));
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// Same activation on every hidden layer.
    pub fn uniform(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        Self::new(layer_sizes, vec![activation; hidden])
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `|W| = Σ (in + 1) · out`.
    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Same hidden structure with a different input width.
    pub fn with_input_dim(&self, p: usize) -> Result<Self> {
        let mut sizes = self.layer_sizes.clone();
        sizes[0] = p;
        Self::new(sizes, self.activations.clone())
    }

    fn layers(&self) -> impl Iterator<Item = LayerSlot> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).enumerate().map(move |(l, w)| {
            let slot = LayerSlot {
                n_in: w[0],
                n_out: w[1],
                w_offset: offset,
                b_offset: offset + w[0] * w[1],
                activation: self.activations.get(l).copied(),
            };
            offset += (w[0] + 1) * w[1];
            slot
        })
    }

    /// Symmetric uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// every weight and bias.
    pub fn init_params(&self, rng: &mut RngState) -> FlatParams {
        let mut values = vec![0.0; self.num_params()];
        for slot in self.layers() {
            let bound = 1.0 / (slot.n_in as f64).sqrt();
            let end = slot.b_offset + slot.n_out;
            for v in &mut values[slot.w_offset..end] {
                *v = rng.uniform(-bound, bound);
            }
        }
        FlatParams(values)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    n_in: usize,
    n_out: usize,
    w_offset: usize,
    b_offset: usize,
    /// `None` for the identity output layer.
    activation: Option<Activation>,
}

/// Flattened weights and biases, laid out as described in the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatParams(pub Vec<f64>);

impl FlatParams {
    pub fn zeros(arch: &Architecture) -> Self {
        FlatParams(vec![0.0; arch.num_params()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Packs per-layer `(weights, biases)` (weights row-major `in x out`).
    pub fn pack(arch: &Architecture, layers: &[(Matrix, Vec<f64>)]) -> Result<Self> {
        if layers.len() != arch.num_layers() {
            return Err(Error::shape(
                "FlatParams::pack",
                format!("{} layers", arch.num_layers()),
                format!("{} layers", layers.len()),
            ));
        }
        let mut values = Vec::with_capacity(arch.num_params());
        for (slot, (w, b)) in arch.layers().zip(layers) {
            if w.shape() != (slot.n_in, slot.n_out) || b.len() != slot.n_out {
                return Err(Error::shape(
                    "FlatParams::pack",
                    format!("{}x{} + {}", slot.n_in, slot.n_out, slot.n_out),
                    format!("{} + {}", shape_str(w), b.len()),
                ));
            }
            values.extend_from_slice(w.data());
            values.extend_from_slice(b);
        }
        Ok(FlatParams(values))
    }

    pub fn unpack(&self, arch: &Architecture) -> Result<Vec<(Matrix, Vec<f64>)>> {
        check_params(arch, self)?;
        arch.layers()
            .map(|slot| {
                let w = Matrix::new(
                    slot.n_in,
                    slot.n_out,
                    self.0[slot.w_offset..slot.b_offset].to_vec(),
                )?;
                let b = self.0[slot.b_offset..slot.b_offset + slot.n_out].to_vec();
                Ok((w, b))
            })
            .collect()
    }
}

fn check_params(arch: &Architecture, w: &FlatParams) -> Result<()> {
    if w.len() != arch.num_params() {
        return Err(Error::shape(
            "parameters",
            format!("|W| = {}", arch.num_params()),
            format!("{} values", w.len()),
        ));
    }
    Ok(())
}

fn check_input(arch: &Architecture, x: &Matrix) -> Result<()> {
    if x.cols() != arch.input_dim() {
        return Err(Error::shape(
            "network input",
            format!("n x {}", arch.input_dim()),
            shape_str(x),
        ));
    }
    Ok(())
}

/// Activations retained from a forward pass: for each layer the
/// pre-activation `z` and output `a` (for the output layer `a == z`).
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn forward_trace(arch: &Architecture, w: &[f64], x: &Matrix) -> Trace {
    let n = x.rows();
    let mut pre = Vec::with_capacity(arch.num_layers());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(arch.num_layers());
    for slot in arch.layers() {
        let input = match post.last() {
            Some(a) => MatRef::new(a, n, slot.n_in),
            None => x.view(),
        };
        let weights = MatRef::new(&w[slot.w_offset..slot.b_offset], slot.n_in, slot.n_out);
        let bias = &w[slot.b_offset..slot.b_offset + slot.n_out];
        let mut z = Vec::with_capacity(n * slot.n_out);
        for _ in 0..n {
            z.extend_from_slice(bias);
        }
        gemm_into(1.0, input, false, weights, false, 1.0, &mut z, slot.n_out);
        let a = match slot.activation {
            Some(act) => z.iter().map(|&v| act.apply(v)).collect(),
            None => z.clone(),
        };
        pre.push(z);
        post.push(a);
    }
    Trace { pre, post }
}

/// `ŷ = φ(x; W)`, one output row per input row.
pub fn forward(arch: &Architecture, w: &FlatParams, x: &Matrix) -> Result<Matrix> {
    check_params(arch, w)?;
    check_input(arch, x)?;
    let mut trace = forward_trace(arch, &w.0, x);
    let out = trace.post.pop().expect("at least two layers");
    Matrix::new(x.rows(), arch.output_dim(), out)
}

/// Gradients of a scalar loss given `upstream = ∂loss/∂ŷ`.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub params: FlatParams,
    pub input: Matrix,
}

/// `∂loss/∂W` for the loss whose output gradient is `upstream`.
pub fn backward(
    arch: &Architecture,
    w: &FlatParams,
    x: &Matrix,
    upstream: &Matrix,
) -> Result<FlatParams> {
    backward_impl(arch, w, x, upstream, false).map(|(g, _)| g)
}

/// Like [`backward`] but also returns `∂loss/∂x`.
pub fn backward_with_input(
    arch: &Architecture,
    w: &FlatParams,
    x: &Matrix,
    upstream: &Matrix,
) -> Result<Backprop> {
    let (params, input) = backward_impl(arch, w, x, upstream, true)?;
    Ok(Backprop {
        params,
        input: input.expect("requested"),
    })
}

/// Forward pass followed by backward with an upstream computed from the
/// prediction. Returns `(ŷ, ∂loss/∂W)` and whatever the closure returns.
pub(crate) fn forward_backward<T>(
    arch: &Architecture,
    w: &FlatParams,
    x: &Matrix,
    upstream: impl FnOnce(&Matrix) -> Result<(Matrix, T)>,
) -> Result<(Matrix, FlatParams, T)> {
    check_params(arch, w)?;
    check_input(arch, x)?;
    let trace = forward_trace(arch, &w.0, x);
    let yhat = Matrix::new(
        x.rows(),
        arch.output_dim(),
        trace.post.last().expect("layers").clone(),
    )?;
    let (dy, extra) = upstream(&yhat)?;
    check_upstream(arch, x, &dy)?;
    let (grad, _) = backprop(arch, &w.0, x, &trace, dy.data(), false);
    Ok((yhat, grad, extra))
}

fn check_upstream(arch: &Architecture, x: &Matrix, upstream: &Matrix) -> Result<()> {
    if upstream.shape() != (x.rows(), arch.output_dim()) {
        return Err(Error::shape(
            "backward upstream",
            format!("{}x{}", x.rows(), arch.output_dim()),
            shape_str(upstream),
        ));
    }
    Ok(())
}

fn backward_impl(
    arch: &Architecture,
    w: &FlatParams,
    x: &Matrix,
    upstream: &Matrix,
    want_input: bool,
) -> Result<(FlatParams, Option<Matrix>)> {
    check_params(arch, w)?;
    check_input(arch, x)?;
    check_upstream(arch, x, upstream)?;
    let trace = forward_trace(arch, &w.0, x);
    let (grad, dx) = backprop(arch, &w.0, x, &trace, upstream.data(), want_input);
    let dx = dx.map(|d| Matrix::new(x.rows(), x.cols(), d)).transpose()?;
    Ok((grad, dx))
}

fn backprop(
    arch: &Architecture,
    w: &[f64],
    x: &Matrix,
    trace: &Trace,
    upstream: &[f64],
    want_input: bool,
) -> (FlatParams, Option<Vec<f64>>) {
    let n = x.rows();
    let slots: Vec<LayerSlot> = arch.layers().collect();
    let mut grad = vec![0.0; arch.num_params()];
    let mut delta = upstream.to_vec();
    for (l, slot) in slots.iter().enumerate().rev() {
        if let Some(act) = slot.activation {
            for ((d, &z), &a) in delta.iter_mut().zip(&trace.pre[l]).zip(&trace.post[l]) {
                *d *= act.deriv(z, a);
            }
        }
        let d_ref = MatRef::new(&delta, n, slot.n_out);
        let input = if l == 0 {
            x.view()
        } else {
            MatRef::new(&trace.post[l - 1], n, slot.n_in)
        };
        let (gw, gb) = grad[slot.w_offset..slot.b_offset + slot.n_out].split_at_mut(slot.n_in * slot.n_out);
        gemm_into(1.0, input, true, d_ref, false, 0.0, gw, slot.n_out);
        for row in delta.chunks_exact(slot.n_out) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l > 0 || want_input {
            let weights = MatRef::new(&w[slot.w_offset..slot.b_offset], slot.n_in, slot.n_out);
            let mut next = vec![0.0; n * slot.n_in];
            gemm_into(1.0, d_ref, false, weights, true, 0.0, &mut next, slot.n_in);
            delta = next;
        }
    }
    let dx = want_input.then_some(delta);
    (FlatParams(grad), dx)
}
