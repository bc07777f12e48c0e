use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Version tag of the parameter flattening order written into checkpoints.
///
/// Version 1: layer by layer, the `[in, out]` weight matrix in row-major
/// order followed by the `out` biases.
pub const FLATTEN_ORDER_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
    /// No nonlinearity; only meaningful for single-layer (affine) maps.
    Identity,
}

/// Fully connected network layout.
///
/// `widths` lists the data widths from input to output (e.g. `[2, 128, 2]`).
/// When `time_input` is set the time is appended as one extra input
/// coordinate, so the first layer actually has `widths[0] + 1` inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    #[serde(default = "default_true")]
    pub time_input: bool,
    #[serde(default)]
    pub activation: Activation,
}

fn default_true() -> bool {
    true
}

impl MlpSpec {
    /// Softplus network with time input; needs at least one hidden layer.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            time_input: true,
            activation: Activation::Softplus,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A single affine map `[x; t] -> A [x; t] + b`.
    pub fn affine(input: usize, output: usize, time_input: bool) -> Self {
        MlpSpec {
            widths: vec![input, output],
            time_input,
            activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "network needs input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("zero width in {:?}", self.widths)));
        }
        if self.activation != Activation::Identity && self.widths.len() < 3 {
            return Err(Error::Config(format!(
                "a {:?} network needs at least one hidden layer, got {:?}",
                self.activation, self.widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    /// `(fan_in, fan_out)` per layer, with the time column counted.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let extra = usize::from(i == 0 && self.time_input);
                (w[0] + extra, w[1])
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Scaled-Gaussian weights (variance `1/fan_in`), zero biases. With
    /// `zero_last` the output layer weights are zeroed too, so the network
    /// starts as the zero function.
    pub fn init<R: Rng>(&self, rng: &mut R, zero_last: bool, gain: f64) -> Vec<f64> {
        let dims = self.layer_dims();
        let mut out = Vec::with_capacity(self.param_count());
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let last = l + 1 == dims.len();
            let std = gain / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                if last && zero_last {
                    out.push(0.0);
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push(std * z);
                }
            }
            out.extend(std::iter::repeat_n(0.0, fan_out));
        }
        out
    }
}

/// Explicit per-layer parameters of an MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayers {
    /// `[fan_in, fan_out]` matrices.
    pub weights: Vec<Tensor>,
    /// `[1, fan_out]` rows.
    pub biases: Vec<Tensor>,
}

pub fn unflatten(spec: &MlpSpec, flat: &[f64]) -> Result<MlpLayers> {
    if flat.len() != spec.param_count() {
        return Err(Error::Config(format!(
            "expected {} parameters for widths {:?}, got {}",
            spec.param_count(),
            spec.widths,
            flat.len()
        )));
    }
    let mut offset = 0;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (fan_in, fan_out) in spec.layer_dims() {
        let n = fan_in * fan_out;
        weights.push(Tensor::new(
            vec![fan_in, fan_out],
            flat[offset..offset + n].to_vec(),
        )?);
        offset += n;
        biases.push(Tensor::row(flat[offset..offset + fan_out].to_vec()));
        offset += fan_out;
    }
    Ok(MlpLayers { weights, biases })
}

pub fn flatten(layers: &MlpLayers) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in layers.weights.iter().zip(&layers.biases) {
        out.extend_from_slice(w.data());
        out.extend_from_slice(b.data());
    }
    out
}

/// Layer parameters of an MLP sliced out of a flat `[1, P]` variable.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    spec: MlpSpec,
    layers: Vec<(Var, Var)>,
}

impl BoundMlp {
    pub fn bind(tape: &mut Tape, spec: &MlpSpec, flat: Var) -> Result<Self> {
        let (rows, cols) = tape.value(flat).dims2()?;
        if rows != 1 || cols != spec.param_count() {
            return Err(Error::Config(format!(
                "parameter vector of shape {:?} does not match {} parameters for widths {:?}",
                tape.shape(flat),
                spec.param_count(),
                spec.widths
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let n = fan_in * fan_out;
            let w = tape.slice_cols(flat, offset, offset + n)?;
            let w = tape.reshape(w, vec![fan_in, fan_out])?;
            offset += n;
            let b = tape.slice_cols(flat, offset, offset + fan_out)?;
            offset += fan_out;
            layers.push((w, b));
        }
        Ok(BoundMlp {
            spec: spec.clone(),
            layers,
        })
    }

    /// Evaluates the network on `input` of shape `[batch, widths[0]]`.
    pub fn forward(&self, tape: &mut Tape, input: Var, t: f64) -> Result<Var> {
        let (rows, cols) = tape.value(input).dims2()?;
        if cols != self.spec.input_width() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {cols}",
                self.spec.input_width()
            )));
        }
        let mut x = if self.spec.time_input {
            let time = tape.leaf(Tensor::filled(&[rows, 1], t));
            tape.concat_cols(&[input, time])?
        } else {
            input
        };
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            x = tape.matmul(x, w)?;
            x = tape.add_row(x, b)?;
            if l != last {
                x = match self.spec.activation {
                    Activation::Softplus => tape.softplus(x),
                    Activation::Tanh => tape.tanh(x),
                    Activation::Identity => x,
                };
            }
        }
        Ok(x)
    }
}
