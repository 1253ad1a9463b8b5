//! The embedding network: a dense multilayer perceptron `R^D → R^M`.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &str = "regnet-encoder";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    None,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::None => "none",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "none" | "identity" => Ok(Activation::None),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Layer specs for `input → hidden… → output`, with `activation` on the
/// hidden layers and a linear output layer.
pub fn mlp_spec(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec {
            inputs: w[0],
            outputs: w[1],
            activation: if i + 2 == dims.len() {
                Activation::None
            } else {
                activation
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`
    pub weight: Tensor,
    /// `outputs × 1`
    pub bias: Tensor,
    pub activation: Activation,
}

/// Parameters φ of the embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
}

fn check_chain(specs: impl Iterator<Item = (usize, usize)>) -> Result<()> {
    let mut prev: Option<usize> = None;
    let mut count = 0;
    for (i, (inputs, outputs)) in specs.enumerate() {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
        if let Some(p) = prev {
            if p != inputs {
                return Err(Error::Config(format!(
                    "layer {i} takes {inputs} inputs but layer {} produces {p}",
                    i - 1
                )));
            }
        }
        prev = Some(outputs);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    Ok(())
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(seed: u64, spec: &[LayerSpec]) -> Result<Self> {
        Self::init_with(&mut rng::seeded(seed), spec)
    }

    pub fn init_with(rng: &mut Rng, spec: &[LayerSpec]) -> Result<Self> {
        check_chain(spec.iter().map(|s| (s.inputs, s.outputs)))?;
        let layers = spec
            .iter()
            .map(|s| {
                let limit = (6.0 / (s.inputs + s.outputs) as f64).sqrt();
                Layer {
                    weight: Tensor::random_uniform(s.outputs, s.inputs, -limit, limit, rng),
                    bias: Tensor::zeros(s.outputs, 1),
                    activation: s.activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (l.weight.rows(), 1) {
                return Err(Error::Config(format!(
                    "layer {i}: bias is {}x{}, weight is {}x{}",
                    l.bias.rows(),
                    l.bias.cols(),
                    l.weight.rows(),
                    l.weight.cols()
                )));
            }
        }
        check_chain(layers.iter().map(|l| (l.weight.cols(), l.weight.rows())))?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameter tensors in the fixed order `w0, b0, w1, b1, …`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        let vars = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                weight: tape.param(l.weight.clone()),
                bias: tape.param(l.bias.clone()),
                activation: l.activation,
            })
            .collect();
        BoundEncoder { layers: vars }
    }

    /// Forward pass without recording, for evaluation.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        if batch.rows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "encoder expects {} input rows, batch has {}",
                self.input_dim(),
                batch.rows()
            )));
        }
        let mut h = batch.clone();
        for l in &self.layers {
            let mut z = l.weight.matmul(&h)?;
            let cols = z.cols();
            for (i, v) in z.data_mut().iter_mut().enumerate() {
                *v += l.bias.data()[i / cols];
            }
            h = match l.activation {
                Activation::Tanh => z.map(f64::tanh),
                Activation::Relu => z.map(|v| v.max(0.0)),
                Activation::None => z,
            };
        }
        Ok(h)
    }

    /// Writes the versioned text checkpoint to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }

    /// Checkpoint text: a header line, a layer count, then per layer a
    /// `layer <out> <in> <activation>` line followed by the weight rows and
    /// one bias line. Values use shortest round-trip scientific notation.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        let _ = writeln!(out, "layers {}", self.layers.len());
        for l in &self.layers {
            let _ = writeln!(
                out,
                "layer {} {} {}",
                l.weight.rows(),
                l.weight.cols(),
                l.activation
            );
            for r in 0..l.weight.rows() {
                write_values(&mut out, l.weight.row(r));
            }
            write_values(&mut out, l.bias.data());
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i as u64 + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("checkpoint ended before {what}")))
        };
        let (line, header) = next("header")?;
        let expected = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        if header != expected {
            return Err(Error::Parse {
                line,
                msg: format!("expected `{expected}`, found `{header}`"),
            });
        }
        let (line, count) = next("layer count")?;
        let count: usize = count
            .strip_prefix("layers ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Parse {
                line,
                msg: "expected `layers <count>`".into(),
            })?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, head) = next("layer header")?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            let bad = || Error::Parse {
                line,
                msg: "expected `layer <out> <in> <activation>`".into(),
            };
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(bad());
            }
            let rows: usize = parts[1].parse().map_err(|_| bad())?;
            let cols: usize = parts[2].parse().map_err(|_| bad())?;
            let activation: Activation = parts[3].parse().map_err(|_| bad())?;
            let mut weight = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (line, row) = next("weight row")?;
                weight.extend(parse_values(row, cols, line)?);
            }
            let (line, bias) = next("bias")?;
            let bias = parse_values(bias, rows, line)?;
            layers.push(Layer {
                weight: Tensor::new(rows, cols, weight)?,
                bias: Tensor::vector(&bias),
                activation,
            });
        }
        Self::from_layers(layers)
    }
}

fn write_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

fn parse_values(line_text: &str, expected: usize, line: u64) -> Result<Vec<f64>> {
    let values = line_text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("`{t}` is not a number"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line,
            msg: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

#[derive(Debug, Clone, Copy)]
struct BoundLayer {
    weight: Var,
    bias: Var,
    activation: Activation,
}

/// An encoder whose parameters live on a particular tape.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    layers: Vec<BoundLayer>,
}

impl BoundEncoder {
    /// Embeds every column of `batch` (`D × B`), giving an `M × B` value.
    pub fn embed(&self, tape: &mut Tape, batch: Var) -> Result<Var> {
        let mut h = batch;
        for l in &self.layers {
            let z = tape.matmul(l.weight, h)?;
            let z = tape.add_column(z, l.bias)?;
            h = match l.activation {
                Activation::Tanh => tape.tanh(z),
                Activation::Relu => tape.relu(z),
                Activation::None => z,
            };
        }
        Ok(h)
    }

    /// Parameter leaves in the same order as [`EncoderParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// Gradients of every parameter, in [`EncoderParams::tensors`] order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars().into_iter().map(|v| grads.get(v)).collect()
    }
}

/// Binds `params` to `tape` and embeds `batch` in one step.
pub fn embed(params: &EncoderParams, batch: &Tensor, tape: &mut Tape) -> Result<(Var, BoundEncoder)> {
    let bound = params.bind(tape);
    let x = tape.constant(batch.clone());
    let out = bound.embed(tape, x)?;
    Ok((out, bound))
}
