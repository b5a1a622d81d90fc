//! Fully connected teachers and quantizable students.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quant::{fake_quant, QuantPlan};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    pub role: Role,
    pub frozen: bool,
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>, role: Role) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.out_dim()] {
                return Err(Error::Dimension {
                    op: "layer",
                    lhs: l.weight.shape().to_vec(),
                    rhs: l.bias.shape().to_vec(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.in_dim() != l.out_dim() {
                    return Err(Error::Dimension {
                        op: "layer chain",
                        lhs: l.weight.shape().to_vec(),
                        rhs: next.weight.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self {
            layers,
            frozen: role == Role::Teacher,
            role,
        })
    }

    /// Deterministic MLP with ReLU hidden layers and linear output. Weights
    /// and biases are drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn build_mlp(widths: &[usize], seed: u64, role: Role) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must list at least input and output sizes, all non-zero: {widths:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |len: usize| -> Vec<f64> {
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                };
                let weight = Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out))?;
                let bias = Tensor::vector(draw(fan_out));
                Ok(Layer {
                    name: format!("fc{i}"),
                    weight,
                    bias,
                    activation: if i + 1 == n {
                        Activation::None
                    } else {
                        Activation::Relu
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, role)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// SHA-256 over the raw parameter bits.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for l in &self.layers {
            for v in l.weight.data().iter().chain(l.bias.data()) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Records every parameter as a tracked leaf.
    pub fn record(&self, tape: &mut Tape) -> Vec<LayerVars> {
        self.layers
            .iter()
            .map(|l| LayerVars {
                weight: tape.param(l.weight.clone()),
                bias: tape.param(l.bias.clone()),
            })
            .collect()
    }

    /// Records the forward pass. With a plan, each layer's weight is
    /// fake-quantized with a range refreshed from its current values, and
    /// its input is fake-quantized with the activation range; when
    /// `observe_activations` is set that range first absorbs the batch.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[LayerVars],
        x: Var,
        mut plan: Option<&mut QuantPlan>,
        observe_activations: bool,
    ) -> Result<Var> {
        let width = tape.value(x).last_dim();
        if tape.value(x).shape().len() != 2 || width != self.input_dim() {
            return Err(Error::Dimension {
                op: "forward",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        if let Some(p) = plan.as_deref() {
            if p.layers() != self.layers.len() {
                return Err(Error::InvalidArgument(format!(
                    "quantization plan has {} layers, model has {}",
                    p.layers(),
                    self.layers.len()
                )));
            }
        }
        let mut h = x;
        for (i, (layer, v)) in self.layers.iter().zip(vars).enumerate() {
            let mut w = v.weight;
            if let Some(p) = plan.as_deref_mut() {
                if let Some(spec) = p.activations[i].as_mut() {
                    if observe_activations {
                        spec.observe(tape.value(h).data())?;
                    }
                    h = fake_quant(tape, h, spec)?;
                }
                if let Some(spec) = p.weights[i].as_mut() {
                    spec.observe(layer.weight.data())?;
                    w = fake_quant(tape, w, spec)?;
                }
            }
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, v.bias)?;
            h = match layer.activation {
                Activation::Relu => tape.relu(z),
                Activation::None => z,
            };
        }
        Ok(h)
    }

    /// Evaluation forward pass: no gradients, activation ranges left as is.
    pub fn forward(&self, x: &Tensor, plan: Option<&QuantPlan>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<LayerVars> = self
            .layers
            .iter()
            .map(|l| LayerVars {
                weight: tape.constant(l.weight.clone()),
                bias: tape.constant(l.bias.clone()),
            })
            .collect();
        let xv = tape.constant(x.clone());
        let mut scratch = plan.cloned();
        let out = self.forward_on_tape(&mut tape, &vars, xv, scratch.as_mut(), false)?;
        Ok(tape.value(out).clone())
    }
}

/// Frozen full-precision teachers whose logits are averaged for ensemble
/// distillation.
#[derive(Debug, Clone)]
pub struct TeacherEnsemble {
    teachers: Vec<ModelParams>,
}

impl TeacherEnsemble {
    pub fn new(mut teachers: Vec<ModelParams>) -> Result<Self> {
        let first = teachers
            .first()
            .ok_or_else(|| Error::InvalidArgument("teacher ensemble is empty".into()))?;
        let (din, dout) = (first.input_dim(), first.output_dim());
        if let Some(bad) = teachers.iter().find(|t| t.output_dim() != dout || t.input_dim() != din) {
            return Err(Error::Config(format!(
                "teachers disagree on shape: {:?} vs {:?}",
                first.widths(),
                bad.widths()
            )));
        }
        for t in &mut teachers {
            t.role = Role::Teacher;
            t.freeze();
        }
        Ok(Self { teachers })
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn teachers(&self) -> &[ModelParams] {
        &self.teachers
    }

    pub fn classes(&self) -> usize {
        self.teachers[0].output_dim()
    }

    /// Full-precision logits of each teacher.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.teachers.iter().map(|t| t.forward(x, None)).collect()
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in &self.teachers {
            h.update(t.digest());
        }
        h.finalize().into()
    }
}
