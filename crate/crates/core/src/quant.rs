//! Uniform affine fake quantization.
//!
//! A tensor is mapped to integer codes `q = round(clip((x - x_min) / s, 0, 2ⁿ - 1))`
//! with `s = (x_max - x_min) / (2ⁿ - 1)` and dequantized as `s · q + x_min`.
//! Gradients pass straight through inside `[x_min, x_max]` and are zeroed
//! outside (unless the clipped estimator is switched off).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{FakeQuantParams, Tape, Var};
use crate::tensor::Tensor;

/// Bit-width meaning "leave this tensor in full precision".
pub const FULL_PRECISION_BITS: u8 = 32;
pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;
pub const DEFAULT_ACT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WARMUP_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RangeSource {
    /// Range taken from the extrema of the tensor being quantized.
    PerTensorMinMax,
    /// Exponential moving average of observed batch extrema.
    RunningMinMax { momentum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u8,
    pub range_source: RangeSource,
    pub x_min: f64,
    pub x_max: f64,
    /// Number of batches folded into the range so far.
    pub observed: u64,
    /// Zero the straight-through gradient outside the range.
    pub clip_gradient: bool,
}

pub fn check_bits(bits: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "unsupported bit-width {bits} (expected {MIN_BITS}..={MAX_BITS} or {FULL_PRECISION_BITS})"
        )))
    }
}

impl QuantSpec {
    pub fn new(bits: u8, range_source: RangeSource) -> Result<Self> {
        check_bits(bits)?;
        if let RangeSource::RunningMinMax { momentum } = range_source {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::InvalidArgument(format!(
                    "EMA momentum must lie in [0, 1), got {momentum}"
                )));
            }
        }
        Ok(Self {
            bits,
            range_source,
            x_min: 0.0,
            x_max: 0.0,
            observed: 0,
            clip_gradient: true,
        })
    }

    pub fn per_tensor(bits: u8) -> Result<Self> {
        Self::new(bits, RangeSource::PerTensorMinMax)
    }

    pub fn running(bits: u8, momentum: f64) -> Result<Self> {
        Self::new(bits, RangeSource::RunningMinMax { momentum })
    }

    /// A finalized spec with a fixed range.
    pub fn with_range(bits: u8, x_min: f64, x_max: f64) -> Result<Self> {
        let mut spec = Self::per_tensor(bits)?;
        spec.x_min = x_min;
        spec.x_max = x_max;
        spec.observed = 1;
        Ok(spec)
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn scale(&self) -> f64 {
        (self.x_max - self.x_min) / f64::from(self.levels())
    }

    pub fn is_finalized(&self) -> bool {
        self.observed > 0
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x_max > self.x_min)
    }

    /// Folds a batch into the range and returns the updated spec.
    pub fn calibrate(&self, batch: &Tensor) -> Result<QuantSpec> {
        let mut next = self.clone();
        next.observe(batch.data())?;
        Ok(next)
    }

    /// In-place form of [`QuantSpec::calibrate`].
    pub fn observe(&mut self, values: &[f64]) -> Result<()> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("cannot calibrate on an empty batch".into()));
        }
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NonFinite("calibration batch contains non-finite values".into()));
        }
        match self.range_source {
            RangeSource::RunningMinMax { momentum } if self.observed > 0 => {
                self.x_min = momentum * self.x_min + (1.0 - momentum) * lo;
                self.x_max = momentum * self.x_max + (1.0 - momentum) * hi;
            }
            _ => {
                self.x_min = lo;
                self.x_max = hi;
            }
        }
        self.observed += 1;
        Ok(())
    }

    pub fn params(&self) -> Result<FakeQuantParams> {
        if !self.is_finalized() {
            return Err(Error::QuantState(format!(
                "{}-bit range has not been calibrated",
                self.bits
            )));
        }
        Ok(FakeQuantParams {
            x_min: self.x_min,
            x_max: self.x_max,
            levels: self.levels(),
            clip_gradient: self.clip_gradient,
        })
    }

    /// Integer code of `x` in `0..=2ⁿ-1`.
    pub fn code(&self, x: f64) -> Result<u32> {
        Ok(self.params()?.code(x))
    }

    pub fn apply(&self, x: f64) -> Result<f64> {
        Ok(self.params()?.apply(x))
    }
}

/// Records a fake-quantization node on the tape.
pub fn fake_quant(tape: &mut Tape, x: Var, spec: &QuantSpec) -> Result<Var> {
    Ok(tape.fake_quant(x, spec.params()?))
}

/// Quantize-dequantize a tensor outside of any tape.
pub fn fake_quant_tensor(x: &Tensor, spec: &QuantSpec) -> Result<Tensor> {
    let p = spec.params()?;
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| p.apply(v)).collect())
}

/// The dequantized values of one tensor under a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedView {
    pub spec: QuantSpec,
    pub values: Tensor,
}

impl QuantizedView {
    pub fn materialize(source: &Tensor, spec: &QuantSpec) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            values: fake_quant_tensor(source, spec)?,
        })
    }

    /// Largest elementwise distance to `source`.
    pub fn max_error(&self, source: &Tensor) -> f64 {
        source
            .data()
            .iter()
            .zip(self.values.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Quantization settings for a student network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub wbits: u8,
    pub abits: u8,
    pub act_momentum: f64,
    pub warmup_batches: usize,
    /// Keep the first and last layers in full precision.
    pub exempt_first_last: bool,
    pub clip_gradient: bool,
}

impl QuantConfig {
    pub fn new(wbits: u8, abits: u8) -> Self {
        Self {
            wbits,
            abits,
            act_momentum: DEFAULT_ACT_MOMENTUM,
            warmup_batches: DEFAULT_WARMUP_BATCHES,
            exempt_first_last: false,
            clip_gradient: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in [self.wbits, self.abits] {
            if b != FULL_PRECISION_BITS {
                check_bits(b)?;
            }
        }
        Ok(())
    }

    pub fn is_full_precision(&self) -> bool {
        self.wbits == FULL_PRECISION_BITS && self.abits == FULL_PRECISION_BITS
    }
}

/// Per-layer quantizers of one model: a weight spec and an input-activation
/// spec per layer, `None` where that tensor stays in full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantPlan {
    pub weights: Vec<Option<QuantSpec>>,
    pub activations: Vec<Option<QuantSpec>>,
}

impl QuantPlan {
    pub fn new(layers: usize, cfg: &QuantConfig) -> Result<Self> {
        cfg.validate()?;
        let exempt = |i: usize| cfg.exempt_first_last && (i == 0 || i + 1 == layers);
        let make = |i: usize, bits: u8, source: RangeSource| -> Result<Option<QuantSpec>> {
            if bits == FULL_PRECISION_BITS || exempt(i) {
                return Ok(None);
            }
            let mut s = QuantSpec::new(bits, source)?;
            s.clip_gradient = cfg.clip_gradient;
            Ok(Some(s))
        };
        let momentum = RangeSource::RunningMinMax {
            momentum: cfg.act_momentum,
        };
        Ok(Self {
            weights: (0..layers)
                .map(|i| make(i, cfg.wbits, RangeSource::PerTensorMinMax))
                .collect::<Result<_>>()?,
            activations: (0..layers)
                .map(|i| make(i, cfg.abits, momentum))
                .collect::<Result<_>>()?,
        })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    /// True when no tensor is quantized.
    pub fn is_pass_through(&self) -> bool {
        self.weights.iter().chain(&self.activations).all(Option::is_none)
    }

    pub fn specs(&self) -> impl Iterator<Item = &QuantSpec> {
        self.weights.iter().chain(&self.activations).flatten()
    }
}
