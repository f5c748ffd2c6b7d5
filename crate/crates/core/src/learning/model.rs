//! Parameter vectors and the small models they describe.
//!
//! Three layouts are supported, all trained with plain minibatch SGD:
//! a linear regressor with squared error (used for hand-checkable scalar
//! cases), multinomial logistic regression and a one-hidden-layer tanh
//! network, both with softmax cross-entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearningError;
use crate::seed;

/// Upper bound on parameter count for the desk-scale models.
pub const MAX_PARAMS: usize = 10_000;

/// Bytes of the serialization header: 3-byte magic, value width, layout
/// hash, value count.
pub const HEADER_BYTES: usize = 16;

const MAGIC: &[u8; 3] = b"UFL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelLayout {
    /// `y = w . x`, loss `0.5 (y - target)^2` with the label as target.
    Linear { inputs: usize },
    /// Multinomial logistic regression.
    Softmax { inputs: usize, classes: usize },
    /// One tanh hidden layer followed by a softmax output.
    Mlp { inputs: usize, hidden: usize, classes: usize },
}

impl ModelLayout {
    pub fn dim(&self) -> usize {
        match *self {
            ModelLayout::Linear { inputs } => inputs,
            ModelLayout::Softmax { inputs, classes } => classes * inputs + classes,
            ModelLayout::Mlp { inputs, hidden, classes } => hidden * inputs + hidden + classes * hidden + classes,
        }
    }

    pub fn inputs(&self) -> usize {
        match *self {
            ModelLayout::Linear { inputs } | ModelLayout::Softmax { inputs, .. } | ModelLayout::Mlp { inputs, .. } => {
                inputs
            }
        }
    }

    /// Number of output classes; `None` for the regression layout.
    pub fn classes(&self) -> Option<usize> {
        match *self {
            ModelLayout::Linear { .. } => None,
            ModelLayout::Softmax { classes, .. } | ModelLayout::Mlp { classes, .. } => Some(classes),
        }
    }

    pub fn descriptor(&self) -> String {
        match *self {
            ModelLayout::Linear { inputs } => format!("linear:{inputs}"),
            ModelLayout::Softmax { inputs, classes } => format!("softmax:{inputs}:{classes}"),
            ModelLayout::Mlp { inputs, hidden, classes } => format!("mlp:{inputs}:{hidden}:{classes}"),
        }
    }

    pub fn layout_hash(&self) -> u64 {
        seed::fnv1a(self.descriptor().as_bytes())
    }

    pub fn validate(&self) -> Result<(), LearningError> {
        let ok = match *self {
            ModelLayout::Linear { inputs } => inputs >= 1,
            ModelLayout::Softmax { inputs, classes } => inputs >= 1 && classes >= 2,
            ModelLayout::Mlp { inputs, hidden, classes } => inputs >= 1 && hidden >= 1 && classes >= 2,
        };
        if !ok {
            return Err(LearningError::InvalidParams(format!("degenerate layout {}", self.descriptor())));
        }
        if self.dim() > MAX_PARAMS {
            return Err(LearningError::InvalidParams(format!(
                "layout {} has {} parameters, limit is {MAX_PARAMS}",
                self.descriptor(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    layout: ModelLayout,
    bytes_per_value: usize,
}

impl ModelParams {
    pub fn new(layout: ModelLayout, values: Vec<f64>) -> Result<Self, LearningError> {
        if values.len() != layout.dim() {
            return Err(LearningError::InvalidParams(format!(
                "layout {} needs {} values, got {}",
                layout.descriptor(),
                layout.dim(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::InvalidParams("non-finite parameter value".into()));
        }
        Ok(Self { values, layout, bytes_per_value: 4 })
    }

    pub fn zeros(layout: ModelLayout) -> Self {
        Self { values: vec![0.0; layout.dim()], layout, bytes_per_value: 4 }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(layout: ModelLayout, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut uniform = |fan_in: usize, fan_out: usize, count: usize, out: &mut Vec<f64>| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            out.extend((0..count).map(|_| rng.random_range(-a..a)));
        };
        let mut values = Vec::with_capacity(layout.dim());
        match layout {
            ModelLayout::Linear { inputs } => uniform(inputs, 1, inputs, &mut values),
            ModelLayout::Softmax { inputs, classes } => {
                uniform(inputs, classes, inputs * classes, &mut values);
                values.extend(std::iter::repeat_n(0.0, classes));
            }
            ModelLayout::Mlp { inputs, hidden, classes } => {
                uniform(inputs, hidden, inputs * hidden, &mut values);
                values.extend(std::iter::repeat_n(0.0, hidden));
                uniform(hidden, classes, hidden * classes, &mut values);
                values.extend(std::iter::repeat_n(0.0, classes));
            }
        }
        Self { values, layout, bytes_per_value: 4 }
    }

    /// Sets the on-wire width of each value (4 = f32, 8 = f64).
    pub fn with_bytes_per_value(mut self, bytes: usize) -> Result<Self, LearningError> {
        if bytes != 4 && bytes != 8 {
            return Err(LearningError::InvalidParams(format!("bytes_per_value must be 4 or 8, got {bytes}")));
        }
        self.bytes_per_value = bytes;
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> ModelLayout {
        self.layout
    }

    pub fn bytes_per_value(&self) -> usize {
        self.bytes_per_value
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value payload size, `len * bytes_per_value`.
    pub fn payload_bytes(&self) -> usize {
        self.values.len() * self.bytes_per_value
    }

    /// Full serialized size including the header. This is the message size
    /// priced by the radio model.
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + self.payload_bytes()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn from_raw(layout: ModelLayout, values: Vec<f64>, bytes_per_value: usize) -> Self {
        debug_assert_eq!(values.len(), layout.dim());
        Self { values, layout, bytes_per_value }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of the values, which `PartialEq` on `f64` does not
    /// give for signed zeros.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.layout == other.layout
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Little-endian encoding: `b"UFL"`, width byte, u64 layout hash, u32
    /// count, then the values at the configured width.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(self.bytes_per_value as u8);
        out.extend_from_slice(&self.layout.layout_hash().to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            if self.bytes_per_value == 4 {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], layout: ModelLayout) -> Result<Self, LearningError> {
        if bytes.len() < HEADER_BYTES {
            return Err(LearningError::Decode(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..3] != MAGIC {
            return Err(LearningError::Decode("bad magic".into()));
        }
        let width = bytes[3] as usize;
        if width != 4 && width != 8 {
            return Err(LearningError::Decode(format!("unsupported value width {width}")));
        }
        let hash = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        if hash != layout.layout_hash() {
            return Err(LearningError::Decode(format!("layout hash does not match {}", layout.descriptor())));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = &bytes[HEADER_BYTES..];
        if count != layout.dim() || body.len() != count * width {
            return Err(LearningError::Decode(format!(
                "expected {} values of {width} bytes, header says {count}, body has {} bytes",
                layout.dim(),
                body.len()
            )));
        }
        let values = body
            .chunks_exact(width)
            .map(|c| match width {
                4 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                _ => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            })
            .collect();
        ModelParams::new(layout, values)?.with_bytes_per_value(width)
    }
}

/// Output of a forward pass for one example.
pub(crate) enum Output {
    Scalar(f64),
    Logits(Vec<f64>),
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, computed with log-sum-exp.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| bias + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

pub(crate) fn forward(layout: &ModelLayout, w: &[f64], x: &[f64]) -> Output {
    match *layout {
        ModelLayout::Linear { .. } => Output::Scalar(w.iter().zip(x).map(|(a, b)| a * b).sum()),
        ModelLayout::Softmax { inputs, classes } => {
            let (weights, bias) = w.split_at(classes * inputs);
            Output::Logits(affine(weights, bias, x))
        }
        ModelLayout::Mlp { inputs, hidden, classes } => {
            let (w1, rest) = w.split_at(hidden * inputs);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(classes * hidden);
            debug_assert_eq!(b2.len(), classes);
            let h: Vec<f64> = affine(w1, b1, x).into_iter().map(f64::tanh).collect();
            Output::Logits(affine(w2, b2, &h))
        }
    }
}

/// Per-example loss, accumulating its gradient (scaled by `scale`) into
/// `grad`.
pub(crate) fn accumulate(layout: &ModelLayout, w: &[f64], x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
    match *layout {
        ModelLayout::Linear { .. } => {
            let pred: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let residual = pred - label as f64;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += scale * residual * xi;
            }
            0.5 * residual * residual
        }
        ModelLayout::Softmax { inputs, classes } => {
            let (weights, bias) = w.split_at(classes * inputs);
            let logits = affine(weights, bias, x);
            let loss = cross_entropy(&logits, label);
            let mut dz = softmax(&logits);
            dz[label] -= 1.0;
            let (gw, gb) = grad.split_at_mut(classes * inputs);
            for c in 0..classes {
                for i in 0..inputs {
                    gw[c * inputs + i] += scale * dz[c] * x[i];
                }
                gb[c] += scale * dz[c];
            }
            loss
        }
        ModelLayout::Mlp { inputs, hidden, classes } => {
            let (w1, rest) = w.split_at(hidden * inputs);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(classes * hidden);
            let h: Vec<f64> = affine(w1, b1, x).into_iter().map(f64::tanh).collect();
            let logits = affine(w2, b2, &h);
            let loss = cross_entropy(&logits, label);
            let mut dz = softmax(&logits);
            dz[label] -= 1.0;

            let (gw1, grest) = grad.split_at_mut(hidden * inputs);
            let (gb1, grest) = grest.split_at_mut(hidden);
            let (gw2, gb2) = grest.split_at_mut(classes * hidden);
            let mut dh = vec![0.0; hidden];
            for c in 0..classes {
                for j in 0..hidden {
                    gw2[c * hidden + j] += scale * dz[c] * h[j];
                    dh[j] += w2[c * hidden + j] * dz[c];
                }
                gb2[c] += scale * dz[c];
            }
            for j in 0..hidden {
                let dpre = dh[j] * (1.0 - h[j] * h[j]);
                for i in 0..inputs {
                    gw1[j * inputs + i] += scale * dpre * x[i];
                }
                gb1[j] += scale * dpre;
            }
            loss
        }
    }
}

pub(crate) fn example_loss(layout: &ModelLayout, w: &[f64], x: &[f64], label: usize) -> (f64, bool) {
    match forward(layout, w, x) {
        Output::Scalar(pred) => {
            let r = pred - label as f64;
            (0.5 * r * r, r.abs() < 0.5)
        }
        Output::Logits(logits) => {
            let predicted = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .expect("at least two classes");
            (cross_entropy(&logits, label), predicted == label)
        }
    }
}
