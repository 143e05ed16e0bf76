//! Participation-gated MLP with hand-written forward and backward passes.
//!
//! Each hidden neuron is one player. Its parameter group is the incoming
//! weight row plus the bias, and its gate `s` multiplies the pre-activation:
//!
//! ```text
//! z = x W^T + b,   a = s ⊙ z,   h = relu(a)
//! ```
//!
//! so `s_i = 0` removes neuron `i` from the function entirely. The output
//! layer is an ordinary affine map followed by softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mnist::Dataset;
use crate::numkit::{dot, he_init, matmul, matmul_a_bt, matmul_at_b, Matrix, Rng};

/// Layer widths: `inputs -> hidden[0] -> ... -> classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn new(inputs: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Architecture {
            inputs,
            hidden,
            classes,
        }
    }

    /// 784-512-256-10.
    pub fn mnist() -> Self {
        Architecture {
            inputs: 784,
            hidden: vec![512, 256],
            classes: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!(
                "architecture has a zero-width layer: {self:?}"
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::invalid("at least one participating hidden layer is required"));
        }
        Ok(())
    }

    pub fn player_count(&self) -> usize {
        self.hidden.iter().sum()
    }

    /// Weights and biases of every layer.
    pub fn weight_parameter_count(&self) -> usize {
        let mut fan_in = self.inputs;
        let mut total = 0;
        for &h in self.hidden.iter().chain(std::iter::once(&self.classes)) {
            total += fan_in * h + h;
            fan_in = h;
        }
        total
    }

    /// Weights, biases and participation gates, i.e. everything that receives
    /// an update during training.
    pub fn trainable_parameter_count(&self) -> usize {
        self.weight_parameter_count() + self.player_count()
    }

    /// Player id -> (hidden layer, neuron) in layer-major order.
    pub fn players(&self) -> Vec<PlayerId> {
        self.hidden
            .iter()
            .enumerate()
            .flat_map(|(layer, &width)| (0..width).map(move |neuron| PlayerId { layer, neuron }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlayerId {
    pub layer: usize,
    pub neuron: usize,
}

/// Which gradient enters the benefit inner product `<grad, theta_i>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenefitGradient {
    /// Gradient with respect to the raw group parameters. Carries a factor
    /// of `s_i`, so it vanishes for closed gates.
    #[default]
    Raw,
    /// Gradient with respect to the effective parameters `s_i * theta_i`.
    Effective,
}

impl std::str::FromStr for BenefitGradient {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(BenefitGradient::Raw),
            "effective" => Ok(BenefitGradient::Effective),
            other => Err(Error::invalid(format!(
                "benefit_gradient must be raw|effective, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for BenefitGradient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenefitGradient::Raw => "raw",
            BenefitGradient::Effective => "effective",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipatingLayer {
    /// `out x in`; row `i` is neuron `i`'s incoming weights.
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub participation: Vec<f64>,
}

impl ParticipatingLayer {
    pub fn width(&self) -> usize {
        self.weights.rows()
    }

    /// `||theta_i||^2` over the incoming row and bias.
    pub fn group_norm_sq(&self, i: usize) -> f64 {
        let row = self.weights.row(i);
        dot(row, row) + self.biases[i] * self.biases[i]
    }

    /// `<theta_i, theta_j>` between two groups of this layer.
    pub fn group_dot(&self, i: usize, j: usize) -> f64 {
        dot(self.weights.row(i), self.weights.row(j)) + self.biases[i] * self.biases[j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipatingNet {
    pub hidden: Vec<ParticipatingLayer>,
    pub output: DenseLayer,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Pre-gate pre-activations `z` per hidden layer.
    pub pre: Vec<Matrix>,
    /// Post-ReLU activations `h` per hidden layer.
    pub post: Vec<Matrix>,
    pub logits: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Loss gradients for every parameter plus the per-player benefit inner
/// products under both gradient conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub hidden: Vec<LayerGrads>,
    pub output: LayerGrads,
    /// `<dL/d theta_i, theta_i>` with the raw-parameter gradient.
    pub raw_benefit: Vec<f64>,
    /// The same inner product with the gradient taken at `s_i * theta_i`,
    /// which equals `dL/ds_i`.
    pub effective_benefit: Vec<f64>,
}

impl GradientBundle {
    pub fn benefit(&self, which: BenefitGradient) -> &[f64] {
        match which {
            BenefitGradient::Raw => &self.raw_benefit,
            BenefitGradient::Effective => &self.effective_benefit,
        }
    }
}

impl ParticipatingNet {
    /// He-initialized weights, zero biases, all gates open.
    pub fn new(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut fan_in = arch.inputs;
        let mut hidden = Vec::with_capacity(arch.hidden.len());
        for &width in &arch.hidden {
            hidden.push(ParticipatingLayer {
                weights: he_init(rng, width, fan_in),
                biases: vec![0.0; width],
                participation: vec![1.0; width],
            });
            fan_in = width;
        }
        let output = DenseLayer {
            weights: he_init(rng, arch.classes, fan_in),
            biases: vec![0.0; arch.classes],
        };
        Ok(ParticipatingNet { hidden, output })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            inputs: self.hidden[0].weights.cols(),
            hidden: self.hidden.iter().map(ParticipatingLayer::width).collect(),
            classes: self.output.weights.rows(),
        }
    }

    pub fn player_count(&self) -> usize {
        self.hidden.iter().map(ParticipatingLayer::width).sum()
    }

    /// Concatenated gate values in player order.
    pub fn participation(&self) -> Vec<f64> {
        self.hidden
            .iter()
            .flat_map(|l| l.participation.iter().copied())
            .collect()
    }

    pub fn set_participation(&mut self, s: &[f64]) -> Result<()> {
        if s.len() != self.player_count() {
            return Err(Error::invalid(format!(
                "participation vector has {} entries, net has {} players",
                s.len(),
                self.player_count()
            )));
        }
        if let Some(bad) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("participation {bad} outside [0, 1]")));
        }
        let mut offset = 0;
        for layer in &mut self.hidden {
            let w = layer.width();
            layer.participation.copy_from_slice(&s[offset..offset + w]);
            offset += w;
        }
        Ok(())
    }

    fn participation_range(&self) -> (f64, f64) {
        self.hidden
            .iter()
            .flat_map(|l| l.participation.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        let inputs = self.hidden[0].weights.cols();
        if batch.cols() != inputs {
            return Err(Error::Shape {
                op: "forward",
                left: batch.shape(),
                right: (batch.rows(), inputs),
            });
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut post = Vec::with_capacity(self.hidden.len());
        for (l, layer) in self.hidden.iter().enumerate() {
            let input = if l == 0 { batch } else { &post[l - 1] };
            let z = affine(input, &layer.weights, &layer.biases)?;
            let mut h = z.clone();
            let width = layer.width();
            for row in h.data_mut().chunks_exact_mut(width) {
                for (v, &s) in row.iter_mut().zip(&layer.participation) {
                    *v = (s * *v).max(0.0);
                }
            }
            pre.push(z);
            post.push(h);
        }
        let last = post.last().expect("at least one hidden layer");
        let logits = affine(last, &self.output.weights, &self.output.biases)?;
        Ok(ForwardCache { pre, post, logits })
    }

    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.logits)
    }

    /// Mean softmax cross-entropy over the batch and its full gradient.
    pub fn loss_and_backward(&self, batch: &Matrix, labels: &[u8]) -> Result<(f64, GradientBundle)> {
        if labels.len() != batch.rows() {
            return Err(Error::invalid(format!(
                "{} labels for a batch of {} rows",
                labels.len(),
                batch.rows()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let cache = self.forward(batch)?;
        let (loss, dlogits) = softmax_cross_entropy(&cache.logits, labels)?;
        if !loss.is_finite() {
            let (s_min, s_max) = self.participation_range();
            return Err(Error::NonFiniteLoss {
                loss,
                logit_max: cache.logits.max_abs(),
                s_min,
                s_max,
            });
        }

        let last = cache.post.last().expect("at least one hidden layer");
        let output = LayerGrads {
            weights: matmul_at_b(&dlogits, last)?,
            biases: column_sums(&dlogits),
        };
        let mut upstream = matmul(&dlogits, &self.output.weights)?;

        let n_layers = self.hidden.len();
        let mut hidden_grads = Vec::with_capacity(n_layers);
        let mut effective = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let layer = &self.hidden[l];
            let width = layer.width();
            let z = &cache.pre[l];
            // upstream becomes dL/da in place, then dz = s * da.
            let mut eff = vec![0.0; width];
            let mut dz = upstream;
            for (drow, zrow) in dz
                .data_mut()
                .chunks_exact_mut(width)
                .zip(z.data().chunks_exact(width))
            {
                for j in 0..width {
                    let s = layer.participation[j];
                    let da = if s * zrow[j] > 0.0 { drow[j] } else { 0.0 };
                    eff[j] += da * zrow[j];
                    drow[j] = da * s;
                }
            }
            let input = if l == 0 { batch } else { &cache.post[l - 1] };
            let grads = LayerGrads {
                weights: matmul_at_b(&dz, input)?,
                biases: column_sums(&dz),
            };
            upstream = if l > 0 {
                matmul(&dz, &layer.weights)?
            } else {
                Matrix::zeros(0, 0)
            };
            hidden_grads.push(grads);
            effective.push(eff);
        }
        hidden_grads.reverse();
        effective.reverse();

        let raw_benefit = self
            .hidden
            .iter()
            .zip(&hidden_grads)
            .flat_map(|(layer, g)| {
                (0..layer.width()).map(move |i| {
                    dot(g.weights.row(i), layer.weights.row(i)) + g.biases[i] * layer.biases[i]
                })
            })
            .collect();

        Ok((
            loss,
            GradientBundle {
                hidden: hidden_grads,
                output,
                raw_benefit,
                effective_benefit: effective.into_iter().flatten().collect(),
            },
        ))
    }

    /// Plain gradient descent on every weight and bias. Gates are untouched.
    pub fn sgd_step(&mut self, grads: &GradientBundle, lr: f64) {
        for (layer, g) in self.hidden.iter_mut().zip(&grads.hidden) {
            axpy(layer.weights.data_mut(), -lr, g.weights.data());
            axpy(&mut layer.biases, -lr, &g.biases);
        }
        axpy(self.output.weights.data_mut(), -lr, grads.output.weights.data());
        axpy(&mut self.output.biases, -lr, &grads.output.biases);
    }

    /// Fraction of samples whose argmax logit equals the label.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        const CHUNK: usize = 1000;
        if dataset.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        let indices: Vec<usize> = (0..dataset.len()).collect();
        for chunk in indices.chunks(CHUNK) {
            let batch = dataset.images.select_rows(chunk)?;
            let logits = self.logits(&batch)?;
            correct += logits
                .row_iter()
                .zip(chunk)
                .filter(|(row, &i)| argmax(row) == dataset.labels[i] as usize)
                .count();
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn affine(input: &Matrix, weights: &Matrix, biases: &[f64]) -> Result<Matrix> {
    let mut out = matmul_a_bt(input, weights)?;
    let width = biases.len();
    for row in out.data_mut().chunks_exact_mut(width) {
        for (v, b) in row.iter_mut().zip(biases) {
            *v += b;
        }
    }
    Ok(out)
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (acc, v) in out.iter_mut().zip(row) {
            *acc += v;
        }
    }
    out
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Mean cross-entropy and `dL/dlogits` (already divided by the batch size).
fn softmax_cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    let classes = logits.cols();
    let mut grad = Matrix::zeros(n, classes);
    let mut total = 0.0;
    for (r, (row, &label)) in logits.row_iter().zip(labels).enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::invalid(format!("label {label} >= {classes} classes")));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let g = grad.row_mut(r);
        let mut sum = 0.0;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            sum += *gi;
        }
        total += sum.ln() + max - row[label];
        for gi in g.iter_mut() {
            *gi /= sum * n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}
