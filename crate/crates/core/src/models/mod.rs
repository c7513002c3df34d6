//! The three compared architectures behind one forward interface.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::capsule::{
    capsule_votes, decoder_forward, dynamic_routing, margin_loss, primary_caps, reconstruction_loss,
    total_loss, CapsLossConfig, DecoderVars, DEFAULT_ROUTING_ITERATIONS,
};
use crate::error::{Error, Result};
use crate::nn::{
    conv2d, dense, dropout, maxpool2d, one_hot, relu, softmax_cross_entropy, xavier_init, xavier_uniform, ConvSpec,
    Fans,
};
use crate::ops;
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};

/// Input images are single-channel 28x28.
pub const IMAGE_SIDE: usize = 28;
pub const BASELINE_DROPOUT: f64 = 0.5;
pub const CAPSULE_IN_DIM: usize = 8;
pub const CAPSULE_OUT_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    LeNet,
    Baseline,
    CapsNet,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::LeNet, Architecture::Baseline, Architecture::CapsNet];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::LeNet => "lenet",
            Architecture::Baseline => "baseline",
            Architecture::CapsNet => "capsnet",
        }
    }

    pub fn is_capsule(self) -> bool {
        self == Architecture::CapsNet
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lenet" => Ok(Architecture::LeNet),
            "baseline" => Ok(Architecture::Baseline),
            "capsnet" => Ok(Architecture::CapsNet),
            _ => Err(Error::contract("architecture", format!("unknown architecture {s:?}"))),
        }
    }
}

/// Layer widths. `Reduced` exists for fast checks only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Width {
    #[default]
    Full,
    Reduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub num_classes: usize,
    #[serde(default)]
    pub width: Width,
    #[serde(default = "default_iterations")]
    pub routing_iterations: usize,
}

fn default_iterations() -> usize {
    DEFAULT_ROUTING_ITERATIONS
}

impl ModelConfig {
    pub fn new(architecture: Architecture, num_classes: usize) -> Self {
        Self {
            architecture,
            num_classes,
            width: Width::Full,
            routing_iterations: DEFAULT_ROUTING_ITERATIONS,
        }
    }

    pub fn reduced(self) -> Self {
        Self {
            width: Width::Reduced,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::contract("model_config", "at least two classes are required"));
        }
        if self.routing_iterations < 1 {
            return Err(Error::contract("model_config", "at least one routing iteration is required"));
        }
        Ok(())
    }

    /// Output channels or units of each hidden layer, in order.
    fn widths(&self) -> Vec<usize> {
        let full: &[usize] = match self.architecture {
            Architecture::LeNet => &[6, 16, 120, 84],
            Architecture::Baseline => &[256, 256, 128, 328, 192],
            Architecture::CapsNet => &[256, 256, 512, 1024],
        };
        match self.width {
            Width::Full => full.to_vec(),
            // CapsNet keeps two capsule types (16 channels) so that the
            // reduced primary layer has 2 * 6 * 6 = 72 capsules.
            Width::Reduced if self.architecture.is_capsule() => vec![64, 16, 128, 256],
            Width::Reduced => full.iter().map(|&w| (w / 4).max(1)).collect(),
        }
    }

    /// Number of primary capsules.
    pub fn primary_capsules(&self) -> usize {
        self.widths()[1] / CAPSULE_IN_DIM * 6 * 6
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// How a forward pass treats stochastic and label-dependent parts.
pub enum Pass<'a> {
    /// Dropout active; capsule decoder masked by the true labels.
    Train { rng: &'a mut SeededRng, labels: &'a [usize] },
    /// Dropout off; capsule decoder masked by the true labels (validation
    /// loss).
    Eval { labels: &'a [usize] },
    /// Dropout off; capsule decoder masked by the longest capsule.
    Infer,
}

/// Graph outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Output {
    /// Logits `[batch, classes]` for the convolutional networks; capsule
    /// lengths for the capsule network.
    pub scores: Var,
    /// Reconstruction `[batch, 28, 28]` (capsule network only).
    pub reconstruction: Option<Var>,
}

/// Loss nodes of one training step.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Cross-entropy or margin loss.
    pub classification: Var,
    pub reconstruction: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
}

/// Total element count of `params`.
pub fn count_params<T: Scalar>(params: &[Param<T>]) -> usize {
    params.iter().map(|p| p.value.len()).sum()
}

/// How a parameter tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    /// Xavier over a single `in x out` capsule transform.
    CapsuleTransform,
    Zero,
}

/// Name, shape and initialisation of every parameter, in order.
#[derive(Default)]
struct Layout(Vec<(String, Vec<usize>, Init)>);

impl Layout {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push((name, shape, init));
    }

    fn conv(&mut self, name: &str, shape: [usize; 4]) {
        self.push(format!("{name}.weight"), shape.to_vec(), Init::Xavier);
        self.push(format!("{name}.bias"), vec![shape[0]], Init::Zero);
    }

    fn dense(&mut self, name: &str, n_in: usize, n_out: usize) {
        self.push(format!("{name}.weight"), vec![n_in, n_out], Init::Xavier);
        self.push(format!("{name}.bias"), vec![n_out], Init::Zero);
    }

    fn of(config: &ModelConfig) -> Self {
        let k = config.num_classes;
        let w = config.widths();
        let mut l = Layout::default();
        match config.architecture {
            Architecture::LeNet => {
                l.conv("conv1", [w[0], 1, 5, 5]);
                l.conv("conv2", [w[1], w[0], 5, 5]);
                l.dense("fc1", w[1] * 5 * 5, w[2]);
                l.dense("fc2", w[2], w[3]);
                l.dense("fc3", w[3], k);
            }
            Architecture::Baseline => {
                l.conv("conv1", [w[0], 1, 5, 5]);
                l.conv("conv2", [w[1], w[0], 5, 5]);
                l.conv("conv3", [w[2], w[1], 5, 5]);
                l.dense("fc1", w[2] * IMAGE_SIDE * IMAGE_SIDE, w[3]);
                l.dense("fc2", w[3], w[4]);
                l.dense("fc3", w[4], k);
            }
            Architecture::CapsNet => {
                l.conv("conv1", [w[0], 1, 9, 9]);
                l.conv("conv2", [w[1], w[0], 9, 9]);
                l.push(
                    "caps.weight".into(),
                    vec![config.primary_capsules(), k, CAPSULE_IN_DIM, CAPSULE_OUT_DIM],
                    Init::CapsuleTransform,
                );
                l.dense("decoder.fc1", k * CAPSULE_OUT_DIM, w[2]);
                l.dense("decoder.fc2", w[2], w[3]);
                l.dense("decoder.fc3", w[3], IMAGE_SIDE * IMAGE_SIDE);
            }
        }
        l
    }
}

/// Names and shapes of the parameters [`Model::build`] creates for `config`.
pub fn parameter_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    Layout::of(config).0.into_iter().map(|(n, s, _)| (n, s)).collect()
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialised model: Xavier-uniform weights, zero biases.
    pub fn build(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for (name, shape, init) in Layout::of(&config).0 {
            let value = match init {
                Init::Xavier => xavier_init(&shape, rng)?,
                Init::CapsuleTransform => {
                    let fans = Fans {
                        fan_in: CAPSULE_IN_DIM,
                        fan_out: CAPSULE_OUT_DIM,
                    };
                    xavier_uniform(&shape, fans, rng)
                }
                Init::Zero => Tensor::zeros(&shape),
            };
            params.push(Param { name, value });
        }
        Ok(Self { config, params })
    }

    /// Assembles a model from stored tensors, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::contract(
                "from_params",
                format!("{} tensors for {} parameters", params.len(), expected.len()),
            ));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Contract {
                    op: "from_params",
                    detail: format!("expected {name} {shape:?}, got {} {:?}", p.name, p.value.shape()),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn lenet(num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::build(ModelConfig::new(Architecture::LeNet, num_classes), rng)
    }

    pub fn baseline(num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::build(ModelConfig::new(Architecture::Baseline, num_classes), rng)
    }

    pub fn capsnet(num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::build(ModelConfig::new(Architecture::CapsNet, num_classes), rng)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn count_params(&self) -> usize {
        count_params(&self.params)
    }

    /// Parameter values in declaration order.
    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Mutable parameter values in declaration order, for the optimiser.
    pub fn values_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    /// Puts every parameter on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<usize> {
        tape.check(x)?;
        match *tape.shape(x) {
            [b, 1, IMAGE_SIDE, IMAGE_SIDE] => Ok(b),
            ref s => Err(Error::shape("forward", s, &[0, 1, IMAGE_SIDE, IMAGE_SIDE])),
        }
    }

    /// Forward pass of `x: [batch, 1, 28, 28]` using parameters bound by [`Self::bind`].
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, pass: Pass<'_>) -> Result<Output> {
        let batch = self.check_input(tape, x)?;
        if vars.len() != self.params.len() {
            return Err(Error::contract(
                "forward",
                format!("{} bound variables for {} parameters", vars.len(), self.params.len()),
            ));
        }
        match self.config.architecture {
            Architecture::LeNet => {
                let [c1w, c1b, c2w, c2b, f1w, f1b, f2w, f2b, f3w, f3b] = vars[..] else {
                    unreachable!("lenet has ten parameter tensors")
                };
                let mut h = ops::pad2d(tape, x, 2)?;
                h = conv2d(tape, h, c1w, Some(c1b), ConvSpec::valid(1))?;
                h = relu(tape, h)?;
                h = maxpool2d(tape, h)?;
                h = conv2d(tape, h, c2w, Some(c2b), ConvSpec::valid(1))?;
                h = relu(tape, h)?;
                h = maxpool2d(tape, h)?;
                let flat = tape.value(h).len() / batch;
                h = ops::reshape(tape, h, &[batch, flat])?;
                h = dense(tape, h, f1w, f1b)?;
                h = relu(tape, h)?;
                h = dense(tape, h, f2w, f2b)?;
                h = relu(tape, h)?;
                let scores = dense(tape, h, f3w, f3b)?;
                Ok(Output {
                    scores,
                    reconstruction: None,
                })
            }
            Architecture::Baseline => {
                let [c1w, c1b, c2w, c2b, c3w, c3b, f1w, f1b, f2w, f2b, f3w, f3b] = vars[..] else {
                    unreachable!("baseline has twelve parameter tensors")
                };
                let mut h = x;
                for (w, b) in [(c1w, c1b), (c2w, c2b), (c3w, c3b)] {
                    h = conv2d(tape, h, w, Some(b), ConvSpec::same(1))?;
                    h = relu(tape, h)?;
                }
                let flat = tape.value(h).len() / batch;
                h = ops::reshape(tape, h, &[batch, flat])?;
                h = dense(tape, h, f1w, f1b)?;
                h = relu(tape, h)?;
                if let Pass::Train { rng, .. } = pass {
                    h = dropout(tape, h, BASELINE_DROPOUT, rng, true)?;
                }
                h = dense(tape, h, f2w, f2b)?;
                h = relu(tape, h)?;
                let scores = dense(tape, h, f3w, f3b)?;
                Ok(Output {
                    scores,
                    reconstruction: None,
                })
            }
            Architecture::CapsNet => {
                let [c1w, c1b, c2w, c2b, caps_w, d1w, d1b, d2w, d2b, d3w, d3b] = vars[..] else {
                    unreachable!("capsnet has eleven parameter tensors")
                };
                let mut h = conv2d(tape, x, c1w, Some(c1b), ConvSpec::valid(1))?;
                h = relu(tape, h)?;
                h = conv2d(tape, h, c2w, Some(c2b), ConvSpec::valid(2))?;
                let u = primary_caps(tape, h, CAPSULE_IN_DIM)?;
                let votes = capsule_votes(tape, u, caps_w)?;
                let routed = dynamic_routing(tape, votes, self.config.routing_iterations)?;
                let scores = ops::norm_last(tape, routed.poses)?;
                let mask = match pass {
                    Pass::Train { labels, .. } | Pass::Eval { labels } => {
                        if labels.len() != batch {
                            return Err(Error::contract(
                                "forward",
                                format!("{} labels for a batch of {batch}", labels.len()),
                            ));
                        }
                        Some(one_hot(labels, self.config.num_classes)?)
                    }
                    Pass::Infer => None,
                };
                let decoder = DecoderVars {
                    layers: [(d1w, d1b), (d2w, d2b), (d3w, d3b)],
                    image: (IMAGE_SIDE, IMAGE_SIDE),
                };
                let recon = decoder_forward(tape, routed.poses, mask.as_ref(), &decoder)?;
                Ok(Output {
                    scores,
                    reconstruction: Some(recon),
                })
            }
        }
    }

    /// Training objective for one forward pass. `x` is the input batch,
    /// `targets` a one-hot `[batch, classes]` constant.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        out: &Output,
        x: Var,
        targets: Var,
        caps: &CapsLossConfig,
    ) -> Result<LossTerms> {
        match (self.config.architecture, out.reconstruction) {
            (Architecture::CapsNet, Some(recon)) => {
                let margin = margin_loss(tape, out.scores, targets, caps)?;
                let batch = tape.shape(x)[0];
                let images = ops::reshape(tape, x, &[batch, IMAGE_SIDE, IMAGE_SIDE])?;
                let r = reconstruction_loss(tape, images, recon)?;
                let total = total_loss(tape, margin, r, caps)?;
                Ok(LossTerms {
                    total,
                    classification: margin,
                    reconstruction: Some(r),
                })
            }
            (Architecture::CapsNet, None) => Err(Error::contract("loss", "capsule output without reconstruction")),
            _ => {
                let ce = softmax_cross_entropy(tape, out.scores, targets)?;
                Ok(LossTerms {
                    total: ce,
                    classification: ce,
                    reconstruction: None,
                })
            }
        }
    }

    /// Class scores for `x: [batch, 1, 28, 28]`: softmax probabilities for the
    /// convolutional networks, capsule lengths for the capsule network.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv, Pass::Infer)?;
        let scores = tape.value(out.scores);
        if self.config.architecture.is_capsule() {
            Ok(scores.clone())
        } else {
            ops::softmax_values(scores, 1)
        }
    }

    /// Class scores and reconstructions (capsule network) for a batch.
    pub fn predict_with_reconstruction(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv, Pass::Infer)?;
        let recon = out.reconstruction.map(|r| tape.value(r).clone());
        let scores = tape.value(out.scores);
        let scores = if self.config.architecture.is_capsule() {
            scores.clone()
        } else {
            ops::softmax_values(scores, 1)?
        };
        Ok((scores, recon))
    }
}

/// Predicted class of each row; ties go to the lower index.
pub fn predict_classes<T: Scalar>(scores: &Tensor<T>) -> Result<Vec<usize>> {
    scores.argmax_rows()
}

