//! Randomised gradient checks for every layer and for whole models.

use crate::capsule::{
    capsule_votes, decoder_forward, dynamic_routing, margin_loss, primary_caps, reconstruction_loss, squash,
    total_loss, CapsLossConfig, DecoderVars,
};
use crate::error::Result;
use crate::models::{Model, ModelConfig, Pass};
use crate::nn::{conv2d, dense, dropout, maxpool2d, one_hot, relu, sigmoid, softmax_cross_entropy, ConvSpec};
use crate::ops;
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::{check_with_policy, finite_difference_check, CheckReport, KinkPolicy};

/// Central-difference step used by the suite.
pub const SUITE_EPS: f64 = 1e-5;

/// Central-difference step used by [`model_check`]. Smaller than
/// [`SUITE_EPS`] because every bias feeds hundreds of relus.
pub const MODEL_EPS: f64 = 1e-6;

/// Step-halving disagreement treated as a kink by [`model_check`].
pub const KINK_TOLERANCE: f64 = 1e-5;

/// Largest fraction of probed coordinates [`model_check`] may skip as kinks.
const MAX_KINK_FRACTION: f64 = 0.25;

/// Worst relative error of one layer over all of its trials.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    pub layer: String,
    /// Random instances for layer checks; probed coordinates for model checks.
    pub trials: usize,
    pub max_rel_error: f64,
    /// Coordinates skipped as kinks (model checks only).
    pub kinks: usize,
    /// Analytic and numeric derivative at the worst coordinate (model checks only).
    pub worst: Option<(f64, f64)>,
}

/// Accumulates the worst error over trials and arguments.
struct Worst(f64);

impl Worst {
    fn take(&mut self, r: CheckReport) {
        if r.max_rel_error > self.0 || r.max_rel_error.is_nan() {
            self.0 = r.max_rel_error;
        }
    }
}

fn random(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.iter().product()).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(shape, data).expect("positive extents")
}

/// Uniform values with magnitude at least `gap`, away from a kink at zero.
fn away_from_zero(rng: &mut SeededRng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let data = (0..shape.iter().product())
        .map(|_| {
            let m = rng.uniform(gap, 1.0);
            if rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("positive extents")
}

fn range(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// `sum(y * r)` for a fixed random `r`, turning any output into a scalar
/// whose gradient exercises every output element.
fn project(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = ops::mul(tape, y, r)?;
    ops::sum(tape, p)
}

/// Checks `g(args)` with respect to each argument in turn, the others held fixed.
fn check_each<G>(args: &[Tensor<f64>], worst: &mut Worst, g: G) -> Result<()>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    for k in 0..args.len() {
        let report = finite_difference_check(
            |tape, x| {
                let vars: Vec<Var> = args
                    .iter()
                    .enumerate()
                    .map(|(i, a)| if i == k { x } else { tape.constant(a.clone()) })
                    .collect();
                g(tape, &vars)
            },
            &args[k],
            SUITE_EPS,
        )?;
        worst.take(report);
    }
    Ok(())
}

type Trial = fn(&mut SeededRng, &mut Worst) -> Result<()>;

fn conv_trial(rng: &mut SeededRng, worst: &mut Worst, same: bool) -> Result<()> {
    let (b, c, o) = (range(rng, 1, 2), range(rng, 1, 3), range(rng, 1, 3));
    let (h, w) = (range(rng, 3, 7), range(rng, 3, 7));
    let (kh, kw) = (range(rng, 1, h.min(4)), range(rng, 1, w.min(4)));
    let stride = range(rng, 1, 2);
    let spec = if same { ConvSpec::same(stride) } else { ConvSpec::valid(stride) };
    let args = [
        random(rng, &[b, c, h, w], -1.0, 1.0),
        random(rng, &[o, c, kh, kw], -1.0, 1.0),
        random(rng, &[o], -1.0, 1.0),
    ];
    let probe = {
        let mut t = Tape::new();
        let (x, k, bias) = (t.constant(args[0].clone()), t.constant(args[1].clone()), t.constant(args[2].clone()));
        let y = conv2d(&mut t, x, k, Some(bias), spec)?;
        t.shape(y).to_vec()
    };
    let r = random(rng, &probe, -1.0, 1.0);
    check_each(&args, worst, |t, v| {
        let y = conv2d(t, v[0], v[1], Some(v[2]), spec)?;
        project(t, y, &r)
    })
}

fn conv_valid(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    conv_trial(rng, worst, false)
}

fn conv_same(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    conv_trial(rng, worst, true)
}

fn maxpool(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let shape = [range(rng, 1, 2), range(rng, 1, 3), 2 * range(rng, 1, 4), 2 * range(rng, 1, 4)];
    let x = random(rng, &shape, -1.0, 1.0);
    let r = random(rng, &[shape[0], shape[1], shape[2] / 2, shape[3] / 2], -1.0, 1.0);
    check_each(&[x], worst, |t, v| {
        let y = maxpool2d(t, v[0])?;
        project(t, y, &r)
    })
}

fn dense_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let (b, i, o) = (range(rng, 1, 4), range(rng, 1, 6), range(rng, 1, 6));
    let args = [
        random(rng, &[b, i], -1.0, 1.0),
        random(rng, &[i, o], -1.0, 1.0),
        random(rng, &[o], -1.0, 1.0),
    ];
    let r = random(rng, &[b, o], -1.0, 1.0);
    check_each(&args, worst, |t, v| {
        let y = dense(t, v[0], v[1], v[2])?;
        project(t, y, &r)
    })
}

fn dropout_inference(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let shape = [range(rng, 1, 3), range(rng, 1, 8)];
    let rate = rng.uniform(0.0, 0.9);
    let x = random(rng, &shape, -1.0, 1.0);
    let r = random(rng, &shape, -1.0, 1.0);
    check_each(&[x], worst, |t, v| {
        let y = dropout(t, v[0], rate, &mut SeededRng::new(0), false)?;
        project(t, y, &r)
    })
}

fn dropout_fixed_mask(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let shape = [range(rng, 1, 3), range(rng, 1, 8)];
    let rate = rng.uniform(0.1, 0.9);
    let seed = rng.next_u64();
    let x = random(rng, &shape, -1.0, 1.0);
    let r = random(rng, &shape, -1.0, 1.0);
    check_each(&[x], worst, |t, v| {
        // Re-seeding per evaluation keeps the mask fixed across probes.
        let y = dropout(t, v[0], rate, &mut SeededRng::new(seed), true)?;
        project(t, y, &r)
    })
}

fn relu_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let shape = [range(rng, 1, 3), range(rng, 1, 8)];
    let x = away_from_zero(rng, &shape, 1e-2);
    let r = random(rng, &shape, -1.0, 1.0);
    check_each(&[x], worst, |t, v| {
        let y = relu(t, v[0])?;
        project(t, y, &r)
    })
}

fn sigmoid_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let shape = [range(rng, 1, 3), range(rng, 1, 8)];
    let x = random(rng, &shape, -4.0, 4.0);
    let r = random(rng, &shape, -1.0, 1.0);
    check_each(&[x], worst, |t, v| {
        let y = sigmoid(t, v[0])?;
        project(t, y, &r)
    })
}

fn squash_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let shape = [range(rng, 1, 3), range(rng, 1, 4), range(rng, 2, 8)];
    let scale = rng.uniform(0.1, 3.0);
    let x = random(rng, &shape, -scale, scale);
    let r = random(rng, &shape, -1.0, 1.0);
    check_each(&[x], worst, |t, v| {
        let y = squash(t, v[0])?;
        project(t, y, &r)
    })
}

fn primary_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let dim = range(rng, 2, 4);
    let types = range(rng, 1, 3);
    let (b, h, w) = (range(rng, 1, 2), range(rng, 1, 3), range(rng, 1, 3));
    let x = random(rng, &[b, types * dim, h, w], -1.0, 1.0);
    let r = random(rng, &[b, types * h * w, dim], -1.0, 1.0);
    check_each(&[x], worst, |t, v| {
        let y = primary_caps(t, v[0], dim)?;
        project(t, y, &r)
    })
}

fn votes_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let (b, ni, nj) = (range(rng, 1, 3), range(rng, 1, 4), range(rng, 1, 3));
    let (di, dout) = (range(rng, 1, 4), range(rng, 1, 5));
    let args = [
        random(rng, &[b, ni, di], -1.0, 1.0),
        random(rng, &[ni, nj, di, dout], -1.0, 1.0),
    ];
    let r = random(rng, &[b, ni, nj, dout], -1.0, 1.0);
    check_each(&args, worst, |t, v| {
        let y = capsule_votes(t, v[0], v[1])?;
        project(t, y, &r)
    })
}

fn routing_trial(rng: &mut SeededRng, worst: &mut Worst, iterations: usize) -> Result<()> {
    let (b, ni, nj, d) = (range(rng, 1, 2), range(rng, 1, 5), range(rng, 1, 4), range(rng, 2, 4));
    let votes = random(rng, &[b, ni, nj, d], -1.0, 1.0);
    let r = random(rng, &[b, nj, d], -1.0, 1.0);
    check_each(&[votes], worst, |t, v| {
        let routed = dynamic_routing(t, v[0], iterations)?;
        project(t, routed.poses, &r)
    })
}

fn routing_1(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    routing_trial(rng, worst, 1)
}

fn routing_2(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    routing_trial(rng, worst, 2)
}

fn routing_3(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    routing_trial(rng, worst, 3)
}

/// Capsule norms kept at least `gap` away from the margin hinges.
fn margin_norms(rng: &mut SeededRng, shape: &[usize], cfg: &CapsLossConfig) -> Tensor<f64> {
    let gap = 1e-3;
    let data = (0..shape.iter().product())
        .map(|_| loop {
            let n = rng.uniform(0.01, 0.99);
            if (n - cfg.m_plus).abs() > gap && (n - cfg.m_minus).abs() > gap {
                break n;
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("positive extents")
}

fn labels(rng: &mut SeededRng, batch: usize, k: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.below(k)).collect()
}

fn margin_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let cfg = CapsLossConfig::vision();
    let (b, k) = (range(rng, 1, 4), range(rng, 2, 6));
    let norms = margin_norms(rng, &[b, k], &cfg);
    let targets = one_hot::<f64>(&labels(rng, b, k), k)?;
    check_each(&[norms], worst, |t, v| {
        let tv = t.constant(targets.clone());
        margin_loss(t, v[0], tv, &cfg)
    })
}

fn reconstruction_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let shape = [range(rng, 1, 3), range(rng, 1, 6), range(rng, 1, 6)];
    let args = [random(rng, &shape, 0.0, 1.0), random(rng, &shape, 0.0, 1.0)];
    check_each(&args, worst, |t, v| reconstruction_loss(t, v[0], v[1]))
}

fn total_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let cfg = CapsLossConfig {
        alpha: rng.uniform(0.0, 1.0),
        ..CapsLossConfig::vision()
    };
    let (b, k) = (range(rng, 1, 3), range(rng, 2, 4));
    let norms = margin_norms(rng, &[b, k], &cfg);
    let targets = one_hot::<f64>(&labels(rng, b, k), k)?;
    let side = range(rng, 2, 4);
    let images = random(rng, &[b, side, side], 0.0, 1.0);
    let recon = random(rng, &[b, side, side], 0.0, 1.0);
    check_each(&[norms, recon], worst, |t, v| {
        let tv = t.constant(targets.clone());
        let m = margin_loss(t, v[0], tv, &cfg)?;
        let x = t.constant(images.clone());
        let r = reconstruction_loss(t, x, v[1])?;
        total_loss(t, m, r, &cfg)
    })
}

fn cross_entropy_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let (b, k) = (range(rng, 1, 4), range(rng, 2, 6));
    let logits = random(rng, &[b, k], -3.0, 3.0);
    let targets = one_hot::<f64>(&labels(rng, b, k), k)?;
    check_each(&[logits], worst, |t, v| {
        let tv = t.constant(targets.clone());
        softmax_cross_entropy(t, v[0], tv)
    })
}

fn decoder_trial(rng: &mut SeededRng, worst: &mut Worst) -> Result<()> {
    let (b, k, d) = (range(rng, 1, 2), range(rng, 2, 3), range(rng, 2, 4));
    let (h1, h2, side) = (range(rng, 2, 5), range(rng, 2, 5), range(rng, 2, 3));
    let poses = random(rng, &[b, k, d], -0.5, 0.5);
    let mask = one_hot::<f64>(&labels(rng, b, k), k)?;
    let shapes: [&[usize]; 6] = [&[k * d, h1], &[h1], &[h1, h2], &[h2], &[h2, side * side], &[side * side]];
    let mut args = vec![poses];
    for s in shapes {
        args.push(random(rng, s, -1.0, 1.0));
    }
    let r = random(rng, &[b, side, side], -1.0, 1.0);
    check_each(&args, worst, |t, v| {
        let vars = DecoderVars {
            layers: [(v[1], v[2]), (v[3], v[4]), (v[5], v[6])],
            image: (side, side),
        };
        let y = decoder_forward(t, v[0], Some(&mask), &vars)?;
        project(t, y, &r)
    })
}

const LAYERS: &[(&str, Trial)] = &[
    ("conv2d_valid", conv_valid),
    ("conv2d_same", conv_same),
    ("maxpool2d", maxpool),
    ("dense", dense_trial),
    ("dropout_inference", dropout_inference),
    ("dropout_fixed_mask", dropout_fixed_mask),
    ("relu", relu_trial),
    ("sigmoid", sigmoid_trial),
    ("squash", squash_trial),
    ("primary_caps", primary_trial),
    ("capsule_votes", votes_trial),
    ("routing_1", routing_1),
    ("routing_2", routing_2),
    ("routing_3", routing_3),
    ("margin_loss", margin_trial),
    ("reconstruction_loss", reconstruction_trial),
    ("total_loss", total_trial),
    ("softmax_cross_entropy", cross_entropy_trial),
    ("decoder", decoder_trial),
];

/// Runs `trials` random instances of every layer check in 64-bit mode.
pub fn layer_suite(trials: usize, seed: u64) -> Result<Vec<LayerReport>> {
    let mut out = Vec::new();
    for (i, (name, trial)) in LAYERS.iter().enumerate() {
        let mut rng = SeededRng::new(seed).fork(i as u64);
        let mut worst = Worst(0.0);
        for _ in 0..trials {
            trial(&mut rng, &mut worst)?;
        }
        out.push(LayerReport {
            layer: (*name).to_string(),
            trials,
            max_rel_error: worst.0,
            kinks: 0,
            worst: None,
        });
    }
    Ok(out)
}

/// Settings for [`model_check`].
#[derive(Clone, Copy, Debug)]
pub struct ModelCheckOptions {
    pub seed: u64,
    pub batch: usize,
    /// Coordinates probed per parameter tensor (all when smaller).
    pub coordinates: usize,
    pub loss: CapsLossConfig,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 1,
            coordinates: 24,
            // Unit reconstruction weight keeps decoder gradients well above
            // the resolution of central differences.
            loss: CapsLossConfig {
                alpha: 1.0,
                ..CapsLossConfig::vision()
            },
        }
    }
}

/// Mean capsule length below which [`model_check`] grows the capsule
/// transform. Freshly initialised capsules are nearly zero, which leaves
/// every absent-class hinge of the margin loss inactive; the check is run
/// where the margin loss acts on all classes instead.
const CHECK_MEAN_NORM: f64 = 0.2;

fn activate_capsules(model: &mut Model<f64>, x: &Tensor<f64>) -> Result<()> {
    let Some(k) = model.params().iter().position(|p| p.name == "caps.weight") else {
        return Ok(());
    };
    for _ in 0..32 {
        let norms = model.predict_proba(x)?;
        if norms.sum() / norms.len() as f64 >= CHECK_MEAN_NORM {
            break;
        }
        let w = model.values_mut().swap_remove(k);
        *w = w.scale(2.0);
    }
    Ok(())
}

/// End-to-end check of a model's training loss, one report per parameter
/// tensor, probing a random subset of coordinates of each. Coordinates that
/// straddle a relu or max-pool kink are skipped and counted; a tensor with
/// more than a quarter of its probes skipped reports an infinite error.
pub fn model_check(config: ModelConfig, opts: &ModelCheckOptions) -> Result<Vec<LayerReport>> {
    let mut rng = SeededRng::new(opts.seed);
    let mut model = Model::<f64>::build(config, &mut rng)?;
    let x = random(&mut rng, &[opts.batch, 1, 28, 28], 0.0, 1.0);
    activate_capsules(&mut model, &x)?;
    let ys = labels(&mut rng, opts.batch, config.num_classes);
    let dropout_seed = rng.next_u64();
    let mut out = Vec::new();
    for (k, p) in model.params().iter().enumerate() {
        let n = p.value.len();
        let coords = if n <= opts.coordinates {
            (0..n).collect()
        } else {
            let mut c = rng.sample_indices(n, opts.coordinates);
            c.sort_unstable();
            c
        };
        let report = check_with_policy(
            |tape, theta| {
                let mut vars = model.bind(tape, false);
                vars[k] = theta;
                let xv = tape.constant(x.clone());
                let targets = tape.constant(one_hot(&ys, config.num_classes)?);
                let mut drop_rng = SeededRng::new(dropout_seed);
                let pass = Pass::Train {
                    rng: &mut drop_rng,
                    labels: &ys,
                };
                let o = model.forward(tape, &vars, xv, pass)?;
                Ok(model.loss(tape, &o, xv, targets, &opts.loss)?.total)
            },
            &p.value,
            MODEL_EPS,
            &coords,
            KinkPolicy::Skip(KINK_TOLERANCE),
        )?;
        let too_many = report.kinks as f64 > MAX_KINK_FRACTION * coords.len() as f64;
        out.push(LayerReport {
            layer: p.name.clone(),
            trials: coords.len(),
            // Too many skipped coordinates leave nothing to vouch for.
            max_rel_error: if too_many { f64::INFINITY } else { report.max_rel_error },
            kinks: report.kinks,
            worst: Some((report.analytic, report.numeric)),
        });
    }
    Ok(out)
}
