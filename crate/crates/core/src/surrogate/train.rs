//! Training on sampler output with the loss
//! `|h-hat^p - h-hat|^2 + |beta^p - beta|^2 + |w - psi^gamma(beta^p)|^2`.
//!
//! Writing `A = 2 (h-hat^p - h-hat)` and
//! `c = 2 (beta^p - beta) - 2 H-hat^gamma(beta^p) (w - psi^gamma(beta^p))`,
//! the parameter gradient of the per-sample loss is
//! `d/dtheta [A h-hat^p(w) + c . grad_w h-hat^p(w)]` with `A`, `c` held
//! fixed, which one tangent sweep along `c` plus a reverse pass computes.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{ArchitectureSpec, EntropyNetwork, NetworkRegistry};
use super::{test_errors, NetworkEntropy, TestErrors, TrainedClosure};
use crate::entropy::{ClosureConfig, EntropyModel};
use crate::quadrature::DEFAULT_ORDER;
use crate::rng::substream;
use crate::sampler::{Dataset, TrainingSample};
use crate::{Error, Result};

// Samples per gradient chunk; chunks are summed in order so the result does
// not depend on the number of threads.
const CHUNK: usize = 32;

fn default_architecture() -> String {
    "icnn".into()
}
fn default_width() -> usize {
    16
}
fn default_depth() -> usize {
    2
}
fn default_epochs() -> usize {
    500
}
fn default_batch_size() -> usize {
    256
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_test_fraction() -> f64 {
    0.1
}
fn default_quad_order() -> usize {
    DEFAULT_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    #[serde(default = "default_architecture")]
    pub architecture: String,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            architecture: default_architecture(),
            width: default_width(),
            depth: default_depth(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            test_fraction: default_test_fraction(),
            seed: 0,
            quad_order: default_quad_order(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(Error::Config("width and depth must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Loss of one sample together with the coefficients of its parameter gradient.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    pub loss: f64,
    pub a: f64,
    pub c: Vec<f64>,
}

pub fn sample_loss(
    net: &dyn EntropyNetwork,
    model: &EntropyModel,
    gamma: f64,
    sample: &TrainingSample,
) -> Result<SampleLoss> {
    let w = sample.w();
    let (h, beta_p) = net.value_and_gradient(w);
    let (psi, hess) = model.psi_with_jacobian(&beta_p, gamma)?;
    let dh = h - sample.h;
    let db: Vec<f64> = beta_p.iter().zip(sample.beta()).map(|(a, b)| a - b).collect();
    let du: Vec<f64> = w.iter().zip(&psi).map(|(a, b)| a - b).collect();
    let loss = dh * dh + db.iter().map(|x| x * x).sum::<f64>() + du.iter().map(|x| x * x).sum::<f64>();
    let n = w.len();
    let c = (0..n)
        .map(|i| 2.0 * db[i] - 2.0 * (0..n).map(|j| hess[(i, j)] * du[j]).sum::<f64>())
        .collect();
    Ok(SampleLoss { loss, a: 2.0 * dh, c })
}

/// Mean loss over `samples` and its gradient with respect to all parameters.
pub fn loss_gradient(
    net: &dyn EntropyNetwork,
    model: &EntropyModel,
    gamma: f64,
    samples: &[&TrainingSample],
) -> Result<(f64, Vec<f64>)> {
    let n_params = net.num_params();
    let parts: Vec<Result<(f64, Vec<f64>)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            for s in chunk {
                let l = sample_loss(net, model, gamma, s)?;
                loss += l.loss;
                net.accumulate_parameter_gradient(s.w(), l.a, &l.c, &mut grad);
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_params];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / samples.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

fn mean_loss(net: &dyn EntropyNetwork, model: &EntropyModel, gamma: f64, samples: &[&TrainingSample]) -> f64 {
    let parts: Vec<f64> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|s| sample_loss(net, model, gamma, s).map_or(f64::NAN, |l| l.loss))
                .sum::<f64>()
        })
        .collect();
    parts.iter().sum::<f64>() / samples.len() as f64
}

/// Deterministic train/test split of `len` indices.
pub(crate) fn split_indices(len: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut substream(seed, "split"));
    let n_test = ((len as f64 * test_fraction).round() as usize).clamp(usize::from(len > 1), len.saturating_sub(1));
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    (train, test)
}

fn input_ranges(samples: &[TrainingSample], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for s in samples {
        for (i, &x) in s.w().iter().enumerate() {
            lo[i] = lo[i].min(x);
            hi[i] = hi[i].max(x);
        }
    }
    (lo, hi)
}

/// Trains a surrogate on a 90/10 (by default) split of `dataset`.
pub fn train(dataset: &Dataset, config: &TrainerConfig) -> Result<TrainedClosure> {
    train_observed(dataset, config, &mut |_, _| {})
}

/// [`train`], calling `observer(epoch, net)` after every optimizer step.
pub fn train_observed(
    dataset: &Dataset,
    config: &TrainerConfig,
    observer: &mut dyn FnMut(usize, &dyn EntropyNetwork),
) -> Result<TrainedClosure> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let n = dataset.order();
    let gamma = dataset.gamma();
    let mut closure_config = ClosureConfig::partially_regularized(n, gamma);
    closure_config.quad_order = config.quad_order;
    let model = EntropyModel::new(closure_config)?;

    let spec = ArchitectureSpec {
        input_dim: n,
        width: config.width,
        depth: config.depth,
    };
    let mut init_rng = substream(config.seed, "init");
    let mut net = NetworkRegistry::default().build_initialized(&config.architecture, spec, &mut init_rng)?;

    let (train_idx, test_idx) = split_indices(dataset.len(), config.test_fraction, config.seed);
    let train_set: Vec<&TrainingSample> = train_idx.iter().map(|&i| &dataset.samples[i]).collect();
    let test_set: Vec<&TrainingSample> = test_idx.iter().map(|&i| &dataset.samples[i]).collect();
    let test_owned: Vec<TrainingSample> = test_set.iter().map(|s| (*s).clone()).collect();
    let (input_min, input_max) = input_ranges(&dataset.samples, n);

    let finish = |net: &dyn EntropyNetwork, epochs: usize, history: Vec<EpochRecord>| -> Result<TrainedClosure> {
        let entropy = NetworkEntropy::new(net.clone_box(), gamma);
        let errors = if test_owned.is_empty() {
            TestErrors::default()
        } else {
            test_errors(&entropy, &test_owned)?
        };
        Ok(TrainedClosure {
            params: net.to_parameters(),
            gamma,
            order: n,
            input_min: input_min.clone(),
            input_max: input_max.clone(),
            dataset: dataset.meta.clone(),
            trainer: config.clone(),
            epochs,
            history,
            test_errors: errors,
        })
    };

    let eval_test = |net: &dyn EntropyNetwork| {
        if test_set.is_empty() {
            f64::NAN
        } else {
            mean_loss(net, &model, gamma, &test_set)
        }
    };

    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: mean_loss(net.as_ref(), &model, gamma, &train_set),
        test_loss: eval_test(net.as_ref()),
    }];
    let mut adam = Adam::new(net.num_params(), config.learning_rate);
    let mut order_rng = substream(config.seed, "batches");
    let mut good = net.clone_box();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut diverged = false;
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<&TrainingSample> = batch.iter().map(|&i| train_set[i]).collect();
            let step = loss_gradient(net.as_ref(), &model, gamma, &samples);
            let (loss, grad) = match step {
                Ok(x) => x,
                Err(Error::Overflow(_)) => (f64::NAN, Vec::new()),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                diverged = true;
                break;
            }
            epoch_loss += loss * samples.len() as f64;
            adam.step(net.params_mut(), &grad);
            net.project();
            observer(epoch, net.as_ref());
        }
        let test_loss = eval_test(net.as_ref());
        if !test_set.is_empty() && !test_loss.is_finite() {
            diverged = true;
        }
        if diverged || net.params().iter().any(|p| !p.is_finite()) {
            let checkpoint = finish(good.as_ref(), epoch - 1, history.clone())?;
            return Err(Error::Diverged {
                epoch,
                checkpoint: Box::new(checkpoint),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            test_loss,
        });
        good = net.clone_box();
    }
    finish(net.as_ref(), config.epochs, history)
}
