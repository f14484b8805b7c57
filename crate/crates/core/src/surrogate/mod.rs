//! Neural approximations `h-hat^p` of the reduced entropy, their training and
//! closure inference.
//!
//! A closure only needs `w -> (h-hat(w), grad h-hat(w))` on normalized
//! fruncated moments; [`ReducedEntropy`] captures that and is implemented
//! both by trained networks and by the Newton solver, so error metrics and
//! inference treat them alike.

mod network;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use network::{
    softplus, ArchitectureSpec, EntropyNetwork, Icnn, NetworkParameters, NetworkRegistry, ResNet,
    Tensor, TensorSlot,
};
pub use train::{
    loss_gradient, sample_loss, train, train_observed, Adam, EpochRecord, SampleLoss, TrainerConfig,
};

use crate::basis::{normalize, BasisSpec, M0};
use crate::entropy::{ClosureConfig, EntropyModel};
use crate::quadrature::DEFAULT_ORDER;
use crate::sampler::{DatasetMeta, TrainingSample};
use crate::{Error, Result};

pub trait ReducedEntropy: Send + Sync {
    fn order(&self) -> usize;

    /// Regularization the approximation targets.
    fn gamma(&self) -> f64;

    /// `(h-hat(w), grad_w h-hat(w))`.
    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// The exact reduced entropy, computed by Newton's method.
#[derive(Debug, Clone)]
pub struct NewtonEntropy {
    model: EntropyModel,
    gamma: f64,
}

impl NewtonEntropy {
    pub fn new(order: usize, gamma: f64) -> Result<Self> {
        Self::with_config(ClosureConfig::partially_regularized(order, gamma))
    }

    pub fn with_config(config: ClosureConfig) -> Result<Self> {
        let gamma = config.gamma();
        Ok(Self {
            model: EntropyModel::new(config)?,
            gamma,
        })
    }

    pub fn model(&self) -> &EntropyModel {
        &self.model
    }
}

impl ReducedEntropy for NewtonEntropy {
    fn order(&self) -> usize {
        self.model.order()
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.reduced_entropy(w, self.gamma)
    }
}

/// A network paired with the regularization it was trained for.
#[derive(Debug, Clone)]
pub struct NetworkEntropy {
    net: Box<dyn EntropyNetwork>,
    gamma: f64,
}

impl NetworkEntropy {
    pub fn new(net: Box<dyn EntropyNetwork>, gamma: f64) -> Self {
        Self { net, gamma }
    }

    pub fn network(&self) -> &dyn EntropyNetwork {
        self.net.as_ref()
    }
}

impl ReducedEntropy for NetworkEntropy {
    fn order(&self) -> usize {
        self.net.spec().input_dim
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        if w.len() != self.order() {
            return Err(Error::Domain(format!(
                "network expects {} inputs, got {}",
                self.order(),
                w.len()
            )));
        }
        Ok(self.net.value_and_gradient(w))
    }
}

/// Closure output for one moment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Entropy gradient `g^p_u`.
    pub g: Vec<f64>,
    /// Extended entropy `h^p(u) = u_0 h-hat^p + u_0 log u_0`.
    pub h: f64,
    pub beta: Vec<f64>,
}

impl Inference {
    /// `v -> exp(g . m(v))`.
    pub fn density(&self) -> impl Fn(f64) -> f64 + '_ {
        let spec = BasisSpec::new(self.g.len() - 1).expect("g has at least two entries");
        move |v| {
            let m = spec.evaluate(v);
            self.g.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>().exp()
        }
    }
}

/// Gradient reconstruction of the extended entropy at `u` (requires `u_0 > 0`):
/// `g = [h-hat - w . beta + (log u_0 + 1) / m_0, beta]` with `w = u-bar_#`.
pub fn infer(closure: &dyn ReducedEntropy, u: &[f64]) -> Result<Inference> {
    if u.len() != closure.order() + 1 {
        return Err(Error::Domain(format!(
            "moment vector has length {}, closure expects {}",
            u.len(),
            closure.order() + 1
        )));
    }
    let u_bar = normalize(u)?;
    let w = &u_bar[1..];
    let (h_hat, beta) = closure.evaluate(w)?;
    let u0 = u[0];
    let wb: f64 = w.iter().zip(&beta).map(|(a, b)| a * b).sum();
    let mut g = Vec::with_capacity(u.len());
    g.push(h_hat - wb + (u0.ln() + 1.0) / M0);
    g.extend_from_slice(&beta);
    Ok(Inference {
        g,
        h: u0 * h_hat + u0 / M0 * u0.ln(),
        beta,
    })
}

/// Mean squared errors of a surrogate on a labelled set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TestErrors {
    pub e_h: f64,
    pub e_beta: f64,
    pub e_u: f64,
}

/// Errors against samples labelled at the closure's own `gamma`; the moment
/// error uses `psi^gamma(beta^p)`.
pub fn test_errors(closure: &dyn ReducedEntropy, samples: &[TrainingSample]) -> Result<TestErrors> {
    errors_with_psi(closure, samples, closure.gamma())
}

/// Combined approximation and regularization errors against samples
/// labelled with the non-regularized closure; the moment error uses
/// `psi^0(beta^p)`.
pub fn combined_test_errors(
    closure: &dyn ReducedEntropy,
    reference: &[TrainingSample],
) -> Result<TestErrors> {
    errors_with_psi(closure, reference, 0.0)
}

fn errors_with_psi(closure: &dyn ReducedEntropy, samples: &[TrainingSample], psi_gamma: f64) -> Result<TestErrors> {
    if samples.is_empty() {
        return Err(Error::Domain("test set is empty".into()));
    }
    let mut config = ClosureConfig::partially_regularized(closure.order(), psi_gamma);
    config.quad_order = DEFAULT_ORDER;
    let model = EntropyModel::new(config)?;
    let mut acc = TestErrors::default();
    for s in samples {
        let w = s.w();
        let (h, beta) = closure.evaluate(w)?;
        acc.e_h += (s.h - h).powi(2);
        acc.e_beta += s.beta().iter().zip(&beta).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let psi = model.psi(&beta, psi_gamma)?;
        acc.e_u += w.iter().zip(&psi).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let t = samples.len() as f64;
    Ok(TestErrors {
        e_h: acc.e_h / t,
        e_beta: acc.e_beta / t,
        e_u: acc.e_u / t,
    })
}

/// A trained surrogate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClosure {
    pub params: NetworkParameters,
    pub gamma: f64,
    pub order: usize,
    /// Per-coordinate range of the training inputs.
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub dataset: DatasetMeta,
    pub trainer: TrainerConfig,
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub test_errors: TestErrors,
}

impl TrainedClosure {
    pub fn network(&self) -> Result<Box<dyn EntropyNetwork>> {
        NetworkRegistry::default().from_parameters(&self.params)
    }

    pub fn entropy(&self) -> Result<NetworkEntropy> {
        Ok(NetworkEntropy::new(self.network()?, self.gamma))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let closure: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if closure.gamma != closure.dataset.gamma {
            return Err(Error::Metadata(format!(
                "model gamma {} differs from its dataset gamma {}",
                closure.gamma, closure.dataset.gamma
            )));
        }
        closure.network()?;
        Ok(closure)
    }
}

#[cfg(test)]
mod tests;
