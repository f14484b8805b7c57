//! Moment closures for the transport solver: each maps a moment vector to a
//! kinetic density at the quadrature nodes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSpec, BasisTable};
use crate::entropy::{ClosureConfig, EntropyModel, OVERFLOW_LIMIT};
use crate::quadrature::{QuadratureRule, DEFAULT_ORDER};
use crate::surrogate::{infer, NetworkEntropy, TrainedClosure};
use crate::{Error, Result};

pub trait Closure: Send + Sync {
    fn name(&self) -> &str;

    /// Moment order `N`.
    fn order(&self) -> usize;

    /// Basis and quadrature used for brackets.
    fn table(&self) -> &BasisTable;

    /// Kinetic density `f_u` at the nodes of [`Closure::table`].
    fn density_at_nodes(&self, u: &[f64]) -> Result<Vec<f64>>;

    /// Entropy `h(u)`, or `None` for closures without one.
    fn entropy(&self, u: &[f64]) -> Option<Result<f64>>;

    /// Whether the closure needs `u_0 > 0` (and the solver floors it).
    fn requires_positive_density(&self) -> bool;
}

/// Linear reconstruction `f = (G^-1 u) . m` with the Gram matrix
/// `G = <m m^T>`.
pub struct PnClosure {
    table: BasisTable,
    gram_inv: DMatrix<f64>,
}

impl PnClosure {
    pub fn new(order: usize, quad_order: usize) -> Result<Self> {
        let table = BasisTable::new(BasisSpec::new(order)?, QuadratureRule::new(quad_order)?);
        let d = table.dim();
        let mut gram = DMatrix::zeros(d, d);
        for (k, &w) in table.rule().weights().iter().enumerate() {
            let m = table.at(k);
            for i in 0..d {
                for j in 0..d {
                    gram[(i, j)] += w * m[i] * m[j];
                }
            }
        }
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Config("P_N Gram matrix is singular; raise quad_order".into()))?;
        Ok(Self { table, gram_inv })
    }
}

impl Closure for PnClosure {
    fn name(&self) -> &str {
        "pn"
    }

    fn order(&self) -> usize {
        self.table.order()
    }

    fn table(&self) -> &BasisTable {
        &self.table
    }

    fn density_at_nodes(&self, u: &[f64]) -> Result<Vec<f64>> {
        let c = &self.gram_inv * DVector::from_column_slice(u);
        Ok((0..self.table.rule().order())
            .map(|k| self.table.at(k).iter().zip(c.iter()).map(|(m, c)| m * c).sum())
            .collect())
    }

    fn entropy(&self, _u: &[f64]) -> Option<Result<f64>> {
        None
    }

    fn requires_positive_density(&self) -> bool {
        false
    }
}

/// Entropy closure with multipliers from Newton's method, using the
/// `g`-based ansatz `exp(g . m)`.
pub struct NewtonClosure {
    model: EntropyModel,
    gamma: f64,
}

impl NewtonClosure {
    pub fn new(config: ClosureConfig) -> Result<Self> {
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

impl Closure for NewtonClosure {
    fn name(&self) -> &str {
        "mn-newton"
    }

    fn order(&self) -> usize {
        self.model.order()
    }

    fn table(&self) -> &BasisTable {
        self.model.table()
    }

    fn density_at_nodes(&self, u: &[f64]) -> Result<Vec<f64>> {
        let sol = self.model.solve_with_gamma(u, self.gamma)?;
        self.model.density_at_nodes(&sol.g)
    }

    fn entropy(&self, u: &[f64]) -> Option<Result<f64>> {
        Some(self.model.solve_with_gamma(u, self.gamma).map(|s| s.h))
    }

    fn requires_positive_density(&self) -> bool {
        true
    }
}

/// Entropy closure driven by a trained surrogate.
pub struct NetworkClosure {
    entropy: NetworkEntropy,
    table: BasisTable,
}

impl NetworkClosure {
    pub fn new(trained: &TrainedClosure, quad_order: usize) -> Result<Self> {
        let table = BasisTable::new(BasisSpec::new(trained.order)?, QuadratureRule::new(quad_order)?);
        Ok(Self {
            entropy: trained.entropy()?,
            table,
        })
    }
}

impl Closure for NetworkClosure {
    fn name(&self) -> &str {
        "mn-network"
    }

    fn order(&self) -> usize {
        self.table.order()
    }

    fn table(&self) -> &BasisTable {
        &self.table
    }

    fn density_at_nodes(&self, u: &[f64]) -> Result<Vec<f64>> {
        let inf = infer(&self.entropy, u)?;
        (0..self.table.rule().order())
            .map(|k| {
                let s: f64 = inf.g.iter().zip(self.table.at(k)).map(|(a, b)| a * b).sum();
                if !(s <= OVERFLOW_LIMIT) {
                    return Err(Error::Overflow(format!("network ansatz exponent {s}")));
                }
                Ok(s.exp())
            })
            .collect()
    }

    fn entropy(&self, u: &[f64]) -> Option<Result<f64>> {
        Some(infer(&self.entropy, u).map(|i| i.h))
    }

    fn requires_positive_density(&self) -> bool {
        true
    }
}

/// Everything a closure builder may need.
#[derive(Debug, Clone)]
pub struct ClosureRequest {
    pub order: usize,
    pub gamma: f64,
    pub quad_order: usize,
    pub model: Option<TrainedClosure>,
}

impl ClosureRequest {
    pub fn new(order: usize, gamma: f64) -> Self {
        Self {
            order,
            gamma,
            quad_order: DEFAULT_ORDER,
            model: None,
        }
    }
}

type Builder = fn(&ClosureRequest) -> Result<Box<dyn Closure>>;

/// Closures selectable by name.
#[derive(Clone)]
pub struct ClosureRegistry {
    builders: BTreeMap<String, Builder>,
}

impl Default for ClosureRegistry {
    fn default() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register("pn", |req| Ok(Box::new(PnClosure::new(req.order, req.quad_order)?)));
        r.register("mn-newton", |req| {
            let mut c = ClosureConfig::partially_regularized(req.order, req.gamma);
            c.quad_order = req.quad_order;
            Ok(Box::new(NewtonClosure::new(c)?))
        });
        r.register("mn-network", |req| {
            let model = req
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("mn-network needs a trained model".into()))?;
            if model.order != req.order {
                return Err(Error::Config(format!(
                    "model has order {}, run requests order {}",
                    model.order, req.order
                )));
            }
            Ok(Box::new(NetworkClosure::new(model, req.quad_order)?))
        });
        r
    }
}

impl ClosureRegistry {
    pub fn register(&mut self, name: &str, builder: Builder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, request: &ClosureRequest) -> Result<Box<dyn Closure>> {
        let b = self.builders.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown closure `{name}`; available: {}",
                self.names().join(", ")
            ))
        })?;
        b(request)
    }
}
