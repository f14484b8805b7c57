//! Scalar-output networks `w -> h-hat^p(w)` with exact input gradients and
//! the mixed second-order parameter gradients needed by the training loss.
//!
//! Parameters live in one flat vector described by a list of named tensor
//! slots, which keeps the optimizer, serialization and initialization
//! architecture-agnostic.

use std::collections::BTreeMap;
use std::fmt::Debug;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(sigma, sigma', sigma'')` for softplus.
#[inline]
fn activation(x: f64) -> (f64, f64, f64) {
    let s = logistic(x);
    (softplus(x), s, s * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

fn push_slot(layout: &mut Vec<TensorSlot>, name: String, rows: usize, cols: usize) -> usize {
    let offset = layout.last().map_or(0, |s| s.offset + s.len());
    layout.push(TensorSlot {
        name,
        rows,
        cols,
        offset,
    });
    offset
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub values: Vec<f64>,
}

/// Serializable network weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    pub architecture: String,
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub tensors: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
}

pub trait EntropyNetwork: Send + Sync + Debug {
    fn architecture(&self) -> &'static str;

    fn spec(&self) -> ArchitectureSpec;

    fn layout(&self) -> &[TensorSlot];

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn forward(&self, w: &[f64]) -> f64;

    /// `(h(w), grad_w h(w))`.
    fn value_and_gradient(&self, w: &[f64]) -> (f64, Vec<f64>);

    /// Adds `d/dtheta [a h(w) + c . grad_w h(w)]` to `grad`.
    fn accumulate_parameter_gradient(&self, w: &[f64], a: f64, c: &[f64], grad: &mut [f64]);

    /// Whether the output is convex in the input by construction.
    fn is_input_convex(&self) -> bool;

    /// Restores parameter constraints after an optimizer step.
    fn project(&mut self) {}

    /// Smallest sign-constrained weight, for architectures that have any.
    fn min_constrained_weight(&self) -> Option<f64> {
        None
    }

    fn clone_box(&self) -> Box<dyn EntropyNetwork>;

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    fn initialize(&mut self, rng: &mut dyn rand::RngCore) {
        let slots = self.layout().to_vec();
        let params = self.params_mut();
        for slot in slots {
            let is_bias = slot.name.starts_with('b');
            let normal = Normal::new(0.0, 1.0 / (slot.cols as f64).sqrt()).unwrap();
            for p in &mut params[slot.range()] {
                *p = if is_bias { 0.0 } else { normal.sample(rng) };
            }
        }
        self.project();
    }

    fn to_parameters(&self) -> NetworkParameters {
        let spec = self.spec();
        NetworkParameters {
            architecture: self.architecture().to_string(),
            input_dim: spec.input_dim,
            width: spec.width,
            depth: spec.depth,
            tensors: self
                .layout()
                .iter()
                .map(|s| Tensor {
                    name: s.name.clone(),
                    rows: s.rows,
                    cols: s.cols,
                    values: self.params()[s.range()].to_vec(),
                })
                .collect(),
        }
    }

    fn load_parameters(&mut self, p: &NetworkParameters) -> Result<()> {
        if p.architecture != self.architecture() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.architecture(),
                p.architecture
            )));
        }
        let slots = self.layout().to_vec();
        if slots.len() != p.tensors.len() {
            return Err(Error::Config("tensor count does not match the architecture".into()));
        }
        for (slot, t) in slots.iter().zip(&p.tensors) {
            if slot.name != t.name || slot.rows != t.rows || slot.cols != t.cols || t.values.len() != slot.len() {
                return Err(Error::Config(format!(
                    "tensor `{}` ({}x{}) does not match slot `{}` ({}x{})",
                    t.name, t.rows, t.cols, slot.name, slot.rows, slot.cols
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("tensor `{}` has non-finite entries", t.name)));
            }
        }
        let params = self.params_mut();
        for (slot, t) in slots.iter().zip(&p.tensors) {
            params[slot.range()].copy_from_slice(&t.values);
        }
        Ok(())
    }
}

impl Clone for Box<dyn EntropyNetwork> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

// out += A x, A row-major at p[off..]
fn matvec_add(p: &[f64], off: usize, rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &p[off + i * cols..off + (i + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// out += A^T y
fn matvec_t_add(p: &[f64], off: usize, rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    for (i, &yi) in y.iter().enumerate().take(rows) {
        let row = &p[off + i * cols..off + (i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
}

// g += a b^T + c d^T
fn outer2_add(g: &mut [f64], off: usize, cols: usize, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) {
    for i in 0..a.len() {
        let row = &mut g[off + i * cols..off + (i + 1) * cols];
        for j in 0..cols {
            row[j] += a[i] * b[j] + c[i] * d[j];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward values and directional derivatives of one layer stack.
struct Tape {
    pre: Vec<Vec<f64>>,
    pre_dot: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    z_dot: Vec<Vec<f64>>,
}

/// Input convex network
///
/// ```text
/// z_1 = sigma(W^u_1 w + b_1)
/// z_k = sigma(W^z_k z_{k-1} + W^u_k w + b_k),   k = 2..L
/// h   = w^z . z_L + w^u . w + b
/// ```
///
/// with softplus `sigma` and `W^z >= 0` entrywise. The output layer has no
/// activation so that `h` can take negative values.
#[derive(Debug, Clone)]
pub struct Icnn {
    spec: ArchitectureSpec,
    layout: Vec<TensorSlot>,
    params: Vec<f64>,
    wu: Vec<usize>,
    wz: Vec<usize>,
    b: Vec<usize>,
    out_wz: usize,
    out_wu: usize,
    out_b: usize,
}

impl Icnn {
    pub fn new(spec: ArchitectureSpec) -> Self {
        let ArchitectureSpec {
            input_dim: n,
            width: d,
            depth,
        } = spec;
        let depth = depth.max(1);
        let mut layout = Vec::new();
        let mut wu = Vec::new();
        let mut wz = Vec::new();
        let mut b = Vec::new();
        for k in 0..depth {
            if k > 0 {
                wz.push(push_slot(&mut layout, format!("w_z.{k}"), d, d));
            } else {
                wz.push(usize::MAX);
            }
            wu.push(push_slot(&mut layout, format!("w_u.{k}"), d, n));
            b.push(push_slot(&mut layout, format!("b.{k}"), d, 1));
        }
        let out_wz = push_slot(&mut layout, "w_z.out".into(), 1, d);
        let out_wu = push_slot(&mut layout, "w_u.out".into(), 1, n);
        let out_b = push_slot(&mut layout, "b.out".into(), 1, 1);
        let total = out_b + 1;
        Self {
            spec: ArchitectureSpec {
                input_dim: n,
                width: d,
                depth,
            },
            layout,
            params: vec![0.0; total],
            wu,
            wz,
            b,
            out_wz,
            out_wu,
            out_b,
        }
    }

    fn tape(&self, w: &[f64], c: &[f64]) -> Tape {
        let (n, d) = (self.spec.input_dim, self.spec.width);
        let p = &self.params;
        let mut tape = Tape {
            pre: Vec::with_capacity(self.spec.depth),
            pre_dot: Vec::with_capacity(self.spec.depth),
            z: Vec::with_capacity(self.spec.depth),
            z_dot: Vec::with_capacity(self.spec.depth),
        };
        for k in 0..self.spec.depth {
            let mut a = p[self.b[k]..self.b[k] + d].to_vec();
            let mut ad = vec![0.0; d];
            matvec_add(p, self.wu[k], d, n, w, &mut a);
            matvec_add(p, self.wu[k], d, n, c, &mut ad);
            if k > 0 {
                matvec_add(p, self.wz[k], d, d, &tape.z[k - 1], &mut a);
                matvec_add(p, self.wz[k], d, d, &tape.z_dot[k - 1], &mut ad);
            }
            let mut z = vec![0.0; d];
            let mut zd = vec![0.0; d];
            for i in 0..d {
                let (s, s1, _) = activation(a[i]);
                z[i] = s;
                zd[i] = s1 * ad[i];
            }
            tape.pre.push(a);
            tape.pre_dot.push(ad);
            tape.z.push(z);
            tape.z_dot.push(zd);
        }
        tape
    }

    fn output(&self, w: &[f64], z_last: &[f64]) -> f64 {
        let (n, d) = (self.spec.input_dim, self.spec.width);
        let p = &self.params;
        p[self.out_b] + dot(&p[self.out_wz..self.out_wz + d], z_last) + dot(&p[self.out_wu..self.out_wu + n], w)
    }
}

impl EntropyNetwork for Icnn {
    fn architecture(&self) -> &'static str {
        "icnn"
    }

    fn spec(&self) -> ArchitectureSpec {
        self.spec
    }

    fn layout(&self) -> &[TensorSlot] {
        &self.layout
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, w: &[f64]) -> f64 {
        let zeros = vec![0.0; w.len()];
        let tape = self.tape(w, &zeros);
        self.output(w, tape.z.last().unwrap())
    }

    fn value_and_gradient(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let (n, d) = (self.spec.input_dim, self.spec.width);
        let p = &self.params;
        let zeros = vec![0.0; n];
        let tape = self.tape(w, &zeros);
        let h = self.output(w, tape.z.last().unwrap());
        let mut grad = p[self.out_wu..self.out_wu + n].to_vec();
        let mut zbar = p[self.out_wz..self.out_wz + d].to_vec();
        for k in (0..self.spec.depth).rev() {
            let abar: Vec<f64> = tape.pre[k]
                .iter()
                .zip(&zbar)
                .map(|(&a, zb)| zb * logistic(a))
                .collect();
            matvec_t_add(p, self.wu[k], d, n, &abar, &mut grad);
            if k > 0 {
                zbar = vec![0.0; d];
                matvec_t_add(p, self.wz[k], d, d, &abar, &mut zbar);
            }
        }
        (h, grad)
    }

    fn accumulate_parameter_gradient(&self, w: &[f64], a: f64, c: &[f64], grad: &mut [f64]) {
        let (n, d) = (self.spec.input_dim, self.spec.width);
        let p = &self.params;
        let tape = self.tape(w, c);
        let z_last = tape.z.last().unwrap();
        let zd_last = tape.z_dot.last().unwrap();
        grad[self.out_b] += a;
        for i in 0..d {
            grad[self.out_wz + i] += a * z_last[i] + zd_last[i];
        }
        for j in 0..n {
            grad[self.out_wu + j] += a * w[j] + c[j];
        }
        let mut zbar: Vec<f64> = p[self.out_wz..self.out_wz + d].iter().map(|x| a * x).collect();
        let mut zdbar = p[self.out_wz..self.out_wz + d].to_vec();
        let mut abar = vec![0.0; d];
        let mut adbar = vec![0.0; d];
        for k in (0..self.spec.depth).rev() {
            for i in 0..d {
                let (_, s1, s2) = activation(tape.pre[k][i]);
                abar[i] = zbar[i] * s1 + zdbar[i] * s2 * tape.pre_dot[k][i];
                adbar[i] = zdbar[i] * s1;
            }
            for i in 0..d {
                grad[self.b[k] + i] += abar[i];
            }
            outer2_add(grad, self.wu[k], n, &abar, w, &adbar, c);
            if k > 0 {
                outer2_add(grad, self.wz[k], d, &abar, &tape.z[k - 1], &adbar, &tape.z_dot[k - 1]);
                zbar.iter_mut().for_each(|x| *x = 0.0);
                zdbar.iter_mut().for_each(|x| *x = 0.0);
                matvec_t_add(p, self.wz[k], d, d, &abar, &mut zbar);
                matvec_t_add(p, self.wz[k], d, d, &adbar, &mut zdbar);
            }
        }
    }

    fn is_input_convex(&self) -> bool {
        true
    }

    fn project(&mut self) {
        let d = self.spec.width;
        for k in 1..self.spec.depth {
            for x in &mut self.params[self.wz[k]..self.wz[k] + d * d] {
                *x = x.max(0.0);
            }
        }
        for x in &mut self.params[self.out_wz..self.out_wz + d] {
            *x = x.max(0.0);
        }
    }

    fn min_constrained_weight(&self) -> Option<f64> {
        Some(self.min_wz())
    }

    fn clone_box(&self) -> Box<dyn EntropyNetwork> {
        Box::new(self.clone())
    }
}

impl Icnn {
    /// Smallest entry over all `W^z` blocks, including the output row.
    pub fn min_wz(&self) -> f64 {
        let d = self.spec.width;
        let mut m = f64::INFINITY;
        for k in 1..self.spec.depth {
            m = self.params[self.wz[k]..self.wz[k] + d * d].iter().copied().fold(m, f64::min);
        }
        self.params[self.out_wz..self.out_wz + d].iter().copied().fold(m, f64::min)
    }
}

/// Residual network
///
/// ```text
/// z_0 = W_in w + b_in
/// z_k = sigma(W_k z_{k-1} + b_k) + z_{k-1},   k = 1..L
/// h   = w_out . z_L + b_out
/// ```
///
/// The input lift to the hidden width lets the skip connections type-check
/// for any input dimension.
#[derive(Debug, Clone)]
pub struct ResNet {
    spec: ArchitectureSpec,
    layout: Vec<TensorSlot>,
    params: Vec<f64>,
    w_in: usize,
    b_in: usize,
    w: Vec<usize>,
    b: Vec<usize>,
    w_out: usize,
    b_out: usize,
}

impl ResNet {
    pub fn new(spec: ArchitectureSpec) -> Self {
        let ArchitectureSpec {
            input_dim: n,
            width: d,
            depth,
        } = spec;
        let mut layout = Vec::new();
        let w_in = push_slot(&mut layout, "w.in".into(), d, n);
        let b_in = push_slot(&mut layout, "b.in".into(), d, 1);
        let mut w = Vec::new();
        let mut b = Vec::new();
        for k in 1..=depth {
            w.push(push_slot(&mut layout, format!("w.{k}"), d, d));
            b.push(push_slot(&mut layout, format!("b.{k}"), d, 1));
        }
        let w_out = push_slot(&mut layout, "w.out".into(), 1, d);
        let b_out = push_slot(&mut layout, "b.out".into(), 1, 1);
        Self {
            spec,
            params: vec![0.0; b_out + 1],
            layout,
            w_in,
            b_in,
            w,
            b,
            w_out,
            b_out,
        }
    }

    fn tape(&self, x: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, Tape) {
        let (n, d) = (self.spec.input_dim, self.spec.width);
        let p = &self.params;
        let mut z = p[self.b_in..self.b_in + d].to_vec();
        let mut zd = vec![0.0; d];
        matvec_add(p, self.w_in, d, n, x, &mut z);
        matvec_add(p, self.w_in, d, n, c, &mut zd);
        let (z0, zd0) = (z.clone(), zd.clone());
        let mut tape = Tape {
            pre: Vec::new(),
            pre_dot: Vec::new(),
            z: Vec::new(),
            z_dot: Vec::new(),
        };
        for k in 0..self.spec.depth {
            let mut a = p[self.b[k]..self.b[k] + d].to_vec();
            let mut ad = vec![0.0; d];
            matvec_add(p, self.w[k], d, d, &z, &mut a);
            matvec_add(p, self.w[k], d, d, &zd, &mut ad);
            let mut zn = z.clone();
            let mut zdn = zd.clone();
            for i in 0..d {
                let (s, s1, _) = activation(a[i]);
                zn[i] += s;
                zdn[i] += s1 * ad[i];
            }
            tape.pre.push(a);
            tape.pre_dot.push(ad);
            z = zn;
            zd = zdn;
            tape.z.push(z.clone());
            tape.z_dot.push(zd.clone());
        }
        (z0, zd0, tape)
    }
}

impl EntropyNetwork for ResNet {
    fn architecture(&self) -> &'static str {
        "resnet"
    }

    fn spec(&self) -> ArchitectureSpec {
        self.spec
    }

    fn layout(&self) -> &[TensorSlot] {
        &self.layout
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64]) -> f64 {
        self.value_and_gradient(x).0
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (n, d) = (self.spec.input_dim, self.spec.width);
        let p = &self.params;
        let zeros = vec![0.0; n];
        let (z0, _, tape) = self.tape(x, &zeros);
        let z_last = tape.z.last().unwrap_or(&z0);
        let h = p[self.b_out] + dot(&p[self.w_out..self.w_out + d], z_last);
        let mut zbar = p[self.w_out..self.w_out + d].to_vec();
        for k in (0..self.spec.depth).rev() {
            let abar: Vec<f64> = tape.pre[k].iter().zip(&zbar).map(|(&a, zb)| zb * logistic(a)).collect();
            matvec_t_add(p, self.w[k], d, d, &abar, &mut zbar);
        }
        let mut grad = vec![0.0; n];
        matvec_t_add(p, self.w_in, d, n, &zbar, &mut grad);
        (h, grad)
    }

    fn accumulate_parameter_gradient(&self, x: &[f64], a: f64, c: &[f64], grad: &mut [f64]) {
        let (n, d) = (self.spec.input_dim, self.spec.width);
        let p = &self.params;
        let (z0, zd0, tape) = self.tape(x, c);
        let z_last = tape.z.last().unwrap_or(&z0);
        let zd_last = tape.z_dot.last().unwrap_or(&zd0);
        grad[self.b_out] += a;
        for i in 0..d {
            grad[self.w_out + i] += a * z_last[i] + zd_last[i];
        }
        let mut zbar: Vec<f64> = p[self.w_out..self.w_out + d].iter().map(|v| a * v).collect();
        let mut zdbar = p[self.w_out..self.w_out + d].to_vec();
        let mut abar = vec![0.0; d];
        let mut adbar = vec![0.0; d];
        for k in (0..self.spec.depth).rev() {
            let (z_prev, zd_prev) = if k == 0 {
                (&z0, &zd0)
            } else {
                (&tape.z[k - 1], &tape.z_dot[k - 1])
            };
            for i in 0..d {
                let (_, s1, s2) = activation(tape.pre[k][i]);
                abar[i] = zbar[i] * s1 + zdbar[i] * s2 * tape.pre_dot[k][i];
                adbar[i] = zdbar[i] * s1;
            }
            for i in 0..d {
                grad[self.b[k] + i] += abar[i];
            }
            outer2_add(grad, self.w[k], d, &abar, z_prev, &adbar, zd_prev);
            matvec_t_add(p, self.w[k], d, d, &abar, &mut zbar);
            matvec_t_add(p, self.w[k], d, d, &adbar, &mut zdbar);
        }
        for i in 0..d {
            grad[self.b_in + i] += zbar[i];
        }
        outer2_add(grad, self.w_in, n, &zbar, x, &zdbar, c);
    }

    fn is_input_convex(&self) -> bool {
        false
    }

    fn clone_box(&self) -> Box<dyn EntropyNetwork> {
        Box::new(self.clone())
    }
}

type Builder = fn(ArchitectureSpec) -> Box<dyn EntropyNetwork>;

/// Network architectures selectable by name.
#[derive(Clone)]
pub struct NetworkRegistry {
    builders: BTreeMap<String, Builder>,
}

impl Default for NetworkRegistry {
    fn default() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register("icnn", |s| Box::new(Icnn::new(s)));
        r.register("resnet", |s| Box::new(ResNet::new(s)));
        r
    }
}

impl NetworkRegistry {
    pub fn register(&mut self, name: &str, builder: Builder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    /// Zero-initialized network of the named architecture.
    pub fn build(&self, name: &str, spec: ArchitectureSpec) -> Result<Box<dyn EntropyNetwork>> {
        if spec.input_dim == 0 || spec.width == 0 {
            return Err(Error::Config("network input_dim and width must be positive".into()));
        }
        let builder = self.builders.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown architecture `{name}`; available: {}",
                self.names().join(", ")
            ))
        })?;
        Ok(builder(spec))
    }

    /// Randomly initialized network.
    pub fn build_initialized<R: Rng>(
        &self,
        name: &str,
        spec: ArchitectureSpec,
        rng: &mut R,
    ) -> Result<Box<dyn EntropyNetwork>> {
        let mut net = self.build(name, spec)?;
        net.initialize(rng);
        Ok(net)
    }

    pub fn from_parameters(&self, p: &NetworkParameters) -> Result<Box<dyn EntropyNetwork>> {
        let mut net = self.build(
            &p.architecture,
            ArchitectureSpec {
                input_dim: p.input_dim,
                width: p.width,
                depth: p.depth,
            },
        )?;
        net.load_parameters(p)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn random_net(arch: &str, n: usize, d: usize, depth: usize, seed: u64) -> Box<dyn EntropyNetwork> {
        let mut rng = substream(seed, "net");
        let spec = ArchitectureSpec {
            input_dim: n,
            width: d,
            depth,
        };
        let mut net = NetworkRegistry::default().build_initialized(arch, spec, &mut rng).unwrap();
        // nonzero biases exercise more code paths
        let slots = net.layout().to_vec();
        for s in slots.iter().filter(|s| s.name.starts_with('b')) {
            for i in s.range() {
                net.params_mut()[i] = rng.random_range(-0.5..0.5);
            }
        }
        net
    }

    fn random_point(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
    }

    #[test]
    fn single_hidden_unit_closed_form() {
        let spec = ArchitectureSpec {
            input_dim: 1,
            width: 1,
            depth: 1,
        };
        let mut net = Icnn::new(spec);
        // h = 2 softplus(3 w + 1) - w + 0.5
        let p = NetworkParameters {
            architecture: "icnn".into(),
            input_dim: 1,
            width: 1,
            depth: 1,
            tensors: vec![
                Tensor { name: "w_u.0".into(), rows: 1, cols: 1, values: vec![3.0] },
                Tensor { name: "b.0".into(), rows: 1, cols: 1, values: vec![1.0] },
                Tensor { name: "w_z.out".into(), rows: 1, cols: 1, values: vec![2.0] },
                Tensor { name: "w_u.out".into(), rows: 1, cols: 1, values: vec![-1.0] },
                Tensor { name: "b.out".into(), rows: 1, cols: 1, values: vec![0.5] },
            ],
        };
        net.load_parameters(&p).unwrap();
        let w = 0.3;
        let expected = 2.0 * softplus(3.0 * w + 1.0) - w + 0.5;
        assert!((net.forward(&[w]) - expected).abs() < 1e-15);
        let (_, g) = net.value_and_gradient(&[w]);
        assert!((g[0] - (6.0 * logistic(3.0 * w + 1.0) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn linear_network_has_constant_gradient() {
        let spec = ArchitectureSpec {
            input_dim: 3,
            width: 4,
            depth: 2,
        };
        let mut net = Icnn::new(spec);
        let row = [0.5, -2.0, 1.5];
        let off = net.out_wu;
        net.params_mut()[off..off + 3].copy_from_slice(&row);
        let mut rng = substream(3, "lin");
        for _ in 0..5 {
            let (_, g) = net.value_and_gradient(&random_point(3, &mut rng));
            assert_eq!(g, row.to_vec());
        }
    }

    #[test]
    fn zero_input_weights_reduce_to_first_layer_composition() {
        let mut net = random_net("icnn", 2, 3, 3, 8);
        let d = 3;
        for k in 1..3 {
            let off = net.as_ref().layout().iter().find(|s| s.name == format!("w_u.{k}")).unwrap().offset;
            for x in &mut net.params_mut()[off..off + d * 2] {
                *x = 0.0;
            }
        }
        let net2 = net.clone();
        let w = [0.2, -0.7];
        let p = net2.params();
        let find = |name: &str| net2.layout().iter().find(|s| s.name == name).unwrap().clone();
        let mut z = p[find("b.0").range()].to_vec();
        matvec_add(p, find("w_u.0").offset, d, 2, &w, &mut z);
        z.iter_mut().for_each(|x| *x = softplus(*x));
        for k in 1..3 {
            let mut a = p[find(&format!("b.{k}")).range()].to_vec();
            matvec_add(p, find(&format!("w_z.{k}")).offset, d, d, &z, &mut a);
            z = a.into_iter().map(softplus).collect();
        }
        let expected = p[find("b.out").offset] + dot(&p[find("w_z.out").range()], &z) + dot(&p[find("w_u.out").range()], &w);
        assert!((net.forward(&w) - expected).abs() < 1e-14);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = substream(4, "points");
        for i in 0..100 {
            let arch = if i % 2 == 0 { "icnn" } else { "resnet" };
            let n = 1 + i % 4;
            let net = random_net(arch, n, 5, 1 + i % 3, i as u64);
            let w = random_point(n, &mut rng);
            let (h, g) = net.value_and_gradient(&w);
            assert!((h - net.forward(&w)).abs() < 1e-14);
            for j in 0..n {
                let step = 1e-6;
                let mut p = w.clone();
                let mut m = w.clone();
                p[j] += step;
                m[j] -= step;
                let fd = (net.forward(&p) - net.forward(&m)) / (2.0 * step);
                assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()), "{arch}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = substream(5, "points");
        for i in 0..20 {
            let arch = if i % 2 == 0 { "icnn" } else { "resnet" };
            let n = 1 + i % 3;
            let net = random_net(arch, n, 4, 2, 100 + i as u64);
            let w = random_point(n, &mut rng);
            let c = random_point(n, &mut rng);
            let a = rng.random_range(-2.0..2.0);
            let mut grad = vec![0.0; net.num_params()];
            net.accumulate_parameter_gradient(&w, a, &c, &mut grad);
            let objective = |net: &dyn EntropyNetwork| {
                let (h, g) = net.value_and_gradient(&w);
                a * h + dot(&c, &g)
            };
            let mut probe = net.clone();
            for k in 0..grad.len() {
                let x = probe.params()[k];
                let step = 1e-5 * (1.0 + x.abs());
                probe.params_mut()[k] = x + step;
                let fp = objective(probe.as_ref());
                probe.params_mut()[k] = x - step;
                let fm = objective(probe.as_ref());
                probe.params_mut()[k] = x;
                let fd = (fp - fm) / (2.0 * step);
                assert!((fd - grad[k]).abs() <= 1e-6 * (1.0 + grad[k].abs()), "{arch} param {k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn icnn_is_midpoint_convex() {
        let net = random_net("icnn", 2, 8, 3, 77);
        let mut rng = substream(6, "pairs");
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = net.forward(&mid);
            let rhs = 0.5 * (net.forward(&x) + net.forward(&y));
            assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn icnn_directional_derivative_is_monotone() {
        let net = random_net("icnn", 3, 6, 2, 78);
        let mut rng = substream(7, "lines");
        for _ in 0..50 {
            let x = random_point(3, &mut rng);
            let dir = random_point(3, &mut rng);
            let mut prev = f64::NEG_INFINITY;
            for s in 0..=20 {
                let t = -2.0 + 0.2 * s as f64;
                let p: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let d = dot(&net.value_and_gradient(&p).1, &dir);
                assert!(d >= prev - 1e-12);
                prev = d;
            }
        }
    }

    #[test]
    fn projection_clamps_wz() {
        let mut net = Icnn::new(ArchitectureSpec {
            input_dim: 2,
            width: 3,
            depth: 3,
        });
        for x in net.params_mut() {
            *x = -1.0;
        }
        net.project();
        assert_eq!(net.min_wz(), 0.0);
        assert!(net.params().iter().any(|&x| x < 0.0));
    }

    #[test]
    fn parameters_round_trip_through_registry() {
        let reg = NetworkRegistry::default();
        assert_eq!(reg.names(), vec!["icnn", "resnet"]);
        for arch in ["icnn", "resnet"] {
            let net = random_net(arch, 2, 3, 2, 9);
            let json = serde_json::to_string(&net.to_parameters()).unwrap();
            let p: NetworkParameters = serde_json::from_str(&json).unwrap();
            let back = reg.from_parameters(&p).unwrap();
            assert_eq!(back.params(), net.params());
        }
        assert!(reg.build("mlp", ArchitectureSpec { input_dim: 1, width: 1, depth: 1 }).is_err());
        let mut p = random_net("icnn", 2, 3, 2, 9).to_parameters();
        p.tensors[0].values.pop();
        assert!(reg.from_parameters(&p).is_err());
    }
}
