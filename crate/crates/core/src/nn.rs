//! Named parameters, affine layers and the GRU cell.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Real;

/// Index of a parameter within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Ordered collection of all model parameters. The order is the creation
/// order and is part of the determinism contract: checkpoints, Adam state
/// and tape bindings all index by it.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = T::zero();
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: Tensor::zeros(p.grad.shape()),
                })
                .collect(),
        }
    }
}

/// Parameters bound onto a tape as leaves, in [`ParamSet`] order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Push every parameter value onto the tape.
    pub fn bind<T: Real>(tape: &mut Tape<T>, set: &ParamSet<T>) -> Self {
        let vars = set.iter().map(|p| tape.leaf(p.value.clone())).collect();
        Self { vars }
    }

    /// Adopt pre-created leaf vars (used by the gradient checker, which
    /// perturbs the leaves itself).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Add the tape gradients of every bound parameter into `set.grad`,
    /// scaled by `scale` (batch averaging happens here).
    pub fn accumulate_grads<T: Real>(
        &self,
        tape: &Tape<T>,
        grads: &crate::tape::Grads<T>,
        set: &mut ParamSet<T>,
        scale: T,
    ) {
        let _ = tape;
        for (i, p) in set.iter_mut().enumerate() {
            if let Some(g) = grads.get(self.vars[i]) {
                for (acc, x) in p.grad.data_mut().iter_mut().zip(g) {
                    *acc = *acc + *x * scale;
                }
            }
        }
    }
}

/// y = x·W (+ b), gradients defined for x, W and b.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl AffineLayer {
    /// Uniform(-1/sqrt(in_dim), +1/sqrt(in_dim)) weights, zero bias.
    pub fn init<T: Real>(
        set: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut SplitMix64,
    ) -> Self {
        let w = set.add(alloc::format!("{name}.w"), init_uniform(&[in_dim, out_dim], in_dim, rng));
        let b = bias.then(|| set.add(alloc::format!("{name}.b"), Tensor::zeros(&[out_dim])));
        Self { w, b, in_dim, out_dim }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, bp: &BoundParams, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bp.var(self.w))?;
        match self.b {
            Some(b) => tape.add_row_vec(y, bp.var(b)),
            None => Ok(y),
        }
    }
}

/// Standard GRU cell:
/// z = sigma(x·Wz + h·Uz + bz), r = sigma(x·Wr + h·Ur + br),
/// cand = tanh(x·Wh + (r ⊙ h)·Uh + bh), h' = (1-z) ⊙ h + z ⊙ cand.
#[derive(Debug, Clone)]
pub struct GruCellParams {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
    pub width: usize,
}

impl GruCellParams {
    pub fn init<T: Real>(
        set: &mut ParamSet<T>,
        name: &str,
        width: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let mat = |suffix: &str, s: &mut ParamSet<T>, r: &mut SplitMix64| {
            s.add(alloc::format!("{name}.{suffix}"), init_uniform(&[width, width], width, r))
        };
        let wz = mat("wz", set, rng);
        let uz = mat("uz", set, rng);
        let bz = set.add(alloc::format!("{name}.bz"), Tensor::zeros(&[width]));
        let wr = mat("wr", set, rng);
        let ur = mat("ur", set, rng);
        let br = set.add(alloc::format!("{name}.br"), Tensor::zeros(&[width]));
        let wh = mat("wh", set, rng);
        let uh = mat("uh", set, rng);
        let bh = set.add(alloc::format!("{name}.bh"), Tensor::zeros(&[width]));
        Self { wz, uz, bz, wr, ur, br, wh, uh, bh, width }
    }

    /// One recurrence step. `x` and `h_prev` are rows of width D.
    pub fn step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bp: &BoundParams,
        x: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let cx = tape.shape(x).last().copied().unwrap_or(0);
        if cx != self.width || tape.shape(h_prev).last() != Some(&self.width) {
            return Err(CoreError::ShapeMismatch {
                op: "gru_step",
                lhs: tape.shape(x).to_vec(),
                rhs: tape.shape(h_prev).to_vec(),
            });
        }
        let gate = |tape: &mut Tape<T>, w, u, b, x, h| -> Result<Var> {
            let xi = tape.matmul(x, bp.var(w))?;
            let hi = tape.matmul(h, bp.var(u))?;
            let s = tape.add(xi, hi)?;
            tape.add_row_vec(s, bp.var(b))
        };
        let z_pre = gate(tape, self.wz, self.uz, self.bz, x, h_prev)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate(tape, self.wr, self.ur, self.br, x, h_prev)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h_prev)?;
        let cand_pre = gate(tape, self.wh, self.uh, self.bh, x, rh)?;
        let cand = tape.tanh(cand_pre)?;
        // h' = h + z ⊙ (cand - h)
        let delta = tape.sub(cand, h_prev)?;
        let zd = tape.mul(z, delta)?;
        tape.add(h_prev, zd)
    }
}

fn init_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut SplitMix64) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("init shape")
}
