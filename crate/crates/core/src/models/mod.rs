//! The three generative architectures and their losses.
//!
//! All three models share the same variational skeleton: an encoder emits
//! diagonal-Gaussian latents, samples are drawn by reparameterization, the
//! decoder reconstructs, and the loss is per-step MSE plus KL terms against
//! a standard-normal prior. The split models (S-VAE, S-VRNN) carve the
//! latent into a primary subspace whose KL penalty only applies to support
//! data, and a shared subspace regularized on everything.
//!
//! Layer widths follow the reference architectures; only the data-dependent
//! extents (encoder input, convolution geometry) scale with the grid.

mod svae;
mod svrnn;
mod vrnn;

pub use svae::SvaeArch;
pub use svrnn::SvrnnArch;
pub use vrnn::VrnnArch;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::field::{meta, Dataset, Datum, FieldError, Provenance};
use crate::rng::RngStream;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("datum geometry {got:?} does not match architecture {expected:?}")]
    GeometryMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("parameter {name:?} missing from parameter set")]
    MissingParam { name: String },
    #[error("noise draws do not match the model: {detail}")]
    EpsMismatch { detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Svae,
    Vrnn,
    Svrnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svae => "svae",
            ModelKind::Vrnn => "vrnn",
            ModelKind::Svrnn => "svrnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "svae" => Some(ModelKind::Svae),
            "vrnn" => Some(ModelKind::Vrnn),
            "svrnn" => Some(ModelKind::Svrnn),
            _ => None,
        }
    }

    /// Display label used in report rows.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Svae => "S-VAE",
            ModelKind::Vrnn => "VRNN",
            ModelKind::Svrnn => "S-VRNN",
        }
    }
}

/// Ordered, named parameter tensors for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// All parameters registered on a tape, in [`ParamSet`] order.
pub(crate) struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Bind as differentiable leaves (training) or constants (generation).
    pub(crate) fn bind<'a>(tape: &mut Tape<'a>, params: &'a ParamSet, trainable: bool) -> Self {
        let vars = params
            .tensors()
            .iter()
            .map(|t| if trainable { tape.param(t) } else { tape.input(t) })
            .collect();
        Self { vars }
    }

    pub(crate) fn var(&self, params: &ParamSet, name: &str) -> Result<Var, ModelError> {
        params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam {
                name: name.to_string(),
            })
    }

    pub(crate) fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Loss components for one datum. `total` is exactly the sum of the three
/// fields; `kl_primary` is already gated, i.e. it is zero for real data in
/// the split models and zero always for the VRNN's unsplit latent
/// (`kl_primary` then carries the sole KL term and `kl_shared` is zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl_primary: f64,
    pub kl_shared: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        Self {
            reconstruction: 0.0,
            kl_primary: 0.0,
            kl_shared: 0.0,
            total: 0.0,
        }
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.reconstruction += other.reconstruction;
        self.kl_primary += other.kl_primary;
        self.kl_shared += other.kl_shared;
        self.total += other.total;
    }

    pub fn scale(&mut self, s: f64) {
        self.reconstruction *= s;
        self.kl_primary *= s;
        self.kl_shared *= s;
        self.total *= s;
    }
}

/// Architecture descriptor: everything needed to rebuild parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Vrnn(VrnnArch),
    Svrnn(SvrnnArch),
    Svae(SvaeArch),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Vrnn(_) => ModelKind::Vrnn,
            ModelSpec::Svrnn(_) => ModelKind::Svrnn,
            ModelSpec::Svae(_) => ModelKind::Svae,
        }
    }

    pub fn grid_side(&self) -> usize {
        match self {
            ModelSpec::Vrnn(a) => a.grid_side,
            ModelSpec::Svrnn(a) => a.grid_side,
            ModelSpec::Svae(a) => a.grid_side,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ModelSpec::Vrnn(a) => a.horizon,
            ModelSpec::Svrnn(a) => a.horizon,
            ModelSpec::Svae(a) => a.horizon,
        }
    }

    pub fn n_g(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Paper-scale architecture of the given kind.
    pub fn paper(kind: ModelKind, grid_side: usize, horizon: usize) -> Self {
        match kind {
            ModelKind::Vrnn => ModelSpec::Vrnn(VrnnArch::paper(grid_side, horizon)),
            ModelKind::Svrnn => ModelSpec::Svrnn(SvrnnArch::paper(grid_side, horizon)),
            ModelKind::Svae => ModelSpec::Svae(SvaeArch::paper(grid_side, horizon)),
        }
    }

    /// Expected parameter names and shapes, in registration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            ModelSpec::Vrnn(a) => a.param_shapes(),
            ModelSpec::Svrnn(a) => a.param_shapes(),
            ModelSpec::Svae(a) => a.param_shapes(),
        }
    }
}

/// Per-datum reparameterization noise, pre-drawn so that batch items can be
/// processed in parallel without touching the training RNG.
#[derive(Debug, Clone)]
pub enum EpsDraws {
    /// One `[latent]` draw per time step.
    Vrnn(Vec<Tensor>),
    /// One `([latent_1], [latent_2])` pair per time step.
    Svrnn(Vec<(Tensor, Tensor)>),
    /// One draw per latent subspace.
    Svae(Tensor, Tensor),
}

/// A model: architecture plus named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

/// Uniform(+-1/sqrt(fan_in)) weight initialization.
pub(crate) fn init_weight(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("counted")
}

impl Model {
    /// Fresh model with uniform fan-in weights, zero biases, and unit
    /// layer-norm gains.
    pub fn init(spec: ModelSpec, rng: &mut RngStream) -> Self {
        let params = match &spec {
            ModelSpec::Vrnn(a) => a.init_params(rng),
            ModelSpec::Svrnn(a) => a.init_params(rng),
            ModelSpec::Svae(a) => a.init_params(rng),
        };
        Self { spec, params }
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    fn check_datum(&self, datum: &Datum) -> Result<(), ModelError> {
        let expected = vec![self.spec.horizon(), self.spec.n_g()];
        let got = vec![datum.horizon(), datum.n_g()];
        if expected != got {
            return Err(ModelError::GeometryMismatch { expected, got });
        }
        Ok(())
    }

    /// Number of standard-normal draws per datum, per subspace layout.
    pub fn draw_eps(&self, rng: &mut RngStream) -> EpsDraws {
        match &self.spec {
            ModelSpec::Vrnn(a) => EpsDraws::Vrnn(
                (0..a.horizon)
                    .map(|_| rng.normal_tensor(&[a.latent], 0.0, 1.0).expect("std >= 0"))
                    .collect(),
            ),
            ModelSpec::Svrnn(a) => EpsDraws::Svrnn(
                (0..a.horizon)
                    .map(|_| {
                        let e1 = rng.normal_tensor(&[a.latent], 0.0, 1.0).expect("std >= 0");
                        let e2 = rng.normal_tensor(&[a.latent], 0.0, 1.0).expect("std >= 0");
                        (e1, e2)
                    })
                    .collect(),
            ),
            ModelSpec::Svae(a) => {
                let e1 = rng.normal_tensor(&[a.latent], 0.0, 1.0).expect("std >= 0");
                let e2 = rng.normal_tensor(&[a.latent], 0.0, 1.0).expect("std >= 0");
                EpsDraws::Svae(e1, e2)
            }
        }
    }

    /// Loss for one datum, on a caller-supplied tape (so the caller can run
    /// backward). Returns the scalar loss variable and its breakdown.
    pub fn build_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        datum: &Datum,
        is_support: bool,
        eps: &EpsDraws,
    ) -> Result<(Var, LossBreakdown, Vec<Var>), ModelError> {
        self.check_datum(datum)?;
        let binding = Binding::bind(tape, &self.params, true);
        let (total, breakdown) = match (&self.spec, eps) {
            (ModelSpec::Vrnn(a), EpsDraws::Vrnn(eps)) => {
                vrnn::build_loss(tape, &binding, &self.params, a, datum, eps)?
            }
            (ModelSpec::Svrnn(a), EpsDraws::Svrnn(eps)) => {
                svrnn::build_loss(tape, &binding, &self.params, a, datum, is_support, eps)?
            }
            (ModelSpec::Svae(a), EpsDraws::Svae(e1, e2)) => {
                svae::build_loss(tape, &binding, &self.params, a, datum, is_support, (e1, e2))?
            }
            _ => {
                return Err(ModelError::EpsMismatch {
                    detail: format!("{:?} draws for {} model", eps_kind(eps), self.kind().as_str()),
                })
            }
        };
        Ok((total, breakdown, binding.vars().to_vec()))
    }

    /// Loss value and parameter gradients (in [`ParamSet`] order) for one
    /// datum.
    pub fn loss_and_grads(
        &self,
        datum: &Datum,
        is_support: bool,
        eps: &EpsDraws,
    ) -> Result<(LossBreakdown, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let (total, breakdown, vars) = self.build_loss(&mut tape, datum, is_support, eps)?;
        tape.backward(total)?;
        Ok((breakdown, tape.grads_or_zero(&vars)))
    }

    /// Loss value only.
    pub fn loss(
        &self,
        datum: &Datum,
        is_support: bool,
        eps: &EpsDraws,
    ) -> Result<LossBreakdown, ModelError> {
        let mut tape = Tape::new();
        let (_, breakdown, _) = self.build_loss(&mut tape, datum, is_support, eps)?;
        Ok(breakdown)
    }

    /// Sample `count` new data by decoding standard-normal latents; the
    /// recurrent models roll the hidden state forward over `horizon` steps.
    pub fn generate(&self, count: usize, seed: u64) -> Result<Dataset, ModelError> {
        let n_g = self.spec.n_g();
        let horizon = self.spec.horizon();
        let mut rng = RngStream::substream(seed, 0);
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let observations = match &self.spec {
                ModelSpec::Vrnn(a) => vrnn::generate_datum(&self.params, a, &mut rng)?,
                ModelSpec::Svrnn(a) => svrnn::generate_datum(&self.params, a, &mut rng)?,
                ModelSpec::Svae(a) => svae::generate_datum(&self.params, a, &mut rng)?,
            };
            debug_assert_eq!(observations.shape(), &[horizon, n_g]);
            data.push(Datum::new(observations, Provenance::Generated));
        }
        let mut metadata = BTreeMap::new();
        metadata.insert(meta::KIND.into(), "generated".into());
        metadata.insert(meta::MODEL.into(), self.kind().as_str().into());
        metadata.insert(meta::SEED.into(), seed.to_string());
        metadata.insert(meta::COUNT.into(), count.to_string());
        metadata.insert(meta::GRID_SIDE.into(), self.spec.grid_side().to_string());
        metadata.insert(meta::HORIZON.into(), horizon.to_string());
        Ok(Dataset::new(data, self.spec.grid_side(), metadata)?)
    }
}

fn eps_kind(eps: &EpsDraws) -> &'static str {
    match eps {
        EpsDraws::Vrnn(_) => "vrnn",
        EpsDraws::Svrnn(_) => "svrnn",
        EpsDraws::Svae(..) => "svae",
    }
}
