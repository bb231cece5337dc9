//! Variational recurrent network: per-step encoder/decoder conditioned on a
//! layer-normalized hidden state.
//!
//! Encoder input is the concatenation `(x_t, h_{t-1})`, decoder input is
//! `(z_t, h_{t-1})`, and the recurrence consumes `(h_{t-1}, x_t, z_t)`.
//! Hidden layers use tanh; the decoder output layer is linear so field
//! magnitudes are not clipped.

use crate::autodiff::{Activation, GaussianLatent, Tape, Var};
use crate::field::Datum;
use crate::models::{init_weight, Binding, LossBreakdown, ModelError, ParamSet};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub(crate) const LN_EPS: f64 = 1e-5;

/// VRNN layer extents. `hidden` doubles as both the MLP width and the
/// recurrent state dimension; `latent` is the full latent size.
#[derive(Debug, Clone, PartialEq)]
pub struct VrnnArch {
    pub grid_side: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl VrnnArch {
    /// Reference extents: hidden width 40, latent 16.
    pub fn paper(grid_side: usize, horizon: usize) -> Self {
        Self {
            grid_side,
            horizon,
            hidden: 40,
            latent: 16,
        }
    }

    pub fn n_g(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (n_g, h, l) = (self.n_g(), self.hidden, self.latent);
        vec![
            ("enc.w1".into(), vec![h, n_g + h]),
            ("enc.b1".into(), vec![h]),
            ("enc.w2".into(), vec![2 * l, h]),
            ("enc.b2".into(), vec![2 * l]),
            ("dec.w1".into(), vec![h, l + h]),
            ("dec.b1".into(), vec![h]),
            ("dec.w2".into(), vec![n_g, h]),
            ("dec.b2".into(), vec![n_g]),
            ("rec.w".into(), vec![h, h + n_g + l]),
            ("rec.b".into(), vec![h]),
            ("rec.ln_gain".into(), vec![h]),
            ("rec.ln_bias".into(), vec![h]),
        ]
    }

    pub(crate) fn init_params(&self, rng: &mut RngStream) -> ParamSet {
        let mut params = ParamSet::new();
        for (name, shape) in self.param_shapes() {
            let t = if name.ends_with(".ln_gain") {
                Tensor::full(&shape, 1.0)
            } else if shape.len() == 2 {
                init_weight(&shape, shape[1], rng)
            } else {
                Tensor::zeros(&shape)
            };
            params.push(name, t);
        }
        params
    }
}

pub(crate) struct VrnnVars {
    enc_w1: Var,
    enc_b1: Var,
    enc_w2: Var,
    enc_b2: Var,
    dec_w1: Var,
    dec_b1: Var,
    dec_w2: Var,
    dec_b2: Var,
    rec_w: Var,
    rec_b: Var,
    ln_gain: Var,
    ln_bias: Var,
}

impl VrnnVars {
    pub(crate) fn resolve(binding: &Binding, params: &ParamSet) -> Result<Self, ModelError> {
        Ok(Self {
            enc_w1: binding.var(params, "enc.w1")?,
            enc_b1: binding.var(params, "enc.b1")?,
            enc_w2: binding.var(params, "enc.w2")?,
            enc_b2: binding.var(params, "enc.b2")?,
            dec_w1: binding.var(params, "dec.w1")?,
            dec_b1: binding.var(params, "dec.b1")?,
            dec_w2: binding.var(params, "dec.w2")?,
            dec_b2: binding.var(params, "dec.b2")?,
            rec_w: binding.var(params, "rec.w")?,
            rec_b: binding.var(params, "rec.b")?,
            ln_gain: binding.var(params, "rec.ln_gain")?,
            ln_bias: binding.var(params, "rec.ln_bias")?,
        })
    }
}

/// Posterior parameters for one step: `(x_t, h_prev)` through the two-layer
/// encoder, output split into mean and log-variance halves.
pub(crate) fn step_encode(
    tape: &mut Tape<'_>,
    vars: &VrnnVars,
    arch: &VrnnArch,
    x_t: Var,
    h_prev: Var,
) -> Result<GaussianLatent, ModelError> {
    let joined = tape.concat(&[x_t, h_prev])?;
    let hid = tape.dense(joined, vars.enc_w1, vars.enc_b1, Activation::Tanh)?;
    let head = tape.dense(hid, vars.enc_w2, vars.enc_b2, Activation::None)?;
    let mu = tape.slice(head, 0, arch.latent)?;
    let log_var = tape.slice(head, arch.latent, arch.latent)?;
    Ok(GaussianLatent { mu, log_var })
}

/// Reconstruction mean from `(z_t, h_prev)`.
pub(crate) fn step_decode(
    tape: &mut Tape<'_>,
    vars: &VrnnVars,
    z_t: Var,
    h_prev: Var,
) -> Result<Var, ModelError> {
    let joined = tape.concat(&[z_t, h_prev])?;
    let hid = tape.dense(joined, vars.dec_w1, vars.dec_b1, Activation::Tanh)?;
    Ok(tape.dense(hid, vars.dec_w2, vars.dec_b2, Activation::None)?)
}

/// Next hidden state from `(h_prev, x_t, z_t)`: dense-tanh then layer norm.
pub(crate) fn recur(
    tape: &mut Tape<'_>,
    vars: &VrnnVars,
    h_prev: Var,
    x_t: Var,
    z_t: Var,
) -> Result<Var, ModelError> {
    let joined = tape.concat(&[h_prev, x_t, z_t])?;
    let pre = tape.dense(joined, vars.rec_w, vars.rec_b, Activation::Tanh)?;
    Ok(tape.layer_norm(pre, vars.ln_gain, vars.ln_bias, LN_EPS)?)
}

/// Sum over time of per-step MSE plus per-step KL to the standard normal.
pub(crate) fn build_loss(
    tape: &mut Tape<'_>,
    binding: &Binding,
    params: &ParamSet,
    arch: &VrnnArch,
    datum: &Datum,
    eps: &[Tensor],
) -> Result<(Var, LossBreakdown), ModelError> {
    if eps.len() != arch.horizon {
        return Err(ModelError::EpsMismatch {
            detail: format!("{} eps draws for horizon {}", eps.len(), arch.horizon),
        });
    }
    let vars = VrnnVars::resolve(binding, params)?;
    let mut h = tape.constant(Tensor::zeros(&[arch.hidden]));
    let mut rec_acc: Option<Var> = None;
    let mut kl_acc: Option<Var> = None;
    for t in 0..arch.horizon {
        let x_t = tape.constant(Tensor::from_vec(datum.at(t).to_vec()));
        let latent = step_encode(tape, &vars, arch, x_t, h)?;
        let eps_t = tape.constant(eps[t].clone());
        let z_t = tape.reparameterize(latent, eps_t)?;
        let x_hat = step_decode(tape, &vars, z_t, h)?;
        let rec_t = tape.mse(x_hat, x_t)?;
        let kl_t = tape.kl_to_standard_normal(latent)?;
        rec_acc = Some(match rec_acc {
            Some(acc) => tape.add(acc, rec_t)?,
            None => rec_t,
        });
        kl_acc = Some(match kl_acc {
            Some(acc) => tape.add(acc, kl_t)?,
            None => kl_t,
        });
        h = recur(tape, &vars, h, x_t, z_t)?;
    }
    let rec = rec_acc.expect("horizon >= 1");
    let kl = kl_acc.expect("horizon >= 1");
    let total = tape.add(rec, kl)?;
    let breakdown = LossBreakdown {
        reconstruction: tape.value(rec).item(),
        kl_primary: tape.value(kl).item(),
        kl_shared: 0.0,
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

/// Roll the generative model forward: sample `z_t` from the prior, decode,
/// then advance the hidden state on the generated observation.
pub(crate) fn generate_datum(
    params: &ParamSet,
    arch: &VrnnArch,
    rng: &mut RngStream,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let binding = Binding::bind(&mut tape, params, false);
    let vars = VrnnVars::resolve(&binding, params)?;
    let mut h = tape.constant(Tensor::zeros(&[arch.hidden]));
    let mut rows = Vec::with_capacity(arch.horizon * arch.n_g());
    for _ in 0..arch.horizon {
        let z = tape.constant(rng.normal_tensor(&[arch.latent], 0.0, 1.0).expect("std >= 0"));
        let x_hat = step_decode(&mut tape, &vars, z, h)?;
        rows.extend_from_slice(tape.value(x_hat).data());
        h = recur(&mut tape, &vars, h, x_hat, z)?;
    }
    Ok(Tensor::new(vec![arch.horizon, arch.n_g()], rows)?)
}
