//! Split-latent variational recurrent network.
//!
//! Same recurrent skeleton as the VRNN, but the encoder trunk feeds two
//! latent subspaces: a primary one whose KL penalty is active only for
//! support data, and a shared one regularized on all data. The decoder
//! always consumes draws from both subspaces, so reconstruction gradients
//! reach the primary head even when its KL term is gated off.
//!
//! Head output layout is `[mu1, mu2, log_var1, log_var2]`; the decoder
//! input order is `(z1, z2, h_prev)` and the recurrence consumes
//! `(h_prev, x_t, z1, z2)`.

use crate::autodiff::{Activation, GaussianLatent, Tape, Var};
use crate::field::Datum;
use crate::models::vrnn::LN_EPS;
use crate::models::{init_weight, Binding, LossBreakdown, ModelError, ParamSet};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// S-VRNN layer extents: a four-layer narrow/wide/narrow MLP on both sides
/// and two equal latent subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrnnArch {
    pub grid_side: usize,
    pub horizon: usize,
    pub hidden_narrow: usize,
    pub hidden_wide: usize,
    /// Dimension of each latent subspace.
    pub latent: usize,
}

impl SvrnnArch {
    /// Reference extents: 40/80/40 hidden chain, 20+20 latent split.
    pub fn paper(grid_side: usize, horizon: usize) -> Self {
        Self {
            grid_side,
            horizon,
            hidden_narrow: 40,
            hidden_wide: 80,
            latent: 20,
        }
    }

    pub fn n_g(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (n_g, hn, hw, l) = (self.n_g(), self.hidden_narrow, self.hidden_wide, self.latent);
        vec![
            ("enc.w1".into(), vec![hn, n_g + hn]),
            ("enc.b1".into(), vec![hn]),
            ("enc.w2".into(), vec![hw, hn]),
            ("enc.b2".into(), vec![hw]),
            ("enc.w3".into(), vec![hn, hw]),
            ("enc.b3".into(), vec![hn]),
            ("enc.w4".into(), vec![4 * l, hn]),
            ("enc.b4".into(), vec![4 * l]),
            ("dec.w1".into(), vec![hn, 2 * l + hn]),
            ("dec.b1".into(), vec![hn]),
            ("dec.w2".into(), vec![hw, hn]),
            ("dec.b2".into(), vec![hw]),
            ("dec.w3".into(), vec![hn, hw]),
            ("dec.b3".into(), vec![hn]),
            ("dec.w4".into(), vec![n_g, hn]),
            ("dec.b4".into(), vec![n_g]),
            ("rec.w".into(), vec![hn, hn + n_g + 2 * l]),
            ("rec.b".into(), vec![hn]),
            ("rec.ln_gain".into(), vec![hn]),
            ("rec.ln_bias".into(), vec![hn]),
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

pub(crate) struct SvrnnVars {
    enc: [(Var, Var); 4],
    dec: [(Var, Var); 4],
    rec_w: Var,
    rec_b: Var,
    ln_gain: Var,
    ln_bias: Var,
}

impl SvrnnVars {
    pub(crate) fn resolve(binding: &Binding, params: &ParamSet) -> Result<Self, ModelError> {
        let layer = |w: &str, b: &str| -> Result<(Var, Var), ModelError> {
            Ok((binding.var(params, w)?, binding.var(params, b)?))
        };
        Ok(Self {
            enc: [
                layer("enc.w1", "enc.b1")?,
                layer("enc.w2", "enc.b2")?,
                layer("enc.w3", "enc.b3")?,
                layer("enc.w4", "enc.b4")?,
            ],
            dec: [
                layer("dec.w1", "dec.b1")?,
                layer("dec.w2", "dec.b2")?,
                layer("dec.w3", "dec.b3")?,
                layer("dec.w4", "dec.b4")?,
            ],
            rec_w: binding.var(params, "rec.w")?,
            rec_b: binding.var(params, "rec.b")?,
            ln_gain: binding.var(params, "rec.ln_gain")?,
            ln_bias: binding.var(params, "rec.ln_bias")?,
        })
    }
}

/// Both posteriors for one step: shared trunk, one head emitting
/// `[mu1, mu2, log_var1, log_var2]`.
pub(crate) fn step_encode(
    tape: &mut Tape<'_>,
    vars: &SvrnnVars,
    arch: &SvrnnArch,
    x_t: Var,
    h_prev: Var,
) -> Result<(GaussianLatent, GaussianLatent), ModelError> {
    let mut a = tape.concat(&[x_t, h_prev])?;
    for (i, &(w, b)) in vars.enc.iter().enumerate() {
        let act = if i + 1 < vars.enc.len() {
            Activation::Tanh
        } else {
            Activation::None
        };
        a = tape.dense(a, w, b, act)?;
    }
    let l = arch.latent;
    let primary = GaussianLatent {
        mu: tape.slice(a, 0, l)?,
        log_var: tape.slice(a, 2 * l, l)?,
    };
    let shared = GaussianLatent {
        mu: tape.slice(a, l, l)?,
        log_var: tape.slice(a, 3 * l, l)?,
    };
    Ok((primary, shared))
}

/// Reconstruction mean from `(z1, z2, h_prev)`.
pub(crate) fn step_decode(
    tape: &mut Tape<'_>,
    vars: &SvrnnVars,
    z1: Var,
    z2: Var,
    h_prev: Var,
) -> Result<Var, ModelError> {
    let mut a = tape.concat(&[z1, z2, h_prev])?;
    for (i, &(w, b)) in vars.dec.iter().enumerate() {
        let act = if i + 1 < vars.dec.len() {
            Activation::Tanh
        } else {
            Activation::None
        };
        a = tape.dense(a, w, b, act)?;
    }
    Ok(a)
}

pub(crate) fn recur(
    tape: &mut Tape<'_>,
    vars: &SvrnnVars,
    h_prev: Var,
    x_t: Var,
    z1: Var,
    z2: Var,
) -> Result<Var, ModelError> {
    let joined = tape.concat(&[h_prev, x_t, z1, z2])?;
    let pre = tape.dense(joined, vars.rec_w, vars.rec_b, Activation::Tanh)?;
    Ok(tape.layer_norm(pre, vars.ln_gain, vars.ln_bias, LN_EPS)?)
}

/// Sum over time of MSE plus the gated primary KL plus the shared KL.
/// For real data (`is_support == false`) the primary KL contributes neither
/// to the loss value nor to gradients; its breakdown field is exactly zero.
pub(crate) fn build_loss(
    tape: &mut Tape<'_>,
    binding: &Binding,
    params: &ParamSet,
    arch: &SvrnnArch,
    datum: &Datum,
    is_support: bool,
    eps: &[(Tensor, Tensor)],
) -> Result<(Var, LossBreakdown), ModelError> {
    if eps.len() != arch.horizon {
        return Err(ModelError::EpsMismatch {
            detail: format!("{} eps pairs for horizon {}", eps.len(), arch.horizon),
        });
    }
    let vars = SvrnnVars::resolve(binding, params)?;
    let mut h = tape.constant(Tensor::zeros(&[arch.hidden_narrow]));
    let mut rec_acc: Option<Var> = None;
    let mut kl1_acc: Option<Var> = None;
    let mut kl2_acc: Option<Var> = None;
    for t in 0..arch.horizon {
        let x_t = tape.constant(Tensor::from_vec(datum.at(t).to_vec()));
        let (primary, shared) = step_encode(tape, &vars, arch, x_t, h)?;
        let e1 = tape.constant(eps[t].0.clone());
        let e2 = tape.constant(eps[t].1.clone());
        let z1 = tape.reparameterize(primary, e1)?;
        let z2 = tape.reparameterize(shared, e2)?;
        let x_hat = step_decode(tape, &vars, z1, z2, h)?;
        let rec_t = tape.mse(x_hat, x_t)?;
        rec_acc = Some(match rec_acc {
            Some(acc) => tape.add(acc, rec_t)?,
            None => rec_t,
        });
        if is_support {
            let kl1_t = tape.kl_to_standard_normal(primary)?;
            kl1_acc = Some(match kl1_acc {
                Some(acc) => tape.add(acc, kl1_t)?,
                None => kl1_t,
            });
        }
        let kl2_t = tape.kl_to_standard_normal(shared)?;
        kl2_acc = Some(match kl2_acc {
            Some(acc) => tape.add(acc, kl2_t)?,
            None => kl2_t,
        });
        h = recur(tape, &vars, h, x_t, z1, z2)?;
    }
    let rec = rec_acc.expect("horizon >= 1");
    let kl2 = kl2_acc.expect("horizon >= 1");
    let mut total = tape.add(rec, kl2)?;
    let mut kl1_value = 0.0;
    if let Some(kl1) = kl1_acc {
        total = tape.add(total, kl1)?;
        kl1_value = tape.value(kl1).item();
    }
    let breakdown = LossBreakdown {
        reconstruction: tape.value(rec).item(),
        kl_primary: kl1_value,
        kl_shared: tape.value(kl2).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

/// Sample both subspaces from the prior at every step and roll forward on
/// the generated observations.
pub(crate) fn generate_datum(
    params: &ParamSet,
    arch: &SvrnnArch,
    rng: &mut RngStream,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let binding = Binding::bind(&mut tape, params, false);
    let vars = SvrnnVars::resolve(&binding, params)?;
    let mut h = tape.constant(Tensor::zeros(&[arch.hidden_narrow]));
    let mut rows = Vec::with_capacity(arch.horizon * arch.n_g());
    for _ in 0..arch.horizon {
        let z1 = tape.constant(rng.normal_tensor(&[arch.latent], 0.0, 1.0).expect("std >= 0"));
        let z2 = tape.constant(rng.normal_tensor(&[arch.latent], 0.0, 1.0).expect("std >= 0"));
        let x_hat = step_decode(&mut tape, &vars, z1, z2, h)?;
        rows.extend_from_slice(tape.value(x_hat).data());
        h = recur(&mut tape, &vars, h, x_hat, z1, z2)?;
    }
    Ok(Tensor::new(vec![arch.horizon, arch.n_g()], rows)?)
}
