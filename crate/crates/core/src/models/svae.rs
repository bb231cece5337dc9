//! Split-latent convolutional autoencoder.
//!
//! A datum's time steps become input channels, so one datum is a
//! `[T, side, side]` image. The encoder is four stride-2 3x3 convolutions
//! (each halving the spatial extent, rounding up) followed by a dense head
//! emitting `[mu1, mu2, log_var1, log_var2]`. The decoder mirrors it with
//! four stride-2 transposed convolutions, each doubling the extent, and a
//! final center crop back to the grid: stride-2 doubling cannot land on
//! every grid size exactly (e.g. 56 doubles to 112, not 100), so the last
//! feature map is produced slightly larger and cropped.

use crate::autodiff::{Activation, GaussianLatent, Tape, Var};
use crate::field::Datum;
use crate::models::{init_weight, Binding, LossBreakdown, ModelError, ParamSet};
use crate::rng::RngStream;
use crate::tensor::Tensor;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PADDING: usize = 1;
const OUTPUT_PADDING: usize = 1;
const LAYERS: usize = 4;

/// S-VAE extents. Filter counts double per encoder layer starting from
/// `base_filters`; `latent` is the dimension of each of the two subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SvaeArch {
    pub grid_side: usize,
    /// Time steps, used as input channels.
    pub horizon: usize,
    pub base_filters: usize,
    pub latent: usize,
}

impl SvaeArch {
    /// Reference extents: filters 16/32/64/128, split latent 8+8.
    pub fn paper(grid_side: usize, horizon: usize) -> Self {
        Self {
            grid_side,
            horizon,
            base_filters: 16,
            latent: 8,
        }
    }

    pub fn n_g(&self) -> usize {
        self.grid_side * self.grid_side
    }

    /// Encoder channel progression `[T, B, 2B, 4B, 8B]`.
    pub fn encoder_channels(&self) -> Vec<usize> {
        let mut chain = vec![self.horizon];
        for i in 0..LAYERS {
            chain.push(self.base_filters << i);
        }
        chain
    }

    /// Spatial extents through the encoder, starting at the grid side;
    /// each stride-2 layer maps `h -> ceil(h / 2)`.
    pub fn encoder_spatial(&self) -> Vec<usize> {
        let mut chain = vec![self.grid_side];
        for _ in 0..LAYERS {
            chain.push(chain.last().unwrap().div_ceil(2));
        }
        chain
    }

    /// Spatial extents through the decoder: doubling from the encoder's
    /// final extent, before the center crop.
    pub fn decoder_spatial(&self) -> Vec<usize> {
        let f = *self.encoder_spatial().last().unwrap();
        (0..=LAYERS).map(|i| f << i).collect()
    }

    /// Flattened size of the deepest feature map.
    pub fn bottleneck(&self) -> usize {
        let f = *self.encoder_spatial().last().unwrap();
        (self.base_filters << (LAYERS - 1)) * f * f
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let enc_ch = self.encoder_channels();
        let l = self.latent;
        let mut shapes = Vec::new();
        for i in 0..LAYERS {
            shapes.push((
                format!("enc.conv{}", i + 1),
                vec![enc_ch[i + 1], enc_ch[i], KERNEL, KERNEL],
            ));
            shapes.push((format!("enc.cbias{}", i + 1), vec![enc_ch[i + 1]]));
        }
        shapes.push(("enc.fc_w".into(), vec![4 * l, self.bottleneck()]));
        shapes.push(("enc.fc_b".into(), vec![4 * l]));
        shapes.push(("dec.fc_w".into(), vec![self.bottleneck(), 2 * l]));
        shapes.push(("dec.fc_b".into(), vec![self.bottleneck()]));
        let mut dec_ch: Vec<usize> = enc_ch.iter().rev().copied().collect();
        dec_ch[LAYERS] = self.horizon;
        for i in 0..LAYERS {
            shapes.push((
                format!("dec.convt{}", i + 1),
                vec![dec_ch[i], dec_ch[i + 1], KERNEL, KERNEL],
            ));
            shapes.push((format!("dec.cbias{}", i + 1), vec![dec_ch[i + 1]]));
        }
        shapes
    }

    pub(crate) fn init_params(&self, rng: &mut RngStream) -> ParamSet {
        let mut params = ParamSet::new();
        for (name, shape) in self.param_shapes() {
            let t = match shape.len() {
                4 => {
                    // Both conv layouts put the contraction channel count at
                    // a known slot: conv [F,C,k,k] and transposed [C,F,k,k];
                    // fan-in is input channels times the kernel area.
                    let in_ch = if name.starts_with("enc.conv") {
                        shape[1]
                    } else {
                        shape[0]
                    };
                    init_weight(&shape, in_ch * KERNEL * KERNEL, rng)
                }
                2 => init_weight(&shape, shape[1], rng),
                _ => Tensor::zeros(&shape),
            };
            params.push(name, t);
        }
        params
    }
}

pub(crate) struct SvaeVars {
    enc_conv: [(Var, Var); LAYERS],
    enc_fc: (Var, Var),
    dec_fc: (Var, Var),
    dec_conv: [(Var, Var); LAYERS],
}

impl SvaeVars {
    pub(crate) fn resolve(binding: &Binding, params: &ParamSet) -> Result<Self, ModelError> {
        let pair = |w: String, b: String| -> Result<(Var, Var), ModelError> {
            Ok((binding.var(params, &w)?, binding.var(params, &b)?))
        };
        let mut enc_conv = Vec::new();
        let mut dec_conv = Vec::new();
        for i in 1..=LAYERS {
            enc_conv.push(pair(format!("enc.conv{i}"), format!("enc.cbias{i}"))?);
            dec_conv.push(pair(format!("dec.convt{i}"), format!("dec.cbias{i}"))?);
        }
        Ok(Self {
            enc_conv: enc_conv.try_into().map_err(|_| ModelError::MissingParam {
                name: "enc.conv*".into(),
            })?,
            enc_fc: pair("enc.fc_w".into(), "enc.fc_b".into())?,
            dec_fc: pair("dec.fc_w".into(), "dec.fc_b".into())?,
            dec_conv: dec_conv.try_into().map_err(|_| ModelError::MissingParam {
                name: "dec.convt*".into(),
            })?,
        })
    }
}

/// Conv stack, flatten, dense head split into two diagonal Gaussians.
pub(crate) fn encode(
    tape: &mut Tape<'_>,
    vars: &SvaeVars,
    arch: &SvaeArch,
    x: Var,
) -> Result<(GaussianLatent, GaussianLatent), ModelError> {
    let mut a = x;
    for &(k, b) in &vars.enc_conv {
        let c = tape.conv2d(a, k, STRIDE, PADDING)?;
        let c = tape.add_channel_bias(c, b)?;
        a = tape.relu(c);
    }
    let flat = tape.reshape(a, &[arch.bottleneck()])?;
    let head = tape.dense(flat, vars.enc_fc.0, vars.enc_fc.1, Activation::None)?;
    let l = arch.latent;
    let primary = GaussianLatent {
        mu: tape.slice(head, 0, l)?,
        log_var: tape.slice(head, 2 * l, l)?,
    };
    let shared = GaussianLatent {
        mu: tape.slice(head, l, l)?,
        log_var: tape.slice(head, 3 * l, l)?,
    };
    Ok((primary, shared))
}

/// Dense, reshape, four transposed convolutions, center crop.
pub(crate) fn decode(
    tape: &mut Tape<'_>,
    vars: &SvaeVars,
    arch: &SvaeArch,
    z1: Var,
    z2: Var,
) -> Result<Var, ModelError> {
    let z = tape.concat(&[z1, z2])?;
    let d = tape.dense(z, vars.dec_fc.0, vars.dec_fc.1, Activation::Relu)?;
    let f = *arch.encoder_spatial().last().unwrap();
    let deep_ch = arch.base_filters << (LAYERS - 1);
    let mut a = tape.reshape(d, &[deep_ch, f, f])?;
    for (i, &(k, b)) in vars.dec_conv.iter().enumerate() {
        let t = tape.conv_transpose2d(a, k, STRIDE, PADDING, OUTPUT_PADDING)?;
        let t = tape.add_channel_bias(t, b)?;
        a = if i + 1 < LAYERS { tape.relu(t) } else { t };
    }
    Ok(tape.center_crop(a, arch.grid_side, arch.grid_side)?)
}

/// Whole-datum MSE plus the gated primary KL plus the shared KL.
pub(crate) fn build_loss(
    tape: &mut Tape<'_>,
    binding: &Binding,
    params: &ParamSet,
    arch: &SvaeArch,
    datum: &Datum,
    is_support: bool,
    eps: (&Tensor, &Tensor),
) -> Result<(Var, LossBreakdown), ModelError> {
    let vars = SvaeVars::resolve(binding, params)?;
    let image = datum
        .observations()
        .reshape(&[arch.horizon, arch.grid_side, arch.grid_side])?;
    let x = tape.constant(image);
    let (primary, shared) = encode(tape, &vars, arch, x)?;
    let e1 = tape.constant(eps.0.clone());
    let e2 = tape.constant(eps.1.clone());
    let z1 = tape.reparameterize(primary, e1)?;
    let z2 = tape.reparameterize(shared, e2)?;
    let x_hat = decode(tape, &vars, arch, z1, z2)?;
    let rec = tape.mse(x_hat, x)?;
    let kl2 = tape.kl_to_standard_normal(shared)?;
    let mut total = tape.add(rec, kl2)?;
    let mut kl1_value = 0.0;
    if is_support {
        let kl1 = tape.kl_to_standard_normal(primary)?;
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

/// One decode of standard-normal draws from both subspaces.
pub(crate) fn generate_datum(
    params: &ParamSet,
    arch: &SvaeArch,
    rng: &mut RngStream,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let binding = Binding::bind(&mut tape, params, false);
    let vars = SvaeVars::resolve(&binding, params)?;
    let z1 = tape.constant(rng.normal_tensor(&[arch.latent], 0.0, 1.0).expect("std >= 0"));
    let z2 = tape.constant(rng.normal_tensor(&[arch.latent], 0.0, 1.0).expect("std >= 0"));
    let out = decode(&mut tape, &vars, arch, z1, z2)?;
    Ok(tape.value(out).reshape(&[arch.horizon, arch.n_g()])?)
}
