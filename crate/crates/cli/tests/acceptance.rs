//! Acceptance suite: one test per criterion, each printing a PASS line and
//! enforcing its stated tolerance. Criteria 7 and 8 share one set of
//! desk-scale experiment runs.
//!
//! Run with `cargo test -p threatgen-cli --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use threatgen_cli::config::{ExperimentConfig, Preset};
use threatgen_cli::pipeline::{run_experiment, ExperimentOutcome};
use threatgen_core::autodiff::{Activation, GaussianLatent, Tape, Var};
use threatgen_core::eval::{fit_pca, moments};
use threatgen_core::field::{
    generate_pool, integrate_dynamics, random_hurwitz, Dataset, Datum, PoolConfig, Provenance,
    ThreatDynamics,
};
use threatgen_core::linalg::spectral_abscissa;
use threatgen_core::models::{Model, ModelKind, ModelSpec};
use threatgen_core::persistence::{
    checkpoint_from_bytes, checkpoint_to_bytes, dataset_from_bytes, dataset_to_bytes, fnv1a64,
    PersistError,
};
use threatgen_core::rng::RngStream;
use threatgen_core::tensor::Tensor;

fn pass(n: usize, name: &str, started: Instant) {
    println!(
        "ACCEPTANCE criterion {n} ({name}): PASS in {:.2}s",
        started.elapsed().as_secs_f64()
    );
}

// ====================================================================
// Criterion 1: architecture conformance (layer extents, zero tolerance)
// ====================================================================

#[test]
fn criterion_1_architecture_conformance() {
    let started = Instant::now();

    // VRNN: encoder 10^4 -> 40 -> 16, decoder 16 -> 40 -> 10^4, hidden 40.
    let vrnn = ModelSpec::paper(ModelKind::Vrnn, 100, 4);
    let shapes = vrnn.param_shapes();
    let get = |name: &str| -> Vec<usize> {
        shapes
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing {name}"))
            .1
            .clone()
    };
    assert_eq!(get("enc.w1"), vec![40, 10_000 + 40]);
    assert_eq!(get("enc.w2"), vec![32, 40]); // 16 means + 16 log-vars
    assert_eq!(get("dec.w1"), vec![40, 16 + 40]);
    assert_eq!(get("dec.w2"), vec![10_000, 40]);
    assert_eq!(get("rec.w"), vec![40, 40 + 10_000 + 16]);

    // S-VRNN: encoder 10^4 -> 40 -> 80 -> 40 -> (20, 20), mirrored decoder.
    let svrnn = ModelSpec::paper(ModelKind::Svrnn, 100, 4);
    let shapes = svrnn.param_shapes();
    let get = |name: &str| -> Vec<usize> {
        shapes
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing {name}"))
            .1
            .clone()
    };
    assert_eq!(get("enc.w1"), vec![40, 10_000 + 40]);
    assert_eq!(get("enc.w2"), vec![80, 40]);
    assert_eq!(get("enc.w3"), vec![40, 80]);
    assert_eq!(get("enc.w4"), vec![80, 40]); // (20, 20) means + (20, 20) log-vars
    assert_eq!(get("dec.w1"), vec![40, 20 + 20 + 40]);
    assert_eq!(get("dec.w2"), vec![80, 40]);
    assert_eq!(get("dec.w3"), vec![40, 80]);
    assert_eq!(get("dec.w4"), vec![10_000, 40]);

    // S-VAE: run a real forward and check every intermediate extent.
    fn conv_layer<'a>(
        tape: &mut Tape<'a>,
        params: &'a threatgen_core::models::ParamSet,
        a: Var,
        w: &str,
        b: &str,
    ) -> Var {
        let k = tape.input(params.get(w).unwrap());
        let bias = tape.input(params.get(b).unwrap());
        let c = tape.conv2d(a, k, 2, 1).unwrap();
        let c = tape.add_channel_bias(c, bias).unwrap();
        tape.relu(c)
    }
    let mut rng = RngStream::new(1);
    let svae = Model::init(ModelSpec::paper(ModelKind::Svae, 100, 4), &mut rng);
    let x = rng.normal_tensor(&[4, 100, 100], 1.0, 0.5).unwrap();
    let mut tape = Tape::new();
    let xv = tape.input(&x);
    let a1 = conv_layer(&mut tape, &svae.params, xv, "enc.conv1", "enc.cbias1");
    assert_eq!(tape.value(a1).shape(), &[16, 50, 50]);
    let a2 = conv_layer(&mut tape, &svae.params, a1, "enc.conv2", "enc.cbias2");
    assert_eq!(tape.value(a2).shape(), &[32, 25, 25]);
    let a3 = conv_layer(&mut tape, &svae.params, a2, "enc.conv3", "enc.cbias3");
    assert_eq!(tape.value(a3).shape(), &[64, 13, 13]);
    let a4 = conv_layer(&mut tape, &svae.params, a3, "enc.conv4", "enc.cbias4");
    assert_eq!(tape.value(a4).shape(), &[128, 7, 7]);
    let flat = tape.reshape(a4, &[128 * 7 * 7]).unwrap();
    let fc_w = tape.input(svae.params.get("enc.fc_w").unwrap());
    let fc_b = tape.input(svae.params.get("enc.fc_b").unwrap());
    let head = tape.dense(flat, fc_w, fc_b, Activation::None).unwrap();
    assert_eq!(tape.value(head).shape(), &[32]); // 16 means + 16 log-vars

    // Decoder chain: (128,7,7) -> 14 -> 28 -> 56 -> 112, cropped to 100.
    let z = tape.constant(Tensor::zeros(&[16]));
    let dfc_w = tape.input(svae.params.get("dec.fc_w").unwrap());
    let dfc_b = tape.input(svae.params.get("dec.fc_b").unwrap());
    let d = tape.dense(z, dfc_w, dfc_b, Activation::Relu).unwrap();
    let mut a = tape.reshape(d, &[128, 7, 7]).unwrap();
    let expected = [
        vec![64usize, 14, 14],
        vec![32, 28, 28],
        vec![16, 56, 56],
        vec![4, 112, 112],
    ];
    for (i, want) in expected.iter().enumerate() {
        let k = tape
            .input(svae.params.get(&format!("dec.convt{}", i + 1)).unwrap());
        let b = tape
            .input(svae.params.get(&format!("dec.cbias{}", i + 1)).unwrap());
        let t = tape.conv_transpose2d(a, k, 2, 1, 1).unwrap();
        let t = tape.add_channel_bias(t, b).unwrap();
        a = if i + 1 < 4 { tape.relu(t) } else { t };
        assert_eq!(tape.value(a).shape(), want.as_slice(), "decoder layer {}", i + 1);
    }
    let out = tape.center_crop(a, 100, 100).unwrap();
    assert_eq!(tape.value(out).shape(), &[4, 100, 100]);

    assert!(
        started.elapsed().as_secs_f64() < 1.0,
        "shape audit must run in under a second"
    );
    pass(1, "architecture conformance", started);
}

// ====================================================================
// Criterion 2: finite-difference gradient suite
// ====================================================================

const H: f64 = 1e-5;

fn fd_check<F>(build: F, params: &[Tensor], tol: f64, what: &str)
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic = tape.grads_or_zero(&vars);

    let eval = |p: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.iter().map(|t| tape.param(t)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };
    for (i, a) in analytic.iter().enumerate() {
        let mut max_abs = 0.0_f64;
        let mut max_diff = 0.0_f64;
        for j in 0..a.len() {
            let mut plus = params.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = params.to_vec();
            minus[i].data_mut()[j] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let av = a.data()[j];
            max_abs = max_abs.max(av.abs()).max(fd.abs());
            max_diff = max_diff.max((av - fd).abs());
        }
        let err = max_diff / max_abs.max(1e-4);
        assert!(err <= tol, "{what} param {i}: rel err {err:.3e} > {tol:.1e}");
    }
}

#[test]
fn criterion_2_gradient_suite() {
    let started = Instant::now();

    for seed in 0..20u64 {
        let mut rng = RngStream::new(seed);

        // Dense + elementwise + reductions + mse.
        let w = rng.normal_tensor(&[3, 5], 0.0, 0.7).unwrap();
        let b = rng.normal_tensor(&[3], 0.0, 0.5).unwrap();
        let x = rng.normal_tensor(&[5], 0.0, 1.0).unwrap();
        let y = rng.normal_tensor(&[3], 0.0, 1.0).unwrap();
        fd_check(
            |tape, vars| {
                let t = tape.constant(y.clone());
                let d = tape.dense(vars[2], vars[0], vars[1], Activation::Tanh).unwrap();
                tape.mse(d, t).unwrap()
            },
            &[w, b, x],
            1e-4,
            "dense+mse",
        );

        // Elementwise chain with matmul, exp, relu, scale, slicing.
        let a = rng.normal_tensor(&[3, 4], 0.0, 0.8).unwrap();
        let c = rng.normal_tensor(&[4, 2], 0.0, 0.8).unwrap();
        fd_check(
            |tape, vars| {
                let m = tape.matmul(vars[0], vars[1]).unwrap();
                let flat = tape.reshape(m, &[6]).unwrap();
                let head = tape.slice(flat, 0, 3).unwrap();
                let tail = tape.slice(flat, 3, 3).unwrap();
                let joined = tape.concat(&[tail, head]).unwrap();
                let e = tape.exp(joined);
                let sc = tape.scale(e, 0.25);
                let r = tape.relu(sc);
                let s = tape.sub(r, joined).unwrap();
                let p = tape.mul(s, s).unwrap();
                let t = tape.tanh(p);
                let q = tape.add(t, joined).unwrap();
                let total = tape.sum_all(q);
                let mean = tape.mean_all(q);
                tape.add(total, mean).unwrap()
            },
            &[a, c],
            1e-4,
            "elementwise chain",
        );

        // Layer norm.
        let xn = rng.normal_tensor(&[7], 0.5, 1.2).unwrap();
        let gain = rng.normal_tensor(&[7], 1.0, 0.2).unwrap();
        let bias = rng.normal_tensor(&[7], 0.0, 0.2).unwrap();
        fd_check(
            |tape, vars| {
                let ln = tape.layer_norm(vars[0], vars[1], vars[2], 1e-5).unwrap();
                let sq = tape.mul(ln, ln).unwrap();
                tape.sum_all(sq)
            },
            &[xn, gain, bias],
            1e-4,
            "layer_norm",
        );

        // KL and reparameterization.
        let mu = rng.normal_tensor(&[4], 0.0, 1.0).unwrap();
        let lv = rng.normal_tensor(&[4], 0.0, 0.5).unwrap();
        let eps = rng.normal_tensor(&[4], 0.0, 1.0).unwrap();
        let target = rng.normal_tensor(&[4], 0.0, 1.0).unwrap();
        fd_check(
            |tape, vars| {
                let q = GaussianLatent {
                    mu: vars[0],
                    log_var: vars[1],
                };
                let kl = tape.kl_to_standard_normal(q).unwrap();
                let e = tape.constant(eps.clone());
                let z = tape.reparameterize(q, e).unwrap();
                let t = tape.constant(target.clone());
                let rec = tape.mse(z, t).unwrap();
                tape.add(kl, rec).unwrap()
            },
            &[mu, lv],
            1e-4,
            "kl+reparameterize",
        );

        // Convolution pair with channel bias and crop.
        let img = rng.normal_tensor(&[2, 4, 4], 0.0, 1.0).unwrap();
        let k1 = rng.normal_tensor(&[3, 2, 3, 3], 0.0, 0.5).unwrap();
        let cb = rng.normal_tensor(&[3], 0.1, 0.3).unwrap();
        let k2 = rng.normal_tensor(&[3, 2, 3, 3], 0.0, 0.5).unwrap();
        fd_check(
            |tape, vars| {
                let c = tape.conv2d(vars[0], vars[1], 2, 1).unwrap();
                let c = tape.add_channel_bias(c, vars[2]).unwrap();
                let t = tape.tanh(c);
                let up = tape.conv_transpose2d(t, vars[3], 2, 1, 1).unwrap();
                let crop = tape.center_crop(up, 3, 3).unwrap();
                let sq = tape.mul(crop, crop).unwrap();
                tape.mean_all(sq)
            },
            &[img, k1, cb, k2],
            1e-4,
            "conv pair",
        );
    }

    // Full losses for all three models, 20 seeds each, tanh-smooth or
    // jittered away from ReLU kinks.
    for seed in 0..20u64 {
        let mut rng = RngStream::new(500 + seed);
        for kind in [ModelKind::Vrnn, ModelKind::Svrnn, ModelKind::Svae] {
            let spec = match kind {
                ModelKind::Vrnn => ModelSpec::Vrnn(threatgen_core::models::VrnnArch {
                    grid_side: 3,
                    horizon: 2,
                    hidden: 4,
                    latent: 3,
                }),
                ModelKind::Svrnn => ModelSpec::Svrnn(threatgen_core::models::SvrnnArch {
                    grid_side: 3,
                    horizon: 2,
                    hidden_narrow: 4,
                    hidden_wide: 6,
                    latent: 3,
                }),
                ModelKind::Svae => ModelSpec::Svae(threatgen_core::models::SvaeArch {
                    grid_side: 6,
                    horizon: 2,
                    base_filters: 2,
                    latent: 2,
                }),
            };
            let mut model = Model::init(spec, &mut rng);
            for t in model.params.tensors_mut() {
                for v in t.data_mut() {
                    *v += rng.normal(0.0, 0.05);
                }
            }
            let n_g = model.spec.n_g();
            let datum = Datum::new(
                rng.normal_tensor(&[2, n_g], 1.0, 0.8).unwrap(),
                Provenance::Real,
            );
            let is_support = seed % 2 == 0;
            let eps = model.draw_eps(&mut rng);
            let (_, analytic) = model.loss_and_grads(&datum, is_support, &eps).unwrap();
            for (i, a) in analytic.iter().enumerate() {
                let mut max_abs = 0.0_f64;
                let mut max_diff = 0.0_f64;
                let mut checked = 0usize;
                for j in 0..a.len() {
                    let eval = |delta: f64| -> f64 {
                        let mut m = model.clone();
                        m.params.tensors_mut()[i].data_mut()[j] += delta;
                        m.loss(&datum, is_support, &eps).unwrap().total
                    };
                    let fd_h = (eval(H) - eval(-H)) / (2.0 * H);
                    let fd_h2 = (eval(H / 2.0) - eval(-H / 2.0)) / H;
                    let scale = fd_h.abs().max(fd_h2.abs()).max(1e-6);
                    if (fd_h - fd_h2).abs() > 1e-3 * scale {
                        continue; // non-differentiable ReLU kink in the stencil
                    }
                    checked += 1;
                    let av = a.data()[j];
                    max_abs = max_abs.max(av.abs()).max(fd_h.abs());
                    max_diff = max_diff.max((av - fd_h).abs());
                }
                assert!(checked * 10 >= a.len() * 9, "too many skipped points");
                let err = max_diff / max_abs.max(1e-4);
                assert!(
                    err <= 1e-4,
                    "{kind:?} loss seed {seed} param {i}: rel err {err:.3e}"
                );
            }
        }
    }

    assert!(started.elapsed().as_secs_f64() < 120.0, "gradient suite over budget");
    pass(2, "gradient suite", started);
}

// ====================================================================
// Criterion 3: dynamics against the matrix-exponential oracle
// ====================================================================

fn expm(a: &[f64], n: usize, t: f64) -> Vec<f64> {
    let norm: f64 = a.iter().map(|v| v.abs() * t).fold(0.0, f64::max) * n as f64;
    let squarings = norm.log2().ceil().max(0.0) as u32 + 4;
    let scale = t / f64::powi(2.0, squarings as i32);
    let mut result = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        result[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..30 {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let t_il = term[i * n + l];
                if t_il == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[i * n + j] += t_il * a[l * n + j] * scale / k as f64;
                }
            }
        }
        let mut small = true;
        for (r, v) in result.iter_mut().zip(&next) {
            *r += v;
            if v.abs() > 1e-18 {
                small = false;
            }
        }
        term = next;
        if small {
            break;
        }
    }
    for _ in 0..squarings {
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let r_il = result[i * n + l];
                if r_il == 0.0 {
                    continue;
                }
                for j in 0..n {
                    sq[i * n + j] += r_il * result[l * n + j];
                }
            }
        }
        result = sq;
    }
    result
}

#[test]
fn criterion_3_dynamics_oracle() {
    let started = Instant::now();
    for seed in 0..10u64 {
        let mut rng = RngStream::new(seed);
        let a = random_hurwitz(4, &mut rng);
        let dynamics = ThreatDynamics::new(a.clone(), 0.0, 0.0, 0.01).unwrap();
        let theta0: Vec<f64> = (0..4).map(|_| rng.uniform_in(-5.0, 5.0)).collect();

        // RK4 vs expm over horizon 5.
        let states = integrate_dynamics(&dynamics, &theta0, 5, &mut rng).unwrap();
        for (k, state) in states.iter().enumerate() {
            let m = expm(a.data(), 4, (k + 1) as f64);
            let want: Vec<f64> = (0..4)
                .map(|i| (0..4).map(|j| m[i * 4 + j] * theta0[j]).sum())
                .collect();
            let num: f64 = state
                .iter()
                .zip(&want)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let den: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num <= 1e-6 * den, "seed {seed} t {}: rel {:.3e}", k + 1, num / den);
        }

        // Hurwitz decay bound at t* = 10 / |max Re lambda|.
        let abscissa = spectral_abscissa(a.data(), 4);
        let t_star = (10.0 / abscissa.abs()).ceil() as usize;
        let states = integrate_dynamics(&dynamics, &theta0, t_star, &mut rng).unwrap();
        let norm0: f64 = theta0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_end: f64 = states[t_star - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm_end <= 1e-2 * norm0, "seed {seed}: decay bound violated");
    }
    assert!(started.elapsed().as_secs_f64() < 10.0, "dynamics oracle over budget");
    pass(3, "dynamics oracle", started);
}

// ====================================================================
// Criterion 4: KL closed form against Monte-Carlo estimation
// ====================================================================

#[test]
fn criterion_4_kl_oracle() {
    let started = Instant::now();
    let mut rng = RngStream::new(4242);
    for case in 0..10 {
        let d = 1 + (case % 8);
        let mu: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
        let log_var: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();

        let mu_t = Tensor::from_vec(mu.clone());
        let lv_t = Tensor::from_vec(log_var.clone());
        let mut tape = Tape::new();
        let q = GaussianLatent {
            mu: tape.input(&mu_t),
            log_var: tape.input(&lv_t),
        };
        let kl = tape.kl_to_standard_normal(q).unwrap();
        let closed = tape.value(kl).item();

        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut log_ratio = 0.0;
            for j in 0..d {
                let e = rng.normal(0.0, 1.0);
                let z = mu[j] + (0.5 * log_var[j]).exp() * e;
                log_ratio += -0.5 * e * e - 0.5 * log_var[j] + 0.5 * z * z;
            }
            acc += log_ratio;
        }
        let mc = acc / n as f64;
        assert!(
            (closed - mc).abs() <= 1e-2,
            "case {case}: closed {closed} vs MC {mc}"
        );
    }
    assert!(started.elapsed().as_secs_f64() < 30.0, "KL oracle over budget");
    pass(4, "KL oracle", started);
}

// ====================================================================
// Criterion 5: PCA dual form against a dense eigendecomposition
// ====================================================================

fn dataset_from_rows(rows: &[Vec<f64>], horizon: usize, side: usize) -> Dataset {
    let data = rows
        .iter()
        .map(|r| {
            Datum::new(
                Tensor::new(vec![horizon, side * side], r.clone()).unwrap(),
                Provenance::Real,
            )
        })
        .collect();
    Dataset::new(data, side, Default::default()).unwrap()
}

#[test]
fn criterion_5_pca_oracle() {
    let started = Instant::now();

    // Gram-form eigenpairs match a dense covariance solve on 10x6 data.
    for seed in 0..10u64 {
        let mut rng = RngStream::new(100 + seed);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| rng.normal_vec(6, 1.0, 2.0)).collect();
        let ds = dataset_from_rows(&rows, 6, 1);
        let basis = fit_pca(&ds, 3).unwrap();

        let mut mean = vec![0.0; 6];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / 10.0;
            }
        }
        let mut cov = vec![0.0; 36];
        for r in &rows {
            for i in 0..6 {
                for j in 0..6 {
                    cov[i * 6 + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / 10.0;
                }
            }
        }
        let oracle = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(6, 6, &cov));
        let mut oracle_vals: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
        oracle_vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (got, want) in basis.eigenvalues().iter().zip(&oracle_vals) {
            assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    // Constructed rank-3 spectrum (9, 4, 1) recovered to 1e-8.
    let d = 8;
    let mut dirs = vec![vec![0.0; d]; 3];
    dirs[0][0] = 1.0;
    dirs[1][3] = 1.0;
    dirs[2][6] = 1.0;
    let stds = [3.0, 2.0, 1.0];
    let mut rows = Vec::new();
    for s0 in [-1.0, 1.0] {
        for s1 in [-1.0, 1.0] {
            for s2 in [-1.0, 1.0] {
                let mut row = vec![0.0; d];
                for (k, &s) in [s0, s1, s2].iter().enumerate() {
                    for (rv, dv) in row.iter_mut().zip(&dirs[k]) {
                        *rv += s * stds[k] * dv;
                    }
                }
                rows.push(row);
            }
        }
    }
    let ds = dataset_from_rows(&rows, 2, 2);
    let basis = fit_pca(&ds, 3).unwrap();
    for (got, want) in basis.eigenvalues().iter().zip([9.0, 4.0, 1.0]) {
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }
    for (comp, dir) in basis.components().iter().zip(&dirs) {
        let dot: f64 = comp.iter().zip(dir).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() <= 1e-8, "component misaligned");
    }

    assert!(started.elapsed().as_secs_f64() < 5.0, "PCA oracle over budget");
    pass(5, "PCA oracle", started);
}

// ====================================================================
// Criterion 6: moment sanity
// ====================================================================

#[test]
fn criterion_6_moment_sanity() {
    let started = Instant::now();
    let mut rng = RngStream::new(6);
    let xs = rng.normal_vec(100_000, 0.0, 1.0);
    let m = moments(&xs).unwrap();
    assert!(m.skewness.abs() <= 0.05, "skewness {}", m.skewness);
    assert!((m.kurtosis - 3.0).abs() <= 0.1, "kurtosis {}", m.kurtosis);

    let two = moments(&[-1.0, 1.0]).unwrap();
    assert_eq!(
        (two.mean, two.variance, two.skewness, two.kurtosis),
        (0.0, 1.0, 0.0, 1.0)
    );
    assert!(started.elapsed().as_secs_f64() < 5.0, "moment sanity over budget");
    pass(6, "moment sanity", started);
}

// ====================================================================
// Criteria 7 & 8: the desk-scale headline experiment (shared runs)
// ====================================================================

struct HeadlineRuns {
    _dir: tempfile::TempDir,
    outcomes: Vec<ExperimentOutcome>,
}

fn headline_runs() -> &'static HeadlineRuns {
    static RUNS: OnceLock<HeadlineRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut cfg = ExperimentConfig::preset(Preset::PaperDesk);
        cfg.nd = 25;
        let dir = tempfile::tempdir().expect("tempdir");
        let outcomes = cfg
            .seeds
            .clone()
            .into_iter()
            .map(|seed| {
                run_experiment(&cfg, seed, &dir.path().join(format!("seed-{seed}")))
                    .expect("experiment run")
            })
            .collect();
        HeadlineRuns {
            _dir: dir,
            outcomes,
        }
    })
}

#[test]
fn criterion_7_desk_scale_headline() {
    let started = Instant::now();
    let runs = headline_runs();
    assert_eq!(runs.outcomes.len(), 3, "three seeds");

    // Training made real progress: final epoch mean <= half of epoch 1,
    // for every model on every seed.
    for outcome in &runs.outcomes {
        for m in &outcome.models {
            assert!(
                m.final_epoch_loss <= 0.5 * m.first_epoch_loss,
                "seed {} {:?}: {} -> {} misses the halving gate",
                outcome.seed,
                m.kind,
                m.first_epoch_loss,
                m.final_epoch_loss
            );
        }
    }

    // Moment-distance ordering: S-VRNN at least as close to the pool as
    // both baselines in two of three seeds.
    let ordered = runs
        .outcomes
        .iter()
        .filter(|o| {
            let svrnn = o.model(ModelKind::Svrnn).distance;
            svrnn <= o.model(ModelKind::Vrnn).distance
                && svrnn <= o.model(ModelKind::Svae).distance
        })
        .count();
    assert!(
        ordered >= 2,
        "S-VRNN closest in only {ordered} of 3 seeds: {:?}",
        runs.outcomes
            .iter()
            .map(|o| {
                (
                    o.seed,
                    o.model(ModelKind::Svae).distance,
                    o.model(ModelKind::Vrnn).distance,
                    o.model(ModelKind::Svrnn).distance,
                )
            })
            .collect::<Vec<_>>()
    );
    pass(7, "desk-scale headline", started);
}

#[test]
fn criterion_8_decay_trend() {
    let started = Instant::now();
    let runs = headline_runs();
    // Every run generated the same sample count, so the pooled fraction is
    // the mean of per-run fractions.
    let pooled: f64 = runs
        .outcomes
        .iter()
        .map(|o| o.model(ModelKind::Svrnn).decay_fraction)
        .sum::<f64>()
        / runs.outcomes.len() as f64;
    assert!(
        pooled >= 0.8,
        "only {:.1}% of S-VRNN samples show decaying intensity",
        pooled * 100.0
    );
    pass(8, "decay trend", started);
}

// ====================================================================
// Criterion 9: determinism and persistence
// ====================================================================

#[test]
fn criterion_9_determinism_and_persistence() {
    let started = Instant::now();

    // Identical tiny experiments twice: every artifact byte-identical.
    let mut cfg = ExperimentConfig::preset(Preset::PaperDesk);
    cfg.pool_count = 12;
    cfg.grid_side = 6;
    cfg.nd = 5;
    cfg.ns = 8;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.sample_count = 5;
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_experiment(&cfg, 77, &a).unwrap();
    run_experiment(&cfg, 77, &b).unwrap();
    for file in [
        "pool.svtf",
        "x.svtf",
        "support.svtf",
        "gen-svae.svtf",
        "gen-vrnn.svtf",
        "gen-svrnn.svtf",
        "loss-svae.csv",
        "loss-vrnn.csv",
        "loss-svrnn.csv",
        "model-svae-final.svck",
        "model-vrnn-final.svck",
        "model-svrnn-final.svck",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "artifact {file} differs across identical runs"
        );
    }

    // Round-trips at stored precision.
    let pool_cfg = PoolConfig {
        count: 3,
        grid_side: 5,
        horizon: 2,
        n_p: 3,
        sigma1: 0.2,
        sigma2: 0.1,
        dt: 0.01,
        seed: 5,
    };
    let ds = generate_pool(&pool_cfg).unwrap();
    let bytes = dataset_to_bytes(&ds).unwrap();
    let back = dataset_from_bytes(&bytes).unwrap();
    assert_eq!(dataset_to_bytes(&back).unwrap(), bytes);

    let mut rng = RngStream::new(9);
    let model = Model::init(ModelSpec::paper(ModelKind::Vrnn, 5, 2), &mut rng);
    let ck = checkpoint_to_bytes(&model);
    let loaded = checkpoint_from_bytes(&ck).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(
        loaded.generate(2, 3).unwrap(),
        model.generate(2, 3).unwrap()
    );

    // Corruption is caught: flipped payload byte, bad magic, truncation.
    let mut corrupt = ck.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    assert!(matches!(
        checkpoint_from_bytes(&corrupt),
        Err(PersistError::ChecksumMismatch { .. })
    ));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'Z';
    assert!(matches!(
        dataset_from_bytes(&bad_magic),
        Err(PersistError::BadMagic { .. })
    ));
    assert!(matches!(
        dataset_from_bytes(&bytes[..bytes.len() - 3]),
        Err(PersistError::Truncated { .. })
    ));
    // The trailer checksum itself is pinned by FNV-1a.
    let n = ck.len();
    assert_eq!(
        u64::from_le_bytes(ck[n - 8..].try_into().unwrap()),
        fnv1a64(&ck[..n - 8])
    );

    assert!(started.elapsed().as_secs_f64() < 30.0, "determinism suite over budget");
    pass(9, "determinism & persistence", started);
}
