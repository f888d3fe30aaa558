//! Workbench acceptance suite: nine numbered checks covering the solver,
//! the data pipeline, both network variants, training quality, uncertainty,
//! runtime, generalization, and reproducibility.
//!
//! Each check prints one `criterion N: PASS/FAIL — detail` line (visible
//! under `--nocapture`). The checks serialize on a global lock so the
//! shared desk-scale training run never competes for CPU, and criteria
//! 5–8 reuse that single training run.

use std::sync::{Mutex, MutexGuard, OnceLock, PoisonError};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gwnet_core::datagen::{generate_dataset, regenerate_problem, write_dataset, Dataset, DatasetConfig};
use gwnet_core::fdsolver::{dense_reference_solve, solve_steady_state};
use gwnet_core::grid::{GridSpec, CH_HEAD, CH_MASK};
use gwnet_core::model::checkpoint::save_checkpoint;
use gwnet_core::model::{build_model, Model, ModelConfig, Variant};
use gwnet_core::nn::gradcheck::{max_rel_err, probe_indices, weighted_loss};
use gwnet_core::nn::ops::{
    batch_norm_eval, batch_norm_eval_backward, batch_norm_train, batch_norm_train_backward,
    conv2d, conv2d_backward, dropout, dropout_backward, leaky_relu, leaky_relu_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, transposed_conv2d, transposed_conv2d_backward,
    upconv4, upconv4_backward, BnParams, BN_EPS, BN_MOMENTUM,
};
use gwnet_core::nn::Tensor4;
use gwnet_core::train::analysis::{
    benchmark_wallclock, generalization_suite, generalization_table, mc_dropout_predict,
    well_distance_split,
};
use gwnet_core::train::{batch_from, evaluate_metrics, train, TrainConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(PoisonError::into_inner)
}

fn report(criterion: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion}: {verdict} — {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: iterative solver matches the dense reference.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_solver_oracle_equivalence() {
    let _guard = serial();
    let started = Instant::now();
    let mut worst = 0.0f64;
    for side in [8usize, 16] {
        let grid = GridSpec::square(side).unwrap();
        let config = DatasetConfig::new(grid, 50, 11 + side as u64);
        for index in 0..50 {
            let (k, scenario) = regenerate_problem(&config, index).unwrap();
            let iterative = solve_steady_state(&k, &scenario, config.solver_tol).unwrap();
            let dense = dense_reference_solve(&k, &scenario).unwrap();
            for (a, b) in iterative.values.iter().zip(&dense.values) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        worst < 1e-8 && secs < 5.0,
        &format!("100 scenarios at 8x8 and 16x16: max |iterative − dense| {worst:.2e} (< 1e-8), {secs:.2} s (< 5 s)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: discrete maximum principle on generated samples.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_discrete_maximum_principle() {
    let _guard = serial();
    let config = DatasetConfig::new(GridSpec::square(64).unwrap(), 1000, 31);
    let data = generate_dataset(&config).unwrap();
    let mut worst = 0.0f64;
    for sample in &data.samples {
        let heads = sample.channel(CH_HEAD);
        let mask = sample.channel(CH_MASK);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..sample.grid.n_cells() {
            if mask[i] > 0.5 {
                lo = lo.min(heads[i] as f64);
                hi = hi.max(heads[i] as f64);
            }
        }
        for &t in &sample.target {
            worst = worst.max((lo - t as f64).max(t as f64 - hi).max(0.0));
        }
    }
    report(
        2,
        worst <= 1e-9,
        &format!("1000 samples at 64x64: max head excursion outside fixed-head range {worst:.2e} (tolerance 1e-9)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: architecture table conformance for both variants.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_architecture_shape_conformance() {
    let _guard = serial();
    let grid = GridSpec::square(64).unwrap();
    let expected: &[(&str, [usize; 4])] = &[
        ("down1", [1, 64, 32, 32]),
        ("down2", [1, 128, 16, 16]),
        ("down3", [1, 256, 8, 8]),
        ("down4", [1, 512, 4, 4]),
        ("up1", [1, 256, 8, 8]),
        ("concat1", [1, 512, 8, 8]),
        ("up2", [1, 128, 16, 16]),
        ("concat2", [1, 256, 16, 16]),
        ("up3", [1, 64, 32, 32]),
        ("concat3", [1, 128, 32, 32]),
        ("head", [1, 1, 64, 64]),
    ];
    let gates: &[(&str, [usize; 4])] = &[
        ("gate1", [1, 256, 8, 8]),
        ("gate2", [1, 128, 16, 16]),
        ("gate3", [1, 64, 32, 32]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f32> = (0..3 * 64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = Tensor4::from_vec(1, 3, 64, 64, data).unwrap();

    let mut checked = 0usize;
    for variant in [Variant::UNet, Variant::AttentionUNet] {
        let model: Model<f32> = build_model(&ModelConfig::new(variant), &grid, 7).unwrap();
        let (y, _, shapes) = model.forward_eval_full(&x, false, true).unwrap();
        assert_eq!(y.dims(), (1, 1, 64, 64));
        let shapes = shapes.unwrap();
        let find = |name: &str| {
            shapes
                .iter()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("missing stage {name}"))
                .1
        };
        for &(name, shape) in expected {
            assert_eq!(find(name), shape, "{variant}: {name}");
            checked += 1;
        }
        if variant == Variant::AttentionUNet {
            for &(name, shape) in gates {
                assert_eq!(find(name), shape, "{name}");
                checked += 1;
            }
        }
    }

    let model: Model<f32> = build_model(&ModelConfig::attention_unet(), &grid, 7).unwrap();
    let (_, rows) = model.count_parameters();
    let count = |name: &str| rows.iter().find(|(n, _)| n == name).unwrap().1;
    let params_ok = count("head") == 2049 && count("down1") == 3072 && count("down2") == 131_584;
    report(
        3,
        params_ok,
        &format!(
            "{checked} stage shapes match on both variants; parameters head {} (= 2049), down1 {} (= 3072), down2 {} (= 131584)",
            count("head"),
            count("down1"),
            count("down2")
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: per-layer and end-to-end gradient checks.
// ---------------------------------------------------------------------------

fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Relative error with an absolute floor so near-zero derivative pairs do
/// not amplify finite-difference noise.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn per_layer_gradient_checks() -> f64 {
    const EPS: f64 = 1e-3;
    const PROBES: usize = 24;
    let mut worst = 0.0f64;
    let mut note = |layer: &str, err: f64| {
        assert!(err < 1e-4, "{layer} gradient rel err {err:.3e}");
        worst = worst.max(err);
    };

    // Strided convolution: input, weight, and bias gradients.
    {
        let (n, ci, h, w, co, k) = (2, 2, 6, 6, 3, 4);
        let mut x = rand_vec(n * ci * h * w, 1);
        let mut wgt = rand_vec(co * ci * k * k, 2);
        let mut bias = rand_vec(co, 3);
        let coeffs = rand_vec(n * co * 3 * 3, 4);
        let forward = |x: &[f64], wgt: &[f64], b: &[f64]| {
            let xt = Tensor4::from_vec(n, ci, h, w, x.to_vec()).unwrap();
            let wt = Tensor4::from_vec(co, ci, k, k, wgt.to_vec()).unwrap();
            conv2d(&xt, &wt, Some(b), 2, 1).unwrap()
        };
        let dy = Tensor4::from_vec(n, co, 3, 3, coeffs.clone()).unwrap();
        let xt = Tensor4::from_vec(n, ci, h, w, x.clone()).unwrap();
        let wt = Tensor4::from_vec(co, ci, k, k, wgt.clone()).unwrap();
        let (dx, dw, db) = conv2d_backward(&xt, &wt, &dy, 2, 1).unwrap();

        let (w2, b2, c2) = (wgt.clone(), bias.clone(), coeffs.clone());
        let mut f = move |xv: &[f64]| weighted_loss(&forward(xv, &w2, &b2).data, &c2);
        note("conv dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), EPS));
        let (x2, b2, c2) = (x.clone(), bias.clone(), coeffs.clone());
        let mut f = move |wv: &[f64]| weighted_loss(&forward(&x2, wv, &b2).data, &c2);
        note("conv dw", max_rel_err(&mut f, &mut wgt, &dw.data, &probe_indices(dw.numel(), PROBES), EPS));
        let (x2, w2) = (x.clone(), wgt.clone());
        let mut f = move |bv: &[f64]| weighted_loss(&forward(&x2, &w2, bv).data, &coeffs);
        note("conv db", max_rel_err(&mut f, &mut bias, &db, &probe_indices(db.len(), 3), EPS));
    }

    // Transposed convolution (decoder head).
    {
        let (n, ci, h, w, co, k) = (1, 2, 3, 3, 2, 4);
        let mut x = rand_vec(n * ci * h * w, 11);
        let mut wgt = rand_vec(ci * co * k * k, 12);
        let coeffs = rand_vec(n * co * 6 * 6, 13);
        let forward = |x: &[f64], wgt: &[f64]| {
            let xt = Tensor4::from_vec(n, ci, h, w, x.to_vec()).unwrap();
            let wt = Tensor4::from_vec(ci, co, k, k, wgt.to_vec()).unwrap();
            transposed_conv2d(&xt, &wt, None, 2, 1).unwrap()
        };
        let dy = Tensor4::from_vec(n, co, 6, 6, coeffs.clone()).unwrap();
        let xt = Tensor4::from_vec(n, ci, h, w, x.clone()).unwrap();
        let wt = Tensor4::from_vec(ci, co, k, k, wgt.clone()).unwrap();
        let (dx, dw, _) = transposed_conv2d_backward(&xt, &wt, &dy, 2, 1).unwrap();

        let (w2, c2) = (wgt.clone(), coeffs.clone());
        let mut f = move |xv: &[f64]| weighted_loss(&forward(xv, &w2).data, &c2);
        note("tconv dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), EPS));
        let x2 = x.clone();
        let mut f = move |wv: &[f64]| weighted_loss(&forward(&x2, wv).data, &coeffs);
        note("tconv dw", max_rel_err(&mut f, &mut wgt, &dw.data, &probe_indices(dw.numel(), PROBES), EPS));
    }

    // Fused nearest-neighbor upsample + convolution (decoder up blocks).
    {
        let (n, ci, h, w, co) = (1, 2, 3, 4, 3);
        let mut x = rand_vec(n * ci * h * w, 21);
        let mut wgt = rand_vec(co * ci * 16, 22);
        let coeffs = rand_vec(n * co * 2 * h * 2 * w, 23);
        let forward = |x: &[f64], wgt: &[f64]| {
            let xt = Tensor4::from_vec(n, ci, h, w, x.to_vec()).unwrap();
            let wt = Tensor4::from_vec(co, ci, 4, 4, wgt.to_vec()).unwrap();
            upconv4(&xt, &wt).unwrap()
        };
        let dy = Tensor4::from_vec(n, co, 2 * h, 2 * w, coeffs.clone()).unwrap();
        let xt = Tensor4::from_vec(n, ci, h, w, x.clone()).unwrap();
        let wt = Tensor4::from_vec(co, ci, 4, 4, wgt.clone()).unwrap();
        let (dx, dw) = upconv4_backward(&xt, &wt, &dy).unwrap();

        let (w2, c2) = (wgt.clone(), coeffs.clone());
        let mut f = move |xv: &[f64]| weighted_loss(&forward(xv, &w2).data, &c2);
        note("upconv dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), EPS));
        let x2 = x.clone();
        let mut f = move |wv: &[f64]| weighted_loss(&forward(&x2, wv).data, &coeffs);
        note("upconv dw", max_rel_err(&mut f, &mut wgt, &dw.data, &probe_indices(dw.numel(), PROBES), EPS));
    }

    // Batch normalization, batch-statistics mode.
    {
        let (n, c, h, w) = (3, 2, 4, 4);
        let mut x = rand_vec(n * c * h * w, 31);
        let mut gamma = rand_vec(c, 32);
        let mut beta = rand_vec(c, 33);
        let coeffs = rand_vec(n * c * h * w, 34);
        let forward = |x: &[f64], g: &[f64], b: &[f64]| {
            let xt = Tensor4::from_vec(n, c, h, w, x.to_vec()).unwrap();
            let mut params = BnParams::new(c);
            params.gamma = g.to_vec();
            params.beta = b.to_vec();
            batch_norm_train(&xt, &mut params, BN_EPS, BN_MOMENTUM).unwrap().0
        };
        let xt = Tensor4::from_vec(n, c, h, w, x.clone()).unwrap();
        let mut params = BnParams::new(c);
        params.gamma = gamma.clone();
        params.beta = beta.clone();
        let (_, cache) = batch_norm_train(&xt, &mut params, BN_EPS, BN_MOMENTUM).unwrap();
        let dy = Tensor4::from_vec(n, c, h, w, coeffs.clone()).unwrap();
        let (dx, dgamma, dbeta) = batch_norm_train_backward(&cache, &gamma, &dy);

        let (g2, b2, c2) = (gamma.clone(), beta.clone(), coeffs.clone());
        let mut f = move |xv: &[f64]| weighted_loss(&forward(xv, &g2, &b2).data, &c2);
        note("bn-train dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), EPS));
        let (x2, b2, c2) = (x.clone(), beta.clone(), coeffs.clone());
        let mut f = move |gv: &[f64]| weighted_loss(&forward(&x2, gv, &b2).data, &c2);
        note("bn-train dgamma", max_rel_err(&mut f, &mut gamma, &dgamma, &[0, 1], EPS));
        let (x2, g2) = (x.clone(), gamma.clone());
        let mut f = move |bv: &[f64]| weighted_loss(&forward(&x2, &g2, bv).data, &coeffs);
        note("bn-train dbeta", max_rel_err(&mut f, &mut beta, &dbeta, &[0, 1], EPS));
    }

    // Batch normalization, running-statistics mode.
    {
        let (n, c, h, w) = (2, 2, 3, 3);
        let mut x = rand_vec(n * c * h * w, 41);
        let coeffs = rand_vec(n * c * h * w, 42);
        let mut params = BnParams::<f64>::new(c);
        params.gamma = rand_vec(c, 43);
        params.beta = rand_vec(c, 44);
        params.running_mean = rand_vec(c, 45);
        params.running_var = vec![0.7, 1.9];
        let p2 = params.clone();
        let forward = move |x: &[f64]| {
            let xt = Tensor4::from_vec(n, c, h, w, x.to_vec()).unwrap();
            batch_norm_eval(&xt, &p2, BN_EPS)
        };
        let xt = Tensor4::from_vec(n, c, h, w, x.clone()).unwrap();
        let dy = Tensor4::from_vec(n, c, h, w, coeffs.clone()).unwrap();
        let (dx, _, _) = batch_norm_eval_backward(&xt, &params, BN_EPS, &dy);
        let mut f = move |xv: &[f64]| weighted_loss(&forward(xv).data, &coeffs);
        note("bn-eval dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), EPS));
    }

    // Activations; inputs nudged away from the kinks at zero.
    {
        let (n, c, h, w) = (1, 2, 4, 4);
        let mut x: Vec<f64> = rand_vec(n * c * h * w, 51)
            .into_iter()
            .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
            .collect();
        let coeffs = rand_vec(n * c * h * w, 52);
        let dy = Tensor4::from_vec(n, c, h, w, coeffs.clone()).unwrap();
        let xt = Tensor4::from_vec(n, c, h, w, x.clone()).unwrap();

        let dx = leaky_relu_backward(&xt, 0.3, &dy);
        let c2 = coeffs.clone();
        let mut f = move |xv: &[f64]| {
            let t = Tensor4::from_vec(n, c, h, w, xv.to_vec()).unwrap();
            weighted_loss(&leaky_relu(&t, 0.3).data, &c2)
        };
        note("leaky-relu dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), 1e-4));

        let dx = relu_backward(&xt, &dy);
        let c2 = coeffs.clone();
        let mut f = move |xv: &[f64]| {
            let t = Tensor4::from_vec(n, c, h, w, xv.to_vec()).unwrap();
            weighted_loss(&relu(&t).data, &c2)
        };
        note("relu dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), 1e-4));

        let y = sigmoid(&xt);
        let dx = sigmoid_backward(&y, &dy);
        let c2 = coeffs.clone();
        let mut f = move |xv: &[f64]| {
            let t = Tensor4::from_vec(n, c, h, w, xv.to_vec()).unwrap();
            weighted_loss(&sigmoid(&t).data, &c2)
        };
        note("sigmoid dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), EPS));
    }

    // Dropout through a frozen mask.
    {
        let (n, c, h, w) = (1, 2, 4, 4);
        let mut x = rand_vec(n * c * h * w, 61);
        let coeffs = rand_vec(n * c * h * w, 62);
        let xt = Tensor4::from_vec(n, c, h, w, x.clone()).unwrap();
        let (_, mask) = dropout(&xt, 0.4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dy = Tensor4::from_vec(n, c, h, w, coeffs.clone()).unwrap();
        let dx = dropout_backward(&mask, &dy);
        let m2 = mask.clone();
        let mut f = move |xv: &[f64]| {
            xv.iter()
                .zip(&m2)
                .zip(&coeffs)
                .map(|((v, m), r)| v * m * r)
                .sum()
        };
        note("dropout dx", max_rel_err(&mut f, &mut x, &dx.data, &probe_indices(dx.numel(), PROBES), EPS));
    }

    worst
}

fn end_to_end_gradient_check() -> f64 {
    const EPS: f64 = 1e-4;
    const TOL: f64 = 1e-3;
    let mut config = ModelConfig::attention_unet();
    config.encoder_widths = [2, 4, 8, 16];
    let grid = GridSpec::square(16).unwrap();
    let mut model: Model<f64> = build_model(&config, &grid, 31).unwrap();
    // Non-trivial running statistics so normalization actually rescales.
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for slice in model.param_slices_mut(false) {
        for v in slice {
            if *v == 0.0 {
                *v = rng.random_range(-0.3..0.3);
            } else if *v == 1.0 {
                *v = rng.random_range(0.5..1.5);
            }
        }
    }
    let x = {
        let data = (0..3 * 256).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor4::from_vec(1, 3, 16, 16, data).unwrap()
    };
    let coeffs: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (_, trace) = model.forward_eval_traced(&x).unwrap();
    let dy = Tensor4::from_vec(1, 1, 16, 16, coeffs.clone()).unwrap();
    let mut grads = model.zeros_like();
    let d_input = model.backward(&trace, &dy, &mut grads).unwrap();

    let mut worst = 0.0f64;
    let mut x_var = x.clone();
    for idx in probe_indices(x.numel(), 16) {
        let old = x_var.data[idx];
        x_var.data[idx] = old + EPS;
        let lp = weighted_loss(&model.forward_eval(&x_var).unwrap().data, &coeffs);
        x_var.data[idx] = old - EPS;
        let lm = weighted_loss(&model.forward_eval(&x_var).unwrap().data, &coeffs);
        x_var.data[idx] = old;
        let e = rel_err(d_input.data[idx], (lp - lm) / (2.0 * EPS));
        worst = worst.max(e);
        assert!(e < TOL, "end-to-end input gradient off at {idx} (rel {e:.2e})");
    }

    let infos = model.param_infos(true);
    let analytic: Vec<Vec<f64>> = grads
        .param_slices(true)
        .into_iter()
        .map(|s| s.to_vec())
        .collect();
    for (arr_idx, info) in infos.iter().enumerate() {
        let len: usize = info.shape.iter().product();
        for idx in probe_indices(len, 2) {
            let old = {
                let mut slices = model.param_slices_mut(true);
                let old = slices[arr_idx][idx];
                slices[arr_idx][idx] = old + EPS;
                old
            };
            let lp = weighted_loss(&model.forward_eval(&x).unwrap().data, &coeffs);
            model.param_slices_mut(true)[arr_idx][idx] = old - EPS;
            let lm = weighted_loss(&model.forward_eval(&x).unwrap().data, &coeffs);
            model.param_slices_mut(true)[arr_idx][idx] = old;
            let e = rel_err(analytic[arr_idx][idx], (lp - lm) / (2.0 * EPS));
            worst = worst.max(e);
            assert!(e < TOL, "end-to-end {}[{idx}] gradient off (rel {e:.2e})", info.name);
        }
    }
    worst
}

#[test]
fn criterion_4_gradient_checks() {
    let _guard = serial();
    let layer_worst = per_layer_gradient_checks();
    let end_worst = end_to_end_gradient_check();
    report(
        4,
        layer_worst < 1e-4 && end_worst < 1e-3,
        &format!("per-layer worst rel err {layer_worst:.2e} (< 1e-4); end-to-end 16x16 worst rel err {end_worst:.2e} (< 1e-3)"),
    );
}

// ---------------------------------------------------------------------------
// Shared desk-scale training run for criteria 5–8.
// ---------------------------------------------------------------------------

const DESK_SIDE: usize = 32;
const DESK_EPOCHS: usize = 60;
const DESK_SEED: u64 = 7;

struct Desk {
    attention: Model<f32>,
    attention_rmse: f64,
    attention_r2: f64,
    unet_rmse: f64,
    unet_r2: f64,
    test: Dataset,
    train_seconds: f64,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let grid = GridSpec::square(DESK_SIDE).unwrap();
        let train_set = generate_dataset(&DatasetConfig::new(grid, 2000, 201)).unwrap();
        let val_set = generate_dataset(&DatasetConfig::new(grid, 500, 202)).unwrap();
        let test = generate_dataset(&DatasetConfig::new(grid, 500, 203)).unwrap();

        let mut config = TrainConfig::new(DESK_SEED);
        config.epochs = DESK_EPOCHS;
        config.snapshot_epochs = vec![];

        let started = Instant::now();
        let fit = |variant: Variant| {
            let mc = ModelConfig::new(variant).with_width_divisor(2).unwrap();
            let mut model = build_model(&mc, &grid, DESK_SEED).unwrap();
            train(&mut model, &train_set, &val_set, &config).unwrap();
            let metrics = evaluate_metrics(&model, &test, config.batch_size).unwrap();
            (model, metrics)
        };
        let (attention, att_metrics) = fit(Variant::AttentionUNet);
        let (_, unet_metrics) = fit(Variant::UNet);
        let train_seconds = started.elapsed().as_secs_f64();

        Desk {
            attention,
            attention_rmse: att_metrics.rmse,
            attention_r2: att_metrics.r2,
            unet_rmse: unet_metrics.rmse,
            unet_r2: unet_metrics.r2,
            test,
            train_seconds,
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 5: desk-scale training quality and variant ordering.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_desk_scale_training() {
    let _guard = serial();
    let d = desk();
    report(
        5,
        d.attention_r2 >= 0.95 && d.attention_rmse < d.unet_rmse,
        &format!(
            "32x32, halved widths, 2000/500/500, {DESK_EPOCHS} epochs, batch 32, lr 8e-4: attention R² {:.4} (≥ 0.95), RMSE {:.3e} < plain {:.3e} (plain R² {:.4}); both fits {:.0} s",
            d.attention_r2, d.attention_rmse, d.unet_rmse, d.unet_r2, d.train_seconds
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: MC-dropout uncertainty behavior.
// ---------------------------------------------------------------------------

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[test]
fn criterion_6_mc_dropout_uncertainty() {
    let _guard = serial();
    let d = desk();
    let pixels = d.test.config.grid.n_cells();

    let (x, _) = batch_from(&d.test, &[0]);
    let (_, std_off) = mc_dropout_predict(&d.attention, &x, 8, 5, false).unwrap();
    let all_zero = std_off.data.iter().all(|&v| v == 0.0);

    let mut near = Vec::new();
    let mut far = Vec::new();
    for s in 0..24 {
        let (x, _) = batch_from(&d.test, &[s]);
        let (_, std) = mc_dropout_predict(&d.attention, &x, 200, 900 + s as u64, true).unwrap();
        let (near_med, far_med) =
            well_distance_split(&std.data[..pixels], &d.test.samples[s], 3.0).unwrap();
        near.push(near_med);
        far.push(far_med);
    }
    let near_med = median(&mut near);
    let far_med = median(&mut far);
    report(
        6,
        all_zero && near_med > far_med,
        &format!(
            "dropout off → std ≡ 0 exactly: {all_zero}; 200 passes on 24 samples: median std {near_med:.3e} within distance 3 of wells > {far_med:.3e} elsewhere"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: wall-clock benchmark, surrogate vs. solver at 64x64.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_benchmark_speedup() {
    let _guard = serial();
    let d = desk();
    let config = DatasetConfig::new(GridSpec::square(64).unwrap(), 8, 401);
    let bench = benchmark_wallclock(&d.attention, &config, 8, 10, 2).unwrap();
    report(
        7,
        bench.speedup > 1.0,
        &format!(
            "10 timed runs (2 warmup excluded), 8 scenarios at 64x64: FD {:.3e} s/sample vs surrogate {:.3e} s/sample, speedup {:.2}x (> 1)",
            bench.fd_mean_s, bench.surrogate_mean_s, bench.speedup
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: generalization table over harder distributions.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_generalization_suite() {
    let _guard = serial();
    let d = desk();
    let base = DatasetConfig::new(GridSpec::square(DESK_SIDE).unwrap(), 1000, 301);
    let rows = generalization_suite(&d.attention, &base, 1000, 32).unwrap();
    let table = generalization_table(&rows);
    let get = |name: &str| {
        rows.iter()
            .find(|r| r.name == name)
            .unwrap_or_else(|| panic!("missing distribution {name}"))
    };
    let names_ok = rows.len() == 5
        && ["in-distribution", "conductivity-3-classes", "conductivity-10-classes", "wells-3", "wells-10"]
            .iter()
            .all(|n| rows.iter().any(|r| r.name == *n));
    let in_dist = get("in-distribution").mean_mse;
    let wells10 = get("wells-10").mean_mse;
    let table_ok = table.contains("distribution") && table.lines().count() >= 6;
    report(
        8,
        names_ok && table_ok && wells10 >= in_dist,
        &format!(
            "five distributions at 1000 samples each; 10-well MSE {wells10:.3e} ≥ in-distribution {in_dist:.3e}; table well-formed"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: bit-identical reruns with fixed seeds.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism() {
    let _guard = serial();
    let tmp = tempfile::tempdir().unwrap();

    // Dataset bytes.
    let config = DatasetConfig::new(GridSpec::square(16).unwrap(), 6, 77);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    write_dataset(&generate_dataset(&config).unwrap(), &a.join("d.gwds")).unwrap();
    write_dataset(&generate_dataset(&config).unwrap(), &b.join("d.gwds")).unwrap();
    let datasets_equal = std::fs::read(a.join("d.gwds")).unwrap()
        == std::fs::read(b.join("d.gwds")).unwrap()
        && std::fs::read(a.join("d.manifest")).unwrap()
            == std::fs::read(b.join("d.manifest")).unwrap();

    // Initialized checkpoints.
    let grid = GridSpec::square(16).unwrap();
    let mc = ModelConfig::attention_unet().with_width_divisor(8).unwrap();
    save_checkpoint(&a.join("init.gwck"), &build_model(&mc, &grid, 5).unwrap()).unwrap();
    save_checkpoint(&b.join("init.gwck"), &build_model(&mc, &grid, 5).unwrap()).unwrap();
    let inits_equal =
        std::fs::read(a.join("init.gwck")).unwrap() == std::fs::read(b.join("init.gwck")).unwrap();

    // Full training runs.
    let train_set = generate_dataset(&DatasetConfig::new(grid, 8, 88)).unwrap();
    let val_set = generate_dataset(&DatasetConfig::new(grid, 4, 89)).unwrap();
    let mut config = TrainConfig::new(9);
    config.epochs = 2;
    config.batch_size = 4;
    let run = |path: &std::path::Path| {
        let mut model = build_model::<f32>(&mc, &grid, 9).unwrap();
        let report = train(&mut model, &train_set, &val_set, &config).unwrap();
        save_checkpoint(path, &model).unwrap();
        (model, report.history)
    };
    let (model_a, hist_a) = run(&a.join("trained.gwck"));
    let (model_b, hist_b) = run(&b.join("trained.gwck"));
    let trained_equal = model_a == model_b
        && hist_a == hist_b
        && std::fs::read(a.join("trained.gwck")).unwrap()
            == std::fs::read(b.join("trained.gwck")).unwrap();

    report(
        9,
        datasets_equal && inits_equal && trained_equal,
        &format!(
            "dataset bytes identical: {datasets_equal}; initialized checkpoints identical: {inits_equal}; trained checkpoints and histories identical: {trained_equal}"
        ),
    );
}
