//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any criterion fails. Criterion 9 runs only when `COVFUSE_EPF_DIR` names
//! a directory holding `NP.csv`, `PJM.csv`, `BE.csv`, `FR.csv`, `DE.csv`.

use std::f64::consts::TAU;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use covfuse::autodiff::Tape;
use covfuse::backbone::BackboneConfig;
use covfuse::checkpoint::Checkpoint;
use covfuse::data::{
    chrono_split, fit_apply_norm, make_windows, write_frame, DatasetSchema, FutureCovMode, SeriesFrame, SplitSpec,
    WindowSample, WindowSpec,
};
use covfuse::evaluation::{
    evaluate, gen_synthetic, mae, mse, run_benchmark, BenchmarkConfig, BenchmarkDataset, CellStatus, EvalProtocol,
    SyntheticKind, SyntheticSpec, Variant,
};
use covfuse::fusion::{tile_refined, Fusion, FusionConfig, FusionShape};
use covfuse::model::{Model, ModelConfig, ModelShape};
use covfuse::params::{ParamGroup, ParamStore};
use covfuse::screening::{granger_test, lasso_fit, lasso_lag_importance, LassoConfig};
use covfuse::tokenizer::{token_count, PatchConfig};
use covfuse::training::{apply_groups, fit, grad_check, mse_loss, pretrain, select_trainables, TrainConfig, TrainMode};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn tiny_backbone(d: usize, in_tokens: usize, out_tokens: usize) -> BackboneConfig {
    BackboneConfig {
        d_model: d,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_ff: 2 * d,
        dropout: 0.0,
        max_input_tokens: in_tokens,
        max_output_tokens: out_tokens,
        instance_norm: true,
    }
}

fn random_window(rng: &mut ChaCha8Rng, shape: ModelShape, t: usize, f: usize) -> WindowSample {
    let mut block = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| normal(rng));
    WindowSample {
        origin: t,
        x_target: block(shape.targets, t),
        x_past: block(shape.past, t),
        y_future: block(shape.future, f),
        y_target: block(shape.targets, f),
    }
}

fn identity_at_init() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for seed in 0..100u64 {
        let shape = ModelShape::new(rng.gen_range(1..=4), rng.gen_range(0..=3), rng.gen_range(0..=3));
        let p = if rng.gen_bool(0.5) { 4 } else { 8 };
        let t = rng.gen_range(p..=64);
        let f = rng.gen_range(1..=32);
        let mut cfg = ModelConfig::new(t, f, p, shape);
        cfg.backbone = tiny_backbone(8, t.div_ceil(p), f.div_ceil(p));
        let fused = Model::new(cfg.clone(), seed).unwrap();
        let mut plain_cfg = cfg.without_fusion();
        plain_cfg.shape = ModelShape::new(shape.targets, 0, 0);
        let plain = Model::new(plain_cfg, seed).unwrap();
        let w = random_window(&mut rng, shape, t, f);
        let y_fused = fused.predict(&w).unwrap();
        let y_plain = plain.predict(&w.without_covariates()).unwrap();
        if y_fused != y_plain || y_fused != fused.predict_backbone(&w).unwrap() {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{failures}/100 configs differ from the backbone"))
}

fn gradient_oracle() -> Outcome {
    let shape = ModelShape::new(2, 1, 2);
    let mut cfg = ModelConfig::new(8, 6, 4, shape);
    cfg.backbone = tiny_backbone(4, 2, 2);
    let mut worst = Vec::new();
    for mode in [TrainMode::FrozenBackbone, TrainMode::FullFinetune] {
        let mut model = Model::new(cfg.clone(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in model.store.iter_mut() {
            p.value.mapv_inplace(|v| v + 0.1 * normal(&mut rng));
        }
        let groups = select_trainables(&model, mode);
        apply_groups(&mut model, &groups);
        let w = random_window(&mut rng, shape, 8, 6);
        worst.push(grad_check(&model, &w, 1e-5).unwrap());
    }
    verdict(
        worst.iter().all(|e| *e < 1e-4),
        format!("max relative error frozen {:.2e}, full {:.2e}", worst[0], worst[1]),
    )
}

fn shape_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for _ in 0..1000 {
        let c = rng.gen_range(1..=4);
        let mp = rng.gen_range(0..=3);
        let mf = rng.gen_range(0..=3);
        let d = rng.gen_range(1..=6);
        let p = rng.gen_range(1..=12);
        let f = rng.gen_range(1..=48);
        let batch = rng.gen_range(1..=3);
        let o = token_count(f, p);
        let mut ok = o >= 1 && o * p >= f && (o - 1) * p < f;

        let mut store = ParamStore::default();
        let fshape = FusionShape { targets: c, past: mp, future: mf, d_model: d };
        let fusion = Fusion::new(&mut store, &mut rng, &FusionConfig::default(), fshape, &PatchConfig::new(p));
        let mut tape = Tape::inference(&store);
        let zt = tape.constant(Array2::from_shape_fn((batch * c * o, d), |_| normal(&mut rng)));
        let zp = (mp > 0).then(|| tape.constant(Array2::from_shape_fn((batch * mp * o, d), |_| normal(&mut rng))));
        let u1 = fusion.stage1_input(&mut tape, zt, zp, batch, o);
        ok &= tape.value(u1).dim() == (batch * o, (c + mp) * d);
        let h = fusion.stage1(&mut tape, zt, zp, batch, o);
        let y_future = Array2::from_shape_fn((batch * mf, f), |_| normal(&mut rng));
        let fe = fusion.embed_future(&mut tape, &y_future, &PatchConfig::new(p), o).unwrap();
        let u2 = fusion.stage2_input(&mut tape, h, fe, batch, o);
        ok &= tape.value(u2).dim() == (batch * o, (1 + mf) * d);
        let r = fusion.stage2(&mut tape, h, fe, batch, o);
        let tiled = fusion.tile(&mut tape, r, batch, o);
        let (rv, tv) = (tape.value(r).clone(), tape.value(tiled).clone());
        for b in 0..batch {
            for t in 0..c {
                for j in 0..o {
                    ok &= tv.row((b * c + t) * o + j) == rv.row(b * o + j);
                }
            }
        }
        let r1 = rv.slice(ndarray::s![0..o, ..]).t().to_owned();
        let tiled1 = tile_refined(&r1, c);
        ok &= tiled1.outer_iter().all(|s| s == r1);
        if !ok {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{failures}/1000 random draws violate a law"))
}

fn mini_windows(shape: ModelShape, n: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_window(&mut rng, shape, 8, 4)).collect()
}

fn frozen_conservation() -> Outcome {
    let shape = ModelShape::new(2, 1, 1);
    let mut cfg = ModelConfig::new(8, 4, 4, shape);
    cfg.backbone = tiny_backbone(8, 2, 1);
    let mut model = Model::new(cfg, 4).unwrap();
    let before = model.store.clone();
    let ws = mini_windows(shape, 16, 5);
    let train = TrainConfig { lr: 1e-2, epochs: 5, batch_size: 4, patience: 5, ..TrainConfig::default() };
    let report = fit(&mut model, &ws[..12], &ws[12..], &train, None).unwrap();
    let conserved = before
        .iter()
        .zip(model.store.iter())
        .filter(|((_, a), _)| a.group.is_backbone())
        .all(|((_, a), (_, b))| a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let expected = [ParamGroup::FutureEmbedding, ParamGroup::MlpPast, ParamGroup::MlpFuture, ParamGroup::Head];
    let set_matches = model.store.iter().all(|(_, p)| p.trainable == expected.contains(&p.group));
    let every_group_present = expected.iter().all(|g| model.store.iter().any(|(_, p)| p.group == *g));
    verdict(
        conserved && set_matches && every_group_present && report.epochs.len() == 5,
        format!(
            "backbone bit-identical: {conserved}; trainable set is W_f + MLPs + head: {}; {} of {} parameters trained",
            set_matches && every_group_present,
            report.trainable_params,
            report.total_params
        ),
    )
}

struct BenefitRun {
    cov: f64,
    no_cov: f64,
    withheld: f64,
    oracle: f64,
    driver_share: f64,
}

const BENEFIT_T: usize = 48;
const BENEFIT_F: usize = 24;
const BENEFIT_P: usize = 24;

fn driver_task(seed: u64) -> SeriesFrame {
    gen_synthetic(&SyntheticSpec {
        kind: SyntheticKind::PeriodicPlusFutureDriver,
        length: 1500,
        noise: 0.1,
        alpha: 1.0,
        period: BENEFIT_P,
        seed,
    })
}

/// Least squares of the target on `[1, sin, cos, driver]`, fitted on the
/// training split and scored on the test split.
fn regression_oracle(train: &SeriesFrame, test: &SeriesFrame, offset: usize) -> f64 {
    let design = |frame: &SeriesFrame, start: usize| {
        let d = &frame.channel("driver").unwrap().values;
        DMatrix::from_fn(frame.len(), 4, |t, j| {
            let a = TAU * (start + t) as f64 / BENEFIT_P as f64;
            [1.0, a.sin(), a.cos(), d[t]][j]
        })
    };
    let x = design(train, 0);
    let y = DVector::from_column_slice(&train.channel("y").unwrap().values);
    let beta = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let pred = design(test, offset) * beta;
    let truth = &test.channel("y").unwrap().values;
    truth.iter().zip(pred.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

fn benefit_run(seed: u64) -> BenefitRun {
    let frame = driver_task(seed);
    let y = &frame.channel("y").unwrap().values;
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let driver_share = var(&frame.channel("driver").unwrap().values) / var(y);
    let (train, val, test) = chrono_split(&frame, &SplitSpec::default(), BENEFIT_T + BENEFIT_F).unwrap();
    let offset = train.len() + val.len();
    let (_, train, rest) = fit_apply_norm(&train, &[&val, &test]).unwrap();
    let (val, test) = (&rest[0], &rest[1]);
    let oracle = regression_oracle(&train, test, offset);

    let spec = WindowSpec::new(BENEFIT_T, BENEFIT_F);
    let (tw, vw, sw) = (
        make_windows(&train, &spec).unwrap(),
        make_windows(val, &spec).unwrap(),
        make_windows(test, &spec).unwrap(),
    );
    let strip = |ws: &[WindowSample]| ws.iter().map(WindowSample::without_future).collect::<Vec<_>>();
    let mut cfg = ModelConfig::new(BENEFIT_T, BENEFIT_F, BENEFIT_P, ModelShape::new(1, 0, 1));
    cfg.backbone = tiny_backbone(16, 2, 1);
    let pre = TrainConfig { lr: 1e-3, epochs: 20, batch_size: 32, seed, patience: 20, ..TrainConfig::default() };
    let (backbone, _) = pretrain(&cfg, &tw, &vw, &pre, None).unwrap();
    let tune = TrainConfig { epochs: 100, patience: 100, ..pre };

    let protocol = EvalProtocol::new(BENEFIT_T, BENEFIT_F);
    let mut plain = backbone.clone();
    fit(&mut plain, &strip(&tw), &strip(&vw), &tune, None).unwrap();
    let no_cov = evaluate(&plain, &sw, &protocol, "driver").unwrap().mse;

    let mut fused = Model::new(cfg.clone(), seed).unwrap();
    fused.load_backbone(&backbone.store).unwrap();
    fit(&mut fused, &tw, &vw, &tune, None).unwrap();
    let cov = evaluate(&fused, &sw, &protocol, "driver").unwrap().mse;

    let mut wcfg = cfg;
    wcfg.shape.future = 0;
    let mut blind = Model::new(wcfg, seed).unwrap();
    blind.load_backbone(&backbone.store).unwrap();
    fit(&mut blind, &strip(&tw), &strip(&vw), &tune, None).unwrap();
    let withheld = evaluate(&blind, &sw, &protocol.with_mode(FutureCovMode::Withheld), "driver").unwrap().mse;

    BenefitRun { cov, no_cov, withheld, oracle, driver_share }
}

fn benefit_runs() -> &'static [BenefitRun] {
    static RUNS: std::sync::OnceLock<Vec<BenefitRun>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| (0..5).map(benefit_run).collect())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn covariate_benefit() -> Outcome {
    let runs = benefit_runs();
    let ratio = median(runs.iter().map(|r| r.cov / r.no_cov).collect());
    let share = runs.iter().map(|r| r.driver_share).fold(f64::INFINITY, f64::min);
    let oracle = runs.iter().map(|r| r.oracle).fold(0.0, f64::max);
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{:.3}/{:.3}", r.cov, r.no_cov)).collect();
    verdict(
        ratio <= 0.7 && share >= 0.5 && oracle < 0.05,
        format!(
            "median cov/no-cov MSE ratio {ratio:.3} (cov/no-cov per seed {}); driver variance share >= {share:.2}; regression oracle MSE <= {oracle:.4}",
            per_seed.join(", ")
        ),
    )
}

fn protocol_isolation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = ModelShape::new(2, 1, 2);
    let mut cfg = ModelConfig::new(16, 8, 4, shape);
    cfg.backbone = tiny_backbone(8, 4, 2);
    let mut model = Model::new(cfg, 1).unwrap();
    for p in model.store.iter_mut() {
        p.value.mapv_inplace(|v| v + 0.1 * normal(&mut rng));
    }
    let windows: Vec<WindowSample> = (0..20).map(|_| random_window(&mut rng, shape, 16, 8)).collect();
    let perturbed: Vec<WindowSample> = windows
        .iter()
        .map(|w| WindowSample { y_future: w.y_future.mapv(|v| v * 7.0 + 3.0), ..w.clone() })
        .collect();
    let protocol = EvalProtocol::new(16, 8).with_mode(FutureCovMode::Withheld);
    let a = evaluate(&model, &windows, &protocol, "x").unwrap();
    let b = evaluate(&model, &perturbed, &protocol, "x").unwrap();
    let isolated = a.mse.to_bits() == b.mse.to_bits() && a.mae.to_bits() == b.mae.to_bits();
    let direct = windows
        .iter()
        .zip(&perturbed)
        .all(|(w, p)| model.predict(&w.without_future()).unwrap() == model.predict(&p.without_future()).unwrap());
    let provided = evaluate(&model, &windows, &protocol.with_mode(FutureCovMode::Provided), "x").unwrap();
    let sensitive = provided.mse != a.mse;

    let runs = benefit_runs();
    let wins = runs.iter().filter(|r| r.cov < r.withheld).count();
    let pairs: Vec<String> = runs.iter().map(|r| format!("{:.3}<{:.3}", r.cov, r.withheld)).collect();
    verdict(
        isolated && direct && sensitive && wins == runs.len(),
        format!(
            "withheld forecasts bit-identical under Y_future perturbation: {}; provided beats withheld on {wins}/{} seeds ({})",
            isolated && direct,
            runs.len(),
            pairs.join(", ")
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (r, c) = (rng.gen_range(1..8), rng.gen_range(1..12));
        let y = Array2::from_shape_fn((r, c), |_| rng.gen_range(-10.0..10.0));
        let y_hat = Array2::from_shape_fn((r, c), |_| rng.gen_range(-10.0..10.0));
        let (mut se, mut ae) = (0.0, 0.0);
        for i in 0..r {
            for j in 0..c {
                let d: f64 = y[[i, j]] - y_hat[[i, j]];
                se += d * d;
                ae += d.abs();
            }
        }
        let n = (r * c) as f64;
        worst = worst
            .max((mse(&y, &y_hat).unwrap() - se / n).abs())
            .max((mae(&y, &y_hat).unwrap() - ae / n).abs())
            .max((mse_loss(&y, &y_hat).unwrap() - se / n).abs());
    }
    let a = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let example = mse_loss(&a, &b).unwrap();
    verdict(
        worst < 1e-12 && example == 1.0,
        format!("max deviation from double loop {worst:.1e}; mse_loss example = {example}"),
    )
}

fn screening_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let series = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| normal(rng)).collect::<Vec<f64>>();

    let x = series(2000, &mut rng);
    let eps = series(2000, &mut rng);
    let y: Vec<f64> = (0..2000).map(|t| if t == 0 { 0.0 } else { 0.9 * x[t - 1] } + eps[t]).collect();
    let planted = granger_test(&x, &y, 4, 0.05).unwrap().p_value;

    let mut rejections = 0;
    for _ in 0..200 {
        let a = series(500, &mut rng);
        let b = series(500, &mut rng);
        if granger_test(&a, &b, 4, 0.05).unwrap().reject {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 200.0;

    let cfg = LassoConfig { max_lag: 4, ..LassoConfig::default() };
    let mut first = 0;
    for seed in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        let covs: Vec<Vec<f64>> = (0..3).map(|_| series(400, &mut r)).collect();
        let noise = series(400, &mut r);
        let target: Vec<f64> = (0..400)
            .map(|t| if t < 2 { 0.0 } else { 0.8 * covs[0][t - 2] } + 0.5 * noise[t])
            .collect();
        let refs: Vec<&[f64]> = covs.iter().map(Vec::as_slice).collect();
        let imp = lasso_lag_importance(&refs, &target, &cfg).unwrap();
        if imp.ranking[0].0 == 0 {
            first += 1;
        }
    }

    let (n, p) = (200, 6);
    let raw = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let centered = DMatrix::from_fn(n, p, |i, j| raw[(i, j)] - raw.column(j).mean());
    let q = centered.qr().q();
    let yo = DVector::from_fn(n, |_, _| normal(&mut rng));
    let ls = q.clone().svd(true, true).solve(&yo.map(|v| v - yo.mean()), 1e-12).unwrap();
    let x = Array2::from_shape_fn((n, p), |(i, j)| q[(i, j)]);
    let y = ndarray::Array1::from_iter(yo.iter().copied());
    let fit0 = lasso_fit(&x, &y, 0.0, 10_000, 1e-14, None).unwrap();
    let coef_err = fit0.coef.iter().zip(ls.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    verdict(
        planted < 0.01 && rate <= 0.10 && first >= 95 && coef_err < 1e-6,
        format!(
            "planted p = {planted:.1e}; null rejection rate {rate:.3}; lasso ranks driver first in {first}/100; lambda=0 vs least squares {coef_err:.1e}"
        ),
    )
}

const EPF_MARKETS: [&str; 5] = ["NP", "PJM", "BE", "FR", "DE"];

fn epf_dataset(dir: &Path, name: &str) -> BenchmarkDataset {
    let path = dir.join(format!("{name}.csv"));
    let header = std::fs::read_to_string(&path)
        .ok()
        .and_then(|t| t.lines().next().map(str::to_string))
        .unwrap_or_default();
    let columns: Vec<String> = header.split(',').skip(1).map(|c| c.trim().to_string()).collect();
    let target = columns.first().cloned().unwrap_or_else(|| "Price".into());
    let mut schema = DatasetSchema::new(&[target.as_str()], "1h");
    schema.future_covariates = columns.iter().skip(1).cloned().collect();
    BenchmarkDataset { name: name.to_string(), path, schema }
}

fn epf_directional() -> Outcome {
    let Some(dir) = std::env::var_os("COVFUSE_EPF_DIR").map(PathBuf::from) else {
        return Outcome::Skipped("COVFUSE_EPF_DIR not set".into());
    };
    let cfg = BenchmarkConfig {
        datasets: EPF_MARKETS.iter().map(|m| epf_dataset(&dir, m)).collect(),
        protocols: vec![FutureCovMode::Provided],
        split: SplitSpec::default(),
        eval: EvalProtocol { stride: 24, ..EvalProtocol::default() },
        patch: PatchConfig::new(24),
        backbone: BackboneConfig {
            d_model: 32,
            n_enc_layers: 2,
            n_dec_layers: 1,
            n_heads: 4,
            d_ff: 64,
            dropout: 0.1,
            max_input_tokens: 7,
            max_output_tokens: 1,
            instance_norm: true,
        },
        fusion: FusionConfig::default(),
        pretrain: TrainConfig { lr: 1e-3, epochs: 20, batch_size: 64, patience: 5, ..TrainConfig::default() },
        finetune: TrainConfig { lr: 1e-3, epochs: 30, batch_size: 64, patience: 5, ..TrainConfig::default() },
        train_stride: 6,
    };
    let report = run_benchmark(&cfg).unwrap();
    println!("{}", report.to_table());
    let mut wins = 0;
    let mut scored = 0;
    for m in EPF_MARKETS {
        let cov = report.row(m, FutureCovMode::Provided, Variant::Cov);
        let plain = report.row(m, FutureCovMode::Provided, Variant::NoCov);
        if let (Some(c), Some(p)) = (cov, plain) {
            if c.status == CellStatus::Ok && p.status == CellStatus::Ok {
                scored += 1;
                if c.mse < p.mse {
                    wins += 1;
                }
            }
        }
    }
    if scored == 0 {
        return Outcome::Skipped(format!("no EPF market files found in {}", dir.display()));
    }
    verdict(wins >= 4, format!("cov beats no-cov on {wins} of {scored} markets"))
}

fn determinism_and_io() -> Outcome {
    let shape = ModelShape::new(1, 1, 1);
    let mut cfg = ModelConfig::new(8, 4, 4, shape);
    cfg.backbone = BackboneConfig { dropout: 0.1, ..tiny_backbone(8, 2, 1) };
    let ws = mini_windows(shape, 12, 2);
    let train = TrainConfig { lr: 5e-3, epochs: 3, batch_size: 4, seed: 11, mode: TrainMode::FullFinetune, ..TrainConfig::default() };
    let run = || {
        let mut m = Model::new(cfg.clone(), 3).unwrap();
        fit(&mut m, &ws[..9], &ws[9..], &train, None).unwrap();
        Checkpoint::new(m).to_bytes().unwrap()
    };
    let (a, b) = (run(), run());
    let checkpoints_equal = a == b;

    let restored = Checkpoint::from_bytes(&a).unwrap();
    let original = Checkpoint::from_bytes(&b).unwrap();
    let bit_exact = restored.model.store.iter().zip(original.model.store.iter()).all(|((_, x), (_, y))| {
        x.name == y.name
            && x.trainable == y.trainable
            && x.value.iter().zip(y.value.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
    }) && restored.to_bytes().unwrap() == a;

    let dir = tempfile::tempdir().unwrap();
    let frame = gen_synthetic(&SyntheticSpec { kind: SyntheticKind::PeriodicPlusFutureDriver, length: 400, ..SyntheticSpec::default() });
    let path = dir.path().join("toy.csv");
    write_frame(&frame, &path).unwrap();
    let mut schema = DatasetSchema::new(&["y"], "1h");
    schema.future_covariates = vec!["driver".into()];
    let small = TrainConfig { lr: 1e-3, epochs: 2, batch_size: 16, ..TrainConfig::default() };
    let bench = BenchmarkConfig {
        datasets: vec![BenchmarkDataset { name: "toy".into(), path, schema }],
        protocols: vec![FutureCovMode::Withheld, FutureCovMode::Provided],
        split: SplitSpec::default(),
        eval: EvalProtocol { lookback: 24, horizon: 12, stride: 4, ..EvalProtocol::default() },
        patch: PatchConfig::new(12),
        backbone: BackboneConfig { dropout: 0.1, ..tiny_backbone(8, 2, 1) },
        fusion: FusionConfig::default(),
        pretrain: small.clone(),
        finetune: small,
        train_stride: 4,
    };
    let r1 = run_benchmark(&bench).unwrap();
    let r2 = run_benchmark(&bench).unwrap();
    let tables_equal = r1.to_csv() == r2.to_csv() && r1.to_table() == r2.to_table() && !r1.is_partial();
    verdict(
        checkpoints_equal && bit_exact && tables_equal,
        format!(
            "checkpoints byte-identical: {checkpoints_equal}; round trip bit-exact: {bit_exact}; benchmark tables identical: {tables_equal}"
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("identity at init", identity_at_init),
        ("gradient oracle", gradient_oracle),
        ("shape laws", shape_laws),
        ("frozen-mode conservation", frozen_conservation),
        ("synthetic covariate benefit", covariate_benefit),
        ("protocol isolation", protocol_isolation),
        ("metric oracles", metric_oracles),
        ("screening calibration", screening_calibration),
        ("EPF directional check", epf_directional),
        ("determinism and I/O", determinism_and_io),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                Outcome::Fail(msg)
            });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skipped(d) => ("SKIPPED", d),
        };
        println!("criterion {n:>2} [{tag}] {name}: {detail} ({secs:.1}s)");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
