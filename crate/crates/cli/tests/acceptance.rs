//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. Exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thermoguard::activation::Activation;
use thermoguard::cnnmodel::{receptive_field, CnnConfig, CnnModel};
use thermoguard::dataio::{lopo_split_for, read_model, write_model, Dataset, Profile, Split};
use thermoguard::features::{ewma, SpanSet};
use thermoguard::linmodel::{fit_closed_form, fit_sgd, BatchMode, LinearConfig, LinearModel, LossKind, SgdConfig};
use thermoguard::metrics::{linf, mae, mse, r_squared};
use thermoguard::model::{fit, fit_prepared, prepare, FitOptions, LinearSolver, ModelSpec, Pipeline, TemperatureEstimator, TrainedModel};
use thermoguard::monitor::{calibrate, run_monitor, MonitorConfig};
use thermoguard::rng::seeded;
use thermoguard::rnnmodel::{RnnConfig, RnnModel};
use thermoguard::simulate::{default_plant, simulate_dataset, DatasetSpec, FaultSpec, MachineRating, PlantParams};
use thermoguard::tensor::Matrix;
use thermoguard::train::{LinearRegressor, Optimizer, TrainConfig, Trainable};
use thermoguard::Error;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn plant() -> PlantParams {
    default_plant(&MachineRating::default())
}

fn dataset(n_profiles: usize, hours: i64, seed: u64, fault: Option<FaultSpec>) -> Dataset {
    let spec = DatasetSpec { n_profiles, duration_s: hours * 3600, noise_std_c: 0.1, seed, fault };
    simulate_dataset(&spec, &plant()).expect("simulation")
}

fn rows(rng: &mut impl Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn fd_worst<M: Trainable>(model: &M, w: &[&[f64]], t: &[&[f64]], h: f64) -> f64 {
    let (_, g) = model.loss_gradient(w, t, 0).unwrap();
    let mut worst: f64 = 0.0;
    for ti in 0..model.parameters().len() {
        for i in 0..model.parameters()[ti].len() {
            let mut a = model.clone();
            a.parameters_mut()[ti].data[i] += h;
            let mut b = model.clone();
            b.parameters_mut()[ti].data[i] -= h;
            let num = (a.loss_gradient(w, t, 0).unwrap().0 - b.loss_gradient(w, t, 0).unwrap().0) / (2.0 * h);
            worst = worst.max(rel_err(g.tensors[ti].data[i], num));
        }
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(1);
    let x_rows = rows(&mut rng, 30, 5);
    let x = Matrix::from_rows(&x_rows).unwrap();
    let mut lin_worst: f64 = 0.0;
    for loss in [LossKind::Squared, LossKind::EpsilonInsensitive, LossKind::Huber] {
        let config = LinearConfig { loss, epsilon: 0.1, delta: 0.5, alpha: 0.05, l1_ratio: 0.0 };
        let model = LinearModel { beta: vec![0.3, -0.7, 0.1, 0.9, -0.2], beta0: 0.4, config };
        let y: Vec<f64> = x_rows
            .iter()
            .map(|r| {
                let mut off: f64 = rng.random_range(-2.0..2.0);
                while [0.0, 0.1, 0.5].iter().any(|k| (off.abs() - k).abs() < 1e-3) {
                    off = rng.random_range(-2.0..2.0);
                }
                model.predict_row(r) + off
            })
            .collect();
        let reg = LinearRegressor::from_models(&[model.clone()]).unwrap();
        let targets: Vec<Vec<f64>> = y.iter().map(|v| vec![*v]).collect();
        let (_, g) = reg.loss_gradient(&refs(&x_rows), &refs(&targets), 0).unwrap();
        let h = 1e-6;
        for i in 0..=5 {
            let (mut a, mut b) = (model.clone(), model.clone());
            if i < 5 {
                a.beta[i] += h;
                b.beta[i] -= h;
            } else {
                a.beta0 += h;
                b.beta0 -= h;
            }
            let num = (a.objective(&x, &y).unwrap() - b.objective(&x, &y).unwrap()) / (2.0 * h);
            let ana = if i < 5 { g.tensors[0].data[i] } else { g.tensors[1].data[0] };
            lin_worst = lin_worst.max(rel_err(ana, num));
        }
    }
    let cnn = CnnModel::init(
        CnnConfig {
            n_filter: vec![3, 2],
            s_filter: vec![2, 3],
            dilation: vec![2, 1],
            dropout: vec![0.0, 0.0],
            seq_len: 8,
            n_inputs: 3,
            n_outputs: 2,
            activation: Activation::Tanh,
        },
        5,
    )
    .unwrap();
    let (w, t) = (rows(&mut rng, 4, 24), rows(&mut rng, 4, 2));
    let cnn_worst = fd_worst(&cnn, &refs(&w), &refs(&t), 1e-5);
    let rnn = RnnModel::init(
        RnnConfig {
            neurons: vec![3, 2],
            dropout: vec![0.0; 2],
            recurrent_dropout: vec![0.0; 2],
            seq_len: 6,
            n_inputs: 3,
            n_outputs: 2,
        },
        7,
    )
    .unwrap();
    let (w, t) = (rows(&mut rng, 3, 18), rows(&mut rng, 3, 2));
    let rnn_worst = fd_worst(&rnn, &refs(&w), &refs(&t), 1e-5);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        lin_worst < 1e-6 && cnn_worst < 1e-5 && rnn_worst < 1e-5 && secs < 60.0,
        format!("worst rel. error linear {lin_worst:.1e}, cnn {cnn_worst:.1e}, lstm {rnn_worst:.1e}"),
    )
}

fn closed_form_oracle() -> Outcome {
    let mut rng = seeded(2);
    let (n, p) = (250, 4);
    let x_rows = rows(&mut rng, n, p);
    let x = Matrix::from_rows(&x_rows).unwrap();
    let y: Vec<f64> = x_rows
        .iter()
        .map(|r| 1.0 + 2.0 * r[0] - r[1] + 0.5 * r[2] + 0.1 * r[3] + 0.2 * rng.random_range(-1.0..1.0))
        .collect();
    let exact = fit_closed_form(&x, &y).unwrap();
    let theta = |m: &LinearModel| std::iter::once(m.beta0).chain(m.beta.clone()).collect::<Vec<_>>();

    let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    let normal = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * DVector::from_column_slice(&y)));
    let oracle_gap = theta(&exact).iter().zip(normal.iter()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));

    let sgd = SgdConfig { learning_rate: 1.0, power: 0.0, batch_mode: BatchMode::Batch, max_epochs: 3000, shuffle_seed: 0 };
    let config = LinearConfig { loss: LossKind::Squared, alpha: 0.0, ..LinearConfig::default() };
    let (gd, _) = fit_sgd(&x, &y, &config, &sgd).unwrap();
    let gd_gap = theta(&gd).iter().zip(theta(&exact)).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));

    let pred = exact.predict(&x).unwrap();
    let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
    let norm = |v: &[f64]| v.iter().map(|z| z * z).sum::<f64>().sqrt();
    let mut ortho: f64 = (r.iter().sum::<f64>() / (norm(&r) * (n as f64).sqrt())).abs();
    for j in 0..p {
        let c = x.column(j);
        ortho = ortho.max((c.iter().zip(&r).map(|(u, v)| u * v).sum::<f64>() / (norm(&c) * norm(&r))).abs());
    }
    ensure(
        gd_gap < 1e-4 && ortho < 1e-8 && oracle_gap < 1e-10,
        format!("SGD gap {gd_gap:.1e}, residual orthogonality {ortho:.1e}, normal-equations gap {oracle_gap:.1e}"),
    )
}

fn lstm_fidelity() -> Outcome {
    let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut rng = seeded(3);
    let mut worst: f64 = 0.0;
    let instances = 150;
    for _ in 0..instances {
        let (n_in, hid, steps) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=7));
        let config = RnnConfig {
            neurons: vec![hid],
            dropout: vec![0.0],
            recurrent_dropout: vec![0.0],
            seq_len: steps,
            n_inputs: n_in,
            n_outputs: 1,
        };
        let mut model = RnnModel::init(config, rng.random()).unwrap();
        let l = &mut model.layers[0];
        for t in [&mut l.w, &mut l.u, &mut l.b] {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
        }
        let xs: Vec<f64> = (0..steps * n_in).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = model.hidden_sequences(&xs).unwrap().remove(0);
        let (w, u, b) = (&model.layers[0].w.data, &model.layers[0].u.data, &model.layers[0].b.data);
        let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
        for s in 0..steps {
            let x = &xs[s * n_in..(s + 1) * n_in];
            let z = |g: usize, j: usize| {
                let r = g * hid + j;
                b[r] + (0..n_in).map(|k| w[r * n_in + k] * x[k]).sum::<f64>() + (0..hid).map(|k| u[r * hid + k] * h[k]).sum::<f64>()
            };
            let mut hn = vec![0.0; hid];
            for j in 0..hid {
                c[j] = sigma(z(0, j)) * c[j] + sigma(z(1, j)) * z(3, j).tanh();
                hn[j] = sigma(z(2, j)) * c[j].tanh();
            }
            h = hn;
            for j in 0..hid {
                worst = worst.max((got[s * hid + j] - h[j]).abs());
            }
        }
    }
    ensure(worst <= 1e-10, format!("{instances} instances, worst deviation {worst:.1e}"))
}

fn metric_fidelity() -> Outcome {
    let mut rng = seeded(4);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for _ in 0..1000 {
        let n = rng.random_range(2..100);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let p: Vec<f64> = y.iter().map(|v| v + rng.random_range(-3.0..3.0)).collect();
        let (mut ss, mut sa, mut mx, mut sum) = (0.0, 0.0, 0.0f64, 0.0);
        for i in 0..n {
            let e = y[i] - p[i];
            ss += e * e;
            sa += e.abs();
            mx = mx.max(e.abs());
            sum += y[i];
        }
        let mean = sum / n as f64;
        let tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        exact &= mse(&y, &p).unwrap() == ss / n as f64;
        exact &= mae(&y, &p).unwrap() == sa / n as f64;
        exact &= linf(&y, &p).unwrap() == mx;
        worst = worst.max((r_squared(&y, &p).unwrap() - (1.0 - ss / tot)).abs());
    }
    let constant = matches!(r_squared(&[2.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), Err(Error::UndefinedMetric(_)));
    ensure(
        exact && worst <= 1e-12 && constant,
        format!("mse/mae/linf bit-exact {exact}, worst R² deviation {worst:.1e}, constant-y error {constant}"),
    )
}

fn feature_pipeline() -> Outcome {
    let ds = dataset(3, 1, 8, None);
    let profiles: Vec<&Profile> = ds.profiles.iter().collect();
    let pipeline = Pipeline::fit(&profiles, SpanSet::default()).unwrap();
    let mats: Vec<Matrix> = profiles.iter().map(|p| pipeline.features(p).unwrap()).collect();
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    for j in 0..pipeline.n_features() {
        let col: Vec<f64> = mats.iter().flat_map(|m| m.column(j)).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
        worst_mean = worst_mean.max(m.abs());
        worst_std = worst_std.max((s - 1.0).abs());
    }
    let mut rng = seeded(5);
    let xs: Vec<f64> = (0..500).map(|_| rng.random_range(-5.0..5.0)).collect();
    let fixed = ewma(&[7.25; 400], 2600).unwrap().iter().all(|v| *v == 7.25);
    let identity = ewma(&xs, 1).unwrap() == xs;
    let mut ys = xs.clone();
    ys[300..].iter_mut().for_each(|v| *v += 1.0);
    let causal = ewma(&xs, 180).unwrap()[..300] == ewma(&ys, 180).unwrap()[..300];
    let shape = pipeline.windows(profiles[0], 100, 1).unwrap().window_shape();
    ensure(
        worst_mean < 1e-10 && worst_std < 1e-10 && fixed && identity && causal && shape == (100, 27),
        format!(
            "|mean| ≤ {worst_mean:.1e}, |std − 1| ≤ {worst_std:.1e}, EWMA fixed point {fixed}, identity {identity}, causal {causal}, window {shape:?}"
        ),
    )
}

fn receptive_field_check() -> Outcome {
    let config = CnnConfig::default();
    let rf = receptive_field(&config);
    let (seq, n_in) = (config.seq_len, config.n_inputs);
    let model = CnnModel::init(config, 6).unwrap();
    let mut rng = seeded(6);
    let window: Vec<f64> = (0..seq * n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = model.layer_preactivations(&window).unwrap();
    let s = 40;
    let mut moved = window.clone();
    moved[s * n_in] += 1.0;
    let out = model.layer_preactivations(&moved).unwrap();
    let last = base.len() - 1;
    let width = base[last].len() / seq;
    let step = |m: &Vec<Vec<f64>>, t: usize| m[last][t * width..(t + 1) * width].to_vec();
    let past_untouched = (0..s).all(|t| step(&base, t) == step(&out, t));
    let beyond_untouched = (s + rf..seq).all(|t| step(&base, t) == step(&out, t));
    let edge_reached = step(&base, s + rf - 1) != step(&out, s + rf - 1);
    ensure(
        rf == 6 && past_untouched && beyond_untouched && edge_reached,
        format!("receptive field {rf}; past untouched {past_untouched}, field tight {}", beyond_untouched && edge_reached),
    )
}

/// Reduced training budgets for the end-to-end runs.
fn budget(spec: &ModelSpec) -> FitOptions {
    let (sgd, optimizer, train_stride, validation_stride) = match spec {
        ModelSpec::Linear(_) => (
            SgdConfig { learning_rate: 0.03, power: 0.25, batch_mode: BatchMode::Minibatch(64), max_epochs: 100, shuffle_seed: 1 },
            Optimizer::Sgd,
            5,
            10,
        ),
        ModelSpec::Cnn(_) => (
            SgdConfig { learning_rate: 1e-3, power: 0.0, batch_mode: BatchMode::Minibatch(32), max_epochs: 8, shuffle_seed: 1 },
            Optimizer::adam(),
            30,
            60,
        ),
        ModelSpec::Rnn(_) => (
            SgdConfig { learning_rate: 3e-3, power: 0.0, batch_mode: BatchMode::Minibatch(32), max_epochs: 4, shuffle_seed: 1 },
            Optimizer::adam(),
            60,
            60,
        ),
    };
    FitOptions {
        train: TrainConfig { sgd, optimizer, seed: 1, ..TrainConfig::default() },
        train_stride,
        validation_stride,
        init_seed: 1,
        ..FitOptions::default()
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let ds = dataset(12, 8, 1, None);
    let split = lopo_split_for(&ds, 2, "p01").unwrap();
    let test = ds.get("p01").unwrap();
    let specs = [
        ModelSpec::Linear(LinearConfig { alpha: 1e-4, ..LinearConfig::default() }),
        ModelSpec::Cnn(CnnConfig::default()),
        ModelSpec::Rnn(RnnConfig::default()),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in &specs {
        let (model, _) = fit(spec, &ds, &split, &budget(spec)).map_err(|e| format!("{:?}: {e}", spec.kind()))?;
        let pred = model.predict_profile(test).map_err(|e| e.to_string())?;
        let report = pred.report().map_err(|e| e.to_string())?;
        let res = pred.residuals();
        let mut cells = Vec::new();
        for (j, t) in report.targets.iter().enumerate() {
            let col = res.column(j);
            let frac = col.iter().filter(|e| e.abs() < 4.0).count() as f64 / col.len() as f64;
            ok &= t.mae < 3.0 && frac > 0.95;
            cells.push(format!("{} {:.2}/{:.1}%", t.target, t.mae, 100.0 * frac));
        }
        parts.push(format!("{} [{}]", spec.kind(), cells.join(", ")));
    }
    let mins = start.elapsed().as_secs_f64() / 60.0;
    ok &= mins < 30.0;
    ensure(ok, format!("MAE °C / share under 4 °C: {}; {mins:.1} min", parts.join("; ")))
}

fn fault_detection() -> Outcome {
    const ONSET: f64 = 3.0 * 3600.0;
    // Exact least squares on a broad training set; healthy and faulty test
    // profiles come from seeds never seen in training or calibration.
    let train = dataset(24, 8, 11, None);
    let ids: Vec<String> = train.ids().iter().map(|s| s.to_string()).collect();
    let split = Split { train: ids[..22].to_vec(), validation: ids[22..].to_vec(), test: Vec::new() };
    let spec = ModelSpec::Linear(LinearConfig { alpha: 0.0, ..LinearConfig::default() });
    let opts = FitOptions { solver: LinearSolver::ClosedForm, validation_stride: 10, ..FitOptions::default() };
    let data = prepare(&train, &split, 1, &opts).map_err(|e| e.to_string())?;
    let (model, _) = fit_prepared(&spec, &data, &split, &opts).map_err(|e| e.to_string())?;

    let cal = dataset(6, 8, 12, None);
    let cal_refs: Vec<&Profile> = cal.profiles.iter().collect();
    let policy = calibrate(&model, &cal_refs, &MonitorConfig::default()).map_err(|e| e.to_string())?;

    let healthy = dataset(3, 8, 13, None);
    let mut false_alarms = 0;
    let mut healthy_s = 0;
    for p in &healthy.profiles {
        false_alarms += run_monitor(&model, &policy, p).map_err(|e| e.to_string())?.events.len();
        healthy_s += p.len() - 1;
    }

    // Affected targets: the blockage moves the target's mean post-onset
    // temperature by more than its threshold.
    let faulty = dataset(3, 8, 13, Some(FaultSpec::new(0.7, ONSET).unwrap()));
    let mut missed = Vec::new();
    let mut early = 0;
    let mut affected = vec![false; 3];
    for (h, f) in healthy.profiles.iter().zip(&faulty.profiles) {
        let after: Vec<usize> = (0..f.len()).filter(|&i| f.frames[i].t as f64 > ONSET).collect();
        for j in 0..3 {
            let shift = after.iter().map(|&i| f.frames[i].targets()[j] - h.frames[i].targets()[j]).sum::<f64>() / after.len() as f64;
            affected[j] |= shift.abs() > policy.thresholds[j];
        }
        let run = run_monitor(&model, &policy, f).map_err(|e| e.to_string())?;
        early += run.events.iter().filter(|e| e.onset_t as f64 <= ONSET).count();
        for (j, name) in policy.targets.iter().enumerate() {
            let hit = run.events.iter().any(|e| &e.target == name && e.onset_t as f64 > ONSET);
            if affected[j] && !hit {
                missed.push(format!("{}:{name}", f.id));
            }
        }
    }
    let n_affected = affected.iter().filter(|a| **a).count();
    let thr: Vec<String> = policy.thresholds.iter().map(|t| format!("{t:.2}")).collect();
    ensure(
        n_affected > 0 && missed.is_empty() && false_alarms == 0 && early == 0 && healthy_s >= 24 * 3600,
        format!(
            "thresholds [{}] °C; {n_affected} affected target(s), missed {missed:?}, pre-onset events {early}; {false_alarms} alert(s) over {:.0} h healthy",
            thr.join(", "),
            healthy_s as f64 / 3600.0
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<i32, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_thermoguard")).args(args).output().map_err(|e| e.to_string())?;
    let code = out.status.code().unwrap_or(-1);
    if code != 0 && code != 2 {
        return Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(code)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let space = root.join("space.json");
    std::fs::write(
        &space,
        r#"{"params": {"model.alpha": {"low": 1e-4, "high": 1e-1, "scale": "log"}}, "budget": 3, "strategy": {"kind": "random", "seed": 2}}"#,
    )
    .unwrap();
    let cnn_cfg = root.join("cnn.json");
    std::fs::write(
        &cnn_cfg,
        r#"{"model": {"n_filter": [4, 3], "s_filter": [2, 2], "dilation": [2, 1], "dropout": [0.2, 0.0], "seq_len": 16}, "fit": {"train_stride": 20, "validation_stride": 40}}"#,
    )
    .unwrap();
    let mut runs = Vec::new();
    for rep in 0..2 {
        let dir = root.join(format!("run{rep}"));
        let (data, faulty) = (s(&dir.join("data")), s(&dir.join("faulty")));
        run_cli(&["simulate", "--profiles", "4", "--hours", "1", "--seed", "5", "--out", &data])?;
        run_cli(&["simulate", "--profiles", "2", "--hours", "1", "--seed", "6", "--fault", "0.7@1800", "--out", &faulty])?;
        for kind in ["linear", "cnn", "rnn"] {
            let out = s(&dir.join(kind));
            let mut args = vec!["train", "--kind", kind, "--data", &data, "--test-profile", "p01", "--seed", "9", "--epochs", "2", "--out", &out];
            let cfg = s(&cnn_cfg);
            if kind == "cnn" {
                args.extend(["--config", &cfg]);
            }
            let rnn_cfg = s(&root.join("rnn.json"));
            if kind == "rnn" {
                std::fs::write(&rnn_cfg, r#"{"model": {"neurons": [4], "dropout": [0.2], "recurrent_dropout": [0.2], "seq_len": 12}, "fit": {"train_stride": 40, "validation_stride": 80}}"#).unwrap();
                args.extend(["--config", &rnn_cfg]);
            }
            run_cli(&args)?;
        }
        run_cli(&["search", "--kind", "linear", "--data", &data, "--test-profile", "p01", "--space", &s(&space), "--out", &s(&dir.join("search"))])?;
        let model = s(&dir.join("linear").join("model.thgm"));
        run_cli(&["calibrate", "--model", &model, "--data", &data, "--profiles", "p01", "--out", &s(&dir.join("cal"))])?;
        run_cli(&["monitor", "--model", &model, "--policy", &s(&dir.join("cal").join("policy.json")), "--data", &faulty, "--out", &s(&dir.join("mon"))])?;
        runs.push(dir);
    }
    let files = [
        "data/p01.csv",
        "faulty/p02.csv",
        "linear/model.thgm",
        "cnn/model.thgm",
        "rnn/model.thgm",
        "search/leaderboard.json",
        "cal/policy.json",
        "mon/alerts.jsonl",
    ];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(runs[0].join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(runs[1].join(f)).map_err(|e| format!("{f}: {e}"))?;
        if a != b {
            differing.push(f);
        }
    }
    let alerts = std::fs::read_to_string(runs[0].join("mon/alerts.jsonl")).unwrap_or_default().lines().count();
    ensure(
        differing.is_empty(),
        format!("{} artifacts compared across two runs ({alerts} alert lines); differing {differing:?}", files.len()),
    )
}

fn persistence() -> Outcome {
    let ds = dataset(3, 1, 21, None);
    let split = lopo_split_for(&ds, 1, "p01").unwrap();
    let specs = [
        ModelSpec::Linear(LinearConfig::default()),
        ModelSpec::Cnn(CnnConfig { n_filter: vec![6, 4], dropout: vec![0.1, 0.0], s_filter: vec![2, 3], dilation: vec![1, 2], seq_len: 20, ..CnnConfig::default() }),
        ModelSpec::Rnn(RnnConfig { neurons: vec![5, 3], seq_len: 15, ..RnnConfig::default() }),
    ];
    let mut ok = true;
    let mut kinds = Vec::new();
    for spec in &specs {
        let mut opts = FitOptions { train_stride: 30, validation_stride: 60, ..FitOptions::default() };
        opts.train.sgd.max_epochs = 2;
        let (model, _): (TrainedModel, _) = fit(spec, &ds, &split, &opts).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_model(&mut buf, &model).map_err(|e| e.to_string())?;
        let back = read_model(&mut buf.as_slice()).map_err(|e| e.to_string())?;
        let p = ds.get("p01").unwrap();
        let a = model.predict_profile(p).map_err(|e| e.to_string())?.predicted;
        let b = back.predict_profile(p).map_err(|e| e.to_string())?.predicted;
        let same = a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits());
        ok &= same;
        kinds.push(format!("{} {}", spec.kind(), if same { "identical" } else { "DIFFERS" }));
    }
    ensure(ok, kinds.join(", "))
}

fn main() {
    // Honour libtest's filter argument loosely so `cargo test <name>` can skip us.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("closed-form oracle", closed_form_oracle),
        ("LSTM equation fidelity", lstm_fidelity),
        ("metric fidelity", metric_fidelity),
        ("feature pipeline", feature_pipeline),
        ("receptive field", receptive_field_check),
        ("end-to-end synthetic estimation", end_to_end),
        ("fault detection", fault_detection),
        ("determinism", determinism),
        ("persistence", persistence),
    ];
    // ACCEPTANCE_CRITERIA=7,8 runs a subset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:2} PASS  {name}: {detail} ({secs:.1} s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} FAIL  {name}: {detail} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
