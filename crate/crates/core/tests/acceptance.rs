//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.
//!
//! Run alone with `cargo test -p uavfl-core --test acceptance`.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavfl_core::config::DataSource;
use uavfl_core::driver::{build_simulation, run_experiment};
use uavfl_core::energy::{channel_gain, comm_energy, compute_energy, min_transmit_time, ChannelConfig, CommMeter};
use uavfl_core::energy::ComputePowerConfig;
use uavfl_core::learning::{
    client_update, fedavg_aggregate, full_batch_gradient, loss_and_gradient, mixing_step, partition_dataset,
    run_dfl_schedule, DflPlan, Example, HyperParams, MixingMatrix, SyntheticBlobs,
};
use uavfl_core::metrics::{MemorySink, Phase, RoundRecord};
use uavfl_core::strategies::{centralized_reference, Method, RunStatus, Simulation};
use uavfl_core::{DatasetPartition, ExperimentConfig, Fleet, ModelLayout, ModelParams, Position};

const FEDAVG_TOL: f64 = 1e-12;
const GRADIENT_REL_TOL: f64 = 1e-4;
const MIXING_TOL: f64 = 1e-12;
const PHYSICS_REL_TOL: f64 = 0.01;
const CENTRALIZED_SHARE: f64 = 0.95;
const DOMINANCE_SHARE: f64 = 0.80;
const WARMUP_EPOCHS: usize = 5;
/// Bytes of an 11.2M-parameter float32 network.
const LARGE_MODEL_BYTES: u64 = 44_700_000;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_params(rng: &mut ChaCha8Rng, layout: ModelLayout, scale: f64) -> ModelParams {
    let values = (0..layout.dim()).map(|_| rng.random_range(-scale..scale)).collect();
    ModelParams::new(layout, values).unwrap()
}

fn fedavg_algebra() -> Result<String, String> {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = r.random_range(1..=64);
        let clients = r.random_range(1..=8);
        let layout = ModelLayout::Linear { inputs: dim };
        let models: Vec<ModelParams> = (0..clients).map(|_| random_params(&mut r, layout, 10.0)).collect();
        let counts: Vec<usize> = (0..clients).map(|_| r.random_range(1..=1000)).collect();
        let got = fedavg_aggregate(&models.iter().zip(&counts).map(|(m, &n)| (m, n)).collect::<Vec<_>>())
            .map_err(|e| e.to_string())?;
        let total: f64 = counts.iter().map(|&n| n as f64).sum();
        for i in 0..dim {
            let oracle: f64 = models.iter().zip(&counts).map(|(m, &n)| n as f64 / total * m.values()[i]).sum();
            worst = worst.max((got.values()[i] - oracle).abs());
        }
    }
    ensure(worst <= FEDAVG_TOL, || format!("aggregate off by {worst:e}"))?;

    // Server-side gradient step versus client steps followed by averaging.
    let mut step_gap: f64 = 0.0;
    for trial in 0..20 {
        let inputs = r.random_range(2..=6);
        let classes = r.random_range(2..=4);
        let layout = ModelLayout::Softmax { inputs, classes };
        let clients = r.random_range(1..=8);
        let blobs = SyntheticBlobs { features: inputs, classes, separation: 1.0, noise: 1.0 };
        let parts: Vec<DatasetPartition> = (0..clients)
            .map(|k| {
                let n = r.random_range(1..=30);
                DatasetPartition::new(blobs.generate(n, 100 * trial + k as u64).unwrap()).unwrap()
            })
            .collect();
        let w = random_params(&mut r, layout, 1.0);
        let eta = 0.3;
        let n: f64 = parts.iter().map(|p| p.size() as f64).sum();
        let mut server = w.values().to_vec();
        for p in &parts {
            let (_, g) = full_batch_gradient(&w, p).map_err(|e| e.to_string())?;
            for (v, gi) in server.iter_mut().zip(&g) {
                *v -= eta * p.size() as f64 / n * gi;
            }
        }
        let locals: Vec<ModelParams> = parts
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let hp = HyperParams { eta, batch_size: p.size(), local_epochs: 1, client_fraction: 1.0 };
                client_update(k, &w, p, &hp, 0).unwrap()
            })
            .collect();
        let averaged = fedavg_aggregate(&locals.iter().zip(&parts).map(|(m, p)| (m, p.size())).collect::<Vec<_>>())
            .map_err(|e| e.to_string())?;
        for (a, b) in averaged.values().iter().zip(&server) {
            step_gap = step_gap.max((a - b).abs());
        }
    }
    ensure(step_gap <= FEDAVG_TOL, || format!("one-step forms differ by {step_gap:e}"))?;
    Ok(format!("max aggregate error {worst:.1e}, one-step gap {step_gap:.1e} (tol {FEDAVG_TOL:e})"))
}

fn gradient_check() -> Result<String, String> {
    let layouts = [ModelLayout::Softmax { inputs: 10, classes: 4 }, ModelLayout::Mlp { inputs: 10, hidden: 16, classes: 4 }];
    let data = SyntheticBlobs::default().generate(64, 3).unwrap();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for layout in layouts {
        for _ in 0..10 {
            let w = random_params(&mut r, layout, 0.5);
            let mut batch: Vec<&Example> = data.iter().collect();
            batch.shuffle(&mut r);
            batch.truncate(8);
            let (_, g) = loss_and_gradient(&w, &batch);
            let fd: Vec<f64> = (0..w.len())
                .map(|i| {
                    let shifted = |delta: f64| {
                        let mut v = w.values().to_vec();
                        v[i] += delta;
                        loss_and_gradient(&ModelParams::new(layout, v).unwrap(), &batch).0
                    };
                    (shifted(h) - shifted(-h)) / (2.0 * h)
                })
                .collect();
            let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
            worst = worst.max(diff / scale.max(1e-12));
        }
    }
    ensure(worst <= GRADIENT_REL_TOL, || format!("relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.1e} over 20 points (tol {GRADIENT_REL_TOL:e})"))
}

fn random_doubly_stochastic(r: &mut ChaCha8Rng, n: usize) -> MixingMatrix {
    let mut m = vec![vec![0.0; n]; n];
    let weights: Vec<f64> = (0..4).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in weights {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(r);
        for (i, &j) in perm.iter().enumerate() {
            m[i][j] += w / total;
        }
    }
    MixingMatrix::new(m).unwrap()
}

fn mixing_algebra() -> Result<String, String> {
    let mut r = rng(3);
    let mut oracle_gap: f64 = 0.0;
    let mut mean_gap: f64 = 0.0;
    for trial in 0..50 {
        let n = r.random_range(2..=8);
        let dim = r.random_range(1..=16);
        let layout = ModelLayout::Linear { inputs: dim };
        let x: Vec<ModelParams> = (0..n).map(|_| random_params(&mut r, layout, 5.0)).collect();
        let c = if trial % 2 == 0 {
            random_doubly_stochastic(&mut r, n)
        } else {
            let rows = (0..n)
                .map(|_| {
                    let row: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / s).collect()
                })
                .collect();
            MixingMatrix::new(rows).unwrap()
        };
        let mixed = mixing_step(&x, &c).map_err(|e| e.to_string())?;
        // Columns are nodes: X_{t+1} = X_t C.
        let xm = DMatrix::from_fn(dim, n, |i, j| x[j].values()[i]);
        let cm = DMatrix::from_fn(n, n, |i, j| c.get(i, j));
        let expected = xm * cm;
        for (j, w) in mixed.iter().enumerate() {
            for i in 0..dim {
                oracle_gap = oracle_gap.max((w.values()[i] - expected[(i, j)]).abs());
            }
        }
        if trial % 2 == 0 {
            for i in 0..dim {
                let before: f64 = x.iter().map(|w| w.values()[i]).sum::<f64>() / n as f64;
                let after: f64 = mixed.iter().map(|w| w.values()[i]).sum::<f64>() / n as f64;
                mean_gap = mean_gap.max((before - after).abs());
            }
        }
    }
    ensure(oracle_gap <= MIXING_TOL, || format!("dense oracle gap {oracle_gap:e}"))?;
    ensure(mean_gap <= MIXING_TOL, || format!("mean drift {mean_gap:e}"))?;

    // No mixing steps: every node just runs full-batch gradient descent.
    let n = 5;
    let positions = (0..n).map(|i| Position::new(i as f64, 0.0, 0.0)).collect();
    let mut fleet = Fleet::from_positions(positions, 274.0).unwrap();
    let source = SyntheticBlobs::default().generate(100, 4).unwrap();
    let parts = partition_dataset(&source, n, 20, 0.0, 4).unwrap();
    let layout = ModelLayout::Softmax { inputs: 10, classes: 4 };
    let init = random_params(&mut r, layout, 0.3);
    let plan = DflPlan { tau1: 4, tau2: 0, rounds: 3, total_steps: 12, eta: 0.2 };
    let mut meter = CommMeter::new(ChannelConfig::default(), ComputePowerConfig::default(), 100, n);
    let c = random_doubly_stochastic(&mut r, n);
    let out = run_dfl_schedule(&mut fleet, &parts, &init, &plan, &c, &mut meter).map_err(|e| e.to_string())?;
    for (k, part) in parts.iter().enumerate() {
        let mut w = init.values().to_vec();
        for _ in 0..plan.total_steps {
            let (_, g) = full_batch_gradient(&ModelParams::new(layout, w.clone()).unwrap(), part).unwrap();
            for (v, gi) in w.iter_mut().zip(&g) {
                *v -= plan.eta * gi;
            }
        }
        let same = out.params[k].values().iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("node {k} differs from independent training"))?;
    }
    ensure(out.bytes_sent.iter().all(|&b| b == 0), || "bytes moved without mixing".into())?;
    Ok(format!("oracle gap {oracle_gap:.1e}, mean drift {mean_gap:.1e} (tol {MIXING_TOL:e}); tau2=0 bit-identical"))
}

fn base_config(n: usize, method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.fleet.n = n;
    cfg.plan.method = method;
    cfg.plan.ge = 30;
    cfg
}

fn consensus() -> Result<String, String> {
    let mut checks = 0;
    for method in [Method::C, Method::A] {
        let mut sim = build_simulation(&base_config(20, method)).map_err(|e| e.to_string())?;
        let mut sink = MemorySink::default();
        let live = |sim: &Simulation, ids: Vec<usize>| -> Vec<usize> {
            ids.into_iter().filter(|&k| sim.fleet().drones[k].is_alive()).collect()
        };
        while let Some(phase) = sim.step(&mut sink).map_err(|e| e.to_string())? {
            let groups: Vec<Vec<usize>> = match phase {
                Phase::Intra => (0..2).map(|c| live(&sim, sim.fleet().members(c))).collect(),
                Phase::Exchange => vec![live(&sim, (0..20).collect())],
                Phase::Local => return Err("local phase in a clustered method".into()),
            };
            for group in groups {
                let first = sim.params(group[0]).values();
                for &k in &group {
                    let same = sim.params(k).values().iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits());
                    ensure(same, || {
                        format!("{method:?} epoch {}: drone {k} differs from drone {}", sim.epochs_completed(), group[0])
                    })?;
                }
                checks += 1;
            }
        }
        ensure(sim.epochs_completed() == 30, || format!("{method:?} stopped at {}", sim.epochs_completed()))?;
    }
    Ok(format!("{checks} group checks over C and A, 20 drones x 30 epochs, all bitwise equal"))
}

/// Phase of each epoch, re-derived from the method definitions.
fn oracle_schedule(method: Method, ge: usize, lr: usize, gr: usize) -> Vec<Phase> {
    let mut out = Vec::new();
    match method {
        Method::One => out.resize(ge, Phase::Intra),
        Method::A => {
            while out.len() < ge {
                out.push(Phase::Intra);
                out.push(Phase::Exchange);
            }
        }
        Method::C => {
            while out.len() < ge {
                out.extend(std::iter::repeat_n(Phase::Intra, lr));
                out.extend(std::iter::repeat_n(Phase::Exchange, gr));
            }
        }
        Method::O => out.resize(ge, Phase::Local),
    }
    out.truncate(ge);
    out
}

fn byte_accounting() -> Result<String, String> {
    let mut runs = 0;
    for n in [4, 10, 20] {
        for (method, lr, gr) in [(Method::One, 0, 0), (Method::C, 5, 5), (Method::C, 2, 3), (Method::A, 0, 0)] {
            let mut cfg = base_config(n, method);
            if method == Method::C {
                cfg.plan.lr = lr;
                cfg.plan.gr = gr;
            }
            let sim = build_simulation(&cfg).map_err(|e| e.to_string())?;
            // Softmax 10 -> 4: 44 float32 values behind a 16-byte header.
            let s = 16 + 4 * 44;
            ensure(sim.meter().message_bytes == s, || format!("message size {}", sim.meter().message_bytes))?;
            let sizes: Vec<u64> = (0..sim.fleet().num_clusters()).map(|c| sim.fleet().members(c).len() as u64).collect();
            let n64 = n as u64;
            let expected: u64 = oracle_schedule(method, 30, lr, gr)
                .iter()
                .map(|phase| match (method, phase) {
                    (Method::One, _) => 2 * (n64 - 1) * s,
                    (_, Phase::Intra) => sizes.iter().map(|m| 2 * (m - 1) * s).sum(),
                    (_, Phase::Exchange) => 2 * s + (n64 - 2) * s,
                    (_, Phase::Local) => 0,
                })
                .sum();
            let r = sim.run(&mut MemorySink::default()).map_err(|e| e.to_string())?;
            ensure(r.status == RunStatus::Completed, || format!("{:?}", r.status))?;
            let sent: u64 = r.records.iter().map(|x| x.bytes_sent).sum();
            let received: u64 = r.records.iter().map(|x| x.bytes_received).sum();
            ensure(sent == expected && received == expected, || {
                format!("{} n={n}: sent {sent}, received {received}, closed form {expected}", r.run_id)
            })?;
            ensure(r.records.iter().all(|x| x.bytes_total == x.bytes_sent + x.bytes_received), || {
                "bytes_total mismatch".into()
            })?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs (One, C, A; n = 4, 10, 20) match the closed forms exactly"))
}

fn within(got: f64, want: f64, what: &str) -> Result<f64, String> {
    let rel = ((got - want) / want).abs();
    ensure(rel <= PHYSICS_REL_TOL, || format!("{what}: got {got:e}, want {want:e}"))?;
    Ok(rel)
}

fn physics() -> Result<String, String> {
    let cfg = ChannelConfig::default();
    let mut worst: f64 = 0.0;
    let checks = [
        (cfg.noise_power_w(), 7.962e-14, "noise power"),
        (channel_gain(1.0, &cfg).map_err(|e| e.to_string())?, 3.9625e-4, "g0"),
        (channel_gain(5.0, &cfg).map_err(|e| e.to_string())?, 1.149e-5, "gain at 5 m"),
        (cfg.snr(5.0).map_err(|e| e.to_string())?, 1.443e6, "snr at 5 m"),
        (cfg.rate(5.0).map_err(|e| e.to_string())?, 4.09e8, "rate at 5 m"),
        (min_transmit_time(3.2e6, 5.0, &cfg).map_err(|e| e.to_string())?, 7.8e-3, "transmit time"),
        (comm_energy(1.0, &cfg), 0.01, "energy for 1 s"),
        (comm_energy(0.874, &cfg), 8.74e-3, "energy for 0.874 s"),
    ];
    for (got, want, what) in checks {
        worst = worst.max(within(got, want, what)?);
    }
    let p = ComputePowerConfig { avg_power_w: 50.0, battery_capacity_wh: 274.0, ..ComputePowerConfig::default() };
    let e = compute_energy(&p, 600.0);
    worst = worst.max(within(e.energy_wh, 8.3333, "compute energy")?);
    worst = worst.max(within(e.battery_fraction, 0.030414, "battery fraction")?);
    let full = compute_energy(&ComputePowerConfig { avg_power_w: 274.0, ..p }, 3600.0);
    worst = worst.max(within(full.energy_wh, 274.0, "full hour")?);
    worst = worst.max(within(full.battery_fraction, 1.0, "full hour fraction")?);
    Ok(format!("12 values, worst relative deviation {:.3}% (tol {}%)", worst * 100.0, PHYSICS_REL_TOL * 100.0))
}

fn final_epoch(records: &[RoundRecord]) -> Vec<&RoundRecord> {
    let last = records.iter().map(|r| r.global_epoch).max().unwrap_or(0);
    records.iter().filter(|r| r.global_epoch == last).collect()
}

fn battery_trend() -> Result<String, String> {
    let mut heads = Vec::new();
    let mut means = Vec::new();
    for method in [Method::One, Method::C, Method::A] {
        let mut cfg = base_config(20, method);
        cfg.model.model_bytes_override = Some(LARGE_MODEL_BYTES);
        let r = build_simulation(&cfg).map_err(|e| e.to_string())?.run(&mut MemorySink::default()).map_err(|e| e.to_string())?;
        ensure(r.status == RunStatus::Completed, || format!("{method:?}: {:?}", r.status))?;
        let last = final_epoch(&r.records);
        let head_ids: Vec<usize> = (0..r.fleet.num_clusters()).filter_map(|c| r.fleet.head(c)).collect();
        let head_min = last.iter().filter(|x| head_ids.contains(&x.drone_id)).map(|x| x.battery_pct).fold(f64::INFINITY, f64::min);
        let mean = last.iter().map(|x| x.battery_pct).sum::<f64>() / last.len() as f64;
        heads.push(head_min);
        means.push(mean);
    }
    for (i, name) in [(1, "C"), (2, "A")] {
        ensure(heads[0] < heads[i], || format!("One head {:.6} not below {name} heads {:.6}", heads[0], heads[i]))?;
        ensure(means[0] < means[i], || format!("One mean {:.6} not below {name} mean {:.6}", means[0], means[i]))?;
    }
    let pct = |v: f64| format!("{:.4}%", v * 100.0);
    Ok(format!(
        "head battery One {} < C {} / A {}; fleet mean One {} < C {} / A {}",
        pct(heads[0]),
        pct(heads[1]),
        pct(heads[2]),
        pct(means[0]),
        pct(means[1]),
        pct(means[2])
    ))
}

/// Synthetic task where one drone's data is too small to generalize.
fn trend_config(method: Method, le: usize, gr: usize) -> ExperimentConfig {
    let mut cfg = base_config(20, method);
    cfg.data.per_drone = 10;
    cfg.data.eval_fraction = 0.5;
    cfg.data.source = DataSource::Synthetic { features: 20, classes: 4, separation: 1.0, noise: 1.0, samples: None };
    cfg.plan.eta = 0.1;
    cfg.plan.le = le;
    cfg.plan.lr = 5;
    cfg.plan.gr = gr;
    cfg
}

struct Curve {
    mean: Vec<f64>,
    final_variance: f64,
}

fn accuracy_curve(cfg: &ExperimentConfig) -> Result<(Curve, f64), String> {
    let sim = build_simulation(cfg).map_err(|e| e.to_string())?;
    let reference = centralized_reference(sim.partitions(), sim.eval_split(), sim.initial_params(), sim.plan())
        .map_err(|e| e.to_string())?
        .accuracy;
    let r = sim.run(&mut MemorySink::default()).map_err(|e| e.to_string())?;
    ensure(r.status == RunStatus::Completed, || format!("{:?}", r.status))?;
    let mut mean = Vec::new();
    let mut final_variance = 0.0;
    for e in 1..=r.epochs_completed {
        let accs: Vec<f64> = r.records.iter().filter(|x| x.global_epoch == e).map(|x| x.accuracy).collect();
        let m = accs.iter().sum::<f64>() / accs.len() as f64;
        final_variance = accs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / accs.len() as f64;
        mean.push(m);
    }
    Ok((Curve { mean, final_variance }, reference))
}

fn dominance(high: &[f64], low: &[f64]) -> f64 {
    let pairs: Vec<(&f64, &f64)> = high.iter().zip(low).skip(WARMUP_EPOCHS).collect();
    pairs.iter().filter(|(h, l)| h >= l).count() as f64 / pairs.len() as f64
}

fn accuracy_trend() -> Result<String, String> {
    let (c, reference) = accuracy_curve(&trend_config(Method::C, 3, 5))?;
    let (a, _) = accuracy_curve(&trend_config(Method::A, 3, 5))?;
    let (o, _) = accuracy_curve(&trend_config(Method::O, 3, 5))?;
    let last = |x: &Curve| *x.mean.last().unwrap();
    for (name, curve) in [("C", &c), ("A", &a)] {
        ensure(last(curve) >= CENTRALIZED_SHARE * reference, || {
            format!("{name} accuracy {:.3} below {CENTRALIZED_SHARE} x reference {reference:.3}", last(curve))
        })?;
        ensure(last(curve) > last(&o), || format!("{name} {:.3} does not beat O {:.3}", last(curve), last(&o)))?;
        ensure(curve.final_variance < o.final_variance, || {
            format!("{name} variance {:.2e} not below O {:.2e}", curve.final_variance, o.final_variance)
        })?;
    }
    let curves: Vec<Curve> = [3, 6, 9]
        .into_iter()
        .map(|le| accuracy_curve(&trend_config(Method::C, le, 10)).map(|(c, _)| c))
        .collect::<Result<_, _>>()?;
    let d63 = dominance(&curves[1].mean, &curves[0].mean);
    let d96 = dominance(&curves[2].mean, &curves[1].mean);
    ensure(d63 >= DOMINANCE_SHARE && d96 >= DOMINANCE_SHARE, || {
        format!("le dominance 6>3 {d63:.2}, 9>6 {d96:.2} (need {DOMINANCE_SHARE})")
    })?;
    Ok(format!(
        "C {:.3} A {:.3} O {:.3} vs reference {reference:.3}; variance C {:.1e} A {:.1e} O {:.1e}; le dominance 6>3 {d63:.2}, 9>6 {d96:.2}",
        last(&c),
        last(&a),
        last(&o),
        c.final_variance,
        a.final_variance,
        o.final_variance
    ))
}

fn determinism() -> Result<String, String> {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    let mut single = Duration::ZERO;
    for dir in &dirs {
        let mut cfg = base_config(20, Method::C);
        cfg.output_dir = dir.path().to_path_buf();
        let start = Instant::now();
        outputs.push(run_experiment(&cfg).map_err(|e| e.to_string())?);
        single = start.elapsed();
    }
    let (a, b) = (&outputs[0].files, &outputs[1].files);
    let mut compared = 0;
    for (x, y) in [
        (&a.records_csv, &b.records_csv),
        (&a.summary_json, &b.summary_json),
        (&a.fleet_json, &b.fleet_json),
        (&a.energy_csv, &b.energy_csv),
    ] {
        let (bx, by) = (fs::read(x).map_err(|e| e.to_string())?, fs::read(y).map_err(|e| e.to_string())?);
        ensure(bx == by, || format!("{} differs between runs", x.file_name().unwrap().to_string_lossy()))?;
        compared += bx.len();
    }
    Ok(format!("4 artifacts, {compared} bytes identical; single run {:.2} s", single.as_secs_f64()))
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, Duration, Check); 9] = [
        (1, "FedAvg algebra", Duration::from_secs(1), fedavg_algebra),
        (2, "gradient correctness", Duration::from_secs(10), gradient_check),
        (3, "mixing algebra", Duration::from_secs(1), mixing_algebra),
        (4, "parameter consensus", Duration::from_secs(120), consensus),
        (5, "byte accounting", Duration::from_secs(60), byte_accounting),
        (6, "physics formulas", Duration::from_secs(1), physics),
        (7, "battery trend", Duration::from_secs(120), battery_trend),
        (8, "accuracy trends", Duration::from_secs(300), accuracy_trend),
        (9, "determinism", Duration::from_secs(120), determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {:.1} s, budget {} s", elapsed.as_secs_f64(), budget.as_secs()))
            }
        });
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{id}] {name}: {detail} ({:.2} s)", elapsed.as_secs_f64());
        failed += usize::from(result.is_err());
    }
    println!("acceptance: {}/9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
