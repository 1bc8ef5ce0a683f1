//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use preview_cli::config::ExperimentConfig;
use preview_cli::sweep::{run_sweep, write_sweep, Sweep};
use preview_core::linalg::Mat;
use preview_core::noncausal::{build_noncausal, noncausal_cost};
use preview_core::preview::h2_preview;
use preview_core::regret::h2_gap_bound;
use preview_core::riccati::{bounded_real, dare_residual, hinf_norm, solve_dare, DEFAULT_DARE_TOL};
use preview_core::{closed_loop, cost, simulate, Plant, PreviewController, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, n: usize, name: &str, elapsed: Duration, result: Result<String, String>) {
        let secs = elapsed.as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {n}. {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                self.failures += 1;
                println!("FAIL  {n}. {name} ({secs:.1} s): {why}");
            }
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_plant(rng: &mut ChaCha8Rng, n_x: usize, n_u: usize) -> Plant {
    loop {
        let a = random_mat(rng, n_x, n_x) * (1.6 / (n_x as f64).sqrt());
        let b_u = random_mat(rng, n_x, n_u);
        let b_d = random_mat(rng, n_x, 1);
        let c = random_mat(rng, n_x, n_x);
        let q = c.transpose() * c + Mat::identity(n_x, n_x) * 0.1;
        let m = random_mat(rng, n_u, n_u);
        let r = Mat::identity(n_u, n_u) + m.transpose() * m * 0.5;
        if let Ok(plant) = Plant::new(a, b_d, b_u, q, r) {
            return plant;
        }
    }
}

fn random_signal(rng: &mut ChaCha8Rng, n_d: usize) -> Signal {
    let len = rng.random_range(1..=40);
    let flat: Vec<f64> = (0..len * n_d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Signal::from_flat(n_d, &flat)
}

fn total_cost(plant: &Plant, ctrl: &PreviewController, d: &Signal) -> Result<f64, String> {
    let traj = simulate(plant, ctrl, d, 1e-13).map_err(|e| e.to_string())?;
    Ok(cost(&traj) + traj.truncation_bound)
}

fn dare_soundness() -> Result<String, String> {
    let mut plants = vec![Plant::reference_example()];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..100 {
        let n_x = 1 + i % 6;
        let n_u = 1 + (i / 6) % 3;
        plants.push(random_plant(&mut rng, n_x, n_u));
    }
    let mut worst = 0.0f64;
    for (i, plant) in plants.iter().enumerate() {
        let sol = solve_dare(plant.a(), plant.b_u(), plant.q(), plant.r(), DEFAULT_DARE_TOL)
            .map_err(|e| format!("plant {i}: {e}"))?;
        let res = dare_residual(plant.a(), plant.b_u(), plant.q(), plant.r(), &sol.x).map_err(|e| e.to_string())?;
        let rel = res / (1.0 + sol.x.norm());
        worst = worst.max(rel);
        check(rel <= 1e-9, || format!("plant {i}: residual {res:e}"))?;
        check(sol.spectral_radius < 1.0, || format!("plant {i}: closed-loop radius {}", sol.spectral_radius))?;
    }

    // x² + ((1 − a²)r/b² − q)x − qr/b² = 0
    let (a, b, q, r) = (0.5f64, 1.0f64, 1.0f64, 1.0f64);
    let lin = (1.0 - a * a) * r / (b * b) - q;
    let root = 0.5 * (-lin + (lin * lin + 4.0 * q * r / (b * b)).sqrt());
    let s = |v: f64| Mat::from_element(1, 1, v);
    let x = solve_dare(&s(a), &s(b), &s(q), &s(r), DEFAULT_DARE_TOL).map_err(|e| e.to_string())?.x[(0, 0)];
    check((x - root).abs() <= 1e-9, || format!("scalar root {x} vs {root}"))?;
    check((x - 1.132782).abs() <= 5e-7, || format!("scalar root {x}"))?;
    Ok(format!("{} plants, worst relative residual {worst:.1e}, scalar root {x:.9}", plants.len()))
}

fn hinf_convergence(sweep: &Sweep, plant: &Plant) -> Result<String, String> {
    let g_nc = sweep.gamma_nc;
    let mut levels = Vec::new();
    let mut worst = 0.0f64;
    for pt in &sweep.points {
        let p = pt.row.p;
        let res = pt.hinf.as_ref().ok_or_else(|| format!("p = {p}: {}", pt.row.status))?;
        let g = res.gamma;
        check(g >= g_nc - 2.0 * TOL, || format!("p = {p}: {g} below gamma_nc {g_nc}"))?;
        if let Some(&prev) = levels.last() {
            check(g <= prev + 2.0 * TOL, || format!("p = {p}: {g} above the previous level {prev}"))?;
        }
        let sys = closed_loop(plant, &res.controller).map_err(|e| e.to_string())?;
        let norm = hinf_norm(&sys, 1e-12).map_err(|e| e.to_string())?;
        worst = worst.max((norm - g).abs());
        check((norm - g).abs() <= 1e-6, || format!("p = {p}: closed-loop norm {norm} vs certificate {g}"))?;
        levels.push(g);
    }
    let ratio = (levels[levels.len() - 1] - g_nc) / (levels[0] - g_nc);
    check(ratio <= 0.05, || format!("gap ratio {ratio:e}"))?;
    Ok(format!("gap ratio {ratio:.1e}, worst certificate mismatch {worst:.1e}"))
}

fn regret_convergence(sweep: &Sweep) -> Result<String, String> {
    let mut levels = Vec::new();
    let mut worst = 0.0f64;
    for pt in &sweep.points {
        let p = pt.row.p;
        let g = pt.row.gamma_r_p.ok_or_else(|| format!("p = {p}: {}", pt.row.status))?;
        if let Some(&prev) = levels.last() {
            check(g <= prev, || format!("p = {p}: {g} above the previous level {prev}"))?;
        }
        let oracle = pt.row.oracle_regret.ok_or_else(|| format!("p = {p}: no oracle value"))?;
        worst = worst.max(oracle / (g * g));
        check(oracle <= g * g * (1.0 + 1e-3), || format!("p = {p}: oracle {oracle} above {}", g * g))?;
        levels.push(g);
    }
    let ratio = levels[levels.len() - 1] / levels[0];
    check(ratio <= 0.05, || format!("ratio {ratio:e}"))?;
    Ok(format!("ratio {ratio:.1e}, largest oracle/gamma^2 {worst:.6}"))
}

fn regret_exceeds_hinf_gap(sweep: &Sweep) -> Result<String, String> {
    let mut slack = f64::INFINITY;
    for pt in &sweep.points {
        let r = &pt.row;
        let (gr, gi) = (r.gamma_r_p.ok_or("missing gamma_R_p")?, r.gamma_inf_p.ok_or("missing gamma_inf_p")?);
        let floor = gi - r.gamma_nc - 2.0 * TOL;
        slack = slack.min(gr - floor);
        check(gr >= floor, || format!("p = {}: {gr} below {floor}", r.p))?;
    }
    Ok(format!("smallest margin {slack:.3e}"))
}

fn baseline_optimality(sweep: &Sweep, plant: &Plant) -> Result<String, String> {
    let nc = build_noncausal(plant).map_err(|e| e.to_string())?;
    let controllers: Vec<(usize, &PreviewController)> = sweep
        .points
        .iter()
        .flat_map(|pt| {
            [pt.hinf.as_ref().map(|r| &r.controller), pt.h2.as_ref(), pt.regret.as_ref().map(|r| &r.controller)]
                .into_iter()
                .flatten()
                .map(move |k| (pt.row.p, k))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let d = random_signal(&mut rng, plant.n_d());
        let j_nc = noncausal_cost(plant, &nc, &d).map_err(|e| e.to_string())?;
        let slack = 1e-8 * (1.0 + d.norm_squared());
        for &(p, k) in &controllers {
            let j = total_cost(plant, k, &d)?;
            check(j_nc <= j + slack, || format!("d {i}, p = {p}: {j} < non-causal {j_nc}"))?;
        }
    }
    Ok(format!("100 disturbances against {} controllers", controllers.len()))
}

fn gap_bound(plant: &Plant) -> Result<String, String> {
    let bound = h2_gap_bound(plant, None).map_err(|e| e.to_string())?;
    let nc = build_noncausal(plant).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for p in bound.t_cut..=bound.t_cut + 10 {
        let k = h2_preview(plant, p).map_err(|e| e.to_string())?;
        let b = bound.bound(p);
        for i in 0..100 {
            let d = random_signal(&mut rng, plant.n_d());
            let d = d.scaled(1.0 / d.norm_squared().sqrt());
            let gap = total_cost(plant, &k, &d)? - noncausal_cost(plant, &nc, &d).map_err(|e| e.to_string())?;
            worst = worst.max(gap / b);
            check((-1e-9..=b).contains(&gap), || format!("p = {p}, d {i}: gap {gap:e} outside [-1e-9, {b:e}]"))?;
        }
        let ratio = bound.bound(p + 1) / b;
        check((ratio - bound.alpha).abs() <= 1e-12, || format!("p = {p}: ratio {ratio} vs alpha {}", bound.alpha))?;
    }
    Ok(format!("T_cut = {}, alpha = {:.6}, largest gap/bound {worst:.2e}", bound.t_cut, bound.alpha))
}

fn sandwich(sweep: &Sweep, plant: &Plant) -> Result<String, String> {
    for pt in &sweep.points {
        let r = &pt.row;
        let gi = r.gamma_inf_p.ok_or("missing gamma_inf_p")?;
        let k2 = pt.h2.as_ref().ok_or("missing H2 controller")?;
        let sys = closed_loop(plant, k2).map_err(|e| e.to_string())?;
        let g2 = r.gamma_2_p.ok_or("missing gamma_2_p")?;
        check(bounded_real(&sys, g2 * (1.0 + 1e-8)), || format!("p = {}: H2 loop not below {g2}", r.p))?;
        check(!bounded_real(&sys, g2 * (1.0 - 1e-8)), || format!("p = {}: H2 loop below {g2}", r.p))?;
        check(r.gamma_nc <= gi + 2.0 * TOL, || format!("p = {}: gamma_nc {} above {gi}", r.p, r.gamma_nc))?;
        check(gi <= g2 + 2.0 * TOL, || format!("p = {}: {gi} above gamma_2_p {g2}", r.p))?;
    }
    Ok(format!("{} points", sweep.points.len()))
}

fn factor_residuals(sweep: &Sweep) -> Result<String, String> {
    let (mut fit, mut tail) = (0.0f64, 0.0f64);
    for pt in &sweep.points {
        let p = pt.row.p;
        let res = pt.regret.as_ref().ok_or_else(|| format!("p = {p}: {}", pt.row.status))?;
        let f = res.factor.as_ref().ok_or_else(|| format!("p = {p}: no factor"))?;
        fit = fit.max(f.fit_error);
        tail = tail.max(f.tail);
        check(f.fit_error <= 1e-8, || format!("p = {p}: fit residual {:e}", f.fit_error))?;
        check(f.tail <= 1e-8, || format!("p = {p}: inverse tail {:e}", f.tail))?;
    }
    Ok(format!("worst fit residual {fit:.1e}, worst tail {tail:.1e}"))
}

fn identical_outputs(a: &Path, b: &Path) -> Result<String, String> {
    let names = ["sweep.csv", "fig1.csv", "fig2.csv"];
    for name in names {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        check(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files identical", names.len()))
}

fn main() {
    let mut report = Report { failures: 0 };
    let mut cfg = ExperimentConfig::example();
    cfg.p_range = [0, 15];
    let plant = cfg.plant().expect("example plant");

    let start = Instant::now();
    let result = dare_soundness();
    let elapsed = start.elapsed();
    let result = result.and_then(|m| {
        check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}")).map(|_| m)
    });
    report.record(1, "DARE soundness", elapsed, result);

    let work = tempfile::TempDir::new().expect("temp dir");
    let start = Instant::now();
    let sweep = run_sweep(&cfg);
    let sweep_time = start.elapsed();
    let sweep = match sweep {
        Ok(s) => s,
        Err(e) => {
            for (n, name) in [(2, "H-infinity convergence"), (3, "regret convergence"), (4, "regret exceeds the H-infinity gap")] {
                report.record(n, name, sweep_time, Err(format!("sweep failed: {e}")));
            }
            std::process::exit(1);
        }
    };
    let within = |limit: u64, r: Result<String, String>| {
        r.and_then(|m| {
            check(sweep_time < Duration::from_secs(limit), || format!("sweep took {sweep_time:?}")).map(|_| m)
        })
    };
    let t = Instant::now();
    report.record(2, "H-infinity convergence", sweep_time + t.elapsed(), within(300, hinf_convergence(&sweep, &plant)));
    report.record(3, "regret convergence", sweep_time, within(600, regret_convergence(&sweep)));
    report.record(4, "regret exceeds the H-infinity gap", sweep_time, regret_exceeds_hinf_gap(&sweep));

    let t = Instant::now();
    let r = baseline_optimality(&sweep, &plant);
    report.record(5, "non-causal baseline optimality", t.elapsed(), r);

    let t = Instant::now();
    let r = gap_bound(&plant);
    report.record(6, "H2 gap bound", t.elapsed(), r);

    let t = Instant::now();
    let r = sandwich(&sweep, &plant);
    report.record(7, "sandwich chain", t.elapsed(), r);

    let t = Instant::now();
    let r = factor_residuals(&sweep);
    report.record(8, "spectral factor residuals", t.elapsed(), r);

    let t = Instant::now();
    let first = work.path().join("first");
    let second = work.path().join("second");
    cfg.output_dir = second.clone();
    let config = work.path().join("config.json");
    let r = write_sweep(&sweep, &first, false)
        .map_err(|e| e.to_string())
        .and_then(|_| std::fs::write(&config, cfg.to_json()).map_err(|e| e.to_string()))
        .and_then(|_| {
            let out = Command::new(env!("CARGO_BIN_EXE_preview"))
                .args(["sweep", "--config", config.to_str().unwrap()])
                .output()
                .map_err(|e| e.to_string())?;
            check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())
        })
        .and_then(|_| identical_outputs(&first, &second));
    report.record(9, "determinism", t.elapsed(), r);

    if report.failures > 0 {
        println!("{} criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
