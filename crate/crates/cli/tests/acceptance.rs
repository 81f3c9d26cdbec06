//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! The process exits 0 either way so the rest of the suite keeps running;
//! set `IBRM_ACCEPTANCE_STRICT=1` to exit non-zero when any check fails.

use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use ibrm_core::harness::{run_batch_on, run_experiment, sweep_parameters, BatchSpec, ExperimentConfig, OffsetSpec, SweepSpec, VariantSpec};
use ibrm_core::multidim::{step_mv_ibrm, MvConfig, MvState, VectorPrior};
use ibrm_core::subject::{Curve, NoiseKind, Range, VirtualSubject};
use ibrm_core::{
    map_solve, run_sequence, step, GaussianBelief, Method, Observation, Outcome, PopulationSpec, Prior, Responder,
    ScriptedResponder, SequenceConfig, SequenceState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

type Check = (bool, String);

fn wide(mut cfg: SequenceConfig, x1: f64) -> SequenceConfig {
    cfg.x_min = -1e9;
    cfg.x_max = 1e9;
    cfg.x_start = Some(x1);
    cfg
}

fn conjugacy() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=50u64);
        let mu0 = rng.random_range(30.0..90.0);
        let tau = rng.random_range(1.0..25.0);
        let c = rng.random_range(0.5..40.0);
        let means: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();

        let mut belief = GaussianBelief::empty();
        for (k, m) in means.iter().enumerate() {
            belief.absorb(*m, k as u64 + 1, c).unwrap();
        }
        let x = map_solve(&belief, &Prior::normal(mu0, tau).unwrap()).unwrap();

        // explicit log density of the prior times every RM factor
        let log_density = |x: f64| {
            let mut v = -0.5 * ((x - mu0) / tau).powi(2);
            for (k, m) in means.iter().enumerate() {
                let sd = c / (k + 1) as f64;
                v -= 0.5 * ((x - m) / sd).powi(2);
            }
            v
        };
        let precision = 1.0 / (tau * tau) + (1..=n).map(|k| (k * k) as f64 / (c * c)).sum::<f64>();
        let centre = (mu0 / (tau * tau)
            + means.iter().enumerate().map(|(k, m)| m * ((k + 1) as f64 / c).powi(2)).sum::<f64>())
            / precision;
        let sd = precision.sqrt().recip();
        let (lo, h) = (centre - 8.0 * sd, 1e-4);
        let steps = (16.0 * sd / h).ceil() as usize;
        let (mut best, mut best_v) = (lo, f64::NEG_INFINITY);
        for g in 0..=steps {
            let gx = lo + g as f64 * h;
            let v = log_density(gx);
            if v > best_v {
                best = gx;
                best_v = v;
            }
        }
        worst = worst.max((best - x).abs());
    }
    (worst <= 2e-4, format!("max |map - grid argmax| = {worst:.2e}"))
}

fn variance_law() -> Check {
    let c = 3.0;
    let mut belief = GaussianBelief::empty();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_at = 0;
    let mut closed_err: f64 = 0.0;
    for i in 2..=10_000u64 {
        belief.absorb(50.0, i - 1, c).unwrap();
        if i < 10 {
            continue;
        }
        let fi = i as f64;
        let ratio = belief.variance().unwrap() * fi.powi(3) / (c * c);
        let closed = 6.0 * fi.powi(3) / ((fi - 1.0) * fi * (2.0 * fi - 1.0));
        closed_err = closed_err.max((ratio - closed).abs() / closed);
        if ratio > hi {
            hi = ratio;
            worst_at = i;
        }
        lo = lo.min(ratio);
    }
    let pass = lo >= 2.8 && hi <= 3.5 && closed_err <= 1e-12;
    (
        pass,
        format!("range [{lo:.4}, {hi:.4}] (max at i={worst_at}), closed-form rel err {closed_err:.1e}"),
    )
}

fn equivalent_step_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let s = 7.0;
    let mut cfg = wide(Method::AcsU.config(), 50.0);
    cfg.s = s;
    cfg.prior = Prior::flat();
    let mut st = SequenceState::new(&cfg).unwrap();
    let mut sum_sq = 0.0;
    let mut err: f64 = 0.0;
    let mut limit = 0.0;
    for i in 1..=1000u64 {
        let fi = i as f64;
        // |r| stays away from 0, where (x_i - x_{i+1}) / r loses every digit
        let r: f64 = noise.sample(&mut rng);
        let y = cfg.y_target + r.signum() * (0.5 + r.abs());
        let rep = step(&mut st, &cfg, Observation::Analog(y)).unwrap();
        let expect = fi * fi * s / (sum_sq + fi * fi);
        sum_sq += fi * fi;
        if let Some(si) = rep.equivalent_step {
            err = err.max((si - expect).abs() / expect);
            limit = si * fi / (3.0 * s);
        }
    }
    let pass = err <= 1e-12 && (limit - 1.0f64).abs() <= 0.1;
    (pass, format!("max rel err {err:.1e}, s_1000*1000/(3s) = {limit:.4}"))
}

fn correction_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.6).unwrap();
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut tightest: f64 = 0.0;
    for prior in [Prior::laplace(65.0, 5.0).unwrap(), Prior::logistic(65.0, 4.0).unwrap()] {
        let j = prior.ratio_bound().unwrap();
        for _ in 0..100 {
            let xt = rng.random_range(40.0..90.0);
            let mut cfg = wide(Method::AcsU.config(), rng.random_range(1.0..100.0));
            cfg.prior = prior;
            cfg.c = rng.random_range(1.0..60.0);
            cfg.s = rng.random_range(1.0..30.0);
            let mut st = SequenceState::new(&cfg).unwrap();
            for _ in 0..60 {
                let y = cfg.y_target + 0.06 * (st.x() - xt) + noise.sample(&mut rng);
                step(&mut st, &cfg, Observation::Analog(y)).unwrap();
                let b = st.belief().unwrap();
                let flat = b.mean().unwrap();
                let bound = j / b.precision();
                let gap = (st.x() - flat).abs();
                tightest = tightest.max(gap / bound);
                checked += 1;
                if gap > bound * (1.0 + 1e-12) + 1e-12 * flat.abs().max(1.0) {
                    violations += 1;
                }
            }
        }
    }
    (violations == 0, format!("{violations} violations in {checked} steps, max gap/bound {tightest:.4}"))
}

fn linear_subject(id: u64, threshold: f64, slope: f64, noise_sd: f64, seed: u64) -> VirtualSubject {
    VirtualSubject {
        id,
        threshold,
        slope,
        curve: Curve::Linear,
        noise_sd,
        noise_kind: NoiseKind::TruncatedNormal,
        seed,
    }
}

fn convergence() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let subjects: Vec<VirtualSubject> = (0..1000).map(|j| linear_subject(j, 65.0, 0.15, 0.6, rng.random())).collect();
    let variants: Vec<VariantSpec> = Method::ALL
        .into_iter()
        .map(|m| VariantSpec {
            label: m.label().into(),
            config: m.config(),
        })
        .collect();
    let spec = BatchSpec {
        n_subjects: subjects.len(),
        repeats: 1,
        n_steps: 1000,
        seed: 5,
        offsets: OffsetSpec::default(),
    };
    let batch = run_batch_on(subjects, &variants, &spec).unwrap();
    let elapsed = started.elapsed();
    let mut pass = batch.failures.is_empty() && elapsed <= Duration::from_secs(60);
    let mut parts = Vec::new();
    for v in &batch.variants {
        let far = v.traces.iter().filter(|t| t.dx(1000).unwrap().abs() > 1.0).count();
        let frac = far as f64 / v.traces.len() as f64;
        pass &= v.traces.len() == 1000 && frac < 0.01;
        parts.push(format!("{}={:.1}%", v.label, 100.0 * frac));
    }
    (pass, format!("far at 1000: {} in {elapsed:.1?}", parts.join(" ")))
}

fn random_spd(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut q = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut v: [f64; 3] = std::array::from_fn(|_| normal.sample(rng));
        for prev in q.iter().take(j) {
            let d: f64 = (0..3).map(|k| v[k] * prev[k]).sum();
            for k in 0..3 {
                v[k] -= d * prev[k];
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        q[j] = v.map(|a| a / n);
    }
    let lambda: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..=2.0));
    std::array::from_fn(|a| std::array::from_fn(|b| (0..3).map(|k| lambda[k] * q[k][a] * q[k][b]).sum()))
}

fn multidim() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Normal::new(0.0, 0.5).unwrap();

    let mut parity: f64 = 0.0;
    for _ in 0..50 {
        let prior = match rng.random_range(0..3) {
            0 => Prior::normal(65.0, 10.0).unwrap(),
            1 => Prior::laplace(60.0, 5.0).unwrap(),
            _ => Prior::logistic(70.0, 4.0).unwrap(),
        };
        let x1 = rng.random_range(1.0..100.0);
        let mut cfg = wide(Method::AcsU.config(), x1);
        cfg.prior = prior;
        let mv = MvConfig {
            s: cfg.s,
            c: cfg.c,
            c_decay: cfg.c_decay,
            prior: VectorPrior::product(vec![prior]).unwrap(),
            bounds: None,
            x_start: Some(vec![x1]),
        };
        let mut a = SequenceState::new(&cfg).unwrap();
        let mut b = MvState::new(&mv).unwrap();
        let xt = rng.random_range(30.0..90.0);
        for _ in 0..100 {
            let r = 0.05 * (a.x() - xt) + noise.sample(&mut rng);
            step(&mut a, &cfg, Observation::Analog(cfg.y_target + r)).unwrap();
            step_mv_ibrm(&mut b, &mv, &[r]).unwrap();
            parity = parity.max((a.x() - b.x()[0]).abs() / a.x().abs().max(1.0));
        }
    }

    let mut hits = 0;
    for _ in 0..500 {
        let m = random_spd(&mut rng);
        let xt: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let x1: Vec<f64> = xt.iter().map(|v| v + rng.random_range(-10.0..10.0)).collect();
        let cfg = MvConfig {
            s: 1.0,
            c: 1.0,
            c_decay: Default::default(),
            prior: VectorPrior::isotropic_normal(vec![0.0; 3], 10.0).unwrap(),
            bounds: None,
            x_start: Some(x1),
        };
        let mut st = MvState::new(&cfg).unwrap();
        for _ in 0..500 {
            let x = st.x().to_vec();
            let r: Vec<f64> = (0..3)
                .map(|a| (0..3).map(|b| m[a][b] * (x[b] - xt[b])).sum::<f64>() + noise.sample(&mut rng))
                .collect();
            step_mv_ibrm(&mut st, &cfg, &r).unwrap();
        }
        let dist = (0..3).map(|a| (st.x()[a] - xt[a]).powi(2)).sum::<f64>().sqrt();
        if dist < 0.5 {
            hits += 1;
        }
    }
    let frac = hits as f64 / 500.0;
    (
        parity <= 1e-12 && frac >= 0.99,
        format!("q=1 max rel diff {parity:.1e}; q=3 within 0.5: {:.1}%", 100.0 * frac),
    )
}

struct Desk {
    cfg: ExperimentConfig,
    out: ibrm_core::harness::ExperimentOutput,
    elapsed: Duration,
}

fn desk_run() -> Desk {
    let cfg = ExperimentConfig::default();
    let started = Instant::now();
    let out = run_experiment(&cfg).unwrap();
    Desk {
        cfg,
        out,
        elapsed: started.elapsed(),
    }
}

fn ordering(d: &Desk) -> Check {
    let at = |label: &str| *d.out.stats(label).unwrap().at(30).unwrap();
    let (acs, dcs, acsu, dcsu) = (at("ACS"), at("DCS"), at("ACSu"), at("DCSu"));
    let ra = acsu.outlier_frac / acs.outlier_frac;
    let rd = dcsu.outlier_frac / dcs.outlier_frac;
    let checks = [
        acsu.median_abs < acs.median_abs,
        dcsu.median_abs < dcs.median_abs,
        ra <= 0.5,
        rd <= 0.5,
        d.elapsed <= Duration::from_secs(300),
    ];
    (
        checks.iter().all(|c| *c) && d.out.batch.failures.is_empty(),
        format!(
            "{}x{} seed {}: median|dx30| ACSu {:.3} vs ACS {:.3}, DCSu {:.3} vs DCS {:.3}; outlier ratio ACSu/ACS {:.3}, DCSu/DCS {:.3}; {:.1?}",
            d.cfg.n_subjects,
            d.cfg.repeats,
            d.cfg.seed,
            acsu.median_abs,
            acs.median_abs,
            dcsu.median_abs,
            dcs.median_abs,
            ra,
            rd,
            d.elapsed
        ),
    )
}

fn early_arrival(d: &Desk) -> Check {
    let acs30 = d.out.stats("ACS").unwrap().at(30).unwrap().median_abs;
    let acsu = d.out.stats("ACSu").unwrap();
    let first = acsu.steps.iter().find(|s| s.median_abs <= acs30).map(|s| s.step);
    match first {
        Some(i) => (i <= 26, format!("first step {i} (ACS step-30 level {acs30:.3})")),
        None => (false, "never reached".into()),
    }
}

fn sweep_sanity() -> Check {
    let slope = 0.05;
    let pop = PopulationSpec {
        threshold_prior: Prior::normal(60.0, 5.0).unwrap(),
        slope: Range::fixed(slope),
        noise_sd: Range::fixed(0.0),
        curve: Curve::Linear,
        ..PopulationSpec::default()
    };
    let spec = SweepSpec {
        offsets: vec![10.0, 30.0],
        n_candidates: 400,
        s_range: Range { min: 1.0, max: 40.0 },
        trials_per_candidate: 1,
        keep_fraction: 0.05,
        eval_step: 2,
        ..SweepSpec::default()
    };
    let r = sweep_parameters("ACS", &Method::Acs.config(), &pop, &spec).unwrap();
    let target = 1.0 / slope;
    let worst = r
        .buckets
        .iter()
        .map(|b| (b.optimum_s / target - 1.0).abs())
        .fold(0.0, f64::max);
    let found: Vec<String> = r.buckets.iter().map(|b| format!("{:.2}", b.optimum_s)).collect();
    (worst <= 0.15, format!("s* = [{}] vs 1/slope = {target}, max rel err {:.1}%", found.join(", "), 100.0 * worst))
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism(first: &Desk) -> Check {
    let second = desk_run();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    first.out.write(a.path()).unwrap();
    second.out.write(b.path()).unwrap();
    let (fa, fb) = (read_dir_bytes(a.path()), read_dir_bytes(b.path()));
    let same = fa == fb;
    let bytes: usize = fa.iter().map(|(_, v)| v.len()).sum();
    (same, format!("{} files, {bytes} bytes, identical: {same}", fa.len()))
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(data_dir: &Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_ibrm"))
            .args(["serve", "--port", "0", "--data-dir"])
            .arg(data_dir)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn ibrm serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").expect("address line").to_string();
        Server { child, base }
    }

    fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn post(client: &reqwest::blocking::Client, url: String, body: Value) -> Value {
    let resp = client.post(url).json(&body).send().unwrap();
    assert!(resp.status().is_success(), "{}", resp.status());
    resp.json().unwrap()
}

fn get(client: &reqwest::blocking::Client, url: String) -> Value {
    let resp = client.get(url).send().unwrap();
    assert!(resp.status().is_success(), "{}", resp.status());
    resp.json().unwrap()
}

/// Enter the subject's responses to `n` proposals; returns proposals and observations.
#[allow(clippy::too_many_arguments)]
fn drive(
    client: &reqwest::blocking::Client,
    base: &str,
    id: &str,
    subject: &mut VirtualSubject,
    method: Method,
    rng: &mut ChaCha8Rng,
    n: usize,
    into: &mut (Vec<f64>, Vec<Observation>),
) {
    for _ in 0..n {
        let next = get(client, format!("{base}/sessions/{id}/next"));
        let x = next["x"].as_f64().unwrap();
        let token = next["proposal_token"].as_str().unwrap();
        let obs = subject.observe(x, method.response_mode(), rng).unwrap();
        let body = match obs {
            Observation::Analog(y) => {
                let uv = y.exp();
                into.1.push(Observation::Analog(uv.ln()));
                json!({"proposal_token": token, "value": uv})
            }
            Observation::Binary(o) => {
                into.1.push(obs);
                json!({"proposal_token": token, "outcome": if o == Outcome::Response { "response" } else { "no_response" }})
            }
        };
        into.0.push(x);
        post(client, format!("{base}/sessions/{id}/observations"), body);
    }
}

fn service() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let client = reqwest::blocking::Client::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut server = Server::start(dir.path());

    struct Live {
        method: Method,
        id: String,
        subject: VirtualSubject,
        log: (Vec<f64>, Vec<Observation>),
    }
    let mut live = Vec::new();
    for (j, method) in Method::ALL.into_iter().enumerate() {
        let created = post(&client, format!("{}/sessions", server.base), json!({"method": method.label()}));
        let subject = VirtualSubject {
            curve: Curve::default_sigmoid(),
            ..linear_subject(j as u64, rng.random_range(45.0..85.0), 0.04, 0.6, rng.random())
        };
        live.push(Live {
            method,
            id: created["id"].as_str().unwrap().to_string(),
            subject,
            log: (Vec::new(), Vec::new()),
        });
    }
    for l in &mut live {
        drive(&client, &server.base, &l.id, &mut l.subject, l.method, &mut rng, 20, &mut l.log);
    }
    let before: Vec<Value> = live
        .iter()
        .map(|l| get(&client, format!("{}/sessions/{}", server.base, l.id)))
        .collect();

    server.kill();
    server = Server::start(dir.path());
    let mut replay_same = true;
    for (l, b) in live.iter().zip(&before) {
        replay_same &= get(&client, format!("{}/sessions/{}", server.base, l.id)) == *b;
    }
    for l in &mut live {
        drive(&client, &server.base, &l.id, &mut l.subject, l.method, &mut rng, 10, &mut l.log);
    }

    let mut parity = true;
    for l in &live {
        let obs = l.log.1.clone();
        let golden = run_sequence(&l.method.config(), &mut ScriptedResponder::new(obs.clone()), obs.len(), 0).unwrap();
        let expect: Vec<f64> = golden.records.iter().map(|r| r.x).collect();
        let view = get(&client, format!("{}/sessions/{}", server.base, l.id));
        let mut got = l.log.0.clone();
        got.push(view["x"].as_f64().unwrap());
        parity &= got == expect;
    }
    server.kill();
    (
        parity && replay_same,
        format!("{} sessions x 30 entries, parity: {parity}, kill-and-replay identical: {replay_same}", live.len()),
    )
}

fn main() {
    let strict = std::env::var("IBRM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut report = |name: &str, f: &dyn Fn() -> Check| {
        let started = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {detail} [{:.1?}]",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed()
        );
    };

    report("conjugacy oracle", &conjugacy);
    report("variance law", &variance_law);
    report("equivalent step law", &equivalent_step_law);
    report("correction bound", &correction_bound);
    report("convergence", &convergence);
    report("multi-D parity", &multidim);
    let desk = desk_run();
    report("desk-scale ordering", &|| ordering(&desk));
    report("early arrival", &|| early_arrival(&desk));
    report("sweep sanity", &sweep_sanity);
    report("determinism", &|| determinism(&desk));
    report("service parity and crash safety", &service);

    println!("acceptance: {} of 11 criteria failed", failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
