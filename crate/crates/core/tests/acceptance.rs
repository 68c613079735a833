//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use rand::Rng as _;

use wavedp::accountant::{self, MechanismParams, RdpLedger};
use wavedp::data::{self, DataError};
use wavedp::exec::Execution;
use wavedp::experiment::{self, ArmResult};
use wavedp::federation::{FederationConfig, MechanismKind, Simulator};
use wavedp::haar;
use wavedp::mechanism::{self, ClippingPolicy};
use wavedp::models::{Architecture, Example, Model, OptimizerConfig};
use wavedp::rng;
use wavedp::stats;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Worked Haar example and weights.
fn haar_golden() -> Outcome {
    let d =
        haar::haar_forward(&[4.0, 8.0, 1.0, 9.0, 8.0, 4.0, 5.0, 3.0]).map_err(|e| e.to_string())?;
    ensure(d.base() == 5.25, || format!("base {}", d.base()))?;
    let expected: [&[f64]; 3] = [&[-2.0, -4.0, 2.0, 1.0], &[0.5, 1.0], &[0.25]];
    for (l, want) in expected.iter().enumerate() {
        let got = d.level(l as u32 + 1);
        ensure(got == *want, || format!("level {} = {got:?}", l + 1))?;
    }
    let w = haar::haar_weights(8).map_err(|e| e.to_string())?;
    ensure(w == [8.0, 2.0, 2.0, 2.0, 2.0, 4.0, 4.0, 8.0], || {
        format!("weights {w:?}")
    })?;
    Ok("coefficients and weights exact".into())
}

// 2. inverse(forward(v)) == v.
fn round_trip() -> Outcome {
    let mut r = rng::stream(2, &[]);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..=257);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..100.0)).collect();
        let back = haar::haar_inverse(&haar::haar_forward(&v).map_err(|e| e.to_string())?);
        ensure(back.len() == n, || format!("length {} != {n}", back.len()))?;
        let err: f64 = v
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(err / norm.max(f64::MIN_POSITIVE));
    }
    ensure(worst <= 1e-12, || format!("worst relative error {worst:e}"))?;
    Ok(format!("1000 vectors, worst relative error {worst:.1e}"))
}

// 3. Exact reconstruction variance vs Monte Carlo, and the bound.
fn variance_profile() -> Outcome {
    let mut worst_rel = 0.0f64;
    for (i, &m) in [2usize, 4, 8, 16, 64].iter().enumerate() {
        let std = haar::weighted_std(m, 1.0).map_err(|e| e.to_string())?;
        let oracle = haar::variance_propagation(m, &std).map_err(|e| e.to_string())?;
        let bound = haar::variance_bound_factor(m).map_err(|e| e.to_string())?;
        if let Some(v) = oracle.iter().find(|&&v| v > bound) {
            return Err(format!("m={m}: variance {v} exceeds bound {bound}"));
        }
        let zeros = vec![0.0; m];
        let mc = stats::monte_carlo_moments(m, 100_000, 30 + i as u64, Execution::default(), |r| {
            mechanism::wavelet_noise(&zeros, 1.0, r).expect("valid input")
        });
        for (o, v) in oracle.iter().zip(&mc.variance) {
            worst_rel = worst_rel.max((v - o).abs() / o);
        }
    }
    ensure(worst_rel <= 0.02, || {
        format!("worst Monte Carlo deviation {:.2}%", 100.0 * worst_rel)
    })?;
    Ok(format!(
        "all within bound, worst Monte Carlo deviation {:.2}%",
        100.0 * worst_rel
    ))
}

const PREC: usize = 200;

fn big_to_f64(x: &BigFloat, cc: &mut Consts) -> f64 {
    x.format(Radix::Dec, RoundingMode::ToEven, cc)
        .expect("formattable")
        .parse()
        .expect("parseable")
}

/// `ln(Σ_k C(α,k) (1-q)^{α-k} q^k exp(k(k-1)/(2σ²))) / (α-1)` at 200 bits.
fn rdp_oracle(q: f64, sigma: f64, alpha: usize, cc: &mut Consts) -> f64 {
    let rm = RoundingMode::ToEven;
    let bq = BigFloat::from_f64(q, PREC);
    let one = BigFloat::from_u8(1, PREC);
    let b1q = one.sub(&bq, PREC, rm);
    let two_s2 = BigFloat::from_f64(sigma, PREC).powi(2, PREC, rm).mul(
        &BigFloat::from_u8(2, PREC),
        PREC,
        rm,
    );
    let mut sum = BigFloat::from_u8(0, PREC);
    let mut binom = BigFloat::from_u8(1, PREC);
    for k in 0..=alpha {
        if k > 0 {
            binom = binom
                .mul(&BigFloat::from_u64((alpha - k + 1) as u64, PREC), PREC, rm)
                .div(&BigFloat::from_u64(k as u64, PREC), PREC, rm);
        }
        let expo =
            BigFloat::from_u64((k * k.saturating_sub(1)) as u64, PREC).div(&two_s2, PREC, rm);
        let term = binom
            .mul(&b1q.powi(alpha - k, PREC, rm), PREC, rm)
            .mul(&bq.powi(k, PREC, rm), PREC, rm)
            .mul(&expo.exp(PREC, rm, cc), PREC, rm);
        sum = sum.add(&term, PREC, rm);
    }
    let ln = sum.ln(PREC, rm, cc);
    big_to_f64(
        &ln.div(&BigFloat::from_u64((alpha - 1) as u64, PREC), PREC, rm),
        cc,
    )
}

// 4. Accountant: q = 1 closed form, high-precision series, monotonicity.
fn accountant_checks() -> Outcome {
    for &sigma in &[0.5, 1.0, 2.0, 4.0] {
        let p = MechanismParams::new(1.0, sigma).map_err(|e| e.to_string())?;
        for a in 2..=64u32 {
            let got = accountant::rdp_subsampled_gaussian(&p, a).map_err(|e| e.to_string())?;
            let want = a as f64 / (2.0 * sigma * sigma);
            ensure((got - want).abs() <= 1e-9, || {
                format!("q=1 σ={sigma} α={a}: {got} vs {want}")
            })?;
        }
    }

    let mut cc = Consts::new().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for &q in &[0.001, 0.01, 0.1] {
        for &sigma in &[0.5, 1.0, 2.0, 4.0] {
            let p = MechanismParams::new(q, sigma).map_err(|e| e.to_string())?;
            for a in 2..=32u32 {
                let got = accountant::rdp_subsampled_gaussian(&p, a).map_err(|e| e.to_string())?;
                let want = rdp_oracle(q, sigma, a as usize, &mut cc);
                let rel = (got - want).abs() / want.abs();
                worst = worst.max(rel);
                ensure(rel <= 1e-9, || {
                    format!("q={q} σ={sigma} α={a}: {got} vs oracle {want}")
                })?;
            }
        }
    }

    let eps = |q: f64, s: f64, t: u64| -> Result<f64, String> {
        let p = MechanismParams::new(q, s).map_err(|e| e.to_string())?;
        let ledger = RdpLedger::default()
            .compose(&p, t)
            .map_err(|e| e.to_string())?;
        Ok(ledger.to_epsilon(1e-5).map_err(|e| e.to_string())?.0)
    };
    let mut prev = 0.0;
    for t in [1u64, 10, 100, 1000, 10_000] {
        let e = eps(0.01, 1.0, t)?;
        ensure(e > prev, || format!("ε not increasing in T at T={t}"))?;
        prev = e;
    }
    prev = 0.0;
    for q in [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0] {
        let e = eps(q, 1.0, 100)?;
        ensure(e > prev, || format!("ε not increasing in q at q={q}"))?;
        prev = e;
    }
    prev = f64::INFINITY;
    for s in [0.5, 0.8, 1.0, 1.5, 2.0, 4.0, 8.0] {
        let e = eps(0.01, s, 100)?;
        ensure(e < prev, || format!("ε not decreasing in σ at σ={s}"))?;
        prev = e;
    }
    Ok(format!(
        "closed form, oracle (worst rel {worst:.1e}) and monotonicity"
    ))
}

fn small_config(mechanism: MechanismKind) -> FederationConfig {
    FederationConfig {
        total_clients: 6,
        client_sampling: 0.5,
        rounds: 8,
        local_iterations: 3,
        lot_size: 8,
        hidden_layers: vec![8],
        clip: ClippingPolicy::Flat(f64::INFINITY),
        noise_multiplier: 0.0,
        mechanism,
        optimizer: OptimizerConfig::Sgd { learning_rate: 0.1 },
        delta: 1e-5,
        seed: 11,
    }
}

// 5. σ = 0 and inactive clipping reduce every mechanism to plain training.
fn degeneracy() -> Outcome {
    let all = data::synthetic_blobs(300, 5, 3, 0.5, 5).map_err(|e| e.to_string())?;
    let (train, test) = all.split_at(240);
    let run = |mech| -> Result<(Vec<_>, Vec<f64>), String> {
        let mut sim = Simulator::new(
            small_config(mech),
            train.clone(),
            test.clone(),
            Execution::default(),
        )
        .map_err(|e| e.to_string())?;
        let metrics = sim.run().map_err(|e| e.to_string())?;
        Ok((metrics, sim.params().flatten()))
    };
    let (base_metrics, base_params) = run(MechanismKind::NonPrivate)?;
    let mut worst = 0.0f64;
    for mech in [
        MechanismKind::DpSgd,
        MechanismKind::DpSgdWav,
        MechanismKind::DpFedAvg,
        MechanismKind::DpFedAvgWav,
    ] {
        let (metrics, params) = run(mech)?;
        for (a, b) in base_metrics.iter().zip(&metrics) {
            ensure(a.sampled_clients == b.sampled_clients, || {
                format!("{mech:?}: different client samples")
            })?;
            worst = worst
                .max((a.train_loss - b.train_loss).abs())
                .max((a.test_accuracy - b.test_accuracy).abs());
        }
        for (a, b) in base_params.iter().zip(&params) {
            worst = worst.max((a - b).abs());
        }
        ensure(worst <= 1e-10, || format!("{mech:?}: deviation {worst:e}"))?;
    }
    Ok(format!(
        "4 mechanisms match plain training, max deviation {worst:.1e}"
    ))
}

// 6. Backprop against central differences.
fn gradient_check() -> Outcome {
    let arch = Architecture::Mlp {
        sizes: vec![6, 10, 4],
    };
    let count = arch.param_count();
    ensure(count <= 200, || format!("{count} parameters"))?;
    let mut r = rng::stream(6, &[]);
    let model = Model::init(arch.clone(), &mut r).map_err(|e| e.to_string())?;
    let x: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let ex = Example {
        features: &x,
        label: 2,
    };
    let analytic = model.gradient(&ex).map_err(|e| e.to_string())?.flatten();
    let base = model.params().flatten();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..count {
        let loss_at = |delta: f64| -> Result<f64, String> {
            let mut p = base.clone();
            p[i] += delta;
            let m = Model::with_params(
                arch.clone(),
                model
                    .params()
                    .unflatten_like(&p)
                    .map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            m.loss(&ex).map_err(|e| e.to_string())
        };
        let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-8 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    ensure(worst <= 1e-4, || format!("worst relative error {worst:e}"))?;
    Ok(format!(
        "{count} parameters, worst relative error {worst:.1e}"
    ))
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Sample-level arms use effective multiplier 2; user-level arms use 50 at
/// half client participation. Each pair shares one accounted ε.
fn utility_spec() -> String {
    let mut s = String::from(
        r#"seed = 1

[dataset]
kind = "blobs"
train = 5000
test = 1000
proxy = 200
dim = 20
classes = 10
spread = 1.0

[defaults]
clients = 20
rounds = 100
local_iterations = 5
lot_size = 25
clip = 1.0
optimizer = { rule = "sgd", learning_rate = 0.1 }
"#,
    );
    for seed in SEEDS {
        for (mech, z, q_c) in [
            ("dp_sgd", 2.0, 1.0),
            ("dp_sgd_wav", 2.0, 1.0),
            ("dp_fed_avg", 50.0, 0.5),
            ("dp_fed_avg_wav", 50.0, 0.5),
        ] {
            s.push_str(&format!(
                "\n[[arm]]\nname = \"{mech}-seed{seed}\"\nmechanism = \"{mech}\"\nseed = {seed}\n\
                 client_sampling = {q_c:?}\neffective_noise_multiplier = {z:?}\n"
            ));
        }
    }
    s
}

fn run_utility(dir: &Path, parallel_arms: bool) -> Result<Vec<ArmResult>, String> {
    let spec = dir.join("spec.toml");
    fs::write(&spec, utility_spec()).map_err(|e| e.to_string())?;
    experiment::run_experiment(&spec, Some(&dir.join("out")), parallel_arms)
        .map_err(|e| e.to_string())
}

fn arm_mean(results: &[ArmResult], mech: &str) -> Result<(f64, f64, f64), String> {
    let arms: Vec<&ArmResult> = results
        .iter()
        .filter(|r| r.name.rsplit_once("-seed").map(|(m, _)| m) == Some(mech))
        .collect();
    ensure(arms.len() == SEEDS.len(), || {
        format!("{mech}: {} runs", arms.len())
    })?;
    let acc = arms
        .iter()
        .map(|r| r.metrics.last().unwrap().test_accuracy)
        .sum::<f64>()
        / arms.len() as f64;
    let eps = arms[0].metrics.last().unwrap().epsilon_spent;
    Ok((acc, eps, arms[0].manifest.injected_noise_variance))
}

// 7. Wavelet arms at least as accurate as their baselines at equal ε.
fn utility(results: &[ArmResult]) -> Outcome {
    let mut parts = Vec::new();
    for (vanilla, wav) in [("dp_sgd", "dp_sgd_wav"), ("dp_fed_avg", "dp_fed_avg_wav")] {
        let (acc_v, eps_v, var_v) = arm_mean(results, vanilla)?;
        let (acc_w, eps_w, var_w) = arm_mean(results, wav)?;
        ensure((eps_v - eps_w).abs() <= 1e-9 * eps_v, || {
            format!("{vanilla}: ε {eps_v} vs {eps_w}")
        })?;
        ensure(var_w < var_v, || {
            format!("{wav}: noise variance {var_w} not below {var_v}")
        })?;
        ensure(acc_w >= acc_v, || {
            format!("{wav} mean accuracy {acc_w:.4} < {vanilla} {acc_v:.4}")
        })?;
        parts.push(format!(
            "{wav} {acc_w:.4} vs {vanilla} {acc_v:.4} at ε={eps_v:.3} (variance {var_w:.3e} vs {var_v:.3e})"
        ));
    }
    Ok(parts.join("; "))
}

// 8. Byte-identical CSVs across two runs.
fn determinism(first: &Path, results: &[ArmResult]) -> Outcome {
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    // parallel arms the first time, sequential now
    run_utility(second.path(), false)?;
    for r in results {
        let a = fs::read(first.join("out").join(&r.name).join("metrics.csv"))
            .map_err(|e| e.to_string())?;
        let b = fs::read(second.path().join("out").join(&r.name).join("metrics.csv"))
            .map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{}: metrics differ", r.name))?;
    }
    Ok(format!("{} metrics files identical", results.len()))
}

// 9. IDX fixture and malformed inputs.
fn idx_loader() -> Outcome {
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend([0u8, 255, 128, 64]);
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 1, 3];
    let d = data::idx_from_bytes(&images, &labels).map_err(|e| e.to_string())?;
    let want = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
    ensure(d.features() == want, || {
        format!("features {:?}", d.features())
    })?;
    ensure(d.labels() == [3], || format!("labels {:?}", d.labels()))?;

    let mut bad_magic = images.clone();
    bad_magic[3] = 0x04;
    ensure(
        matches!(
            data::idx_from_bytes(&bad_magic, &labels),
            Err(DataError::BadMagic { .. })
        ),
        || "bad magic not reported".into(),
    )?;
    ensure(
        matches!(
            data::idx_from_bytes(&images[..18], &labels),
            Err(DataError::Truncated { .. })
        ),
        || "truncation not reported".into(),
    )?;
    let two_labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 4];
    ensure(
        matches!(
            data::idx_from_bytes(&images, &two_labels),
            Err(DataError::CountMismatch { .. })
        ),
        || "count mismatch not reported".into(),
    )?;
    Ok(format!(
        "{}+{} byte fixture exact; 3 distinct errors",
        images.len(),
        labels.len()
    ))
}

fn report(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let slow = elapsed > limit;
    let (status, detail) = match (&outcome, slow) {
        (Ok(d), false) => ("PASS", d.clone()),
        (Ok(d), true) => ("FAIL", format!("{d}; over time budget {limit:?}")),
        (Err(e), _) => ("FAIL", e.clone()),
    };
    println!(
        "criterion {id} [{status}] {name} ({:.2}s): {detail}",
        elapsed.as_secs_f64()
    );
    status == "PASS"
}

fn main() {
    let mut ok = true;
    ok &= report(
        1,
        "haar golden values",
        Duration::from_millis(1),
        haar_golden,
    );
    ok &= report(2, "haar round trip", Duration::from_secs(1), round_trip);
    ok &= report(
        3,
        "reconstruction variance",
        Duration::from_secs(30),
        variance_profile,
    );
    ok &= report(4, "accountant", Duration::from_secs(60), accountant_checks);
    ok &= report(5, "degeneracy", Duration::from_secs(60), degeneracy);
    ok &= report(6, "gradient check", Duration::from_secs(10), gradient_check);

    let dir = tempfile::tempdir().expect("temp dir");
    let mut results = None;
    ok &= report(
        7,
        "utility at matched epsilon",
        Duration::from_secs(600),
        || {
            let r = run_utility(dir.path(), true)?;
            let detail = utility(&r);
            results = Some(r);
            detail
        },
    );
    ok &= report(8, "determinism", Duration::from_secs(600), || {
        let r = results.as_deref().ok_or("utility experiment did not run")?;
        determinism(dir.path(), r)
    });
    ok &= report(9, "idx loader", Duration::from_secs(1), idx_loader);

    if !ok {
        std::process::exit(1);
    }
}
