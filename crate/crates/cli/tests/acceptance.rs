//! Runs every acceptance criterion at its pinned tolerance and prints one
//! line per criterion. Exits nonzero if any criterion fails.

mod common;

#[allow(dead_code)]
#[path = "../../core/tests/gradients.rs"]
mod gradients;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use darsa_core::bounds::{check_decomposition, delta_c};
use darsa_core::darsa::{accuracy, fit, DarsaConfig};
use darsa_core::ot::{
    mw1_gmm, ot_exact_discrete, sample_gmm, sinkhorn, split_by_class, w1_empirical, w1_exact_1d,
    weighted_subdomain_w1, GaussianComponent, GaussianMixture, PairwiseMode,
};
use darsa_core::synthdata::{make_figure1_task, make_shifted_gmm, paired_distance_audit};
use darsa_core::{ClassWeights, Dataset, SinkhornParams, SubdomainPartition};
use darsa_cli::TaskSpec;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

struct Report {
    failed: usize,
    /// Criterion ids from `ACCEPTANCE_ONLY` (comma separated); empty runs all.
    only: Vec<usize>,
}

impl Report {
    fn run(&mut self, id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
        if !self.only.is_empty() && !self.only.contains(&id) {
            println!("[SKIP] criterion {id}: {name}");
            return Err("skipped".into());
        }
        let start = Instant::now();
        let mut out = f();
        let took = start.elapsed();
        if out.is_ok() && took > limit {
            out = Err(format!("took {:.1}s, limit {:.0}s", took.as_secs_f64(), limit.as_secs_f64()));
        }
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => {
                self.failed += 1;
                ("FAIL", d.clone())
            }
        };
        println!("[{tag}] criterion {id}: {name}: {detail} ({:.1}s)", took.as_secs_f64());
        out
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lemma_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(1..=10);
        let n = rng.random_range(1..=1000);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let part = SubdomainPartition::new(labels.clone(), k).map_err(|e| e.to_string())?;
        worst = worst.max(check_decomposition(&preds, &labels, &part).map_err(|e| e.to_string())?);
    }
    check(worst <= 1e-12, format!("max residual {worst:.2e} over 200 datasets"))
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> ndarray::Array1<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn ot_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = SinkhornParams {
        reg: 0.005,
        max_iter: 20_000,
        tol: 1e-6,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..50 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let cost = Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0));
        let a = random_simplex(&mut rng, n);
        let b = random_simplex(&mut rng, m);
        let exact = ot_exact_discrete(cost.view(), a.view(), b.view())
            .map_err(|e| format!("instance {i}: {e}"))?
            .cost;
        let ent = sinkhorn(cost.view(), a.view(), b.view(), &params)
            .map_err(|e| format!("instance {i}: {e}"))?
            .cost;
        let allowed = (0.05 * exact).max(0.01);
        worst_excess = worst_excess.max((ent - exact).abs() - allowed);
    }
    check(
        worst_excess <= 0.0,
        format!("worst |sinkhorn - exact| minus allowance {worst_excess:.2e} over 50 instances"),
    )
}

fn gradient_fidelity() -> Outcome {
    let checks: [(&str, fn() -> f64); 6] = [
        ("L_Y", gradients::classification_worst),
        ("L_D entropic", gradients::discrepancy_entropic_worst),
        ("L_D frozen plan", gradients::discrepancy_frozen_worst),
        ("L_intra", gradients::intra_worst),
        ("L_inter", gradients::inter_worst),
        ("backward", gradients::backward_worst),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, f) in checks {
        let e = f();
        ok &= e <= gradients::TOL;
        parts.push(format!("{name} {e:.1e}"));
    }
    check(ok, format!("max relative errors: {}", parts.join(", ")))
}

fn figure1_analog() -> Outcome {
    let (s, t) = make_figure1_task(0.05, 2000, 0).map_err(|e| e.to_string())?;
    let params = SinkhornParams {
        reg: 0.01,
        max_iter: 5000,
        tol: 1e-6,
    };
    let ys = s.labels().unwrap();
    let yt = t.labels().unwrap();
    let ps = split_by_class(s.features().view(), ys, 2);
    let pt = split_by_class(t.features().view(), yt, 2);
    let w_t = ClassWeights::from_labels(yt, 2).map_err(|e| e.to_string())?;
    let weighted = weighted_subdomain_w1(&ps, &pt, &w_t, &params).map_err(|e| e.to_string())?;
    let overall = w1_empirical(s.features().view(), t.features().view(), &params).map_err(|e| e.to_string())?;
    let parts: Vec<Array2<f64>> = ps.iter().chain(&pt).cloned().collect();
    let dc = delta_c(&parts).map_err(|e| e.to_string())?;

    let mut ok = weighted.value <= 0.2 && overall >= 1.0 && weighted.value <= overall + dc;
    let mut paired = Vec::new();
    for c in 0..2 {
        let oracle = w1_exact_1d(ps[c].as_slice().unwrap(), pt[c].as_slice().unwrap())
            .map_err(|e| e.to_string())?;
        let est = weighted.per_pair[c].ok_or("empty cluster")?;
        ok &= (oracle - 0.10).abs() <= 0.03 && (est - 0.10).abs() <= 0.03;
        paired.push(format!("{est:.4} (oracle {oracle:.4})"));
    }
    check(
        ok,
        format!(
            "weighted {:.4}, overall {overall:.4}, delta_c {dc:.4}, paired {}",
            weighted.value,
            paired.join(", ")
        ),
    )
}

/// One random mixture pair meeting the separation and trace constraints.
fn random_gmm_pair(rng: &mut ChaCha8Rng) -> Result<(GaussianMixture, GaussianMixture, f64), String> {
    let k = rng.random_range(2..=4);
    let d = rng.random_range(1..=5);
    let eps = rng.random_range(1e-3..2e-2);
    let sigma = (eps / d as f64).sqrt();
    let sep = rng.random_range(2.0..4.0);
    let shift_len = rng.random_range(0.1..0.5);
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0) * sep * 2.0).collect())
        .collect();
    let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    let shift: Vec<f64> = dir.iter().map(|v| v / norm * shift_len).collect();
    let comps = |offset: bool| -> Result<Vec<GaussianComponent>, String> {
        means
            .iter()
            .map(|m| {
                let m: Vec<f64> = m.iter().zip(&shift).map(|(a, s)| if offset { a + s } else { *a }).collect();
                GaussianComponent::isotropic(m, sigma).map_err(|e| e.to_string())
            })
            .collect()
    };
    let ws = ClassWeights::new(random_simplex(rng, k).to_vec()).map_err(|e| e.to_string())?;
    let wt = ClassWeights::new(random_simplex(rng, k).to_vec()).map_err(|e| e.to_string())?;
    let s = GaussianMixture::new(ws, comps(false)?).map_err(|e| e.to_string())?;
    let t = GaussianMixture::new(wt, comps(true)?).map_err(|e| e.to_string())?;
    Ok((s, t, eps))
}

fn well_separated(mix: &GaussianMixture, min_gap: f64) -> bool {
    let c = mix.components();
    (0..c.len()).all(|i| {
        (i + 1..c.len()).all(|j| {
            let d2: f64 = c[i].mean().iter().zip(c[j].mean()).map(|(a, b)| (a - b).powi(2)).sum();
            d2.sqrt() >= min_gap
        })
    })
}

fn mixture_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = SinkhornParams {
        reg: 0.01,
        max_iter: 50_000,
        tol: 1e-6,
    };
    let n = 400;
    let (mut lower_gap, mut upper_gap) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut accepted = 0;
    let mut drawn = 0;
    while accepted < 20 {
        drawn += 1;
        if drawn > 200 {
            return Err(format!("only {accepted} admissible pairs in 200 draws"));
        }
        let (mix_s, mix_t, eps) = random_gmm_pair(&mut rng)?;
        if !well_separated(&mix_s, 2.0) {
            continue;
        }
        let seed = rng.random::<u64>();
        let (xs, ys) = sample_gmm(&mix_s, n, seed).map_err(|e| e.to_string())?;
        let (xt, yt) = sample_gmm(&mix_t, n, seed ^ 0x9e37_79b9).map_err(|e| e.to_string())?;
        let k = mix_s.len();
        let ds = Dataset::new(xs.clone(), Some(ys.clone()), k).map_err(|e| e.to_string())?;
        let dt = Dataset::new(xt.clone(), Some(yt.clone()), k).map_err(|e| e.to_string())?;
        if !paired_distance_audit(&ds, &dt).map_err(|e| e.to_string())? {
            continue;
        }
        accepted += 1;
        let w_t = mix_t.weights().clone();
        let weighted = weighted_subdomain_w1(
            &split_by_class(xs.view(), &ys, k),
            &split_by_class(xt.view(), &yt, k),
            &w_t,
            &params,
        )
        .map_err(|e| e.to_string())?
        .value;
        let (mw1, _) = mw1_gmm(&mix_s, &mix_t, PairwiseMode::AnalyticW2).map_err(|e| e.to_string())?;
        let sampled = w1_empirical(xs.view(), xt.view(), &params).map_err(|e| e.to_string())?;
        let trace = mix_s.max_trace().max(mix_t.max_trace());
        if trace > eps + 1e-12 {
            return Err(format!("component trace {trace} exceeds {eps}"));
        }
        lower_gap = lower_gap.max(weighted - (mw1 + 0.05));
        upper_gap = upper_gap.max(mw1 - (sampled + 4.0 * eps.sqrt() + 0.05));
    }
    check(
        lower_gap <= 0.0 && upper_gap <= 0.0,
        format!("20 pairs; worst lower-link excess {lower_gap:.3}, worst upper-link excess {upper_gap:.3}"),
    )
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn train_run(dir: &Path, seed: u64, out: &str) -> Result<Value, String> {
    let seed = seed.to_string();
    let o = common::darsa(&["train", "--task", "gmm", "--seed", &seed, "--out", out], dir);
    if !o.status.success() {
        return Err(format!(
            "train seed {seed} exited {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    let summary = common::read_json(&dir.join(out).join("summary.json"));
    common::assert_valid("summary", &summary);
    Ok(summary)
}

fn adaptation_gain(dir: &Path) -> Outcome {
    let TaskSpec::Gmm(spec) = TaskSpec::default_gmm() else {
        unreachable!()
    };
    let mut darsa = Vec::new();
    let mut baseline = Vec::new();
    for seed in SEEDS {
        let start = Instant::now();
        let summary = train_run(dir, seed, &format!("run{seed}"))?;
        darsa.push(summary["target_accuracy"].as_f64().ok_or("missing target accuracy")?);

        let (source, target) = make_shifted_gmm(&spec, seed).map_err(|e| e.to_string())?;
        let config = DarsaConfig {
            seed,
            ..DarsaConfig::default()
        }
        .source_only();
        let (model, _) = fit(&source, &target.without_labels(), &config, None).map_err(|e| e.to_string())?;
        let preds = model.predict_source(target.features().view()).map_err(|e| e.to_string())?;
        baseline.push(accuracy(&preds, target.labels().unwrap()));
        let took = start.elapsed();
        if took > Duration::from_secs(300) {
            return Err(format!("seed {seed} took {:.0}s", took.as_secs_f64()));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gain = 100.0 * (mean(&darsa) - mean(&baseline));
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    check(
        gain >= 5.0,
        format!(
            "mean gain {gain:.1} points (adapted {}, source-only {})",
            fmt(&darsa),
            fmt(&baseline)
        ),
    )
}

fn bound_ordering(dir: &Path) -> Outcome {
    let mut rows = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in SEEDS {
        let path = dir.join(format!("run{seed}")).join("bounds_per_epoch.csv");
        let mut reader = csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let headers = reader.headers().map_err(|e| e.to_string())?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("no column {name}"));
        let (ic, ig, id) = (col("eps_c_partial")?, col("eps_g_partial")?, col("delta_c")?);
        let mut seen = 0;
        for rec in reader.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let v = |i: usize| rec[i].parse::<f64>().map_err(|e| e.to_string());
            worst = worst.max(v(ic)? - (v(ig)? + v(id)? + 0.05));
            seen += 1;
        }
        if seen != DarsaConfig::default().epochs {
            return Err(format!("seed {seed}: {seen} bound rows"));
        }
        rows += seen;
    }
    check(
        worst <= 0.0,
        format!("{rows} epoch rows; worst eps_c - (eps_g + delta_c + 0.05) = {worst:.3}"),
    )
}

fn determinism(dir: &Path) -> Outcome {
    train_run(dir, 0, "repeat0")?;
    let a = fs::read(dir.join("run0/metrics.jsonl")).map_err(|e| e.to_string())?;
    let b = fs::read(dir.join("repeat0/metrics.jsonl")).map_err(|e| e.to_string())?;
    check(
        !a.is_empty() && a == b,
        format!("{} bytes, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let tmp = tempfile::TempDir::new().expect("temp dir");
    let dir = tmp.path();
    let only = std::env::var("ACCEPTANCE_ONLY")
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut r = Report { failed: 0, only };
    let secs = Duration::from_secs;
    r.run(1, "sub-domain risk decomposition", secs(10), lemma_identity).ok();
    r.run(2, "entropic vs exact transport", secs(60), ot_oracle).ok();
    r.run(3, "gradient fidelity", secs(300), gradient_fidelity).ok();
    r.run(4, "two-cluster discrepancy bound", secs(60), figure1_analog).ok();
    r.run(5, "mixture distance chain", secs(300), mixture_chain).ok();
    let trained = r
        .run(6, "adaptation beats source-only", secs(5 * 2 * 300), || adaptation_gain(dir))
        .is_ok();
    if trained {
        r.run(7, "per-epoch bound ordering", secs(60), || bound_ordering(dir)).ok();
    } else {
        r.run(7, "per-epoch bound ordering", secs(1500), || {
            // The ordering check reads the runs above; regenerate them if missing.
            for seed in SEEDS {
                if !dir.join(format!("run{seed}/bounds_per_epoch.csv")).is_file() {
                    train_run(dir, seed, &format!("run{seed}"))?;
                }
            }
            bound_ordering(dir)
        })
        .ok();
    }
    r.run(8, "byte-identical metrics", secs(300), || determinism(dir)).ok();
    if r.only.is_empty() {
        println!("{} of 8 criteria passed", 8 - r.failed);
    } else {
        println!("{} of {} selected criteria failed", r.failed, r.only.len());
    }
    if r.failed > 0 {
        std::process::exit(1);
    }
}
