//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Synthetic-corpus criteria use d=16 and z=16 with 10 to 20 frames per
//! utterance so the full leave-one-speaker-out comparison (5 seeds, 3 arms,
//! 8 folds, 9 grid points) fits on one core.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use cogcn::features::{synth_dataset, SynthSpec};
use cogcn::gradcheck::gradcheck_suite;
use cogcn::graph::{build_cosine_graph, build_graph, build_temporal_graph, Graph, GraphKind};
use cogcn::model::{init_params, param_count, predict_proba, ModelConfig};
use cogcn::rng::{stream, Stream};
use cogcn::training::{loso_cv, train, TrainConfig};
use cogcn::{Dataset, Matrix};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_matrix(rng: &mut impl Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let report = gradcheck_suite(1, 20).unwrap();
    let elapsed = t.elapsed();
    outcome(
        report.cases.len() == 20 && report.passed() && elapsed < Duration::from_secs(60),
        format!(
            "20 instances, max rel err {:.2e} (< 1e-4), {:.1}s",
            report.max_rel_error,
            elapsed.as_secs_f64()
        ),
    )
}

fn permutation_invariance() -> Outcome {
    let mut rng = stream(2, Stream::Synth, 100);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let cfg = ModelConfig {
            d: rng.gen_range(1..8),
            z: rng.gen_range(2..10),
            k: rng.gen_range(1..4),
            c: rng.gen_range(2..5),
            use_pre: rng.gen(),
            use_skip: rng.gen(),
            ..ModelConfig::default()
        };
        let n = rng.gen_range(2..20);
        let x = random_matrix(&mut rng, n, cfg.d);
        let kind = if trial % 2 == 0 { GraphKind::Cosine } else { GraphKind::Temporal };
        let g = build_graph(&x, kind, rng.gen_range(-0.2..0.8)).unwrap();
        let params = init_params(&cfg, trial).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = predict_proba(&params, &cfg, &g).unwrap();
        let b = predict_proba(&params, &cfg, &g.permute(&perm)).unwrap();
        worst = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(worst, f64::max);
    }
    outcome(worst < 1e-9, format!("100 permutations, max |dp| {worst:.2e} (< 1e-9)"))
}

fn graph_laws() -> Outcome {
    const TRIALS: usize = 250;
    let mut rng = stream(3, Stream::Synth, 200);
    let mut violations = [0usize; 4];
    for _ in 0..TRIALS {
        let n = rng.gen_range(1..15);
        let d = rng.gen_range(1..7);
        let x = random_matrix(&mut rng, n, d);
        let g1 = rng.gen_range(-0.99..1.0);
        let g2 = rng.gen_range(g1..=1.0);
        let loose = build_cosine_graph(&x, g1).unwrap();
        let tight = build_cosine_graph(&x, g2).unwrap();
        if tight.edges().iter().any(|&(i, j)| !loose.has_edge(i, j)) {
            violations[0] += 1;
        }

        let mut scaled = x.clone();
        for i in 0..n {
            let s = rng.gen_range(0.1..10.0);
            scaled.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        if build_cosine_graph(&scaled, g1).unwrap().edges() != loose.edges() {
            violations[1] += 1;
        }

        let temporal = build_temporal_graph(&x).unwrap();
        for g in [&loose, &tight, &temporal] {
            let sym =
                (0..n).all(|i| !g.has_edge(i, i) && (0..n).all(|j| g.has_edge(i, j) == g.has_edge(j, i)));
            if !sym {
                violations[2] += 1;
            }
            if !degree_ok(g) {
                violations[3] += 1;
            }
        }
    }
    outcome(
        violations.iter().all(|&v| v == 0),
        format!(
            "{TRIALS} trials each; violations: monotonicity {}, row-scale {}, symmetry {}, degree_hat {}",
            violations[0], violations[1], violations[2], violations[3]
        ),
    )
}

fn degree_ok(g: &Graph) -> bool {
    (0..g.n()).all(|i| g.degree_hat[i] == 1.0 + (0..g.n()).filter(|&j| g.has_edge(i, j)).count() as f64)
}

fn parameter_accounting() -> Outcome {
    let mut formula_ok = true;
    for d in [1, 13, 88] {
        for z in [1, 16, 128] {
            for k in 1..=4 {
                for c in [2, 4] {
                    for use_pre in [false, true] {
                        let count = |use_skip| {
                            param_count(&ModelConfig {
                                d,
                                z,
                                k,
                                c,
                                use_pre,
                                use_skip,
                                ..ModelConfig::default()
                            })
                        };
                        let first_in = if use_pre { z } else { d };
                        let expect =
                            if use_pre { z * d + z } else { 0 } + z * first_in + (k - 1) * z * z + c * z + c;
                        formula_ok &= count(true) == expect && count(false) == expect;
                    }
                }
            }
        }
    }
    let at = |k, use_pre, use_skip| {
        param_count(&ModelConfig { d: 88, z: 128, k, c: 4, use_pre, use_skip, ..ModelConfig::default() })
    };
    let (k2, k3, bare) = (at(2, true, true), at(3, true, true), at(3, false, false));
    let pass = formula_ok
        && k2 == 44_676
        && k3 == 61_060
        && k2 < 56_000
        && k3 > 56_000
        && bare == 44_548
        && (bare as f64 / 1000.0).round() == 45.0
        && at(3, true, false) == k3;
    outcome(
        pass,
        format!(
            "closed form {}, K=2 {k2}, K=3 {k3}, w/o skip+pre K=3 {bare}, skip adds 0",
            if formula_ok { "ok" } else { "MISMATCH" }
        ),
    )
}

fn acceptance_config(d: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { d, z: 16, k: 2, c: 4, ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

fn optimization_sanity() -> Outcome {
    let t = Instant::now();
    let ds = synth_dataset(&SynthSpec {
        noise_frac: 0.0,
        cluster_sep: 6.0,
        d: 16,
        frames_lo: 10,
        frames_hi: 20,
        ..SynthSpec::default()
    })
    .unwrap();
    let train_set = ds.filter(|u| u.speaker != "spk7");
    let val = ds.filter(|u| u.speaker == "spk7");
    let tc = acceptance_config(ds.d);
    let out = train(&train_set, &val, &tc).unwrap();
    let hit = out.history.iter().find(|r| r.train_loss < 0.1).map(|r| r.epoch);
    let elapsed = t.elapsed();
    let last = out.history.last().unwrap().train_loss;
    outcome(
        hit.is_some() && elapsed < Duration::from_secs(120),
        format!(
            "train loss < 0.1 first at epoch {} (final {last:.4}), lr 1e-3, batch 32, {:.1}s",
            hit.map_or("never".into(), |e| e.to_string()),
            elapsed.as_secs_f64()
        ),
    )
}

fn reproduction_corpus(seed: u64) -> Dataset {
    synth_dataset(&SynthSpec {
        n_classes: 4,
        n_speakers: 8,
        utt_per_speaker: 20,
        noise_frac: 0.3,
        d: 16,
        frames_lo: 10,
        frames_hi: 20,
        cluster_sep: 3.0,
        seed,
    })
    .unwrap()
}

fn cogcn_arm(d: usize, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..acceptance_config(d) }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Returns the outcome and the CoGCN metrics files for the determinism check.
fn directional_reproduction() -> (Outcome, Vec<String>) {
    let t = Instant::now();
    let (mut co, mut tg, mut ns, mut files) = (vec![], vec![], vec![], vec![]);
    for seed in SEEDS {
        let ds = reproduction_corpus(seed);
        let base = cogcn_arm(ds.d, seed);
        let temporal = TrainConfig { graph_kind: GraphKind::Temporal, ..base.clone() };
        let no_skip =
            TrainConfig { model: ModelConfig { use_skip: false, ..base.model.clone() }, ..base.clone() };

        let r = loso_cv(&ds, &base).unwrap();
        files.push(serde_json::to_string_pretty(&r.metrics_file()).unwrap());
        co.push(r.mean_ua);
        tg.push(loso_cv(&ds, &temporal).unwrap().mean_ua);
        ns.push(loso_cv(&ds, &no_skip).unwrap().mean_ua);
        println!(
            "    seed {seed}: UA CoGCN {:.4}  TGCN {:.4}  w/o skip {:.4}",
            co.last().unwrap(),
            tg.last().unwrap(),
            ns.last().unwrap()
        );
    }
    let elapsed = t.elapsed();
    let (c, t_, n) = (mean(&co), mean(&tg), mean(&ns));
    let checks = [c >= t_, c >= 0.90, c >= n, elapsed < Duration::from_secs(15 * 60)];
    let mark = |b: bool| if b { "ok" } else { "FAILS" };
    (
        outcome(
            checks.iter().all(|&b| b),
            format!(
                "mean UA CoGCN {c:.4} >= TGCN {t_:.4} [{}], >= 0.90 [{}], >= w/o skip {n:.4} [{}], {:.0}s [{}]",
                mark(checks[0]),
                mark(checks[1]),
                mark(checks[2]),
                elapsed.as_secs_f64(),
                mark(checks[3])
            ),
        ),
        files,
    )
}

fn determinism(first: &[String]) -> Outcome {
    let again: Vec<String> = SEEDS
        .iter()
        .map(|&seed| {
            let ds = reproduction_corpus(seed);
            serde_json::to_string_pretty(&loso_cv(&ds, &cogcn_arm(ds.d, seed)).unwrap().metrics_file())
                .unwrap()
        })
        .collect();
    let same = again.iter().zip(first).filter(|(a, b)| a == b).count();
    outcome(
        same == SEEDS.len(),
        format!("{same}/{} CoGCN metrics files byte-identical on rerun", SEEDS.len()),
    )
}

fn report(failed: &mut usize, id: usize, name: &str, o: Outcome) {
    if !o.pass {
        *failed += 1;
    }
    println!("[{}] {id}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() -> ExitCode {
    let mut failed = 0;
    report(&mut failed, 1, "gradient fidelity", gradient_fidelity());
    report(&mut failed, 2, "permutation invariance", permutation_invariance());
    report(&mut failed, 3, "graph laws", graph_laws());
    report(&mut failed, 4, "parameter accounting", parameter_accounting());
    report(&mut failed, 5, "optimization sanity", optimization_sanity());
    let (repro, files) = directional_reproduction();
    report(&mut failed, 6, "directional reproduction", repro);
    report(&mut failed, 7, "determinism", determinism(&files));
    println!("acceptance: {} of 7 criteria passed", 7 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
