use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use cogcn::checkpoint::{Checkpoint, CheckpointConfig};
use cogcn::features::{apply_standardizer, feature_csv_string, load_dataset, save_dataset, synth_dataset};
use cogcn::graph::{build_graph, dot_string};
use cogcn::io::{write_atomic, write_json_atomic};
use cogcn::model::param_count;
use cogcn::training::{evaluate, history_csv, loso_splits, run_fold, split_for, CvReport, FoldResult};
use cogcn::{Dataset, GraphKind, ModelConfig, SynthSpec, TrainConfig};

use crate::manifest::{self, Clock};
use crate::{EvalArgs, GradcheckArgs, GraphArgs, ParamsArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Verification(m) => f.write_str(m),
        }
    }
}

impl From<cogcn::Error> for CliError {
    fn from(e: cogcn::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn load(path: &Path) -> CliResult<Dataset> {
    eprintln!("loading {}", path.display());
    let ds = load_dataset(path)?;
    eprintln!(
        "{} utterances, d={}, {} classes, {} speakers",
        ds.len(),
        ds.d,
        ds.n_classes(),
        ds.speakers.len()
    );
    Ok(ds)
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn synth(args: SynthArgs, argv: &[String]) -> CliResult {
    let clock = Clock::start();
    let spec = SynthSpec {
        n_classes: args.classes,
        n_speakers: args.speakers,
        utt_per_speaker: args.utts,
        frames_lo: args.frames_lo,
        frames_hi: args.frames_hi,
        noise_frac: args.noise,
        d: args.d,
        cluster_sep: args.sep,
        seed: args.seed,
    };
    spec.validate()?;
    let non_empty = std::fs::read_dir(&args.out).map(|mut it| it.next().is_some()).unwrap_or(false);
    if non_empty && !args.force {
        return Err(CliError::Usage(format!(
            "{} is not empty; pass --force to write into it",
            args.out.display()
        )));
    }
    let ds = synth_dataset(&spec)?;
    create_dir(&args.out)?;
    let manifest_path = save_dataset(&ds, &args.out)?;
    eprintln!("wrote {} utterances to {}", ds.len(), args.out.display());
    let run = clock.finish("synth", argv, spec.seed, &spec, vec![], vec![manifest_path]);
    manifest::write(&args.out, &run)?;
    Ok(())
}

fn train_config(args: &TrainArgs, d: usize, c: usize) -> TrainConfig {
    let defaults = TrainConfig::default();
    TrainConfig {
        model: ModelConfig {
            d,
            z: args.z,
            k: args.k.unwrap_or(args.k_grid[0]),
            c,
            use_pre: !args.no_pre,
            use_skip: !args.no_skip,
            dropout_p: args.dropout,
            self_in_aggregation: !args.no_self,
        },
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        gamma: args.gamma.unwrap_or(defaults.gamma),
        gamma_grid: args.gamma.map_or_else(|| args.gamma_grid.clone(), |g| vec![g]),
        k_grid: args.k.map_or_else(|| args.k_grid.clone(), |k| vec![k]),
        seed: args.seed,
        graph_kind: args.graph.into(),
        ..defaults
    }
}

fn fold_dir(out: &Path, fold: &FoldResult) -> PathBuf {
    out.join(format!("fold_{}", fold.split.test_speaker))
}

fn write_fold(out: &Path, fold: &FoldResult, class_names: &[String]) -> CliResult<PathBuf> {
    let dir = fold_dir(out, fold);
    create_dir(&dir)?;
    let ck = Checkpoint::new(
        CheckpointConfig {
            model: fold.model.clone(),
            graph_kind: fold.graph_kind,
            gamma: fold.selected_gamma,
            standardizer: fold.standardizer.clone(),
        },
        class_names.to_vec(),
        fold.params.clone(),
    );
    ck.save(&dir.join("checkpoint.json"))?;
    write_atomic(&dir.join("history.csv"), history_csv(&fold.history).as_bytes())?;
    write_json_atomic(&dir.join("candidates.json"), &fold.candidates)?;
    Ok(dir)
}

pub fn train(args: TrainArgs, argv: &[String]) -> CliResult {
    let clock = Clock::start();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if args.k_grid.is_empty() || args.gamma_grid.is_empty() {
        return Err(CliError::Usage("grids must be non-empty".into()));
    }
    let ds = load(&args.dataset)?;
    let tc = train_config(&args, ds.d, ds.n_classes());
    tc.validate()?;

    let splits: Vec<(usize, _)> = match &args.holdout {
        Some(speaker) => vec![split_for(&ds, speaker)?],
        None => loso_splits(&ds)?.into_iter().enumerate().collect(),
    };
    let n_grid = tc.k_grid.len() * if tc.graph_kind == GraphKind::Cosine { tc.gamma_grid.len() } else { 1 };
    eprintln!("training {} fold(s), {} grid point(s) each, {} graph", splits.len(), n_grid, tc.graph_kind);
    let folds = splits
        .par_iter()
        .map(|(i, split)| {
            let fold = run_fold(&ds, split, &tc, *i)?;
            eprintln!(
                "fold {} (test {}): K={} gamma={} WA={:.4} UA={:.4}",
                i, split.test_speaker, fold.selected_k, fold.selected_gamma, fold.metrics.wa, fold.metrics.ua
            );
            Ok(fold)
        })
        .collect::<cogcn::Result<Vec<_>>>()?;
    let report = CvReport::from_folds(folds, ds.class_names.clone());

    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    for fold in &report.folds {
        outputs.push(write_fold(&args.out, fold, &ds.class_names)?);
    }
    let metrics = report.metrics_file();
    let metrics_path = args.out.join("metrics.json");
    write_json_atomic(&metrics_path, &metrics)?;
    outputs.push(metrics_path);
    let run = clock.finish("train", argv, tc.seed, &tc, vec![args.dataset.clone()], outputs);
    manifest::write(&args.out, &run)?;

    if args.json {
        print_json(&metrics)?;
    } else {
        println!("speaker\tWA\tUA\tK\tgamma");
        for f in &metrics.folds {
            println!("{}\t{:.4}\t{:.4}\t{}\t{}", f.speaker, f.wa, f.ua, f.selected_k, f.selected_gamma);
        }
        println!("mean\t{:.4}\t{:.4}", metrics.mean_wa, metrics.mean_ua);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    dataset: PathBuf,
    speakers: Vec<String>,
    n: usize,
    wa: f64,
    ua: f64,
    confusion: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

pub fn eval(args: EvalArgs) -> CliResult {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let ds = load(&args.dataset)?;
    if ds.class_names != ck.class_names {
        return Err(CliError::Data(format!(
            "class_names mismatch: checkpoint has {:?}, dataset has {:?}",
            ck.class_names, ds.class_names
        )));
    }
    if ds.d != ck.config.model.d {
        return Err(CliError::Data(format!(
            "feature dimension mismatch: checkpoint expects d={}, dataset has d={}",
            ck.config.model.d, ds.d
        )));
    }
    let ds = if args.speakers.is_empty() {
        ds
    } else {
        if let Some(s) = args.speakers.iter().find(|s| !ds.speakers.contains(*s)) {
            return Err(CliError::Usage(format!(
                "unknown speaker {s:?}; available: {}",
                ds.speakers.iter().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        ds.filter(|u| args.speakers.contains(&u.speaker))
    };
    let standardized = apply_standardizer(&ds, &ck.config.standardizer)?;
    let m = evaluate(&ck.params, &ck.config.model, &standardized, ck.config.gamma, ck.config.graph_kind)?;
    let report = EvalReport {
        checkpoint: args.checkpoint.clone(),
        dataset: args.dataset.clone(),
        speakers: ds.speakers.iter().cloned().collect(),
        n: ds.len(),
        wa: m.wa,
        ua: m.ua,
        confusion: m.confusion,
        class_names: ck.class_names,
    };
    if let Some(out) = &args.out {
        write_json_atomic(out, &report)?;
    }
    if args.json {
        print_json(&report)?;
    } else {
        println!("n={} WA={:.4} UA={:.4}", report.n, report.wa, report.ua);
        for (name, row) in report.class_names.iter().zip(&report.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            println!("{name}\t{}", cells.join("\t"));
        }
    }
    Ok(())
}

pub fn graph(args: GraphArgs) -> CliResult {
    let ds = load_dataset(&args.dataset)?;
    let utt = ds.get(&args.utt).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown utterance id {:?}; available: {}",
            args.utt,
            ds.ids().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let (kind, gamma) = if args.temporal {
        (GraphKind::Temporal, TrainConfig::default().gamma)
    } else {
        (GraphKind::Cosine, args.gamma.unwrap_or(TrainConfig::default().gamma))
    };
    let g = build_graph(&utt.features, kind, gamma)?;
    eprintln!("{}: {} nodes, {} edges", utt.id, g.n(), g.edge_count());
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_atomic(&dir.join("graph.dot"), dot_string(&g).as_bytes())?;
        write_json_atomic(&dir.join("graph.json"), &g.to_json())?;
        write_atomic(&dir.join("nodes.csv"), feature_csv_string(&utt.features).as_bytes())?;
    }
    if args.json {
        print_json(&g.to_json())?;
    } else if args.out.is_none() {
        print!("{}", dot_string(&g));
    }
    Ok(())
}

pub fn params(args: ParamsArgs) -> CliResult {
    let config = ModelConfig {
        d: args.d,
        z: args.z,
        k: args.k,
        c: args.c,
        use_pre: !args.no_pre,
        use_skip: !args.no_skip,
        ..ModelConfig::default()
    };
    config.validate()?;
    let count = param_count(&config);
    if args.json {
        #[derive(Serialize)]
        struct Out<'a> {
            config: &'a ModelConfig,
            param_count: usize,
        }
        print_json(&Out { config: &config, param_count: count })?;
    } else {
        println!("{count}");
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CliResult {
    let report = cogcn::gradcheck::gradcheck_suite(args.seed, args.trials)?;
    for c in &report.cases {
        eprintln!(
            "case {:2}: K={} pre={} skip={} {} n={} edges={} max rel err {:.3e} at {}",
            c.index,
            c.config.k,
            c.config.use_pre,
            c.config.use_skip,
            c.graph_kind,
            c.n,
            c.edges,
            c.max_rel_error,
            c.worst
        );
    }
    if args.json {
        print_json(&report)?;
    } else {
        println!("max relative error {:.3e}", report.max_rel_error);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient check failed: max relative error {:.3e} >= {:e}",
            report.max_rel_error,
            cogcn::gradcheck::TOLERANCE
        )))
    }
}
