use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bddtext::checkpoint::{metrics_csv, Checkpoint};
use bddtext::corpus::{save_jsonl, synth_corpus, SynthSpec};
use bddtext::metrics::{micro_macro_f1, EvalReport};
use bddtext::stats::avg_dlav;
use bddtext::trainer::{Dataset, EpochReport, Mode, TrainConfig, Trainer};

use crate::error::{missing, usage, CliResult};
use crate::inputs::{load_split, load_truth, Splits, ORACLE_DIR};
use crate::manifest::{DataPaths, Invocation, RunManifest};

pub const VARIANTS: [&str; 5] = ["full", "no-regularization", "no-bdd", "no-unlabeled", "no-all"];

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Runs a manifest's command against its recorded output directory.
pub fn execute(m: &RunManifest) -> CliResult<()> {
    let cfg = || m.config.clone().ok_or_else(|| usage(format!("{} manifest has no config", m.invocation.name())));
    match &m.invocation {
        Invocation::Synth { spec } => synth(spec, &m.out_dir),
        Invocation::Train { data } => train(cfg()?, data, &m.out_dir),
        Invocation::Evaluate { checkpoint, data } => evaluate(checkpoint, data, Some(&m.out_dir)).map(drop),
        Invocation::Ablate { data } => ablate(&cfg()?, &m.seeds, data, &m.out_dir),
        Invocation::Diagnose { data, truth } => diagnose(cfg()?, data, truth, &m.out_dir),
    }
}

pub fn ensure_empty(dir: &Path, force: bool) -> CliResult<()> {
    let non_empty = fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        return Err(usage(format!("{} is not empty (pass --force to overwrite)", dir.display())));
    }
    Ok(())
}

fn synth(spec: &SynthSpec, out: &Path) -> CliResult<()> {
    let corpus = synth_corpus(spec)?;
    save_jsonl(out.join("labeled.jsonl"), &corpus.labeled)?;
    save_jsonl(out.join("unlabeled.jsonl"), &corpus.unlabeled)?;
    save_jsonl(out.join("dev.jsonl"), &corpus.dev)?;
    save_jsonl(out.join("test.jsonl"), &corpus.test)?;
    let oracle = out.join(ORACLE_DIR);
    fs::create_dir_all(&oracle).map_err(|e| usage(format!("cannot create {}: {e}", oracle.display())))?;
    save_jsonl(oracle.join("unlabeled.jsonl"), &corpus.unlabeled_truth)?;
    write_file(&out.join("synth.json"), serde_json::to_string_pretty(spec).expect("spec is serializable"))
}

fn prepare(cfg: &TrainConfig, splits: &Splits) -> CliResult<Dataset> {
    Ok(Dataset::prepare(
        cfg.mode,
        cfg.min_df,
        cfg.max_features,
        &splits.labeled,
        &splits.unlabeled,
        &splits.dev,
    )?)
}

fn train(cfg: TrainConfig, data: &DataPaths, out: &Path) -> CliResult<()> {
    let splits = Splits::load(data)?;
    let ds = prepare(&cfg, &splits)?;
    let mut t = Trainer::new(cfg.clone(), &ds)?;
    let epochs = t.fit(&mut ())?;
    let state = t.into_state();
    let ck = Checkpoint {
        config: cfg,
        model: state.model,
        admm: state.admm,
        features: ds.features.clone(),
        labels: ds.labels.clone(),
        epochs,
    };
    ck.save(out)?;
    if !ds.dev.is_empty() {
        write_file(&out.join("dev_eval.json"), ck.model.evaluate(&ds.dev)?.to_json())?;
    }
    Ok(())
}

pub fn evaluate(checkpoint: &Path, data: &Path, out: Option<&Path>) -> CliResult<EvalReport> {
    if !checkpoint.is_dir() {
        return Err(missing(format!("checkpoint directory {} does not exist", checkpoint.display())));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let docs = load_split(data)?;
    let ds = Dataset::with_features(ck.model.mode, ck.labels.clone(), ck.features.clone(), &[], &[], &docs)?;
    let report = ck.model.evaluate(&ds.dev)?;
    if let Some(out) = out {
        write_file(&out.join("eval.json"), report.to_json())?;
        write_file(&out.join("eval.csv"), report.to_csv(ck.labels.names()))?;
    }
    Ok(report)
}

/// The configuration of one ablation variant.
pub fn variant(base: &TrainConfig, name: &str) -> TrainConfig {
    let mut c = base.clone();
    let strip_reg = |c: &mut TrainConfig| match c.mode {
        Mode::Mlc => c.lambda3 = 0.0,
        Mode::MccS | Mode::MccF => c.lambda2 = 0.0,
    };
    match name {
        "full" => {}
        "no-regularization" => strip_reg(&mut c),
        "no-bdd" => c.use_bdd = false,
        "no-unlabeled" => c.lambda1 = 0.0,
        "no-all" => {
            strip_reg(&mut c);
            c.use_bdd = false;
            c.lambda1 = 0.0;
        }
        other => unreachable!("unknown variant {other}"),
    }
    c
}

const EVAL_HEADER: &str = "dev_micro_f1,dev_macro_f1,dev_ranking_loss,dev_average_precision";

fn eval_fields(r: &EvalReport) -> String {
    format!(
        "{},{},{},{}",
        r.micro_f1,
        r.macro_f1,
        opt(r.ranking_loss),
        opt(r.average_precision)
    )
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn ablate(base: &TrainConfig, seeds: &[u64], data: &DataPaths, out: &Path) -> CliResult<()> {
    if data.dev.is_none() {
        return Err(usage("ablate needs --dev"));
    }
    if seeds.is_empty() {
        return Err(usage("ablate needs at least one seed"));
    }
    let splits = Splits::load(data)?;
    let ds = prepare(base, &splits)?;
    let mut per_seed = format!("variant,seed,{EVAL_HEADER}\n");
    let mut summary = format!("variant,n_seeds,{EVAL_HEADER}\n");
    for name in VARIANTS {
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = variant(base, name);
            cfg.seed = seed;
            let mut t = Trainer::new(cfg, &ds)?;
            let epochs = t.fit(&mut ())?;
            write_file(&out.join("runs").join(name).join(format!("seed-{seed}")).join("metrics.csv"), metrics_csv(&epochs))?;
            let r = t.model().evaluate(&ds.dev)?;
            let _ = writeln!(per_seed, "{name},{seed},{}", eval_fields(&r));
            reports.push(r);
        }
        let _ = writeln!(
            summary,
            "{name},{},{},{},{},{}",
            reports.len(),
            opt(mean(reports.iter().map(|r| Some(r.micro_f1)))),
            opt(mean(reports.iter().map(|r| Some(r.macro_f1)))),
            opt(mean(reports.iter().map(|r| r.ranking_loss))),
            opt(mean(reports.iter().map(|r| r.average_precision)))
        );
    }
    write_file(&out.join("ablation_seeds.csv"), per_seed)?;
    write_file(&out.join("ablation.csv"), summary)
}

fn dlav(var: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = var.iter().flatten().copied().collect();
    avg_dlav(&defined).ok()
}

pub const DIAGNOSE_HEADER: &str = "epoch,avg_dlav_semi,avg_dlav_oracle,pl_micro_f1,pl_macro_f1";

fn diagnose(cfg: TrainConfig, data: &DataPaths, truth_path: &Path, out: &Path) -> CliResult<()> {
    let truth_docs = load_truth(truth_path)?;
    let splits = Splits::load(data)?;
    if splits.unlabeled.is_empty() {
        return Err(missing("diagnose needs a non-empty unlabeled split"));
    }
    let aligned = truth_docs.len() == splits.unlabeled.len()
        && truth_docs.iter().zip(&splits.unlabeled).all(|(a, b)| a.id == b.id);
    if !aligned {
        return Err(usage(format!(
            "{} does not list the unlabeled documents in order",
            truth_path.display()
        )));
    }
    let ds = prepare(&cfg, &splits)?;
    let truth: Vec<Vec<bool>> = truth_docs
        .iter()
        .map(|d| -> CliResult<Vec<bool>> { Ok(ds.labels.encode(&d.labels)?.iter().map(|&v| v > 0.5).collect()) })
        .collect::<CliResult<_>>()?;

    let mut t = Trainer::new(cfg, &ds)?;
    t.warmup()?;
    let mut csv = format!("{DIAGNOSE_HEADER}\n");
    let mut row = |t: &Trainer<'_>, epoch: usize| -> CliResult<()> {
        let pseudo = t.pseudo_label_pool();
        let f1 = micro_macro_f1(&truth, &pseudo)?;
        let _ = writeln!(
            csv,
            "{epoch},{},{},{},{}",
            opt(dlav(&t.pool_angle_variances(&pseudo))),
            opt(dlav(&t.pool_angle_variances(&truth))),
            f1.micro,
            f1.macro_f1
        );
        Ok(())
    };
    // Row 0 is the state right after warm-up.
    row(&t, 0)?;
    let mut epochs: Vec<EpochReport> = Vec::new();
    for _ in 0..t.config().epochs {
        let r = t.train_epoch()?;
        row(&t, r.epoch + 1)?;
        epochs.push(r);
    }
    write_file(&out.join("metrics.csv"), metrics_csv(&epochs))?;
    write_file(&out.join("diagnose.csv"), csv)
}

pub fn manifest_path(arg: &Path) -> PathBuf {
    if arg.is_dir() {
        arg.join(crate::manifest::MANIFEST_FILE)
    } else {
        arg.to_path_buf()
    }
}
