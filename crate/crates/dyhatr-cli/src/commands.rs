//! Subcommand bodies. Overrides from the command line are applied to the
//! parsed config before anything runs, so the config hash recorded in every
//! output reflects the effective settings.

use crate::VariantArg;
use dyhatr::checkpoint::Checkpoint;
use dyhatr::config::ExperimentConfig;
use dyhatr::error::{Error, Result};
use dyhatr::eval::{evaluate, make_split, EvalReport, FeatureMode};
use dyhatr::graph::{save_edge_list, FormatDescriptor};
use dyhatr::params::RnnKind;
use dyhatr::synth::{generate, write_communities, SyntheticSpec};
use dyhatr::temporal::MaskKind;
use dyhatr::train::{train as train_model, EpochRecord, ValProbe};
use serde::Serialize;
use std::path::{Path, PathBuf};

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn synth(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(config)?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("bad synthetic spec: {e}")))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from("out"));
    let gen = generate(&spec)?;
    std::fs::create_dir_all(&out_dir)?;
    save_edge_list(&gen.graph, &out_dir.join("edges.tsv"))?;
    write_communities(&gen, &out_dir.join("communities.tsv"))?;
    write_json(&out_dir.join("format.json"), &FormatDescriptor::canonical())?;
    println!(
        "synthesized {} nodes, {} snapshots, {} edges",
        gen.graph.num_nodes(),
        gen.graph.num_snapshots(),
        gen.graph.total_edges()
    );
    println!("wrote edges.tsv, communities.tsv, format.json under {}", out_dir.display());
    Ok(())
}

pub fn train(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    mask: Option<MaskKind>,
    rnn: Option<RnnKind>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(m) = mask {
        cfg.train.mask = m;
    }
    if let Some(r) = rnn {
        cfg.train.rnn = r;
    }
    let graph = cfg.load_dataset()?;
    log::info!(
        "loaded {} nodes, {} snapshots, {} edges",
        graph.num_nodes(),
        graph.num_snapshots(),
        graph.total_edges()
    );
    let split = make_split(&graph, cfg.split_seed)?;
    let probe = ValProbe::from_split(&split)?;
    let train_graph = graph.without_last_snapshot()?;
    let outcome = train_model(&train_graph, &cfg.train, Some(&probe))?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    #[derive(Serialize)]
    struct TrainMetrics<'a> {
        config_hash: String,
        best_epoch: usize,
        history: &'a [EpochRecord],
    }
    let metrics_path = cfg.out_dir.join("metrics.json");
    write_json(
        &metrics_path,
        &TrainMetrics {
            config_hash: cfg.config_hash(),
            best_epoch: outcome.best_epoch,
            history: &outcome.history,
        },
    )?;
    let best = &outcome.history[outcome.best_epoch];
    let ckpt_path = cfg.out_dir.join("model.ckpt");
    let ckpt = Checkpoint::new(&graph, cfg.train.clone(), outcome.params, outcome.embeddings);
    ckpt.save(&ckpt_path)?;
    match best.val_auroc {
        Some(v) => println!(
            "trained {} epochs; kept epoch {} (val AUROC {v:.4})",
            outcome.history.len(),
            outcome.best_epoch
        ),
        None => println!("trained {} epochs", outcome.history.len()),
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("metrics: {}", metrics_path.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricRow {
    metric: &'static str,
    mean: f64,
    std: f64,
    n_repeats: usize,
    config_hash: String,
}

pub fn eval(
    config: &Path,
    checkpoint: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    feature: Option<FeatureMode>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.eval.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(f) = feature {
        cfg.eval.mode = f;
    }
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let graph = cfg.load_dataset()?;
    ckpt.registry_matches(&graph)?;
    let split = make_split(&graph, cfg.split_seed)?;
    let report = evaluate(&ckpt.embeddings, &split, &cfg.eval)?;

    let hash = cfg.config_hash();
    let rows = [
        MetricRow {
            metric: "auroc",
            mean: report.auroc_mean,
            std: report.auroc_std,
            n_repeats: report.n_repeats,
            config_hash: hash.clone(),
        },
        MetricRow {
            metric: "auprc",
            mean: report.auprc_mean,
            std: report.auprc_std,
            n_repeats: report.n_repeats,
            config_hash: hash,
        },
    ];
    std::fs::create_dir_all(&cfg.out_dir)?;
    let json_path = cfg.out_dir.join("eval.json");
    write_json(&json_path, &rows)?;
    println!("{:<8} {:>10} {:>10} {:>4}", "metric", "mean", "std", "n");
    for r in &rows {
        println!("{:<8} {:>10.6} {:>10.6} {:>4}", r.metric, r.mean, r.std, r.n_repeats);
    }
    println!("written: {}", json_path.display());
    Ok(())
}

pub fn embed(config: &Path, checkpoint: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let graph = cfg.load_dataset()?;
    ckpt.registry_matches(&graph)?;

    let emb = &ckpt.embeddings;
    let mut text = String::new();
    for v in 0..emb.rows() {
        text.push_str(&ckpt.node_names[v]);
        for c in 0..emb.cols() {
            text.push(' ');
            text.push_str(&emb.at(v, c).to_string());
        }
        text.push('\n');
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("embeddings.txt");
    std::fs::write(&path, text)?;
    println!("wrote {} x {} embeddings to {}", emb.rows(), emb.cols(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct AblateRow {
    variant: &'static str,
    auroc_mean: f64,
    auroc_std: f64,
    auprc_mean: f64,
    auprc_std: f64,
    n_repeats: usize,
}

pub fn ablate(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    feature: Option<FeatureMode>,
    variants: &[VariantArg],
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(f) = feature {
        cfg.eval.mode = f;
    }
    let mut requested: Vec<VariantArg> = Vec::new();
    for v in variants {
        if !requested.contains(v) {
            requested.push(*v);
        }
    }
    if requested.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }

    let graph = cfg.load_dataset()?;
    let split = make_split(&graph, cfg.split_seed)?;
    let probe = ValProbe::from_split(&split)?;
    let train_graph = graph.without_last_snapshot()?;

    let mut rows = Vec::new();
    let mut reports: Vec<(VariantArg, EvalReport)> = Vec::new();
    for v in requested {
        let (variant, rnn) = v.settings();
        let mut t_cfg = cfg.train.clone();
        t_cfg.variant = variant;
        t_cfg.rnn = rnn;
        log::info!("training variant {}", v.label());
        let outcome = train_model(&train_graph, &t_cfg, Some(&probe))?;
        let report = evaluate(&outcome.embeddings, &split, &cfg.eval)?;
        rows.push(AblateRow {
            variant: v.label(),
            auroc_mean: report.auroc_mean,
            auroc_std: report.auroc_std,
            auprc_mean: report.auprc_mean,
            auprc_std: report.auprc_std,
            n_repeats: report.n_repeats,
        });
        reports.push((v, report));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let json_path = cfg.out_dir.join("ablate.json");
    write_json(&json_path, &rows)?;
    println!("{:<8} {:<16} {:<16}", "variant", "auroc", "auprc");
    for (v, report) in &reports {
        println!("{:<8} {:<16} {:<16}", v.label(), report.auroc_string(), report.auprc_string());
    }
    println!("written: {}", json_path.display());
    Ok(())
}
