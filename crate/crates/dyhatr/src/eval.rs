//! Dynamic link-prediction evaluation.
//!
//! The held-out last snapshot supplies positive pairs. They split 20% /
//! 25%-of-remainder / 75%-of-remainder into validation, classifier-train and
//! classifier-test sets (floor arithmetic, leftovers go to the test set), each
//! paired with an equal number of sampled non-edges. Pairs become features of
//! the two endpoint embeddings, a from-scratch logistic regression is fit on
//! the train set, and AUROC/AUPRC are computed on the test scores. The whole
//! protocol repeats with per-repetition seeds and reports mean(std).

use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, NodeId, Snapshot};
use crate::rng::{substream, tag};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// How a node pair turns into a classifier feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Element-wise product of the endpoint embeddings (dim d).
    #[default]
    Hadamard,
    /// Scalar inner product (dim 1).
    Dot,
}

/// Pair sets for the link-prediction protocol. All positives come from the
/// evaluation snapshot; negative pairs touch no edge of that snapshot, use
/// only nodes present in it, and the three negative sets are disjoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub val_pos: Vec<(NodeId, NodeId)>,
    pub val_neg: Vec<(NodeId, NodeId)>,
    pub train_pos: Vec<(NodeId, NodeId)>,
    pub train_neg: Vec<(NodeId, NodeId)>,
    pub test_pos: Vec<(NodeId, NodeId)>,
    pub test_neg: Vec<(NodeId, NodeId)>,
}

/// Splits the last snapshot's distinct undirected pairs into
/// validation/train/test positives with matching negatives. Proportions use
/// floor arithmetic: n/5 validation, a quarter of the remainder train, the
/// rest test (1000 pairs -> 200/200/600).
pub fn make_split(graph: &DynamicGraph, seed: u64) -> Result<EvalSplit> {
    if graph.num_snapshots() < 2 {
        return Err(Error::Split(
            "need at least 2 snapshots to hold one out for evaluation".into(),
        ));
    }
    let last = graph.snapshot(graph.num_snapshots() - 1);
    let mut pos: Vec<(NodeId, NodeId)> = last.undirected_pairs().iter().copied().collect();
    if pos.len() < 10 {
        return Err(Error::Split(format!(
            "evaluation snapshot has {} distinct pairs, need at least 10",
            pos.len()
        )));
    }
    let mut rng = substream(seed, tag::SPLIT, &[]);
    pos.shuffle(&mut rng);
    let n = pos.len();
    let n_val = n / 5;
    let rem = n - n_val;
    let n_train = rem / 4;
    let val_pos = pos[..n_val].to_vec();
    let train_pos = pos[n_val..n_val + n_train].to_vec();
    let test_pos = pos[n_val + n_train..].to_vec();

    let negs = sample_non_edges(last, n, &mut rng)?;
    let val_neg = negs[..n_val].to_vec();
    let train_neg = negs[n_val..n_val + n_train].to_vec();
    let test_neg = negs[n_val + n_train..].to_vec();
    Ok(EvalSplit { val_pos, val_neg, train_pos, train_neg, test_pos, test_neg })
}

/// Draws `count` distinct canonical non-edge pairs among the snapshot's
/// present nodes. Rejection-samples first; when the graph is too dense for
/// that to land quickly, enumerates all non-edges and shuffles.
fn sample_non_edges(
    snap: &Snapshot,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(NodeId, NodeId)>> {
    let nodes = snap.present_nodes();
    let p = nodes.len();
    if p < 2 {
        return Err(Error::Split("fewer than 2 nodes in evaluation snapshot".into()));
    }
    let total_pairs = p * (p - 1) / 2;
    let available = total_pairs - snap.undirected_pairs().len();
    if available < count {
        return Err(Error::Split(format!(
            "need {count} non-edges but only {available} exist"
        )));
    }
    let mut chosen: std::collections::BTreeSet<(NodeId, NodeId)> =
        std::collections::BTreeSet::new();
    let budget = count.saturating_mul(100);
    let mut attempts = 0usize;
    while chosen.len() < count && attempts < budget {
        attempts += 1;
        let a = nodes[rng.random_range(0..p)];
        let b = nodes[rng.random_range(0..p)];
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if snap.undirected_pairs().contains(&pair) {
            continue;
        }
        chosen.insert(pair);
    }
    let mut out: Vec<(NodeId, NodeId)> = chosen.into_iter().collect();
    out.shuffle(rng);
    if out.len() < count {
        // Dense snapshot: fall back to exhaustive enumeration.
        let mut all = Vec::with_capacity(available);
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                if !snap.undirected_pairs().contains(&(a, b)) {
                    all.push((a, b));
                }
            }
        }
        all.shuffle(rng);
        all.truncate(count);
        return Ok(all);
    }
    out.truncate(count);
    Ok(out)
}

/// Feature of one node pair under the chosen mode. Symmetric in its
/// arguments for both modes.
pub fn link_feature(zu: &[f64], zv: &[f64], mode: FeatureMode) -> Vec<f64> {
    match mode {
        FeatureMode::Hadamard => zu.iter().zip(zv).map(|(a, b)| a * b).collect(),
        FeatureMode::Dot => {
            vec![zu.iter().zip(zv).map(|(a, b)| a * b).sum()]
        }
    }
}

/// Pair features plus binary labels; feature dimension is constant.
#[derive(Debug, Clone)]
pub struct LinkDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl LinkDataset {
    /// Featurizes positives then negatives against the embedding rows.
    pub fn build(
        emb: &Tensor,
        pos: &[(NodeId, NodeId)],
        neg: &[(NodeId, NodeId)],
        mode: FeatureMode,
    ) -> Result<LinkDataset> {
        let n = emb.rows();
        let mut features = Vec::with_capacity(pos.len() + neg.len());
        let mut labels = Vec::with_capacity(pos.len() + neg.len());
        for (&(u, v), label) in pos
            .iter()
            .map(|p| (p, true))
            .chain(neg.iter().map(|p| (p, false)))
        {
            if u >= n || v >= n {
                return Err(Error::Contract(format!(
                    "pair ({u}, {v}) outside embedding table of {n} rows"
                )));
            }
            features.push(link_feature(emb.row(u), emb.row(v), mode));
            labels.push(label);
        }
        Ok(LinkDataset { features, labels })
    }
}

/// Logistic regression with explicit weights; trained by full-batch gradient
/// descent on mean binary cross-entropy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRegModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogRegModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        let z = self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b;
        crate::tensor::sigmoid(z)
    }
}

/// Mean binary cross-entropy of the model on the dataset.
pub fn logreg_loss(model: &LogRegModel, data: &LinkDataset) -> f64 {
    let n = data.labels.len() as f64;
    data.features
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| {
            let z = model.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.b;
            if y {
                -crate::tensor::log_sigmoid(z)
            } else {
                -crate::tensor::log_sigmoid(-z)
            }
        })
        .sum::<f64>()
        / n
}

/// Fits from `init` (zeros when `None`) with `epochs` full-batch steps of
/// learning rate `lr`. Requires both labels present.
pub fn logreg_fit(
    data: &LinkDataset,
    epochs: usize,
    lr: f64,
    init: Option<LogRegModel>,
) -> Result<LogRegModel> {
    if data.features.is_empty() {
        return Err(Error::Fit("empty dataset".into()));
    }
    let dim = data.features[0].len();
    if data.features.iter().any(|f| f.len() != dim) {
        return Err(Error::Fit("inconsistent feature dimensions".into()));
    }
    let n_pos = data.labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == data.labels.len() {
        return Err(Error::Fit("need at least one example of each class".into()));
    }
    let mut model = init.unwrap_or(LogRegModel { w: vec![0.0; dim], b: 0.0 });
    if model.w.len() != dim {
        return Err(Error::Fit(format!(
            "init weight dim {} does not match features of dim {dim}",
            model.w.len()
        )));
    }
    let n = data.labels.len() as f64;
    let mut gw = vec![0.0; dim];
    for _ in 0..epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, &y) in data.features.iter().zip(&data.labels) {
            let z = model.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.b;
            let err = crate::tensor::sigmoid(z) - if y { 1.0 } else { 0.0 };
            for (g, v) in gw.iter_mut().zip(x) {
                *g += err * v;
            }
            gb += err;
        }
        for (w, g) in model.w.iter_mut().zip(&gw) {
            *w -= lr * g / n;
        }
        model.b -= lr * gb / n;
        if !model.b.is_finite() || model.w.iter().any(|w| !w.is_finite()) {
            return Err(Error::Fit("diverged to non-finite parameters".into()));
        }
    }
    Ok(model)
}

/// AUROC by the midrank statistic: the probability a random positive
/// outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_classes(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank shared by the tie group [i, j].
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| *r)
        .sum();
    let wins = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// AUPRC by descending-score step summation with tied scores grouped: after
/// each threshold group, area += (recall - previous recall) * precision.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_classes(scores, labels)?;
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        let recall = tp / n_pos;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

fn check_classes(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Metric("scores and labels must align and be non-empty".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Metric("need both classes to rank".into()));
    }
    Ok(())
}

/// Evaluation settings; `reps` independent repetitions differ only in the
/// classifier's weight initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: FeatureMode,
    pub reps: usize,
    pub logreg_epochs: usize,
    pub logreg_lr: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: FeatureMode::Hadamard,
            reps: 5,
            logreg_epochs: 400,
            logreg_lr: 0.5,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.logreg_epochs == 0 {
            return Err(Error::Config("logreg_epochs must be positive".into()));
        }
        if !(self.logreg_lr > 0.0 && self.logreg_lr.is_finite()) {
            return Err(Error::Config(format!(
                "logreg_lr must be a positive finite number, got {}",
                self.logreg_lr
            )));
        }
        Ok(())
    }
}

/// Mean and population standard deviation per metric over the repetitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub n_repeats: usize,
}

impl EvalReport {
    /// Table-style "0.696(0.005)" strings.
    pub fn auroc_string(&self) -> String {
        format!("{:.3}({:.3})", self.auroc_mean, self.auroc_std)
    }

    pub fn auprc_string(&self) -> String {
        format!("{:.3}({:.3})", self.auprc_mean, self.auprc_std)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Threads allowed for evaluation repetitions: `DYHATR_THREADS` when set to a
/// positive integer, otherwise available parallelism.
pub fn thread_budget() -> usize {
    if let Ok(v) = std::env::var("DYHATR_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn one_rep(
    emb: &Tensor,
    split: &EvalSplit,
    cfg: &EvalConfig,
    rep: u64,
) -> Result<(f64, f64)> {
    let train = LinkDataset::build(emb, &split.train_pos, &split.train_neg, cfg.mode)?;
    let test = LinkDataset::build(emb, &split.test_pos, &split.test_neg, cfg.mode)?;
    let dim = train.features[0].len();
    let mut rng = substream(cfg.seed, tag::EVAL, &[rep]);
    let init = LogRegModel {
        w: (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect(),
        b: 0.0,
    };
    let model = logreg_fit(&train, cfg.logreg_epochs, cfg.logreg_lr, Some(init))?;
    let scores: Vec<f64> = test.features.iter().map(|x| model.score(x)).collect();
    Ok((auroc(&scores, &test.labels)?, auprc(&scores, &test.labels)?))
}

/// Runs the repetitions (in parallel up to [`thread_budget`], collected in
/// repetition order so the report is deterministic) and aggregates.
pub fn evaluate(emb: &Tensor, split: &EvalSplit, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.reps == 0 {
        return Err(Error::Contract("need at least one repetition".into()));
    }
    let budget = thread_budget().min(cfg.reps);
    let mut results: Vec<Option<Result<(f64, f64)>>> = (0..cfg.reps).map(|_| None).collect();
    if budget <= 1 {
        for (rep, slot) in results.iter_mut().enumerate() {
            *slot = Some(one_rep(emb, split, cfg, rep as u64));
        }
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(cfg.reps);
            for rep in 0..cfg.reps {
                handles.push(scope.spawn(move || one_rep(emb, split, cfg, rep as u64)));
            }
            for (rep, h) in handles.into_iter().enumerate() {
                results[rep] = Some(h.join().expect("evaluation thread panicked"));
            }
        });
    }
    let mut aurocs = Vec::with_capacity(cfg.reps);
    let mut auprcs = Vec::with_capacity(cfg.reps);
    for r in results.into_iter().flatten() {
        let (a, p) = r?;
        aurocs.push(a);
        auprcs.push(p);
    }
    let (am, asd) = mean_std(&aurocs);
    let (pm, psd) = mean_std(&auprcs);
    Ok(EvalReport {
        auroc_mean: am,
        auroc_std: asd,
        auprc_mean: pm,
        auprc_std: psd,
        n_repeats: cfg.reps,
    })
}

/// Exhaustive pair-counting AUROC: mean over all positive-negative pairs of
/// win=1, tie=1/2, loss=0. Quadratic; used to verify the rank version.
pub fn auroc_pair_count(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_classes(scores, labels)?;
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(s, _)| *s)
        .collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}
