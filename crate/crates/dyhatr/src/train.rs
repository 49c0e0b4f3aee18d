//! Skip-gram training of the final embeddings.
//!
//! Each epoch samples fixed-length random walks on the last training
//! snapshot; nodes co-occurring within the walk window become positive
//! (center, context) pairs, and each pair draws Q negatives from the
//! degree^0.75 distribution. The loss over a batch is
//! sum of -log sigma(<z_u, z_v>) - sum over negatives of
//! log sigma(-<z_u, z_vn>), plus lambda times the squared norm of every
//! trainable parameter. Only the final embeddings z (output of the temporal
//! encoder) enter the objective.

use crate::attention::{encode_snapshot, plan_snapshot, SnapshotPlan};
use crate::error::{Error, Result};
use crate::eval::{auroc, EvalSplit};
use crate::graph::{DynamicGraph, NodeId, Snapshot};
use crate::params::{init_params, names, BoundParams, ModelDims, ParamStore, RnnKind, TemporalVariant};
use crate::rng::{substream, tag};
use crate::temporal::{attend_over_states, encode_sequences, rnn_states, MaskKind};
use crate::tensor::{AdamConfig, Optimizer, Tape, Tensor, TensorId};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Epoch index reserved for inference-time neighbor sampling, so evaluation
/// and embedding dumps never share a sampling stream with a training epoch.
pub const INFERENCE_EPOCH: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Everything a training run depends on besides the graph itself.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: ModelDims,
    pub rnn: RnnKind,
    pub variant: TemporalVariant,
    pub mask: MaskKind,
    /// Nodes per walk, start included.
    pub walk_len: usize,
    pub num_walks: usize,
    pub window: usize,
    /// Neighbors sampled per node within each edge-type sub-network.
    pub neighbor_samples: usize,
    /// Negatives per positive example (Q).
    pub negatives: usize,
    /// L2 coefficient over all trainable parameters.
    pub lambda: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Reuse epoch-0 walks, negatives, and neighbor samples every epoch.
    pub freeze_walks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: ModelDims::default(),
            rnn: RnnKind::default(),
            variant: TemporalVariant::default(),
            mask: MaskKind::default(),
            walk_len: 8,
            num_walks: 10,
            window: 3,
            neighbor_samples: 5,
            negatives: 5,
            lambda: 1e-4,
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            epochs: 100,
            batch_size: 512,
            seed: 0,
            freeze_walks: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.negatives == 0 {
            return Err(Error::Config("need at least one negative per example".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and non-negative".into()));
        }
        if self.walk_len < 2 {
            return Err(Error::Config("walks need at least two nodes".into()));
        }
        if self.num_walks == 0 || self.window == 0 {
            return Err(Error::Config("need at least one walk and a positive window".into()));
        }
        if self.neighbor_samples == 0 {
            return Err(Error::Config("need at least one sampled neighbor".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One positive pair with its freshly drawn negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub u: NodeId,
    pub v: NodeId,
    pub negatives: Vec<NodeId>,
}

/// Walk-window co-occurrence examples over `last`, shuffled, each with Q
/// i.i.d. negatives. Empty when no node has a neighbor.
pub fn build_examples(
    last: &Snapshot,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<Vec<TrainingExample>> {
    let mut rng_w = substream(cfg.seed, tag::WALKS, &[epoch]);
    let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
    for &u in last.present_nodes() {
        for (v, count) in last.walk_neighborhood(u, cfg.walk_len, cfg.num_walks, cfg.window, &mut rng_w)
        {
            for _ in 0..count {
                pairs.push((u, v));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Contract(
            "no co-occurrence pairs; the last training snapshot has no usable walks".into(),
        ));
    }
    let sampler = last.negative_distribution()?;
    let mut rng_n = substream(cfg.seed, tag::NEGATIVES, &[epoch]);
    let mut examples: Vec<TrainingExample> = pairs
        .into_iter()
        .map(|(u, v)| TrainingExample {
            u,
            v,
            negatives: (0..cfg.negatives).map(|_| sampler.sample(&mut rng_n)).collect(),
        })
        .collect();
    let mut rng_s = substream(cfg.seed, tag::SHUFFLE, &[epoch]);
    examples.shuffle(&mut rng_s);
    Ok(examples)
}

/// One neighbor-sampling plan per snapshot for the given epoch.
pub fn make_plans(graph: &DynamicGraph, cfg: &TrainConfig, epoch: u64) -> Vec<SnapshotPlan> {
    graph
        .snapshots()
        .iter()
        .enumerate()
        .map(|(t, snap)| {
            plan_snapshot(
                snap,
                graph.num_edge_types(),
                cfg.dims.heads,
                cfg.neighbor_samples,
                cfg.seed,
                epoch,
                t,
            )
        })
        .collect()
}

/// Full forward pass: per-snapshot hierarchical attention, then the
/// variant-selected temporal path. Output is `[num_nodes x dim]` where dim
/// depends on the variant (T*E for concatenation, D for the plain RNN, d
/// otherwise).
pub fn forward_full(
    tape: &mut Tape,
    num_nodes: usize,
    plans: &[SnapshotPlan],
    bound: &BoundParams,
    cfg: &TrainConfig,
) -> Result<TensorId> {
    if plans.is_empty() {
        return Err(Error::Contract("forward pass over zero snapshots".into()));
    }
    let features = bound.id(&names::feature_table())?;
    let mut h_seq = Vec::with_capacity(plans.len());
    for plan in plans {
        h_seq.push(encode_snapshot(tape, features, num_nodes, plan, bound, &cfg.dims)?);
    }
    match cfg.variant {
        TemporalVariant::Concat => tape.concat_cols(&h_seq),
        TemporalVariant::RnnOnly => {
            let states = rnn_states(tape, &h_seq, cfg.rnn, bound)?;
            Ok(*states.last().expect("non-empty sequence"))
        }
        TemporalVariant::AttentionOnly => {
            attend_over_states(tape, &h_seq, bound, &cfg.dims, cfg.mask)
        }
        TemporalVariant::Full => {
            encode_sequences(tape, &h_seq, bound, &cfg.dims, cfg.rnn, cfg.mask)
        }
    }
}

/// Negative-sampling skip-gram loss over the batch plus `lambda` times the
/// squared norm of every tensor in `reg`. The expectation over the noise
/// distribution is realized as the mean of the Q drawn negatives scaled by
/// Q, i.e. their plain sum.
pub fn skipgram_loss(
    tape: &mut Tape,
    z: TensorId,
    examples: &[TrainingExample],
    reg: &[TensorId],
    lambda: f64,
) -> Result<TensorId> {
    if examples.is_empty() {
        return Err(Error::Contract("loss over an empty batch".into()));
    }
    let us: Vec<usize> = examples.iter().map(|e| e.u).collect();
    let vs: Vec<usize> = examples.iter().map(|e| e.v).collect();
    let zu = tape.gather_rows(z, &us)?;
    let zv = tape.gather_rows(z, &vs)?;
    let pos_prod = tape.mul(zu, zv)?;
    let pos_dots = tape.sum_rows(pos_prod)?;
    let pos_ls = tape.log_sigmoid(pos_dots)?;
    let pos_sum = tape.sum_all(pos_ls)?;
    let mut loss = tape.neg(pos_sum)?;

    let mut u_rep = Vec::new();
    let mut negs = Vec::new();
    for e in examples {
        for &n in &e.negatives {
            u_rep.push(e.u);
            negs.push(n);
        }
    }
    if !negs.is_empty() {
        let zu_rep = tape.gather_rows(z, &u_rep)?;
        let zn = tape.gather_rows(z, &negs)?;
        let neg_prod = tape.mul(zu_rep, zn)?;
        let neg_dots = tape.sum_rows(neg_prod)?;
        let flipped = tape.neg(neg_dots)?;
        let neg_ls = tape.log_sigmoid(flipped)?;
        let neg_sum = tape.sum_all(neg_ls)?;
        let neg_term = tape.neg(neg_sum)?;
        loss = tape.add(loss, neg_term)?;
    }

    if lambda > 0.0 {
        let mut acc: Option<TensorId> = None;
        for &p in reg {
            let sq = tape.mul(p, p)?;
            let s = tape.sum_all(sq)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
        if let Some(a) = acc {
            let penalty = tape.scale(a, lambda)?;
            loss = tape.add(loss, penalty)?;
        }
    }
    Ok(loss)
}

/// Validation pairs scored by embedding dot products during training.
#[derive(Debug, Clone)]
pub struct ValProbe {
    pub pairs: Vec<(NodeId, NodeId)>,
    pub labels: Vec<bool>,
}

impl ValProbe {
    pub fn from_split(split: &EvalSplit) -> Result<ValProbe> {
        if split.val_pos.is_empty() || split.val_neg.is_empty() {
            return Err(Error::Split("validation probe needs both classes".into()));
        }
        let mut pairs = split.val_pos.clone();
        let mut labels = vec![true; split.val_pos.len()];
        pairs.extend_from_slice(&split.val_neg);
        labels.extend(std::iter::repeat(false).take(split.val_neg.len()));
        Ok(ValProbe { pairs, labels })
    }

    /// AUROC of dot-product scores; monotone-invariant, so this matches any
    /// sigmoid-calibrated scoring of the same products.
    pub fn auroc(&self, emb: &Tensor) -> Result<f64> {
        let scores: Vec<f64> = self
            .pairs
            .iter()
            .map(|&(u, v)| {
                emb.row(u).iter().zip(emb.row(v)).map(|(a, b)| a * b).sum()
            })
            .collect();
        auroc(&scores, &self.labels)
    }
}

/// Final embeddings under inference-time neighbor sampling.
pub fn embeddings_for(
    graph: &DynamicGraph,
    params: &ParamStore,
    cfg: &TrainConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let plans = make_plans(graph, cfg, INFERENCE_EPOCH);
    let z = forward_full(&mut tape, graph.num_nodes(), &plans, &bound, cfg)?;
    Ok(tape.value(z))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per example over the epoch.
    pub loss: f64,
    pub val_auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub embeddings: Tensor,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (best validation AUROC, or the last
    /// epoch without a probe).
    pub best_epoch: usize,
}

fn with_batch_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => {
            Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}"))
        }
        other => other,
    }
}

/// Trains from freshly initialized parameters.
pub fn train(
    graph: &DynamicGraph,
    cfg: &TrainConfig,
    probe: Option<&ValProbe>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = init_params(
        cfg.seed,
        graph.num_nodes(),
        graph.num_edge_types(),
        &cfg.dims,
        cfg.rnn,
        cfg.variant,
    )?;
    train_from(graph, cfg, params, probe)
}

/// The optimization loop: per epoch, (re)sample plans and examples, then for
/// each batch run the full forward pass, the loss, one backward sweep, and
/// one optimizer step. Keeps the parameters of the best validation epoch.
pub fn train_from(
    graph: &DynamicGraph,
    cfg: &TrainConfig,
    mut params: ParamStore,
    probe: Option<&ValProbe>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if graph.num_snapshots() == 0 {
        return Err(Error::Contract("training graph has no snapshots".into()));
    }
    let last = graph.snapshot(graph.num_snapshots() - 1);
    let mut opt = match cfg.optimizer {
        OptimizerKind::Adam => {
            Optimizer::adam(AdamConfig { lr: cfg.lr, ..AdamConfig::default() })
        }
        OptimizerKind::Sgd => Optimizer::sgd(cfg.lr),
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut frozen: Option<(Vec<SnapshotPlan>, Vec<TrainingExample>)> = None;

    for epoch in 0..cfg.epochs {
        let ep = if cfg.freeze_walks { 0 } else { epoch as u64 };
        let (plans, examples) = if cfg.freeze_walks {
            if frozen.is_none() {
                frozen = Some((make_plans(graph, cfg, ep), build_examples(last, cfg, ep)?));
            }
            let (p, e) = frozen.as_ref().expect("filled above");
            (p.clone(), e.clone())
        } else {
            (make_plans(graph, cfg, ep), build_examples(last, cfg, ep)?)
        };

        let mut total = 0.0;
        for (b_idx, batch) in examples.chunks(cfg.batch_size).enumerate() {
            let step = (|| -> Result<f64> {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape)?;
                let z = forward_full(&mut tape, graph.num_nodes(), &plans, &bound, cfg)?;
                let loss = skipgram_loss(&mut tape, z, batch, bound.ids(), cfg.lambda)?;
                let value = tape.data(loss)[0];
                let grads = tape.backward(loss)?;
                let gvec = params.collect_grads(&bound, &grads);
                opt.step(params.tensors_mut(), &gvec)?;
                Ok(value)
            })();
            total += step.map_err(|e| with_batch_context(e, epoch, b_idx))?;
        }
        let mean_loss = total / examples.len() as f64;

        let val_auroc = match probe {
            Some(p) => Some(p.auroc(&embeddings_for(graph, &params, cfg)?)?),
            None => None,
        };
        if let Some(v) = val_auroc {
            let better = best.as_ref().map_or(true, |(bv, _, _)| v > *bv);
            if better {
                best = Some((v, epoch, params.clone()));
            }
        }
        history.push(EpochRecord { epoch, loss: mean_loss, val_auroc });
        log::debug!(
            "epoch {epoch}: loss {mean_loss:.6}{}",
            val_auroc.map_or(String::new(), |v| format!(", val auroc {v:.4}"))
        );
    }

    let (kept, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => {
            let e = cfg.epochs - 1;
            (params, e)
        }
    };
    let embeddings = embeddings_for(graph, &kept, cfg)?;
    Ok(TrainOutcome { params: kept, embeddings, history, best_epoch })
}
