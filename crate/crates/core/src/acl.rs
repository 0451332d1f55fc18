//! Asymmetric contrastive training of the intent head.
//!
//! Only items carrying an intent label act as anchors and positives. Items
//! labeled [`Label::Benign`] appear solely in the softmax denominators.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetItem, IntentDataset};
use crate::encoders::{gelu_grad, FrozenEncoder, HeadDims, HeadInit, IntentHead};
use crate::error::{Error, Result};
use crate::featurizer::{FeatureVector, Featurizer};
use crate::types::Role;
use crate::vector::{dot_f64, to_f32};

/// Key offset that keeps benign intent labels apart from malicious ones.
const BENIGN_INTENT_KEY: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Benign,
    Intent(u64),
}

impl Label {
    pub fn malicious(id: u32) -> Label {
        Label::Intent(id as u64)
    }

    pub fn benign_intent(id: u32) -> Label {
        Label::Intent(BENIGN_INTENT_KEY + id as u64)
    }

    pub fn is_malicious(self) -> bool {
        matches!(self, Label::Intent(k) if k < BENIGN_INTENT_KEY)
    }

    /// Contrastive label of a corpus role. With `symmetric`, benign intent
    /// fragments get their own labels; independents stay benign.
    pub fn of_role(role: Role, symmetric: bool) -> Label {
        match role {
            Role::MaliciousFragment(id) | Role::MaliciousAnchor(id) => Label::malicious(id),
            Role::BenignFragment(id) if symmetric => Label::benign_intent(id),
            _ => Label::Benign,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub items: Vec<(FeatureVector, Label)>,
}

impl ContrastiveBatch {
    pub fn new(items: Vec<(FeatureVector, Label)>) -> Self {
        ContrastiveBatch { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Checks the construction rules used by the trainer: two or more malicious
    /// labels, one or more benign items, and a positive for every labeled item.
    pub fn validate(&self) -> Result<()> {
        let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
        for (_, l) in &self.items {
            *counts.entry(*l).or_default() += 1;
        }
        let malicious = counts.keys().filter(|l| l.is_malicious()).count();
        if malicious < 2 {
            return Err(Error::InvalidBatch(format!("{malicious} malicious labels, need 2")));
        }
        if !counts.contains_key(&Label::Benign) {
            return Err(Error::InvalidBatch("no benign item".into()));
        }
        if let Some((l, _)) = counts.iter().find(|(l, n)| **l != Label::Benign && **n < 2) {
            return Err(Error::InvalidBatch(format!("label {l:?} has no positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// One entry per anchor, in batch order.
    pub per_anchor: Vec<f64>,
}

/// Loss over unit embeddings, plus its gradient with respect to each embedding.
pub fn loss_and_embedding_grad(
    z: &[Vec<f64>],
    labels: &[Label],
    tau: f64,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature {tau} must be positive")));
    }
    let n = z.len();
    let anchors: Vec<usize> = (0..n).filter(|&i| labels[i] != Label::Benign).collect();
    if anchors.is_empty() {
        return Err(Error::NoAnchors);
    }
    let a = anchors.len() as f64;
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = dot_f64(&z[i], &z[j]);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    let dim = z.first().map_or(0, Vec::len);
    let mut grad = vec![vec![0.0; dim]; n];
    let mut per_anchor = Vec::with_capacity(anchors.len());
    for &i in &anchors {
        let positives: Vec<usize> =
            (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            return Err(Error::InvalidBatch(format!("anchor {i} has no positive")));
        }
        let logits: Vec<(usize, f64)> =
            (0..n).filter(|&j| j != i).map(|j| (j, sim[i * n + j] / tau)).collect();
        let max = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l.1 - max).exp()).sum();
        let lse = max + sum.ln();
        let p = positives.len() as f64;
        let pos_mean = positives.iter().map(|&j| sim[i * n + j] / tau).sum::<f64>() / p;
        per_anchor.push(lse - pos_mean);
        for &(j, l) in &logits {
            let target = if labels[j] == labels[i] { 1.0 / p } else { 0.0 };
            let c = ((l - lse).exp() - target) / (tau * a);
            for d in 0..dim {
                grad[i][d] += c * z[j][d];
                grad[j][d] += c * z[i][d];
            }
        }
    }
    let loss = per_anchor.iter().sum::<f64>() / a;
    Ok((LossReport { loss, per_anchor }, grad))
}

pub fn acl_loss(head: &IntentHead, batch: &ContrastiveBatch, tau: f64) -> Result<LossReport> {
    let z = batch
        .items
        .iter()
        .map(|(f, _)| head.encode(f))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = batch.items.iter().map(|b| b.1).collect();
    Ok(loss_and_embedding_grad(&z, &labels, tau)?.0)
}

/// Gradient of the batch loss with respect to every head parameter, laid out
/// like the head itself.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl HeadGradient {
    pub fn zeros(dims: HeadDims) -> Self {
        let z = IntentHead::zeros(dims);
        HeadGradient { w1: z.w1, b1: z.b1, w2: z.w2, b2: z.b2 }
    }

    pub fn norm(&self) -> f64 {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .flat_map(|p| p.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Parameters in the order W1, b1, W2, b2.
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2].iter().flat_map(|p| p.iter().copied()).collect()
    }
}

pub fn acl_gradient(
    head: &IntentHead,
    batch: &ContrastiveBatch,
    tau: f64,
) -> Result<(LossReport, HeadGradient)> {
    let dims = head.dims();
    let acts = batch
        .items
        .iter()
        .map(|(f, _)| head.forward(f))
        .collect::<Result<Vec<_>>>()?;
    let z: Vec<Vec<f64>> = acts.iter().map(|a| a.z.clone()).collect();
    let labels: Vec<Label> = batch.items.iter().map(|b| b.1).collect();
    let (report, dz) = loss_and_embedding_grad(&z, &labels, tau)?;
    let mut g = HeadGradient::zeros(dims);
    for ((act, dz), (f, _)) in acts.iter().zip(&dz).zip(&batch.items) {
        if act.raw_norm == 0.0 {
            // The e0 fallback is locally constant.
            continue;
        }
        let zdz = dot_f64(&act.z, dz);
        let du: Vec<f64> =
            dz.iter().zip(&act.z).map(|(d, zz)| (d - zz * zdz) / act.raw_norm).collect();
        let mut dh = vec![0.0; dims.hidden];
        for (o, &d) in du.iter().enumerate() {
            g.b2[o] += d;
            let row = o * dims.hidden;
            for h in 0..dims.hidden {
                g.w2[row + h] += d * act.hidden[h];
                dh[h] += head.w2[row + h] * d;
            }
        }
        for h in 0..dims.hidden {
            let da = dh[h] * gelu_grad(act.pre[h]);
            g.b1[h] += da;
            let row = h * dims.input;
            for &(c, v) in f.entries() {
                g.w1[row + c as usize] += da * v;
            }
        }
    }
    Ok((report, g))
}

pub fn sgd_step(head: &mut IntentHead, g: &HeadGradient, lr: f64) -> Result<()> {
    for (p, d) in [
        (&mut head.w1, &g.w1),
        (&mut head.b1, &g.b1),
        (&mut head.w2, &g.w2),
        (&mut head.b2, &g.b2),
    ] {
        for (x, dx) in p.iter_mut().zip(d) {
            *x -= lr * dx;
        }
    }
    if head.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Distinct labeled intents per batch.
    pub intents_per_batch: usize,
    /// Upper bound on members drawn from one intent per batch.
    pub members_per_intent: usize,
    pub benign_per_batch: usize,
    pub prune_threshold: f64,
    pub seed: u64,
    /// Include each malicious intent's monolithic text under its label.
    pub include_anchor: bool,
    /// Treat benign intents as labeled clusters too.
    pub symmetric: bool,
    pub head_dims: HeadDims,
    pub init: HeadInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.1,
            learning_rate: 0.05,
            epochs: 3,
            intents_per_batch: 2,
            members_per_intent: 4,
            benign_per_batch: 8,
            prune_threshold: 0.95,
            seed: 0,
            include_anchor: true,
            symmetric: false,
            head_dims: HeadDims::default(),
            init: HeadInit::default(),
        }
    }
}

impl TrainConfig {
    /// Settings of the end-to-end benchmark. One epoch over the desk-scale
    /// corpus is under twenty steps, so it runs longer and with a larger step.
    pub fn benchmark() -> Self {
        TrainConfig { learning_rate: 0.2, epochs: 10, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.intents_per_batch < 2 || self.members_per_intent < 2 || self.benign_per_batch == 0 {
            return bad("batches need 2+ intents, 2+ members and 1+ benign item".into());
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return bad(format!("prune threshold {} outside (0, 1)", self.prune_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: IntentHead,
    pub log: Vec<StepLog>,
    pub kept: usize,
    pub pruned: usize,
}

impl TrainOutcome {
    /// Tab-separated `step, epoch, loss, grad_norm` lines with a header.
    pub fn log_text(&self) -> String {
        let mut s = String::from("step\tepoch\tloss\tgrad_norm\n");
        for l in &self.log {
            let _ = writeln!(s, "{}\t{}\t{:.9}\t{:.9}", l.step, l.epoch, l.loss, l.grad_norm);
        }
        s
    }

    /// Means of consecutive, non-overlapping windows of step losses.
    pub fn windowed_loss(&self, window: usize) -> Vec<f64> {
        self.log
            .chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().map(|l| l.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

fn semantic_vectors(
    items: &[&DatasetItem],
    frozen: &FrozenEncoder,
    featurizer: &Featurizer,
) -> Result<Vec<Vec<f32>>> {
    items
        .iter()
        .map(|i| Ok(to_f32(&frozen.encode(&featurizer.featurize(&i.text)?)?)))
        .collect()
}

/// Indices (into `items`) that survive cross-label near-duplicate pruning.
pub fn prune_indices(
    items: &[&DatasetItem],
    frozen: &FrozenEncoder,
    threshold: f64,
    symmetric: bool,
) -> Result<Vec<usize>> {
    let featurizer = Featurizer::new(frozen.in_dim())?;
    let vecs = semantic_vectors(items, frozen, &featurizer)?;
    let mut kept_by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    let mut kept = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let label = Label::of_role(item.role, symmetric);
        let clash = kept_by_label.iter().filter(|(l, _)| **l != label).any(|(_, idx)| {
            idx.iter().any(|&k| crate::vector::dot(&vecs[i], &vecs[k]) > threshold)
        });
        if !clash {
            kept_by_label.entry(label).or_default().push(i);
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Greedy scan in dataset order dropping any item that is a near duplicate of
/// an already kept item with a different contrastive label.
pub fn semantic_prune(
    dataset: &IntentDataset,
    frozen: &FrozenEncoder,
    threshold: f64,
) -> Result<IntentDataset> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("prune threshold {threshold} outside (0, 1)")));
    }
    let items: Vec<&DatasetItem> = dataset.items.iter().collect();
    let kept = prune_indices(&items, frozen, threshold, false)?;
    Ok(IntentDataset {
        items: kept.into_iter().map(|i| dataset.items[i].clone()).collect(),
        noise_vocab: dataset.noise_vocab.clone(),
    })
}

/// Per-epoch batch plan: groups of `(feature index, label)` pairs.
struct BatchPlanner {
    groups: BTreeMap<Label, Vec<usize>>,
    benign: Vec<usize>,
    benign_cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchPlanner {
    fn epoch(&mut self, cfg: &TrainConfig) -> Vec<Vec<(usize, Label)>> {
        let mut chunks: Vec<(Label, Vec<usize>)> = Vec::new();
        for (&label, members) in &self.groups {
            let mut m = members.clone();
            m.shuffle(&mut self.rng);
            let parts = m.len().div_ceil(cfg.members_per_intent);
            let (base, extra) = (m.len() / parts, m.len() % parts);
            let mut at = 0;
            for p in 0..parts {
                let size = base + (p < extra) as usize;
                chunks.push((label, m[at..at + size].to_vec()));
                at += size;
            }
        }
        chunks.shuffle(&mut self.rng);
        let mut batches = Vec::new();
        let mut pending: Vec<(Label, Vec<usize>)> = chunks;
        while !pending.is_empty() {
            let mut chosen = vec![pending.remove(0)];
            while chosen.len() < cfg.intents_per_batch {
                match pending.iter().position(|c| chosen.iter().all(|x| x.0 != c.0)) {
                    Some(p) => chosen.push(pending.remove(p)),
                    None => break,
                }
            }
            // Too few distinct intents left: borrow members from other intents.
            while chosen.iter().filter(|c| c.0.is_malicious()).count() < 2
                || chosen.len() < cfg.intents_per_batch
            {
                let others: Vec<Label> = self
                    .groups
                    .keys()
                    .filter(|l| l.is_malicious() && chosen.iter().all(|c| c.0 != **l))
                    .copied()
                    .collect();
                let Some(&label) = others.choose(&mut self.rng) else { break };
                let mut m = self.groups[&label].clone();
                m.shuffle(&mut self.rng);
                m.truncate(cfg.members_per_intent);
                chosen.push((label, m));
            }
            let mut batch: Vec<(usize, Label)> = chosen
                .into_iter()
                .flat_map(|(l, m)| m.into_iter().map(move |i| (i, l)))
                .collect();
            for _ in 0..cfg.benign_per_batch.min(self.benign.len()) {
                if self.benign_cursor == 0 {
                    self.benign.shuffle(&mut self.rng);
                }
                batch.push((self.benign[self.benign_cursor], Label::Benign));
                self.benign_cursor = (self.benign_cursor + 1) % self.benign.len();
            }
            batches.push(batch);
        }
        batches
    }
}

/// Trains a fresh head on the labeled items of `dataset`.
pub fn train(
    dataset: &IntentDataset,
    frozen: &FrozenEncoder,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let head = IntentHead::random_with(cfg.head_dims, cfg.seed, cfg.init)?;
    train_from(head, dataset, frozen, cfg)
}

/// Continues training `head`; otherwise identical to [`train`].
pub fn train_from(
    mut head: IntentHead,
    dataset: &IntentDataset,
    frozen: &FrozenEncoder,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let usable: Vec<&DatasetItem> = dataset
        .items
        .iter()
        .filter(|i| cfg.include_anchor || !matches!(i.role, Role::MaliciousAnchor(_)))
        .collect();
    let kept = prune_indices(&usable, frozen, cfg.prune_threshold, cfg.symmetric)?;
    let featurizer = Featurizer::new(cfg.head_dims.input)?;
    let mut features = Vec::with_capacity(kept.len());
    let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    let mut benign = Vec::new();
    for &k in &kept {
        let item = usable[k];
        let label = Label::of_role(item.role, cfg.symmetric);
        let idx = features.len();
        features.push(featurizer.featurize(&item.text)?);
        match label {
            Label::Benign => benign.push(idx),
            l => groups.entry(l).or_default().push(idx),
        }
    }
    groups.retain(|_, m| m.len() >= 2);
    let malicious = groups.keys().filter(|l| l.is_malicious()).count();
    if malicious < 2 {
        return Err(Error::InvalidConfig(format!(
            "training needs 2+ malicious intents with 2+ members, found {malicious}"
        )));
    }
    if benign.is_empty() {
        return Err(Error::InvalidConfig("training needs benign items".into()));
    }
    let mut planner =
        BatchPlanner { groups, benign, benign_cursor: 0, rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        for plan in planner.epoch(cfg) {
            let batch = ContrastiveBatch::new(
                plan.iter().map(|&(i, l)| (features[i].clone(), l)).collect(),
            );
            batch.validate()?;
            let (report, grad) = acl_gradient(&head, &batch, cfg.temperature)?;
            sgd_step(&mut head, &grad, cfg.learning_rate)?;
            log.push(StepLog {
                step: log.len(),
                epoch,
                loss: report.loss,
                grad_norm: grad.norm(),
            });
        }
    }
    Ok(TrainOutcome { head, log, kept: kept.len(), pruned: usable.len() - kept.len() })
}
