//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use intentgate::acl::{ContrastiveBatch, Label};
use intentgate::encoders::{HeadDims, IntentHead};
use intentgate::featurizer::Featurizer;
use intentgate::vecstore::StoreEntry;
use intentgate::Decision;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(3..8);
    (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
}

pub fn random_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| random_word(rng)).collect::<Vec<_>>().join(" ")
}

/// A valid batch: `labels` malicious intents with 2..=4 members each and
/// `benign` benign items, random texts featurized at `dim`.
pub fn random_batch(seed: u64, labels: usize, benign: usize, dim: usize) -> ContrastiveBatch {
    let mut r = rng(seed);
    let fz = Featurizer::new(dim).unwrap();
    let vocab: Vec<String> = (0..40).map(|_| random_word(&mut r)).collect();
    let mut items = Vec::new();
    for l in 0..labels {
        let topic: Vec<&String> = vocab.choose_multiple(&mut r, 4).collect();
        for _ in 0..r.random_range(2..=4) {
            let mut words: Vec<String> = topic.choose_multiple(&mut r, 2).map(|s| s.to_string()).collect();
            words.push(random_word(&mut r));
            items.push((fz.featurize(&words.join(" ")).unwrap(), Label::malicious(l as u32)));
        }
    }
    for _ in 0..benign {
        let n = r.random_range(2..6);
        items.push((fz.featurize(&random_text(&mut r, n)).unwrap(), Label::Benign));
    }
    ContrastiveBatch::new(items)
}

pub fn small_head(seed: u64) -> IntentHead {
    let dims = HeadDims { input: 64, hidden: 16, output: 8 };
    let mut h = IntentHead::random(dims, seed).unwrap();
    // Unit-scale first layer and non-zero biases exercise every gradient path.
    let mut r = rng(seed ^ 0xb1a5);
    h.w1.iter_mut().for_each(|w| *w *= 8.0);
    h.b1.iter_mut().for_each(|b| *b = r.random_range(-0.5..0.5));
    h.b2.iter_mut().for_each(|b| *b = r.random_range(-0.2..0.2));
    h
}

// ---- contrastive loss -------------------------------------------------------

/// The supervised contrastive objective written out term by term: for each
/// non-benign anchor, the mean over positives of `-log(exp(s_ip/t) / sum_j
/// exp(s_ij/t))`, then the mean over anchors. No log-sum-exp shift.
pub fn loss_oracle(z: &[Vec<f64>], labels: &[Label], tau: f64) -> (f64, Vec<f64>) {
    let n = z.len();
    let sim = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for d in 0..z[i].len() {
            s += z[i][d] * z[j][d];
        }
        s
    };
    let mut per_anchor = Vec::new();
    for i in 0..n {
        if labels[i] == Label::Benign {
            continue;
        }
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (sim(i, j) / tau).exp();
            }
        }
        let mut acc = 0.0;
        let mut count = 0.0;
        for p in 0..n {
            if p != i && labels[p] == labels[i] {
                acc += -((sim(i, p) / tau).exp() / denom).ln();
                count += 1.0;
            }
        }
        per_anchor.push(acc / count);
    }
    let total = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;
    (total, per_anchor)
}

pub fn random_unit(r: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn random_unit_f32(r: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    random_unit(r, dim).iter().map(|&x| x as f32).collect()
}

/// Unit vector near `center`: `center + noise * gaussian`, renormalized.
pub fn jitter(r: &mut ChaCha8Rng, center: &[f32], noise: f64) -> Vec<f32> {
    let mut v: Vec<f64> = center
        .iter()
        .map(|&c| {
            let g: f64 = StandardNormal.sample(r);
            c as f64 + noise * g
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v.iter().map(|&x| x as f32).collect()
}

// ---- vector store -----------------------------------------------------------

/// Entry of the brute-force store model.
#[derive(Debug, Clone, PartialEq)]
pub struct RefEntry {
    pub id: u64,
    pub vector: Vec<f32>,
    pub decision: Decision,
    pub time: u64,
    pub count: u64,
}

impl From<StoreEntry> for RefEntry {
    fn from(e: StoreEntry) -> Self {
        RefEntry { id: e.id, vector: e.vector, decision: e.decision, time: e.last_match_time, count: e.merge_count }
    }
}

pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Linear scan keeping the first strictly larger similarity; entries are
/// visited in ascending id order so ties go to the smallest id.
pub fn brute_top1(entries: &[RefEntry], q: &[f32]) -> (f64, Option<u64>) {
    let mut sorted: Vec<&RefEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| e.id);
    let mut best = (f64::NEG_INFINITY, None);
    for e in sorted {
        let s = naive_dot(q, &e.vector);
        if best.1.is_none() || s > best.0 {
            best = (s, Some(e.id));
        }
    }
    best
}

pub fn brute_count(entries: &[RefEntry], q: &[f32], tau: f64) -> usize {
    entries.iter().filter(|e| naive_dot(q, &e.vector) > tau).count()
}

/// One eviction pass over a full store, computed from scratch: connected
/// components of the graph joining every pair above `merge_similarity`.
/// Components of size two or more collapse to the normalized mean (smallest
/// id, Block if any member blocked, latest time, summed counts). With no such
/// component, the entry with the smallest `(time, id)` is dropped.
pub fn single_linkage_oracle(entries: &[RefEntry], merge_similarity: f64) -> Vec<RefEntry> {
    let mut sorted: Vec<RefEntry> = entries.to_vec();
    sorted.sort_by_key(|e| e.id);
    let n = sorted.len();
    let mut component = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if component[j] == usize::MAX && naive_dot(&sorted[i].vector, &sorted[j].vector) > merge_similarity {
                    component[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in component.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    if groups.values().all(|g| g.len() == 1) {
        let victim = (0..n).min_by_key(|&i| (sorted[i].time, sorted[i].id)).unwrap();
        sorted.remove(victim);
        return sorted;
    }
    let mut out = Vec::new();
    for g in groups.values() {
        if g.len() == 1 {
            out.push(sorted[g[0]].clone());
            continue;
        }
        let dim = sorted[g[0]].vector.len();
        let mut mean = vec![0.0f64; dim];
        for &i in g {
            for d in 0..dim {
                mean[d] += sorted[i].vector[d] as f64;
            }
        }
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.push(RefEntry {
            id: g.iter().map(|&i| sorted[i].id).min().unwrap(),
            vector: mean.iter().map(|x| (x / norm) as f32).collect(),
            decision: if g.iter().any(|&i| sorted[i].decision == Decision::Block) {
                Decision::Block
            } else {
                Decision::Allow
            },
            time: g.iter().map(|&i| sorted[i].time).max().unwrap(),
            count: g.iter().map(|&i| sorted[i].count).sum(),
        });
    }
    out.sort_by_key(|e| e.id);
    out
}

/// Greedy semantic pruning done the slow way: item `i` survives unless some
/// earlier survivor with a different label is more similar than `threshold`.
pub fn prune_oracle(vectors: &[Vec<f64>], labels: &[Label], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..vectors.len() {
        let clash = kept.iter().any(|&k| {
            let s: f64 = vectors[i].iter().zip(&vectors[k]).map(|(a, b)| a * b).sum();
            s > threshold && labels[k] != labels[i]
        });
        if !clash {
            kept.push(i);
        }
    }
    kept
}

// ---- finite differences -----------------------------------------------------

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

fn params_mut(h: &mut IntentHead, k: usize) -> &mut f64 {
    let (n1, n2, n3) = (h.w1.len(), h.b1.len(), h.w2.len());
    if k < n1 {
        &mut h.w1[k]
    } else if k < n1 + n2 {
        &mut h.b1[k - n1]
    } else if k < n1 + n2 + n3 {
        &mut h.w2[k - n1 - n2]
    } else {
        &mut h.b2[k - n1 - n2 - n3]
    }
}

/// Largest relative disagreement between the analytic gradient and central
/// differences of the loss, over every parameter.
pub fn fd_max_relative_error(head: &IntentHead, batch: &ContrastiveBatch, tau: f64) -> f64 {
    let (_, g) = intentgate::acl::acl_gradient(head, batch, tau).unwrap();
    let analytic = g.flat();
    let mut h = head.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = *params_mut(&mut h, k);
        *params_mut(&mut h, k) = orig + FD_STEP;
        let up = intentgate::acl::acl_loss(&h, batch, tau).unwrap().loss;
        *params_mut(&mut h, k) = orig - FD_STEP;
        let down = intentgate::acl::acl_loss(&h, batch, tau).unwrap().loss;
        *params_mut(&mut h, k) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(rel);
    }
    worst
}

// ---- engine -----------------------------------------------------------------

/// The two-stage decision rule replayed from scratch over unbounded stores.
/// Request `t` (0-based) sees the write-backs of every `u` with
/// `t > u + lag`; Stage 1 looks at the semantic top-1, Stage 2 counts intent
/// entries strictly above `tau_int`.
pub fn engine_oracle(
    semantic: &[Vec<f32>],
    intent: &[Vec<f32>],
    tau_sem: f64,
    tau_int: f64,
    k: usize,
    stage1: bool,
    lag: usize,
) -> Vec<Decision> {
    let mut out: Vec<Decision> = Vec::new();
    for t in 0..semantic.len() {
        let visible = if t > lag { t - lag } else { 0 };
        let entries = |vs: &[Vec<f32>]| -> Vec<RefEntry> {
            (0..visible)
                .map(|u| RefEntry { id: u as u64, vector: vs[u].clone(), decision: out[u], time: 0, count: 1 })
                .collect()
        };
        let mut decision = None;
        if stage1 {
            let sem = entries(semantic);
            if let (s, Some(id)) = brute_top1(&sem, &semantic[t]) {
                if s > tau_sem {
                    decision = Some(out[id as usize]);
                }
            }
        }
        let decision = decision.unwrap_or_else(|| {
            if brute_count(&entries(intent), &intent[t], tau_int) >= k {
                Decision::Block
            } else {
                Decision::Allow
            }
        });
        out.push(decision);
    }
    out
}

// ---- packing ----------------------------------------------------------------

pub const PACKING_SAMPLES: usize = 20_000;

/// `(d, radius, separation)` for the packing comparison: small-angle
/// separations and intent radii below 0.3 rad with `2R / separation` between
/// roughly 4 and 12.
pub fn packing_settings() -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for d in [2, 3] {
        for r in [0.25, 0.29] {
            for sep in [0.05, 0.06, 0.08, 0.10, 0.12] {
                out.push((d, r, sep));
            }
        }
    }
    out
}
