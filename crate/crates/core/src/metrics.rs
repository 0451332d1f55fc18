//! Stream scoring, threshold calibration, operating curves and the
//! capacity-ratio study.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::types::{Decision, EmbeddingPair, IntentId, Request, Role, Thresholds, Verdict};
use crate::vecstore::{Capacity, StoreConfig, VectorStore};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall: f64,
    pub fpr: f64,
    pub malicious_intents: usize,
    pub intercepted_intents: usize,
    pub benign_slices: usize,
    pub benign_blocked: usize,
    /// Per intercepted intent, the 1-based index of its first blocked fragment
    /// within the intent's own fragment sequence.
    pub first_intercept_positions: Vec<(IntentId, usize)>,
    pub blocked_ids: Vec<u64>,
    pub allowed_ids: Vec<u64>,
}

impl EvalReport {
    /// Mean first-intercept position; `None` when nothing was intercepted.
    pub fn mean_first_intercept(&self) -> Option<f64> {
        if self.first_intercept_positions.is_empty() {
            return None;
        }
        let s: usize = self.first_intercept_positions.iter().map(|p| p.1).sum();
        Some(s as f64 / self.first_intercept_positions.len() as f64)
    }
}

/// Scores decisions against ground truth. `decisions[i]` belongs to `stream[i]`.
pub fn score_decisions(decisions: &[Decision], stream: &[Request]) -> Result<EvalReport> {
    if decisions.len() != stream.len() {
        return Err(Error::LengthMismatch { verdicts: decisions.len(), requests: stream.len() });
    }
    // intent -> (fragments seen so far, first blocked ordinal)
    let mut intents: BTreeMap<IntentId, (usize, Option<usize>)> = BTreeMap::new();
    let (mut benign, mut benign_blocked) = (0, 0);
    let (mut blocked_ids, mut allowed_ids) = (Vec::new(), Vec::new());
    for (d, r) in decisions.iter().zip(stream) {
        if d.is_block() {
            blocked_ids.push(r.id);
        } else {
            allowed_ids.push(r.id);
        }
        match r.role {
            Role::MaliciousFragment(id) | Role::MaliciousAnchor(id) => {
                let e = intents.entry(id).or_insert((0, None));
                e.0 += 1;
                if d.is_block() && e.1.is_none() {
                    e.1 = Some(e.0);
                }
            }
            Role::BenignFragment(_) | Role::BenignIndependent => {
                benign += 1;
                benign_blocked += d.is_block() as usize;
            }
        }
    }
    let first_intercept_positions: Vec<(IntentId, usize)> =
        intents.iter().filter_map(|(&id, &(_, first))| first.map(|f| (id, f))).collect();
    let malicious_intents = intents.len();
    let intercepted_intents = first_intercept_positions.len();
    Ok(EvalReport {
        recall: if malicious_intents == 0 {
            0.0
        } else {
            intercepted_intents as f64 / malicious_intents as f64
        },
        fpr: if benign == 0 { 0.0 } else { benign_blocked as f64 / benign as f64 },
        malicious_intents,
        intercepted_intents,
        benign_slices: benign,
        benign_blocked,
        first_intercept_positions,
        blocked_ids,
        allowed_ids,
    })
}

pub fn score(verdicts: &[Verdict], stream: &[Request]) -> Result<EvalReport> {
    let d: Vec<Decision> = verdicts.iter().map(|v| v.decision).collect();
    score_decisions(&d, stream)
}

/// Full causal replay of `stream` through a fresh copy of `template`'s
/// encoders under `config`.
pub fn replay(
    template: &Engine,
    config: EngineConfig,
    stream: &[Request],
    embeddings: &[EmbeddingPair],
) -> Result<Vec<Verdict>> {
    template.fresh_with(config)?.run_embedded(stream, embeddings)
}

/// Per-request similarities recorded once over unbounded stores. Because
/// unbounded store contents do not depend on the thresholds, decisions for
/// any threshold triple can be derived from the trace without replaying.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    /// Best semantic similarity and the stream position of that entry.
    pub semantic_top1: Vec<Option<(f64, usize)>>,
    /// Largest intent similarities, descending, at most `k_max` of them.
    pub intent_topk: Vec<Vec<f64>>,
    pub k_max: usize,
}

impl ReplayTrace {
    pub fn record(embeddings: &[EmbeddingPair], k_max: usize) -> Result<Self> {
        let (Some(first), true) = (embeddings.first(), k_max >= 1) else {
            return Ok(ReplayTrace { semantic_top1: vec![], intent_topk: vec![], k_max });
        };
        let mut sem = VectorStore::new(first.semantic.len(), StoreConfig::default())?;
        let mut int = VectorStore::new(first.intent.len(), StoreConfig::default())?;
        let mut semantic_top1 = Vec::with_capacity(embeddings.len());
        let mut intent_topk = Vec::with_capacity(embeddings.len());
        for (t, e) in embeddings.iter().enumerate() {
            let (s, id) = sem.query_top1(&e.semantic)?;
            semantic_top1.push(id.map(|id| (s, id as usize)));
            intent_topk.push(int.top_k_similarities(&e.intent, k_max)?);
            // Decisions are irrelevant to an unbounded store's similarities.
            sem.insert(&e.semantic, Decision::Allow, t as u64 + 1)?;
            int.insert(&e.intent, Decision::Allow, t as u64 + 1)?;
        }
        Ok(ReplayTrace { semantic_top1, intent_topk, k_max })
    }

    pub fn len(&self) -> usize {
        self.intent_topk.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intent_topk.is_empty()
    }

    pub fn decisions(&self, th: Thresholds, stage1_enabled: bool) -> Result<Vec<Decision>> {
        if th.k == 0 || th.k > self.k_max {
            return Err(Error::InvalidConfig(format!("trace holds k <= {}, asked {}", self.k_max, th.k)));
        }
        let mut out: Vec<Decision> = Vec::with_capacity(self.len());
        for t in 0..self.len() {
            let inherited = match self.semantic_top1[t] {
                Some((s, pos)) if stage1_enabled && s > th.tau_sem => Some(out[pos]),
                _ => None,
            };
            let d = inherited.unwrap_or_else(|| {
                let top = &self.intent_topk[t];
                if top.len() >= th.k && top[th.k - 1] > th.tau_int {
                    Decision::Block
                } else {
                    Decision::Allow
                }
            });
            out.push(d);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub tau_sem: Vec<f64>,
    pub tau_int: Vec<f64>,
}

/// `start, start + step, ...` up to `end` inclusive, rounded to the step's
/// decimal precision so that grid values print cleanly.
pub fn linspace_step(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((start + i as f64 * step) * 1e6).round() / 1e6).collect()
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { tau_sem: linspace_step(0.50, 0.99, 0.01), tau_int: linspace_step(0.50, 0.99, 0.01) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub tau_sem: f64,
    pub tau_int: f64,
    pub recall: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub thresholds: Thresholds,
    pub recall: f64,
    pub fpr: f64,
    pub points: Vec<GridPoint>,
}

/// Picks the feasible point of highest recall. Ties prefer the higher
/// `tau_int`, then the higher `tau_sem`.
pub fn select_point(points: &[GridPoint], fpr_budget: f64) -> Result<&GridPoint> {
    let better = |a: &GridPoint, b: &GridPoint| {
        (a.recall, a.tau_int, a.tau_sem).partial_cmp(&(b.recall, b.tau_int, b.tau_sem))
            == Some(std::cmp::Ordering::Greater)
    };
    let mut best: Option<&GridPoint> = None;
    for p in points.iter().filter(|p| p.fpr <= fpr_budget) {
        if best.is_none_or(|b| better(p, b)) {
            best = Some(p);
        }
    }
    if let Some(b) = best {
        return Ok(b);
    }
    // Nothing feasible: report the lowest-FPR point, highest recall among those.
    let closest = points
        .iter()
        .min_by(|a, b| {
            a.fpr.partial_cmp(&b.fpr).expect("finite").then(b.recall.partial_cmp(&a.recall).expect("finite"))
        })
        .ok_or_else(|| Error::InvalidConfig("empty calibration grid".into()))?;
    Err(Error::NoFeasibleThreshold {
        budget: fpr_budget,
        tau_sem: closest.tau_sem,
        tau_int: closest.tau_int,
        fpr: closest.fpr,
        recall: closest.recall,
    })
}

fn unbounded_sequential(config: &EngineConfig) -> bool {
    config.semantic_store.capacity == Capacity::Unbounded
        && config.intent_store.capacity == Capacity::Unbounded
        && config.write_back_lag == 0
}

/// Grid search for the thresholds maximizing recall under `fpr_budget`.
/// `k` comes from `template`'s configuration. Every grid point is an exact
/// causal replay with empty stores.
pub fn calibrate(
    template: &Engine,
    stream: &[Request],
    embeddings: &[EmbeddingPair],
    fpr_budget: f64,
    grid: &GridSpec,
) -> Result<Calibration> {
    if grid.tau_sem.is_empty() || grid.tau_int.is_empty() {
        return Err(Error::InvalidConfig("empty calibration grid".into()));
    }
    let base = template.config().clone();
    let k = base.thresholds.k;
    let mut points = Vec::with_capacity(grid.tau_sem.len() * grid.tau_int.len());
    let trace = if unbounded_sequential(&base) {
        Some(ReplayTrace::record(embeddings, k)?)
    } else {
        None
    };
    for &tau_sem in &grid.tau_sem {
        for &tau_int in &grid.tau_int {
            let th = Thresholds { tau_sem, tau_int, k };
            let report = match &trace {
                Some(tr) => score_decisions(&tr.decisions(th, base.stage1_enabled)?, stream)?,
                None => {
                    let cfg = EngineConfig { thresholds: th, ..base.clone() };
                    score(&replay(template, cfg, stream, embeddings)?, stream)?
                }
            };
            points.push(GridPoint { tau_sem, tau_int, recall: report.recall, fpr: report.fpr });
        }
    }
    let chosen = select_point(&points, fpr_budget)?.clone();
    Ok(Calibration {
        thresholds: Thresholds { tau_sem: chosen.tau_sem, tau_int: chosen.tau_int, k },
        recall: chosen.recall,
        fpr: chosen.fpr,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub tau_int: f64,
    pub fpr: f64,
    pub recall: f64,
}

/// Recall and FPR for each `tau_int` value, other settings taken from `config`.
/// Exact replays; unbounded sequential configurations share one trace.
pub fn recall_fpr_curve(
    template: &Engine,
    config: &EngineConfig,
    stream: &[Request],
    embeddings: &[EmbeddingPair],
    tau_int_sweep: &[f64],
) -> Result<Vec<CurvePoint>> {
    if tau_int_sweep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("tau_int sweep must be strictly increasing".into()));
    }
    let trace = if unbounded_sequential(config) {
        Some(ReplayTrace::record(embeddings, config.thresholds.k)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(tau_int_sweep.len());
    for &tau_int in tau_int_sweep {
        let mut cfg = config.clone();
        cfg.thresholds.tau_int = tau_int;
        let r = match &trace {
            Some(tr) => score_decisions(&tr.decisions(cfg.thresholds, cfg.stage1_enabled)?, stream)?,
            None => score(&replay(template, cfg, stream, embeddings)?, stream)?,
        };
        out.push(CurvePoint { tau_int, fpr: r.fpr, recall: r.recall });
    }
    Ok(out)
}

pub fn curve_table(curve: &[CurvePoint]) -> String {
    let mut s = String::from("tau_int,fpr,recall\n");
    for p in curve {
        let _ = writeln!(s, "{},{:.6},{:.6}", p.tau_int, p.fpr, p.recall);
    }
    s
}

/// Area under the recall-vs-FPR polyline on `[0, fpr_max]`. The curve starts
/// at the origin, is linear between observed points (at equal FPR the highest
/// recall counts) and flat beyond its largest FPR.
pub fn auc(curve: &[CurvePoint], fpr_max: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.fpr, p.recall)).collect();
    pts.push((0.0, 0.0));
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (x, y) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == x => last.1 = last.1.max(y),
            _ => merged.push((x, y)),
        }
    }
    let mut area = 0.0;
    for w in merged.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if x0 >= fpr_max {
            break;
        }
        let xe = x1.min(fpr_max);
        let ye = y0 + (y1 - y0) * (xe - x0) / (x1 - x0);
        area += 0.5 * (y0 + ye) * (xe - x0);
    }
    let (xl, yl) = *merged.last().expect("origin present");
    if xl < fpr_max {
        area += yl * (fpr_max - xl);
    }
    area
}

/// `AUC(curve) / AUC(baseline)`, both integrated over the union of their FPR ranges.
pub fn relative_auc(curve: &[CurvePoint], baseline: &[CurvePoint]) -> f64 {
    let fmax = curve.iter().chain(baseline).map(|p| p.fpr).fold(0.0, f64::max);
    if fmax == 0.0 {
        // Both curves live on the recall axis; compare their best recall.
        let best = |c: &[CurvePoint]| c.iter().map(|p| p.recall).fold(0.0, f64::max);
        let b = best(baseline);
        return if b == 0.0 { 1.0 } else { best(curve) / b };
    }
    let b = auc(baseline, fmax);
    if b == 0.0 {
        return 1.0;
    }
    auc(curve, fmax) / b
}

/// Best recall over `curve` among points with FPR at most `fpr`.
pub fn recall_at_fpr(curve: &[CurvePoint], fpr: f64) -> f64 {
    curve.iter().filter(|p| p.fpr <= fpr).map(|p| p.recall).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityPoint {
    pub ratio: f64,
    pub capacity: usize,
    pub relative_auc: f64,
    pub curve: Vec<CurvePoint>,
}

/// Relative AUC for each capacity ratio, where a ratio `x` bounds both stores
/// to `ceil(x * stream length)` entries.
pub fn capacity_study(
    template: &Engine,
    config: &EngineConfig,
    stream: &[Request],
    embeddings: &[EmbeddingPair],
    ratios: &[f64],
    tau_int_sweep: &[f64],
) -> Result<(Vec<CurvePoint>, Vec<CapacityPoint>)> {
    let mut unbounded = config.clone();
    unbounded.semantic_store.capacity = Capacity::Unbounded;
    unbounded.intent_store.capacity = Capacity::Unbounded;
    let baseline = recall_fpr_curve(template, &unbounded, stream, embeddings, tau_int_sweep)?;
    let mut out = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        if !(ratio > 0.0) {
            return Err(Error::InvalidConfig(format!("capacity ratio {ratio} must be positive")));
        }
        let capacity = ((ratio * stream.len() as f64).ceil() as usize).max(1);
        let mut cfg = config.clone();
        cfg.semantic_store.capacity = Capacity::Bounded(capacity);
        cfg.intent_store.capacity = Capacity::Bounded(capacity);
        let curve = recall_fpr_curve(template, &cfg, stream, embeddings, tau_int_sweep)?;
        out.push(CapacityPoint { ratio, capacity, relative_auc: relative_auc(&curve, &baseline), curve });
    }
    Ok((baseline, out))
}
