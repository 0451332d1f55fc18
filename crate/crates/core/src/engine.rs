//! The stateful two-stage decision function.
//!
//! Stage 1 inherits the stored decision of a near-duplicate in the semantic
//! store. Stage 2 blocks when at least `k` intent-store entries lie above
//! `tau_int`. Every processed request is then written back to both stores.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::encoders::{FrozenEncoder, IntentHead};
use crate::error::{Error, Result};
use crate::featurizer::Featurizer;
use crate::types::{Decision, EmbeddingPair, Request, Stage, Thresholds, Verdict};
use crate::vecstore::{StoreConfig, VectorStore};
use crate::vector::to_f32;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub thresholds: Thresholds,
    /// With Stage 1 off, every request goes through intent matching.
    pub stage1_enabled: bool,
    pub semantic_store: StoreConfig,
    pub intent_store: StoreConfig,
    /// Write-back visibility lag: request `u` becomes visible to request `t`
    /// only once `t > u + write_back_lag`. Zero is sequential consistency.
    pub write_back_lag: u64,
}

impl EngineConfig {
    pub fn new(thresholds: Thresholds) -> Self {
        EngineConfig {
            thresholds,
            stage1_enabled: true,
            semantic_store: StoreConfig::default(),
            intent_store: StoreConfig::default(),
            write_back_lag: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct PendingWrite {
    time: u64,
    pair: EmbeddingPair,
    verdict: Verdict,
}

#[derive(Debug, Clone)]
pub struct Engine {
    featurizer: Featurizer,
    frozen: Arc<FrozenEncoder>,
    head: Arc<IntentHead>,
    semantic: VectorStore,
    intent: VectorStore,
    config: EngineConfig,
    last_arrival: Option<u64>,
    pending: VecDeque<PendingWrite>,
    verdict_log: BTreeMap<u64, Verdict>,
}

impl Engine {
    pub fn new(
        frozen: Arc<FrozenEncoder>,
        head: Arc<IntentHead>,
        config: EngineConfig,
    ) -> Result<Self> {
        if frozen.in_dim() != head.dims().input {
            return Err(Error::DimensionMismatch {
                expected: frozen.in_dim(),
                got: head.dims().input,
            });
        }
        let semantic = VectorStore::new(frozen.out_dim(), config.semantic_store)?;
        let intent = VectorStore::new(head.dims().output, config.intent_store)?;
        Ok(Engine {
            featurizer: Featurizer::new(frozen.in_dim())?,
            frozen,
            head,
            semantic,
            intent,
            config,
            last_arrival: None,
            pending: VecDeque::new(),
            verdict_log: BTreeMap::new(),
        })
    }

    /// A fresh engine sharing this one's encoders, with a different configuration.
    pub fn fresh_with(&self, config: EngineConfig) -> Result<Engine> {
        Engine::new(self.frozen.clone(), self.head.clone(), config)
    }

    /// A fresh engine with the same configuration except for the thresholds.
    pub fn fresh_with_thresholds(&self, thresholds: Thresholds) -> Result<Engine> {
        self.fresh_with(EngineConfig { thresholds, ..self.config.clone() })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn thresholds(&self) -> Thresholds {
        self.config.thresholds
    }

    pub fn frozen(&self) -> &Arc<FrozenEncoder> {
        &self.frozen
    }

    pub fn head(&self) -> &Arc<IntentHead> {
        &self.head
    }

    pub fn semantic_store(&self) -> &VectorStore {
        &self.semantic
    }

    pub fn intent_store(&self) -> &VectorStore {
        &self.intent
    }

    pub fn last_arrival(&self) -> Option<u64> {
        self.last_arrival
    }

    /// Verdicts keyed by the semantic-store entry id of their request.
    pub fn verdict_log(&self) -> &BTreeMap<u64, Verdict> {
        &self.verdict_log
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingPair> {
        let f = self.featurizer.featurize(text)?;
        Ok(EmbeddingPair {
            semantic: to_f32(&self.frozen.encode(&f)?),
            intent: to_f32(&self.head.encode(&f)?),
        })
    }

    pub fn embed_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<Vec<EmbeddingPair>> {
        texts.into_iter().map(|t| self.embed(t)).collect()
    }

    pub fn adjudicate(&mut self, request: &Request) -> Result<Verdict> {
        self.check_arrival(request.arrival_index)?;
        let pair = self.embed(&request.text)?;
        self.adjudicate_embedded(request.arrival_index, &pair)
    }

    fn check_arrival(&self, arrival: u64) -> Result<()> {
        match self.last_arrival {
            Some(last) if arrival <= last => Err(Error::CausalityViolation { last, got: arrival }),
            _ if arrival == 0 => Err(Error::CausalityViolation { last: 0, got: 0 }),
            _ => Ok(()),
        }
    }

    /// Adjudicates a request whose embeddings were computed beforehand.
    pub fn adjudicate_embedded(&mut self, arrival: u64, pair: &EmbeddingPair) -> Result<Verdict> {
        self.check_arrival(arrival)?;
        self.apply_pending(arrival)?;
        let th = self.config.thresholds;
        let mut verdict = None;
        if self.config.stage1_enabled {
            let (m_sem, id) = self.semantic.query_top1(&pair.semantic)?;
            if let Some(id) = id.filter(|_| m_sem > th.tau_sem) {
                let decision = self.semantic.decision_of(id).ok_or(Error::UnknownEntry(id))?;
                self.semantic.touch(id, arrival)?;
                verdict = Some(Verdict {
                    decision,
                    stage: Stage::Inherited,
                    matched_entry_id: Some(id),
                    similarity: Some(m_sem),
                });
            }
        }
        let verdict = match verdict {
            Some(v) => v,
            None => {
                let hits = self.intent.query_above(&pair.intent, th.tau_int)?;
                let similarity = hits.best_id.map(|_| hits.best);
                if hits.ids.len() >= th.k {
                    for &id in &hits.ids {
                        self.intent.touch(id, arrival)?;
                    }
                    Verdict {
                        decision: Decision::Block,
                        stage: Stage::IntentBlocked,
                        matched_entry_id: hits.best_id,
                        similarity,
                    }
                } else if self.semantic.is_empty() && self.intent.is_empty() {
                    Verdict {
                        decision: Decision::Allow,
                        stage: Stage::EmptyHistory,
                        matched_entry_id: None,
                        similarity: None,
                    }
                } else {
                    Verdict {
                        decision: Decision::Allow,
                        stage: Stage::IntentPassed,
                        matched_entry_id: hits.best_id,
                        similarity,
                    }
                }
            }
        };
        self.last_arrival = Some(arrival);
        self.pending.push_back(PendingWrite { time: arrival, pair: pair.clone(), verdict });
        if self.config.write_back_lag == 0 {
            self.flush()?;
        }
        Ok(verdict)
    }

    /// Applies write-backs that must be visible to a request arriving at `now`.
    fn apply_pending(&mut self, now: u64) -> Result<()> {
        while let Some(w) = self.pending.front() {
            if w.time + self.config.write_back_lag >= now {
                break;
            }
            let w = self.pending.pop_front().expect("front exists");
            self.write_back(w)?;
        }
        Ok(())
    }

    fn write_back(&mut self, w: PendingWrite) -> Result<()> {
        let id = self.semantic.insert(&w.pair.semantic, w.verdict.decision, w.time)?;
        self.intent.insert(&w.pair.intent, w.verdict.decision, w.time)?;
        self.verdict_log.insert(id, w.verdict);
        Ok(())
    }

    /// Seeds both stores with history that was never adjudicated here, stamped
    /// at time zero. Only allowed before the first request.
    pub fn preload(&mut self, entries: &[(EmbeddingPair, Decision)]) -> Result<()> {
        if let Some(last) = self.last_arrival {
            return Err(Error::CausalityViolation { last, got: 0 });
        }
        for (pair, decision) in entries {
            self.semantic.insert(&pair.semantic, *decision, 0)?;
            self.intent.insert(&pair.intent, *decision, 0)?;
        }
        Ok(())
    }

    /// Makes every outstanding write-back visible.
    pub fn flush(&mut self) -> Result<()> {
        while let Some(w) = self.pending.pop_front() {
            self.write_back(w)?;
        }
        Ok(())
    }

    pub fn run_stream(&mut self, stream: &[Request]) -> Result<Vec<Verdict>> {
        let mut out = Vec::with_capacity(stream.len());
        for r in stream {
            out.push(self.adjudicate(r)?);
        }
        self.flush()?;
        Ok(out)
    }

    /// Like [`run_stream`](Self::run_stream) over precomputed embeddings.
    pub fn run_embedded(
        &mut self,
        stream: &[Request],
        embeddings: &[EmbeddingPair],
    ) -> Result<Vec<Verdict>> {
        if stream.len() != embeddings.len() {
            return Err(Error::LengthMismatch { verdicts: embeddings.len(), requests: stream.len() });
        }
        let mut out = Vec::with_capacity(stream.len());
        for (r, e) in stream.iter().zip(embeddings) {
            out.push(self.adjudicate_embedded(r.arrival_index, e)?);
        }
        self.flush()?;
        Ok(out)
    }
}
