//! The seeded end-to-end benchmark: corpus, held-out streams, training and
//! calibrated evaluation.

use std::sync::Arc;

use crate::acl::{train, TrainConfig, TrainOutcome};
use crate::dataset::{IntentDataset, Split};
use crate::encoders::{FrozenEncoder, IntentHead, DEFAULT_SEMANTIC_DIM};
use crate::engine::{Engine, EngineConfig};
use crate::error::Result;
use crate::featurizer::DEFAULT_DIM;
use crate::metrics::{calibrate, score, Calibration, EvalReport, GridSpec};
use crate::simulator::{generate_dataset, SynthConfig};
use crate::stream::{make_stream, InterleavePolicy};
use crate::types::{EmbeddingPair, Request, Thresholds};

pub const FROZEN_SEED: u64 = 42;
pub const VALIDATION_STREAM_SEED: u64 = 11;
pub const TEST_STREAM_SEED: u64 = 12;
pub const FPR_BUDGET: f64 = 0.01;

pub fn default_frozen() -> Result<FrozenEncoder> {
    FrozenEncoder::new(FROZEN_SEED, DEFAULT_SEMANTIC_DIM, DEFAULT_DIM)
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub dataset: IntentDataset,
    pub frozen: Arc<FrozenEncoder>,
    pub validation: Vec<Request>,
    pub test: Vec<Request>,
}

/// A head calibrated on the validation stream and scored on the test stream.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Engine holding the calibrated thresholds, stores empty.
    pub engine: Engine,
    pub calibration: Calibration,
    pub validation_embeddings: Vec<EmbeddingPair>,
    pub test_embeddings: Vec<EmbeddingPair>,
    pub test_report: EvalReport,
}

impl Benchmark {
    pub fn new(synth: &SynthConfig) -> Result<Self> {
        let dataset = generate_dataset(synth)?;
        let validation = make_stream(
            &dataset.split(Split::Validation),
            &InterleavePolicy::UniformShuffle,
            VALIDATION_STREAM_SEED,
        )?;
        let test = make_stream(&dataset.split(Split::Test), &InterleavePolicy::UniformShuffle, TEST_STREAM_SEED)?;
        Ok(Benchmark { dataset, frozen: Arc::new(default_frozen()?), validation, test })
    }

    pub fn standard() -> Result<Self> {
        Benchmark::new(&SynthConfig::benchmark())
    }

    pub fn train(&self, cfg: &TrainConfig) -> Result<TrainOutcome> {
        train(&self.dataset.split(Split::Train), &self.frozen, cfg)
    }

    /// An engine over `head` with placeholder thresholds and `base` settings.
    pub fn engine(&self, head: Arc<IntentHead>, base: EngineConfig) -> Result<Engine> {
        Engine::new(self.frozen.clone(), head, base)
    }

    /// Calibrates under `fpr_budget` on the validation stream, then replays
    /// the test stream with the chosen thresholds. `base.thresholds.k` is kept.
    pub fn evaluate(&self, head: Arc<IntentHead>, base: EngineConfig, fpr_budget: f64) -> Result<Evaluation> {
        let template = self.engine(head, base)?;
        let validation_embeddings = template.embed_all(self.validation.iter().map(|r| r.text.as_str()))?;
        let calibration = calibrate(&template, &self.validation, &validation_embeddings, fpr_budget, &GridSpec::default())?;
        let test_embeddings = template.embed_all(self.test.iter().map(|r| r.text.as_str()))?;
        let mut engine = template.fresh_with_thresholds(calibration.thresholds)?;
        let verdicts = engine.run_embedded(&self.test, &test_embeddings)?;
        let test_report = score(&verdicts, &self.test)?;
        Ok(Evaluation {
            engine: template.fresh_with_thresholds(calibration.thresholds)?,
            calibration,
            validation_embeddings,
            test_embeddings,
            test_report,
        })
    }
}

/// Placeholder configuration for templates whose thresholds get calibrated.
pub fn template_config(k: usize) -> EngineConfig {
    EngineConfig::new(Thresholds { tau_sem: 0.9, tau_int: 0.8, k })
}
