//! Pipeline stages. Every stage reads and writes files under the run directory.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use intentgate::acl::train;
use intentgate::benchmark::{default_frozen, template_config};
use intentgate::bounds::{feasibility_curve, intent_radius, packing_limit, GeometryParams};
use intentgate::dataset::{IntentDataset, Split};
use intentgate::encoders::{FrozenEncoder, IntentHead};
use intentgate::engine::{Engine, EngineConfig};
use intentgate::loadgen::run_bench;
use intentgate::metrics::{calibrate, capacity_study, score, GridSpec};
use intentgate::simulator::{craft_poisons, generate_dataset, run_attack, run_pollution_with};
use intentgate::stream::{make_stream, InterleavePolicy};
use intentgate::vecstore::{Capacity, StoreConfig};
use intentgate::{EmbeddingPair, Request, Thresholds};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::fail::Failure;

pub type Outcome = Result<String, Failure>;

/// Marker written by `calibrate` and demanded by every consumer of thresholds.
pub const FROZEN_MARK: &str = "frozen by calibrate";

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        RunDir { root: root.to_path_buf() }
    }

    pub fn split(&self, s: Split) -> PathBuf {
        self.root.join("data").join(format!("{}.jsonl", s.as_str()))
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.bin")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.tsv")
    }

    pub fn thresholds(&self) -> PathBuf {
        self.root.join("thresholds.toml")
    }

    pub fn verdicts(&self) -> PathBuf {
        self.root.join("verdicts.tsv")
    }

    fn open(&self, path: &Path) -> Result<BufReader<File>, Failure> {
        File::open(path).map(BufReader::new).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }

    fn create(&self, path: &Path) -> Result<BufWriter<File>, Failure> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::data(format!("{}: {e}", parent.display())))?;
        }
        File::create(path).map(BufWriter::new).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }

    pub fn read_split(&self, s: Split) -> Result<IntentDataset, Failure> {
        Ok(IntentDataset::read_split(self.open(&self.split(s))?, s)?)
    }

    pub fn read_model(&self) -> Result<IntentHead, Failure> {
        Ok(IntentHead::read_snapshot(self.open(&self.model())?)?)
    }

    /// Thresholds as frozen by `calibrate` for `head`; anything else is refused.
    pub fn read_frozen(&self, head: &IntentHead) -> Result<ThresholdsFile, Failure> {
        let path = self.thresholds();
        let text = fs::read_to_string(&path)
            .map_err(|e| Failure::refused(format!("no frozen thresholds at {}: {e}", path.display())))?;
        let file: ThresholdsFile =
            toml::from_str(&text).map_err(|e| Failure::refused(format!("{}: {}", path.display(), e.message())))?;
        if file.frozen_by != FROZEN_MARK {
            return Err(Failure::refused(format!("{} is not {FROZEN_MARK}", path.display())));
        }
        if file.model_fingerprint != fingerprint_hex(head) {
            return Err(Failure::refused("thresholds were calibrated for a different model"));
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsFile {
    pub frozen_by: String,
    pub model_fingerprint: String,
    pub tau_sem: f64,
    pub tau_int: f64,
    pub k: usize,
    pub fpr_budget: f64,
    pub validation_recall: f64,
    pub validation_fpr: f64,
}

impl ThresholdsFile {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds { tau_sem: self.tau_sem, tau_int: self.tau_int, k: self.k }
    }
}

fn fingerprint_hex(head: &IntentHead) -> String {
    format!("{:016x}", head.fingerprint())
}

fn engine_config(cfg: &RunConfig, thresholds: Thresholds) -> EngineConfig {
    let store = match cfg.engine.capacity {
        0 => StoreConfig::default(),
        n => StoreConfig { capacity: Capacity::Bounded(n), ..StoreConfig::default() },
    };
    EngineConfig {
        thresholds,
        stage1_enabled: cfg.engine.stage1_enabled,
        semantic_store: store,
        intent_store: store,
        write_back_lag: cfg.engine.write_back_lag,
    }
}

fn frozen() -> Result<Arc<FrozenEncoder>, Failure> {
    Ok(Arc::new(default_frozen()?))
}

/// The calibrated engine with empty stores, plus its frozen thresholds.
fn frozen_engine(cfg: &RunConfig, run: &RunDir) -> Result<(Engine, ThresholdsFile), Failure> {
    let head = run.read_model()?;
    let th = run.read_frozen(&head)?;
    let engine = Engine::new(frozen()?, Arc::new(head), engine_config(cfg, th.thresholds()))?;
    Ok((engine, th))
}

fn uniform_stream(ds: &IntentDataset, seed: u64) -> Result<Vec<Request>, Failure> {
    Ok(make_stream(ds, &InterleavePolicy::UniformShuffle, seed)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingRecord {
    semantic: Vec<f32>,
    intent: Vec<f32>,
}

/// Precomputed embeddings, one JSON object per stream request.
pub fn read_embeddings(path: &Path, expected: usize) -> Result<Vec<EmbeddingPair>, Failure> {
    let file = File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(expected);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| Failure::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(EmbeddingPair { semantic: rec.semantic, intent: rec.intent });
    }
    if out.len() != expected {
        return Err(Failure::data(format!("{} holds {} embeddings for {expected} requests", path.display(), out.len())));
    }
    Ok(out)
}

fn embeddings_for(engine: &Engine, stream: &[Request], external: Option<&Path>) -> Result<Vec<EmbeddingPair>, Failure> {
    match external {
        Some(p) => read_embeddings(p, stream.len()),
        None => Ok(engine.embed_all(stream.iter().map(|r| r.text.as_str()))?),
    }
}

pub fn gen_data(cfg: &RunConfig) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let ds = generate_dataset(&cfg.synth)?;
    let mut out = String::from("split\tmalicious_intents\tbenign_items\tfile\n");
    for s in Split::ALL {
        let path = run.split(s);
        let mut w = run.create(&path)?;
        ds.write_split(s, &mut w)?;
        w.flush()?;
        let part = ds.split(s);
        let _ =
            writeln!(out, "{}\t{}\t{}\t{}", s.as_str(), part.malicious_intents().len(), part.benign_items().len(), path.display());
    }
    Ok(out)
}

pub fn train_head(cfg: &RunConfig) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let ds = run.read_split(Split::Train)?;
    let outcome = train(&ds, &default_frozen()?, &cfg.train)?;
    let mut w = run.create(&run.model())?;
    outcome.head.write_snapshot(&mut w)?;
    w.flush()?;
    fs::write(run.train_log(), outcome.log_text())?;
    let last = outcome.log.last().map_or(f64::NAN, |l| l.loss);
    let saved = run.read_model()?;
    Ok(format!(
        "steps\t{}\nfinal_loss\t{last:.6}\nkept\t{}\npruned\t{}\nmodel\t{}\nfingerprint\t{}\n",
        outcome.log.len(),
        outcome.kept,
        outcome.pruned,
        run.model().display(),
        fingerprint_hex(&saved)
    ))
}

pub fn calibrate_thresholds(cfg: &RunConfig, external: Option<&Path>) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let head = run.read_model()?;
    let ds = run.read_split(Split::Validation)?;
    let stream = uniform_stream(&ds, cfg.streams.validation_seed)?;
    let placeholder = template_config(cfg.engine.k).thresholds;
    let fp = fingerprint_hex(&head);
    let template = Engine::new(frozen()?, Arc::new(head), engine_config(cfg, placeholder))?;
    let emb = embeddings_for(&template, &stream, external)?;
    let cal = calibrate(&template, &stream, &emb, cfg.streams.fpr_budget, &GridSpec::default())?;
    let file = ThresholdsFile {
        frozen_by: FROZEN_MARK.into(),
        model_fingerprint: fp,
        tau_sem: cal.thresholds.tau_sem,
        tau_int: cal.thresholds.tau_int,
        k: cal.thresholds.k,
        fpr_budget: cfg.streams.fpr_budget,
        validation_recall: cal.recall,
        validation_fpr: cal.fpr,
    };
    let text = toml::to_string(&file).map_err(|e| Failure::data(e.to_string()))?;
    fs::write(run.thresholds(), &text)?;
    Ok(text)
}

pub fn evaluate(cfg: &RunConfig, external: Option<&Path>) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let (mut engine, th) = frozen_engine(cfg, &run)?;
    let ds = run.read_split(Split::Test)?;
    let stream = uniform_stream(&ds, cfg.streams.test_seed)?;
    let emb = embeddings_for(&engine, &stream, external)?;
    let verdicts = engine.run_embedded(&stream, &emb)?;
    let report = score(&verdicts, &stream)?;
    let mut w = run.create(&run.verdicts())?;
    writeln!(w, "id\tdecision\tstage\tsimilarity")?;
    for (r, v) in stream.iter().zip(&verdicts) {
        writeln!(w, "{}\t{}\t{}\t{}", r.id, v.decision, v.stage, similarity_text(v.similarity))?;
    }
    w.flush()?;
    Ok(format!(
        "tau_sem\t{}\ntau_int\t{}\nk\t{}\nrecall\t{:.6}\nintercepted\t{}/{}\nfpr\t{:.6}\nbenign_blocked\t{}/{}\n\
         mean_first_intercept\t{}\n",
        th.tau_sem,
        th.tau_int,
        th.k,
        report.recall,
        report.intercepted_intents,
        report.malicious_intents,
        report.fpr,
        report.benign_blocked,
        report.benign_slices,
        report.mean_first_intercept().map_or("-".into(), |m| format!("{m:.3}")),
    ))
}

pub fn similarity_text(s: Option<f64>) -> String {
    s.map_or("-".into(), |s| format!("{s:.6}"))
}

fn read_splits(run: &RunDir, which: &str) -> Result<IntentDataset, Failure> {
    let splits: Vec<Split> = match which {
        "all" => Split::ALL.to_vec(),
        s => vec![Split::parse(s).map_err(|_| Failure::config(format!("unknown split {s:?}")))?],
    };
    let mut out = IntentDataset::default();
    for s in splits {
        let part = run.read_split(s)?;
        out.items.extend(part.items);
        out.noise_vocab = part.noise_vocab;
    }
    Ok(out)
}

pub fn attack(cfg: &RunConfig, split: &str) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let (engine, _) = frozen_engine(cfg, &run)?;
    let ds = read_splits(&run, split)?;
    let background: Vec<String> = run.read_split(Split::Test)?.benign_items().iter().map(|i| i.text.clone()).collect();
    let report = run_attack(&engine, &ds, &background, &cfg.attack)?;
    let budgets: Vec<usize> =
        (0..).map(|e| 1usize << e).take_while(|&b| b < cfg.attack.max_attempts).chain([cfg.attack.max_attempts]).collect();
    Ok(format!(
        "mode\t{}\nintents\t{}\nsucceeded\t{}\n{}",
        cfg.attack.mode.name(),
        report.total(),
        report.succeeded(),
        report.table(&budgets)
    ))
}

pub fn pollute(cfg: &RunConfig) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let (mut warm, _) = frozen_engine(cfg, &run)?;
    let validation = uniform_stream(&run.read_split(Split::Validation)?, cfg.streams.validation_seed)?;
    warm.run_stream(&validation)?;
    let future: Vec<Request> = uniform_stream(&run.read_split(Split::Test)?, cfg.streams.test_seed)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| Request { arrival_index: i as u64 + 1, ..r })
        .collect();
    let vocabulary = read_splits(&run, "all")?.vocabulary();
    let most = cfg.pollution.n_poison.iter().copied().max().unwrap_or(0);
    let poisons = craft_poisons(&warm, &future, most, &vocabulary, &cfg.pollution.craft())?;
    let mut out = String::from("n_poison\tfpr\tclean_blocked\tclean_total\tpoison_blocked\n");
    for &n in &cfg.pollution.n_poison {
        let (p, _) = run_pollution_with(&warm, &poisons[..n], &future)?;
        let _ = writeln!(out, "{n}\t{:.6}\t{}\t{}\t{}", p.fpr, p.clean_blocked, p.clean_total, p.poison_blocked);
    }
    Ok(out)
}

pub fn capacity(cfg: &RunConfig) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let (engine, _) = frozen_engine(cfg, &run)?;
    let ds = run.read_split(Split::Test)?;
    let stream = make_stream(&ds, &InterleavePolicy::SlowLoris { max_spread: None }, cfg.streams.test_seed)?;
    let emb = engine.embed_all(stream.iter().map(|r| r.text.as_str()))?;
    let sweep = GridSpec::default().tau_int;
    let (_, points) = capacity_study(&engine, engine.config(), &stream, &emb, &cfg.capacity.ratios, &sweep)?;
    let mut out = String::from("ratio\tcapacity\trelative_auc\n");
    for p in points {
        let _ = writeln!(out, "{}\t{}\t{:.6}", p.ratio, p.capacity, p.relative_auc);
    }
    Ok(out)
}

pub fn bounds(cfg: &RunConfig) -> Outcome {
    let b = &cfg.bounds;
    let limit = packing_limit(&GeometryParams { tau_int: b.tau_int, r_mal: b.r_mal, d_int: b.d_int })?;
    let mut out = format!("packing_limit\t{:.6e}\n", limit.value);
    if let Some(w) = limit.warning() {
        let _ = writeln!(out, "warning\t{w}");
    }
    out.push_str("fragment\tattempts_factor\n");
    for (i, f) in feasibility_curve(b.gamma, b.fragments)? {
        let _ = writeln!(out, "{i}\t{f:.6}");
    }
    // The measured radius needs a trained model and its training split.
    let run = RunDir::new(&cfg.dir);
    if run.model().exists() && run.split(Split::Train).exists() {
        let r = intent_radius(&run.read_model()?, &run.read_split(Split::Train)?)?;
        let _ = writeln!(out, "r_mal_mean\t{:.6}\nr_mal_max\t{:.6}", r.mean, r.max);
    }
    Ok(out)
}

pub fn bench(cfg: &RunConfig) -> Outcome {
    let run = RunDir::new(&cfg.dir);
    let head = run.read_model()?;
    let thresholds = match run.read_frozen(&head) {
        Ok(t) => t.thresholds(),
        Err(_) => template_config(cfg.engine.k).thresholds,
    };
    let engine = Engine::new(frozen()?, Arc::new(head), engine_config(cfg, thresholds))?;
    let texts: Vec<String> = run.read_split(Split::Test)?.items.iter().map(|i| i.text.clone()).collect();
    Ok(run_bench(&engine, &texts, &cfg.bench)?.table())
}

pub fn serve_engine(cfg: &RunConfig) -> Result<Engine, Failure> {
    Ok(frozen_engine(cfg, &RunDir::new(&cfg.dir))?.0)
}
