//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use intentgate::acl::{acl_loss, ContrastiveBatch, Label, TrainConfig};
use intentgate::benchmark::{template_config, Benchmark, Evaluation, FPR_BUDGET, TEST_STREAM_SEED};
use intentgate::bounds::{greedy_cap_packing, intent_radius, linear_fit, packing_limit, GeometryParams};
use intentgate::dataset::Split;
use intentgate::encoders::{FrozenEncoder, HeadDims, IntentHead};
use intentgate::engine::{Engine, EngineConfig};
use intentgate::loadgen::{run_bench, BenchConfig};
use intentgate::metrics::{
    auc, capacity_study, linspace_step, recall_at_fpr, recall_fpr_curve, score, CurvePoint, GridSpec,
};
use intentgate::simulator::{
    craft_poisons, generate_dataset, run_attack, run_pollution_with, AttackMode, AttackReport, AttackerConfig,
    PollutionConfig, SynthConfig,
};
use intentgate::stream::{make_stream, with_benign_duplicates, InterleavePolicy};
use intentgate::vecstore::{StoreConfig, VectorStore};
use intentgate::{Decision, Request, Stage, Thresholds};
use rand::Rng;
use support::*;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

/// One-sided 5% critical value of Student's t with 18 degrees of freedom
/// (5 seeds times 4 budgets, minus 2).
const T_CRIT_18: f64 = 1.734;
const ATTACK_SEEDS: u64 = 5;
const MAX_ATTEMPTS: usize = 64;

// ---- 1-5: oracles -----------------------------------------------------------

fn gradient_check() -> Check {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let b = random_batch(100 + seed, 2 + (seed % 2) as usize, 3, 64);
        worst = worst.max(fd_max_relative_error(&small_head(seed), &b, 0.1));
    }
    let secs = t.elapsed().as_secs_f64();
    check(worst <= 1e-4 && secs < 10.0, format!("max relative error {worst:.2e} on 10 batches in {secs:.2}s"))
}

fn loss_oracle_check() -> Check {
    let labels = |b: &ContrastiveBatch| -> Vec<Label> { b.items.iter().map(|i| i.1).collect() };
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let b = random_batch(seed, 2 + (seed % 3) as usize, 1 + (seed % 5) as usize, 64);
        let head = small_head(seed);
        let tau = [0.1, 0.5, 1.0][(seed % 3) as usize];
        let z: Vec<Vec<f64>> = b.items.iter().map(|(f, _)| head.encode(f).unwrap()).collect();
        let (want, _) = loss_oracle(&z, &labels(&b), tau);
        worst = worst.max((acl_loss(&head, &b, tau).unwrap().loss - want).abs());
    }
    check(worst <= 1e-10, format!("max absolute difference {worst:.2e} on 100 batches"))
}

fn store_exactness() -> Check {
    let dim = 128;
    let mut mismatches = 0;
    for chunk in [1, 7, 256, 4096] {
        let mut r = rng(chunk as u64);
        let mut store = VectorStore::new(dim, StoreConfig { chunk_size: chunk, ..StoreConfig::default() }).unwrap();
        let mut model: Vec<RefEntry> = Vec::new();
        for t in 0..1000u64 {
            // Every tenth entry repeats an earlier vector to exercise ties.
            let v = if t % 10 == 9 { model[r.random_range(0..model.len())].vector.clone() } else { random_unit_f32(&mut r, dim) };
            let id = store.insert(&v, Decision::Allow, t).unwrap();
            model.push(RefEntry { id, vector: v, decision: Decision::Allow, time: t, count: 1 });
        }
        for qi in 0..100 {
            let q = if qi % 4 == 0 { model[r.random_range(0..1000)].vector.clone() } else { random_unit_f32(&mut r, dim) };
            let (s, id) = store.query_top1(&q).unwrap();
            let (bs, bid) = brute_top1(&model, &q);
            mismatches += (id != bid || (s - bs).abs() > 1e-12) as usize;
            for tau in [-0.1, 0.0, 0.1, 0.2, 0.99] {
                mismatches += (store.query_topk_count(&q, tau).unwrap() != brute_count(&model, &q, tau)) as usize;
            }
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches over 4 chunk sizes x 100 queries x 1000 entries"))
}

fn eviction_oracle() -> Check {
    let dim = 8;
    let cap = 30;
    let (mut wrong, mut overflow, mut leaked) = (0, 0, 0);
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let mut store = VectorStore::new(dim, StoreConfig { merge_similarity: 0.8, ..StoreConfig::bounded(cap) }).unwrap();
        let centers: Vec<Vec<f32>> = (0..4).map(|_| random_unit_f32(&mut r, dim)).collect();
        let mut model: Vec<RefEntry> = Vec::new();
        for t in 0..cap as u64 {
            let v = if seed % 4 == 0 || r.random_bool(0.5) {
                random_unit_f32(&mut r, dim)
            } else {
                let c = r.random_range(0..4);
                jitter(&mut r, &centers[c], 0.1)
            };
            let d = if r.random_bool(0.2) { Decision::Block } else { Decision::Allow };
            let id = store.insert(&v, d, t).unwrap();
            model.push(RefEntry { id, vector: v, decision: d, time: t, count: 1 });
        }
        store.evict_merge().unwrap();
        let want = single_linkage_oracle(&model, 0.8);
        let got: Vec<RefEntry> = store.entries().into_iter().map(RefEntry::from).collect();
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, w)| {
                (g.id, g.decision, g.time, g.count) == (w.id, w.decision, w.time, w.count)
                    && naive_dot(&g.vector, &w.vector) > 1.0 - 1e-6
            });
        wrong += (!same) as usize;
        // Keep streaming: capacity and mass must hold through later evictions.
        for t in cap as u64..cap as u64 + 200 {
            let c = r.random_range(0..4);
            store.insert(&jitter(&mut r, &centers[c], 0.3), Decision::Allow, t).unwrap();
            overflow += (store.len() > cap) as usize;
            leaked += (store.stored_mass() + store.evicted_mass() != store.total_inserts()) as usize;
        }
    }
    check(
        wrong == 0 && overflow == 0 && leaked == 0,
        format!("20 stores: {wrong} oracle mismatches, {overflow} capacity overflows, {leaked} mass violations"),
    )
}

fn causality_suite() -> Check {
    let frozen = Arc::new(FrozenEncoder::new(42, 64, 512).unwrap());
    let head = Arc::new(IntentHead::random(HeadDims { input: 512, hidden: 64, output: 16 }, 9).unwrap());
    let (mut prefix_breaks, mut oracle_breaks, mut dup_checked, mut dup_breaks) = (0, 0, 0, 0);
    for seed in 0..50u64 {
        let cfg = SynthConfig {
            n_malicious_intents: 6,
            n_benign_intents: 10,
            n_benign_independent: 60,
            seed,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let base = make_stream(&ds, &InterleavePolicy::UniformShuffle, seed).unwrap();
        let stream = with_benign_duplicates(&base, 0.15, seed).unwrap();
        let lag = seed % 3;
        let th = Thresholds { tau_sem: 0.9, tau_int: 0.4 + 0.01 * (seed % 40) as f64, k: 1 + (seed % 3) as usize };
        let config = EngineConfig { write_back_lag: lag, ..EngineConfig::new(th) };
        let engine = Engine::new(frozen.clone(), head.clone(), config).unwrap();
        let emb = engine.embed_all(stream.iter().map(|r| r.text.as_str())).unwrap();
        let full = engine.clone().run_embedded(&stream, &emb).unwrap();
        for t in 1..stream.len() {
            let part = engine.clone().run_embedded(&stream[..t], &emb[..t]).unwrap();
            prefix_breaks += (part[..] != full[..t]) as usize;
        }
        let sem: Vec<Vec<f32>> = emb.iter().map(|p| p.semantic.clone()).collect();
        let int: Vec<Vec<f32>> = emb.iter().map(|p| p.intent.clone()).collect();
        let decisions: Vec<Decision> = full.iter().map(|v| v.decision).collect();
        oracle_breaks += (decisions != engine_oracle(&sem, &int, th.tau_sem, th.tau_int, th.k, true, lag as usize)) as usize;
        // Duplicates, checked with immediate write-back.
        let seq = engine.fresh_with(EngineConfig::new(th)).unwrap().run_embedded(&stream, &emb).unwrap();
        for t in 1..stream.len() {
            let visible: Vec<RefEntry> = (0..t)
                .map(|u| RefEntry { id: u as u64, vector: sem[u].clone(), decision: seq[u].decision, time: 0, count: 1 })
                .collect();
            let Some(top) = brute_top1(&visible, &sem[t]).1 else { continue };
            let top = top as usize;
            if stream[top].text != stream[t].text {
                continue;
            }
            dup_checked += 1;
            let v = seq[t];
            dup_breaks += (v.stage != Stage::Inherited || v.decision != seq[top].decision) as usize;
        }
    }
    check(
        prefix_breaks == 0 && oracle_breaks == 0 && dup_breaks == 0 && dup_checked > 0,
        format!(
            "50 streams: {prefix_breaks} prefix changes, {oracle_breaks} reference-rule mismatches, \
             {dup_breaks}/{dup_checked} duplicates not inherited"
        ),
    )
}

// ---- 6-12: the trained benchmark --------------------------------------------

struct Trained {
    bench: Benchmark,
    train_cfg: TrainConfig,
    head: Arc<IntentHead>,
    eval: Evaluation,
    seconds: f64,
}

fn train_benchmark() -> Trained {
    let t = Instant::now();
    let bench = Benchmark::standard().unwrap();
    let train_cfg = TrainConfig::benchmark();
    let head = Arc::new(bench.train(&train_cfg).unwrap().head);
    let eval = bench.evaluate(head.clone(), template_config(1), FPR_BUDGET).unwrap();
    Trained { bench, train_cfg, head, eval, seconds: t.elapsed().as_secs_f64() }
}

fn efficacy(tr: &Trained) -> Check {
    let r = &tr.eval.test_report;
    let th = tr.eval.calibration.thresholds;
    check(
        r.recall >= 0.8 && r.fpr <= FPR_BUDGET && tr.seconds < 300.0,
        format!(
            "test recall {:.3} ({}/{}), FPR {:.5} ({}/{}), tau_sem {} tau_int {} k {}, {:.1}s end to end",
            r.recall,
            r.intercepted_intents,
            r.malicious_intents,
            r.fpr,
            r.benign_blocked,
            r.benign_slices,
            th.tau_sem,
            th.tau_int,
            th.k,
            tr.seconds
        ),
    )
}

fn k_trend(tr: &Trained) -> Check {
    let frozen = tr.eval.calibration.thresholds;
    let mut rows = Vec::new();
    for k in 1..=3 {
        let mut e = tr.eval.engine.fresh_with_thresholds(Thresholds { k, ..frozen }).unwrap();
        let r = score(&e.run_embedded(&tr.bench.test, &tr.eval.test_embeddings).unwrap(), &tr.bench.test).unwrap();
        rows.push((r.recall, r.mean_first_intercept().unwrap_or(f64::NAN)));
    }
    let recall_ok = rows.windows(2).all(|w| w[0].0 >= w[1].0);
    let intercept_ok = rows.windows(2).all(|w| w[0].1 < w[1].1);
    let detail = rows
        .iter()
        .enumerate()
        .map(|(i, (r, f))| format!("k={}: recall {r:.3}, first intercept {f:.2}", i + 1))
        .collect::<Vec<_>>()
        .join("; ");
    check(recall_ok && intercept_ok, detail)
}

/// Mean recall over FPR levels in `[0, FPR_BUDGET]`.
fn matched_recall(curve: &[CurvePoint]) -> f64 {
    auc(curve, FPR_BUDGET) / FPR_BUDGET
}

fn ablations(tr: &Trained) -> Check {
    let sweep = linspace_step(0.30, 0.99, 0.01);
    let cfg = tr.eval.engine.config().clone();
    let curve = |head: Arc<IntentHead>, cfg: &EngineConfig, stream: &[Request]| -> Vec<CurvePoint> {
        let e = tr.bench.engine(head, cfg.clone()).unwrap();
        let emb = e.embed_all(stream.iter().map(|r| r.text.as_str())).unwrap();
        recall_fpr_curve(&e, cfg, stream, &emb, &sweep).unwrap()
    };
    let full = curve(tr.head.clone(), &cfg, &tr.bench.test);
    let f_star = tr.eval.test_report.fpr;
    let mut rows = Vec::new();
    let mut pass = true;
    let mut compare = |name: &str, mine: &[CurvePoint], theirs: &[CurvePoint], f: f64| {
        let (a, b) = (matched_recall(mine), matched_recall(theirs));
        pass &= a > b;
        rows.push(format!(
            "{name} {a:.4} vs {b:.4} (recall at FPR {f:.4}: {:.2} vs {:.2})",
            recall_at_fpr(mine, f),
            recall_at_fpr(theirs, f)
        ));
    };

    let dup = with_benign_duplicates(&tr.bench.test, 0.2, 5).unwrap();
    let single = EngineConfig { stage1_enabled: false, ..cfg.clone() };
    let full_dup = curve(tr.head.clone(), &cfg, &dup);
    let dup_fpr = {
        let e = tr.eval.engine.fresh_with(cfg.clone()).unwrap();
        let emb = e.embed_all(dup.iter().map(|r| r.text.as_str())).unwrap();
        score(&e.clone().run_embedded(&dup, &emb).unwrap(), &dup).unwrap().fpr
    };
    compare("(a) single-encoder", &full_dup, &curve(tr.head.clone(), &single, &dup), dup_fpr);

    for (name, variant) in [
        ("(b) symmetric", TrainConfig { symmetric: true, ..tr.train_cfg.clone() }),
        ("(c) no-anchor", TrainConfig { include_anchor: false, ..tr.train_cfg.clone() }),
    ] {
        let head = Arc::new(tr.bench.train(&variant).unwrap().head);
        compare(name, &full, &curve(head, &cfg, &tr.bench.test), f_star);
    }
    let c = &tr.train_cfg;
    let untrained = Arc::new(IntentHead::random_with(c.head_dims, c.seed, c.init).unwrap());
    compare("(d) untrained", &full, &curve(untrained, &cfg, &tr.bench.test), f_star);
    check(pass, format!("mean recall on FPR [0, {FPR_BUDGET}], full vs variant: {}", rows.join("; ")))
}

struct AttackRuns {
    open: Vec<AttackReport>,
    standard: Vec<AttackReport>,
    rewrite: Vec<AttackReport>,
    repulsion: Vec<AttackReport>,
}

fn run_attacks(tr: &Trained) -> AttackRuns {
    let bg: Vec<String> = tr.bench.dataset.split(Split::Test).benign_items().iter().map(|i| i.text.clone()).collect();
    let mut open_cfg = tr.eval.engine.config().clone();
    open_cfg.thresholds.tau_int = f64::INFINITY;
    let open = tr.eval.engine.fresh_with(open_cfg).unwrap();
    let runs = |engine: &Engine, mode: AttackMode| -> Vec<AttackReport> {
        (0..ATTACK_SEEDS)
            .map(|seed| {
                let atk = AttackerConfig { mode, max_attempts: MAX_ATTEMPTS, seed, ..AttackerConfig::default() };
                run_attack(engine, &tr.bench.dataset, &bg, &atk).unwrap()
            })
            .collect()
    };
    AttackRuns {
        open: runs(&open, AttackMode::Standard),
        standard: runs(&tr.eval.engine, AttackMode::Standard),
        rewrite: runs(&tr.eval.engine, AttackMode::Rewrite),
        repulsion: runs(&tr.eval.engine, AttackMode::LatentRepulsion),
    }
}

fn mean_asr(reports: &[AttackReport]) -> f64 {
    reports.iter().map(AttackReport::asr).sum::<f64>() / reports.len() as f64
}

fn attacks(tr: &Trained, runs: &AttackRuns) -> Check {
    let (open, lr, rw) = (mean_asr(&runs.open), mean_asr(&runs.repulsion), mean_asr(&runs.rewrite));
    let order = open == 1.0 && open > lr && lr >= rw && rw >= 0.0;

    // Budgets start where every intent can submit all of its fragments.
    let most = tr.bench.dataset.malicious_intents().iter().map(|&i| tr.bench.dataset.fragments_of(i).len()).max().unwrap();
    let budgets: Vec<usize> = (0..).map(|e| 1usize << e).skip_while(|&b| b < most).take_while(|&b| b <= MAX_ATTEMPTS).collect();
    let mut slopes = Vec::new();
    let mut flat = true;
    for (name, reports) in
        [("none", &runs.open), ("standard", &runs.standard), ("rewrite", &runs.rewrite), ("latent", &runs.repulsion)]
    {
        let pts: Vec<(f64, f64)> =
            reports.iter().flat_map(|r| budgets.iter().map(|&b| (b as f64, r.asr_at(b)))).collect();
        let fit = linear_fit(&pts).unwrap();
        let significant = if fit.slope_se > 0.0 { fit.slope / fit.slope_se > T_CRIT_18 } else { fit.slope > 0.0 };
        flat &= !significant;
        let t = if fit.slope_se > 0.0 { fit.slope / fit.slope_se } else { 0.0 };
        slopes.push(format!("{name} {:.2e} (t {t:.2})", fit.slope));
    }

    let mut warm = tr.eval.engine.clone();
    warm.run_embedded(&tr.bench.validation, &tr.eval.validation_embeddings).unwrap();
    let future: Vec<Request> = tr
        .bench
        .test
        .iter()
        .enumerate()
        .map(|(i, r)| Request { arrival_index: i as u64 + 1, ..r.clone() })
        .collect();
    let vocab = tr.bench.dataset.vocabulary();
    let poisons = craft_poisons(&warm, &future, 1000, &vocab, &PollutionConfig::default()).unwrap();
    let fpr: Vec<f64> = [0, 10, 100, 1000]
        .iter()
        .map(|&n| run_pollution_with(&warm, &poisons[..n], &future).unwrap().0.fpr)
        .collect();
    let pollution = fpr[3] <= 2.0 * fpr[0];

    check(
        order && flat && pollution,
        format!(
            "mean ASR over {ATTACK_SEEDS} seeds at {MAX_ATTEMPTS} attempts: none {open:.3}, latent {lr:.3}, rewrite {rw:.3}, \
             standard {:.3} [{}]; slope over budgets {budgets:?}: {} [{}]; pollution FPR at n=0/10/100/1000: \
             {:.4}/{:.4}/{:.4}/{:.4} [{}]",
            mean_asr(&runs.standard),
            verdict(order),
            slopes.join(", "),
            verdict(flat),
            fpr[0],
            fpr[1],
            fpr[2],
            fpr[3],
            verdict(pollution)
        ),
    )
}

fn geometry_oracles(tr: &Trained, runs: &AttackRuns) -> Check {
    let mut packing_ok = true;
    for (i, (d, r, sep)) in packing_settings().into_iter().enumerate() {
        let bound = packing_limit(&GeometryParams { tau_int: sep.cos(), r_mal: r, d_int: d as u32 }).unwrap();
        let n = greedy_cap_packing(d, r, sep, PACKING_SAMPLES, i as u64);
        packing_ok &= bound.small_angle && n as f64 <= bound.value;
    }

    let train = tr.bench.dataset.split(Split::Train);
    let c = &tr.train_cfg;
    let init = IntentHead::random_with(c.head_dims, c.seed, c.init).unwrap();
    let before = intent_radius(&init, &train).unwrap().mean;
    let after = intent_radius(&tr.head, &train).unwrap().mean;
    let radius_ok = after < before;

    // Submissions spent on every fragment that got through.
    let mut pts = Vec::new();
    let mut per_index: Vec<Vec<f64>> = Vec::new();
    for r in &runs.repulsion {
        for a in &r.intents {
            let passed = if a.success_at.is_some() { a.attempts_per_fragment.len() } else { a.attempts_per_fragment.len() - 1 };
            for (i, &q) in a.attempts_per_fragment[..passed].iter().enumerate() {
                pts.push(((i + 1) as f64, (q as f64).ln()));
                if per_index.len() <= i {
                    per_index.resize(i + 1, Vec::new());
                }
                per_index[i].push(q as f64);
            }
        }
    }
    let fit = linear_fit(&pts).unwrap();
    let growth_ok = fit.slope > 0.0;
    let means: Vec<String> =
        per_index.iter().map(|v| format!("{:.2}", v.iter().sum::<f64>() / v.len() as f64)).collect();

    check(
        packing_ok && radius_ok && growth_ok,
        format!(
            "packing within limit on 20 settings [{}]; mean R_mal {before:.3} -> {after:.3} rad [{}]; \
             latent attempts per fragment index {means:?}, log-linear slope {:.4} [{}]",
            verdict(packing_ok),
            verdict(radius_ok),
            fit.slope,
            verdict(growth_ok)
        ),
    )
}

fn capacity(tr: &Trained) -> Check {
    let stream =
        make_stream(&tr.bench.dataset.split(Split::Test), &InterleavePolicy::SlowLoris { max_spread: None }, TEST_STREAM_SEED)
            .unwrap();
    let e = &tr.eval.engine;
    let emb = e.embed_all(stream.iter().map(|r| r.text.as_str())).unwrap();
    let ratios = [0.10, 0.15, 0.25, 0.5, 1.0];
    let (_, pts) = capacity_study(e, e.config(), &stream, &emb, &ratios, &GridSpec::default().tau_int).unwrap();
    let rel = |x: f64| pts.iter().find(|p| p.ratio == x).unwrap().relative_auc;
    let detail = pts.iter().map(|p| format!("{}: {:.4}", p.ratio, p.relative_auc)).collect::<Vec<_>>().join(", ");
    check(rel(1.0) == 1.0 && rel(0.25) > rel(0.10), format!("relative AUC by capacity ratio: {detail}"))
}

fn microbench(tr: &Trained) -> Check {
    let texts: Vec<String> = tr.bench.test.iter().map(|r| r.text.clone()).collect();
    let r = run_bench(&tr.eval.engine, &texts, &BenchConfig::default()).unwrap();
    let small = run_bench(&tr.eval.engine, &texts, &BenchConfig { store_size: 10_000, ..BenchConfig::default() }).unwrap();
    check(
        r.query_p50 <= 0.010 && r.max_rate >= 500.0,
        format!(
            "100k entries: query p50 {:.2} ms, p99 {:.2} ms, adjudication {:.2} ms, sustainable {:.0}/s \
             (10k entries: {:.0}/s)",
            r.query_p50 * 1e3,
            r.query_p99 * 1e3,
            r.service_mean * 1e3,
            r.max_rate,
            small.max_rate
        ),
    )
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        check(false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, c: Check| {
        failed += (!c.pass) as usize;
        println!("criterion {n:>2} {name}: {}  {}", verdict(c.pass), c.detail);
    };
    report(1, "gradient check", guarded(gradient_check));
    report(2, "loss oracle", guarded(loss_oracle_check));
    report(3, "store exactness", guarded(store_exactness));
    report(4, "eviction oracle", guarded(eviction_oracle));
    report(5, "causality", guarded(causality_suite));

    let trained = catch_unwind(train_benchmark);
    match &trained {
        Ok(tr) => {
            report(6, "efficacy", guarded(|| efficacy(tr)));
            report(7, "k trend", guarded(|| k_trend(tr)));
            report(8, "ablations", guarded(|| ablations(tr)));
            match catch_unwind(AssertUnwindSafe(|| run_attacks(tr))) {
                Ok(runs) => {
                    report(9, "attacks", guarded(|| attacks(tr, &runs)));
                    report(10, "geometry oracles", guarded(|| geometry_oracles(tr, &runs)));
                }
                Err(_) => {
                    report(9, "attacks", check(false, "attack runs panicked"));
                    report(10, "geometry oracles", check(false, "attack runs panicked"));
                }
            }
            report(11, "capacity", guarded(|| capacity(tr)));
            report(12, "microbenchmark", guarded(|| microbench(tr)));
        }
        Err(_) => {
            for (n, name) in [
                (6, "efficacy"),
                (7, "k trend"),
                (8, "ablations"),
                (9, "attacks"),
                (10, "geometry oracles"),
                (11, "capacity"),
                (12, "microbenchmark"),
            ] {
                report(n, name, check(false, "benchmark training panicked"));
            }
        }
    }
    println!("{} of 12 criteria passed in {:.0}s", 12 - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
