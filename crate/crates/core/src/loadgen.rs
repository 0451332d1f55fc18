//! Poisson arrivals, a single-server queue in virtual time, and latency
//! percentiles.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::types::{Decision, EmbeddingPair};
use crate::vector::{normalize_or_e0, to_f32};

/// Arrival times (seconds) of a Poisson process with the given rate.
pub fn poisson_arrivals(rate: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidConfig(format!("arrival rate {rate} must be positive and finite")));
    }
    let exp = Exp::new(rate).map_err(|e| Error::InvalidConfig(format!("arrival rate {rate}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    Ok((0..n)
        .map(|_| {
            t += exp.sample(&mut rng);
            t
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueStats {
    pub offered_rate: f64,
    /// Completions per second over the whole run.
    pub completion_rate: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of an ascending-sorted sample, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// FIFO single server: request `i` starts at `max(arrival_i, finish_{i-1})`
/// and takes `service[i % service.len()]` seconds.
pub fn simulate_queue(arrivals: &[f64], service: &[f64]) -> Result<QueueStats> {
    if arrivals.is_empty() || service.is_empty() {
        return Err(Error::InvalidConfig("queue simulation needs arrivals and service times".into()));
    }
    let mut finish = 0.0f64;
    let mut sojourn = Vec::with_capacity(arrivals.len());
    for (i, &a) in arrivals.iter().enumerate() {
        finish = finish.max(a) + service[i % service.len()];
        sojourn.push(finish - a);
    }
    sojourn.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = arrivals.len() as f64;
    Ok(QueueStats {
        offered_rate: n / arrivals[arrivals.len() - 1],
        completion_rate: n / finish,
        p50: percentile(&sojourn, 0.50),
        p95: percentile(&sojourn, 0.95),
        p99: percentile(&sojourn, 0.99),
    })
}

/// Largest arrival rate whose completion rate keeps up (within 1%), found by
/// bisection over virtual-time simulations.
pub fn max_sustainable_rate(service: &[f64], n: usize, seed: u64) -> Result<f64> {
    let mean = service.iter().sum::<f64>() / service.len().max(1) as f64;
    if !(mean > 0.0) {
        return Err(Error::InvalidConfig("service times must be positive".into()));
    }
    let keeps_up = |rate: f64| -> Result<bool> {
        let arrivals = poisson_arrivals(rate, n, seed)?;
        let s = simulate_queue(&arrivals, service)?;
        Ok(s.completion_rate >= 0.99 * s.offered_rate)
    };
    let (mut lo, mut hi) = (0.0, 2.0 / mean);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if keeps_up(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Wall-clock durations of `f` applied to every input.
pub fn time_each<T>(inputs: &[T], mut f: impl FnMut(&T)) -> Vec<Duration> {
    inputs
        .iter()
        .map(|x| {
            let t = Instant::now();
            f(x);
            t.elapsed()
        })
        .collect()
}

pub fn seconds(d: &[Duration]) -> Vec<f64> {
    d.iter().map(Duration::as_secs_f64).collect()
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize_or_e0(&mut v);
    to_f32(&v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Random history entries loaded into both stores.
    pub store_size: usize,
    pub queries: usize,
    /// Requests adjudicated end to end for the service-time sample.
    pub requests: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { store_size: 100_000, queries: 200, requests: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub store_size: usize,
    /// Intent-store top-1 query latency percentiles, seconds.
    pub query_p50: f64,
    pub query_p95: f64,
    pub query_p99: f64,
    /// Mean end-to-end adjudication time, seconds.
    pub service_mean: f64,
    /// Poisson arrival rate the measured service times sustain.
    pub max_rate: f64,
    /// Sojourn-time percentiles at 80% of `max_rate`, seconds.
    pub load: QueueStats,
}

impl BenchReport {
    pub fn table(&self) -> String {
        format!(
            "metric\tvalue\nstore_size\t{}\nquery_p50_ms\t{:.4}\nquery_p95_ms\t{:.4}\nquery_p99_ms\t{:.4}\n\
             service_mean_ms\t{:.4}\nmax_rate_per_s\t{:.1}\nload_p50_ms\t{:.4}\nload_p99_ms\t{:.4}\n",
            self.store_size,
            self.query_p50 * 1e3,
            self.query_p95 * 1e3,
            self.query_p99 * 1e3,
            self.service_mean * 1e3,
            self.max_rate,
            self.load.p50 * 1e3,
            self.load.p99 * 1e3,
        )
    }
}

/// Preloads a fresh copy of `template` with random history, times intent-store
/// queries and end-to-end adjudication of `texts`, then finds the sustainable
/// Poisson rate in virtual time.
pub fn run_bench(template: &Engine, texts: &[String], cfg: &BenchConfig) -> Result<BenchReport> {
    if texts.is_empty() || cfg.queries == 0 || cfg.requests == 0 {
        return Err(Error::InvalidConfig("bench needs texts, queries and requests".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (sem_dim, int_dim) = (template.frozen().out_dim(), template.head().dims().output);
    let history: Vec<(EmbeddingPair, Decision)> = (0..cfg.store_size)
        .map(|_| {
            let pair = EmbeddingPair { semantic: random_unit(sem_dim, &mut rng), intent: random_unit(int_dim, &mut rng) };
            (pair, Decision::Allow)
        })
        .collect();
    let mut engine = template.fresh_with(template.config().clone())?;
    engine.preload(&history)?;
    drop(history);

    let queries: Vec<Vec<f32>> = (0..cfg.queries).map(|_| random_unit(int_dim, &mut rng)).collect();
    let mut lat = seconds(&time_each(&queries, |q| {
        std::hint::black_box(engine.intent_store().query_top1(q).expect("dimension checked"));
    }));
    lat.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    let mut service = Vec::with_capacity(cfg.requests);
    for i in 0..cfg.requests {
        let text = &texts[i % texts.len()];
        let t = Instant::now();
        let pair = engine.embed(text)?;
        engine.adjudicate_embedded(i as u64 + 1, &pair)?;
        service.push(t.elapsed().as_secs_f64());
    }
    let service_mean = service.iter().sum::<f64>() / service.len() as f64;
    let max_rate = max_sustainable_rate(&service, 20_000, cfg.seed)?;
    let load = simulate_queue(&poisson_arrivals(0.8 * max_rate, 20_000, cfg.seed)?, &service)?;
    Ok(BenchReport {
        store_size: cfg.store_size,
        query_p50: percentile(&lat, 0.50),
        query_p95: percentile(&lat, 0.95),
        query_p99: percentile(&lat, 0.99),
        service_mean,
        max_rate,
        load,
    })
}
