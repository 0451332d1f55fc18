//! Exact in-memory cosine store over unit vectors with clustering-LRU eviction.
//!
//! Entries live in one contiguous row-major `f32` matrix kept sorted by id, so
//! the first strict maximum found by a scan is also the smallest-id winner.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::types::Decision;
use crate::vector::{dot, norm_f32};

const STORE_MAGIC: &[u8; 4] = b"TWGS";
const STORE_VERSION: u32 = 1;
const UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Unbounded,
    Bounded(usize),
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Unbounded => f.write_str("unbounded"),
            Capacity::Bounded(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreConfig {
    pub capacity: Capacity,
    pub merge_similarity: f64,
    pub chunk_size: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { capacity: Capacity::Unbounded, merge_similarity: 0.9, chunk_size: 4096 }
    }
}

impl StoreConfig {
    pub fn bounded(capacity: usize) -> Self {
        StoreConfig { capacity: Capacity::Bounded(capacity), ..StoreConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Capacity::Bounded(0) = self.capacity {
            return Err(Error::InvalidConfig("store capacity must be at least 1".into()));
        }
        if !(self.merge_similarity > 0.0 && self.merge_similarity < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "merge_similarity {} outside (0, 1)",
                self.merge_similarity
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub id: u64,
    pub vector: Vec<f32>,
    pub decision: Decision,
    pub last_match_time: u64,
    pub merge_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AboveTau {
    pub best: f64,
    pub best_id: Option<u64>,
    pub ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvictionStats {
    pub passes: u64,
    pub merged_groups: u64,
    pub lru_evictions: u64,
}

#[derive(Debug, Clone)]
pub struct VectorStore {
    dim: usize,
    config: StoreConfig,
    ids: Vec<u64>,
    data: Vec<f32>,
    decisions: Vec<Decision>,
    times: Vec<u64>,
    merge_counts: Vec<u64>,
    // Entries that may still have an above-threshold neighbour. Pairs of clean
    // entries are known to sit at or below `merge_similarity`.
    dirty: Vec<bool>,
    next_id: u64,
    total_inserts: u64,
    evicted_mass: u64,
    stats: EvictionStats,
}

fn check_unit(v: &[f32]) -> Result<()> {
    let n = norm_f32(v);
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitVector { norm: n });
    }
    Ok(())
}

impl VectorStore {
    pub fn new(dim: usize, config: StoreConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidConfig("store dimension must be positive".into()));
        }
        Ok(VectorStore {
            dim,
            config,
            ids: Vec::new(),
            data: Vec::new(),
            decisions: Vec::new(),
            times: Vec::new(),
            merge_counts: Vec::new(),
            dirty: Vec::new(),
            next_id: 0,
            total_inserts: 0,
            evicted_mass: 0,
            stats: EvictionStats::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of insert calls ever made (logical request count).
    pub fn total_inserts(&self) -> u64 {
        self.total_inserts
    }

    /// Mass dropped by LRU fallback evictions.
    pub fn evicted_mass(&self) -> u64 {
        self.evicted_mass
    }

    pub fn stored_mass(&self) -> u64 {
        self.merge_counts.iter().sum()
    }

    pub fn stats(&self) -> EvictionStats {
        self.stats
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    fn position(&self, id: u64) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn get(&self, id: u64) -> Option<StoreEntry> {
        self.position(id).map(|p| self.entry_at(p))
    }

    pub fn decision_of(&self, id: u64) -> Option<Decision> {
        self.position(id).map(|p| self.decisions[p])
    }

    fn entry_at(&self, p: usize) -> StoreEntry {
        StoreEntry {
            id: self.ids[p],
            vector: self.vector(p).to_vec(),
            decision: self.decisions[p],
            last_match_time: self.times[p],
            merge_count: self.merge_counts[p],
        }
    }

    /// Entries in id order.
    pub fn entries(&self) -> Vec<StoreEntry> {
        (0..self.len()).map(|p| self.entry_at(p)).collect()
    }

    fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: q.len() });
        }
        check_unit(q)
    }

    /// Calls `f(position, similarity)` for every entry, scanning the matrix
    /// `chunk_size` rows at a time.
    #[inline]
    fn scan(&self, q: &[f32], mut f: impl FnMut(usize, f64)) {
        let rows_per_chunk = self.config.chunk_size;
        for (c, chunk) in self.data.chunks(rows_per_chunk * self.dim).enumerate() {
            let base = c * rows_per_chunk;
            for (r, row) in chunk.chunks_exact(self.dim).enumerate() {
                f(base + r, dot(q, row));
            }
        }
    }

    /// Exact maximum similarity and its entry. An empty store yields
    /// `(f64::NEG_INFINITY, None)`.
    pub fn query_top1(&self, q: &[f32]) -> Result<(f64, Option<u64>)> {
        self.check_query(q)?;
        let mut best = f64::NEG_INFINITY;
        let mut at = None;
        self.scan(q, |p, s| {
            if s > best || at.is_none() {
                best = s;
                at = Some(p);
            }
        });
        Ok((best, at.map(|p| self.ids[p])))
    }

    /// Number of entries whose similarity to `q` is strictly above `tau`.
    pub fn query_topk_count(&self, q: &[f32], tau: f64) -> Result<usize> {
        self.check_query(q)?;
        let mut n = 0;
        self.scan(q, |_, s| n += (s > tau) as usize);
        Ok(n)
    }

    /// Ids of entries strictly above `tau`, in id order.
    pub fn ids_above(&self, q: &[f32], tau: f64) -> Result<Vec<u64>> {
        self.check_query(q)?;
        let mut out = Vec::new();
        self.scan(q, |p, s| {
            if s > tau {
                out.push(self.ids[p]);
            }
        });
        Ok(out)
    }

    /// Top-1 match and the ids strictly above `tau`, from a single scan.
    pub fn query_above(&self, q: &[f32], tau: f64) -> Result<AboveTau> {
        self.check_query(q)?;
        let mut out = AboveTau { best: f64::NEG_INFINITY, best_id: None, ids: Vec::new() };
        self.scan(q, |p, s| {
            if s > out.best || out.best_id.is_none() {
                out.best = s;
                out.best_id = Some(self.ids[p]);
            }
            if s > tau {
                out.ids.push(self.ids[p]);
            }
        });
        Ok(out)
    }

    /// The `k` largest similarities in descending order (fewer if the store is smaller).
    pub fn top_k_similarities(&self, q: &[f32], k: usize) -> Result<Vec<f64>> {
        self.check_query(q)?;
        let mut top: Vec<f64> = Vec::with_capacity(k + 1);
        if k == 0 {
            return Ok(top);
        }
        self.scan(q, |_, s| {
            if top.len() < k || s > top[top.len() - 1] {
                let at = top.partition_point(|&x| x >= s);
                top.insert(at, s);
                top.truncate(k);
            }
        });
        Ok(top)
    }

    /// Appends an entry, running [`evict_merge`](Self::evict_merge) first when a
    /// bounded store is full.
    pub fn insert(&mut self, vector: &[f32], decision: Decision, time: u64) -> Result<u64> {
        self.check_query(vector)?;
        if let Capacity::Bounded(cap) = self.config.capacity {
            while self.len() >= cap {
                self.evict_merge()?;
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        self.total_inserts += 1;
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        self.decisions.push(decision);
        self.times.push(time);
        self.merge_counts.push(1);
        self.dirty.push(true);
        Ok(id)
    }

    pub fn touch(&mut self, id: u64, time: u64) -> Result<()> {
        let p = self.position(id).ok_or(Error::UnknownEntry(id))?;
        if time < self.times[p] {
            return Err(Error::TimeRegression { time, last: self.times[p] });
        }
        self.times[p] = time;
        Ok(())
    }

    /// Single-linkage groups (similarity strictly above `merge_similarity`) of
    /// size two or more, each as member positions in ascending order.
    fn merge_groups(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let thr = self.config.merge_similarity;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for i in 0..n {
            if !self.dirty[i] {
                continue;
            }
            let vi = self.vector(i);
            for j in 0..n {
                // Dirty-dirty pairs are visited once, from the smaller index.
                if j == i || (self.dirty[j] && j < i) {
                    continue;
                }
                if dot(vi, self.vector(j)) > thr {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = find(&mut parent, i);
            groups[r].push(i);
        }
        groups.into_iter().filter(|g| g.len() >= 2).collect()
    }

    /// Frees space in a full store. Every mergeable group collapses into its
    /// representative; with nothing to merge, the least recently matched entry
    /// is dropped. Returns the net size reduction.
    pub fn evict_merge(&mut self) -> Result<usize> {
        let full = match self.config.capacity {
            Capacity::Bounded(cap) => self.len() >= cap,
            Capacity::Unbounded => false,
        };
        if !full {
            return Err(Error::PrematureEviction {
                len: self.len(),
                capacity: self.config.capacity.to_string(),
            });
        }
        self.stats.passes += 1;
        let groups = self.merge_groups();
        if groups.is_empty() {
            let victim = (0..self.len())
                .min_by_key(|&p| (self.times[p], self.ids[p]))
                .expect("full store is nonempty");
            self.evicted_mass += self.merge_counts[victim];
            self.stats.lru_evictions += 1;
            self.remove_positions(&[victim]);
            self.dirty.iter_mut().for_each(|d| *d = false);
            return Ok(1);
        }
        let before = self.len();
        let mut reps = Vec::with_capacity(groups.len());
        for g in &groups {
            let mut acc = vec![0.0f64; self.dim];
            for &p in g {
                for (a, &x) in acc.iter_mut().zip(self.vector(p)) {
                    *a += x as f64;
                }
            }
            crate::vector::normalize_or_e0(&mut acc);
            reps.push(StoreEntry {
                id: self.ids[g[0]],
                vector: crate::vector::to_f32(&acc),
                decision: if g.iter().any(|&p| self.decisions[p].is_block()) {
                    Decision::Block
                } else {
                    Decision::Allow
                },
                last_match_time: g.iter().map(|&p| self.times[p]).max().unwrap_or(0),
                merge_count: g.iter().map(|&p| self.merge_counts[p]).sum(),
            });
        }
        self.stats.merged_groups += groups.len() as u64;
        // Survivors are singletons of this pass and therefore clean.
        self.dirty.iter_mut().for_each(|d| *d = false);
        let mut gone: Vec<usize> = groups.into_iter().flatten().collect();
        gone.sort_unstable();
        self.remove_positions(&gone);
        for rep in reps {
            let at = self.ids.partition_point(|&id| id < rep.id);
            self.insert_at(at, rep, true);
        }
        Ok(before - self.len())
    }

    fn remove_positions(&mut self, sorted: &[usize]) {
        let dim = self.dim;
        let mut skip = sorted.iter().peekable();
        let mut w = 0;
        for r in 0..self.len() {
            if skip.peek() == Some(&&r) {
                skip.next();
                continue;
            }
            if w != r {
                self.ids[w] = self.ids[r];
                self.decisions[w] = self.decisions[r];
                self.times[w] = self.times[r];
                self.merge_counts[w] = self.merge_counts[r];
                self.dirty[w] = self.dirty[r];
                self.data.copy_within(r * dim..(r + 1) * dim, w * dim);
            }
            w += 1;
        }
        self.ids.truncate(w);
        self.decisions.truncate(w);
        self.times.truncate(w);
        self.merge_counts.truncate(w);
        self.dirty.truncate(w);
        self.data.truncate(w * dim);
    }

    fn insert_at(&mut self, at: usize, e: StoreEntry, dirty: bool) {
        self.ids.insert(at, e.id);
        self.decisions.insert(at, e.decision);
        self.times.insert(at, e.last_match_time);
        self.merge_counts.insert(at, e.merge_count);
        self.dirty.insert(at, dirty);
        let off = at * self.dim;
        self.data.splice(off..off, e.vector);
    }

    /// `TWGS`, version, entry count (u64), dimension (u32), then per entry:
    /// id (u64), decision byte, last match time (u64), merge count (u64) and
    /// the raw `f32` vector. Little-endian throughout.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + self.len() * (25 + 4 * self.dim));
        buf.extend_from_slice(STORE_MAGIC);
        buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for p in 0..self.len() {
            buf.extend_from_slice(&self.ids[p].to_le_bytes());
            buf.push(self.decisions[p].is_block() as u8);
            buf.extend_from_slice(&self.times[p].to_le_bytes());
            buf.extend_from_slice(&self.merge_counts[p].to_le_bytes());
            for x in self.vector(p) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R, config: StoreConfig) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(4)? != STORE_MAGIC {
            return Err(Error::Format("bad store snapshot magic".into()));
        }
        let version = cur.u32()?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported store snapshot version {version}")));
        }
        let count = cur.u64()? as usize;
        let dim = cur.u32()? as usize;
        let mut store = VectorStore::new(dim, config)?;
        for _ in 0..count {
            let id = cur.u64()?;
            let decision = match cur.take(1)?[0] {
                0 => Decision::Allow,
                1 => Decision::Block,
                b => return Err(Error::Format(format!("bad decision byte {b}"))),
            };
            let last_match_time = cur.u64()?;
            let merge_count = cur.u64()?;
            let vector: Vec<f32> = cur
                .take(4 * dim)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if store.ids.last().is_some_and(|&last| last >= id) {
                return Err(Error::Format("store snapshot ids not increasing".into()));
            }
            if merge_count == 0 {
                return Err(Error::Format("zero merge count in store snapshot".into()));
            }
            let at = store.len();
            store.insert_at(at, StoreEntry { id, vector, decision, last_match_time, merge_count }, true);
            store.next_id = id + 1;
            store.total_inserts += merge_count;
        }
        if cur.at != bytes.len() {
            return Err(Error::Format("trailing bytes in store snapshot".into()));
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated store snapshot".into()));
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
