//! Causal request streams: interleaving policies and the request line format.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{from_json, to_json, IntentDataset};
use crate::error::{Error, Result};
use crate::types::{IntentId, Request, Role};

/// How fragments are interleaved with background traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InterleavePolicy {
    /// Uniformly random interleaving.
    UniformShuffle,
    /// Spread each malicious intent's fragments as far apart as the stream
    /// allows. `max_spread` caps the number of requests between consecutive
    /// fragments.
    SlowLoris { max_spread: Option<usize> },
    /// Malicious fragments are emitted intent by intent, the i-th one preceded
    /// by `gaps[i % gaps.len()]` background requests.
    Adversarial { gaps: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Malicious(IntentId),
    Benign(IntentId),
}

fn group_key(role: Role) -> Option<GroupKey> {
    match role {
        Role::MaliciousFragment(id) => Some(GroupKey::Malicious(id)),
        Role::BenignFragment(id) => Some(GroupKey::Benign(id)),
        _ => None,
    }
}

/// Builds a stream with fragments kept in dataset order within each intent.
pub fn make_stream(
    dataset: &IntentDataset,
    policy: &InterleavePolicy,
    seed: u64,
) -> Result<Vec<Request>> {
    make_stream_with(dataset, policy, seed, false)
}

/// Like [`make_stream`]; `shuffle_within_intent` randomly permutes each
/// intent's fragments instead of preserving their order.
pub fn make_stream_with(
    dataset: &IntentDataset,
    policy: &InterleavePolicy,
    seed: u64,
    shuffle_within_intent: bool,
) -> Result<Vec<Request>> {
    // Anchors never enter a stream.
    let streamable: Vec<usize> = (0..dataset.items.len())
        .filter(|&i| !matches!(dataset.items[i].role, Role::MaliciousAnchor(_)))
        .collect();
    if streamable.is_empty() {
        return Err(Error::EmptyStreamSource);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = match policy {
        InterleavePolicy::UniformShuffle => {
            let mut order = streamable.clone();
            order.shuffle(&mut rng);
            order
        }
        InterleavePolicy::SlowLoris { max_spread } => {
            slow_loris(dataset, &streamable, *max_spread, &mut rng)
        }
        InterleavePolicy::Adversarial { gaps } => adversarial(dataset, &streamable, gaps, &mut rng),
    };
    let order = restore_intent_order(dataset, order, shuffle_within_intent, &mut rng);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(pos, idx)| {
            let item = &dataset.items[idx];
            Request {
                id: idx as u64,
                text: item.text.clone(),
                role: item.role,
                arrival_index: pos as u64 + 1,
            }
        })
        .collect())
}

/// Reassigns each intent's fragments to the slots that intent occupies so
/// that its fragments appear in dataset order (or a random order).
fn restore_intent_order(
    dataset: &IntentDataset,
    mut order: Vec<usize>,
    shuffle_within_intent: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut slots: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (pos, &idx) in order.iter().enumerate() {
        if let Some(key) = group_key(dataset.items[idx].role) {
            slots.entry(key).or_default().push(pos);
        }
    }
    for positions in slots.values() {
        let mut members: Vec<usize> = positions.iter().map(|&p| order[p]).collect();
        members.sort_unstable();
        if shuffle_within_intent {
            members.shuffle(rng);
        }
        for (&p, m) in positions.iter().zip(members) {
            order[p] = m;
        }
    }
    order
}

fn split_background(dataset: &IntentDataset, streamable: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut malicious: BTreeMap<IntentId, Vec<usize>> = BTreeMap::new();
    let mut first_seen: Vec<IntentId> = Vec::new();
    let mut background = Vec::new();
    for &i in streamable {
        match dataset.items[i].role {
            Role::MaliciousFragment(id) => {
                if !malicious.contains_key(&id) {
                    first_seen.push(id);
                }
                malicious.entry(id).or_default().push(i);
            }
            _ => background.push(i),
        }
    }
    let groups = first_seen.iter().map(|id| malicious[id].clone()).collect();
    (groups, background)
}

fn slow_loris(
    dataset: &IntentDataset,
    streamable: &[usize],
    max_spread: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let total = streamable.len();
    let (groups, mut background) = split_background(dataset, streamable);
    background.shuffle(rng);
    let mut slots: Vec<Option<usize>> = vec![None; total];
    for (m, frags) in groups.iter().enumerate() {
        let n = frags.len();
        let start = m.min(total - 1);
        let mut gap = if n > 1 { (total - 1).saturating_sub(m) / (n - 1) } else { 0 };
        if let Some(cap) = max_spread {
            gap = gap.min(cap + 1);
        }
        gap = gap.max(1);
        let mut placed = Vec::with_capacity(n);
        for j in 0..n {
            let want = (start + j * gap).min(total - 1);
            let pos = nearest_free(&slots, want);
            slots[pos] = Some(usize::MAX);
            placed.push(pos);
        }
        placed.sort_unstable();
        for (pos, &idx) in placed.into_iter().zip(frags) {
            slots[pos] = Some(idx);
        }
    }
    let mut bg = background.into_iter();
    slots
        .into_iter()
        .map(|s| s.unwrap_or_else(|| bg.next().expect("slot count matches item count")))
        .collect()
}

fn nearest_free(slots: &[Option<usize>], want: usize) -> usize {
    (want..slots.len())
        .chain((0..want).rev())
        .find(|&p| slots[p].is_none())
        .expect("a free slot exists")
}

fn adversarial(
    dataset: &IntentDataset,
    streamable: &[usize],
    gaps: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let (groups, mut background) = split_background(dataset, streamable);
    background.shuffle(rng);
    let mut bg = background.into_iter();
    let mut out = Vec::with_capacity(streamable.len());
    for (i, idx) in groups.into_iter().flatten().enumerate() {
        let gap = if gaps.is_empty() { 0 } else { gaps[i % gaps.len()] };
        out.extend(bg.by_ref().take(gap));
        out.push(idx);
    }
    out.extend(bg);
    out
}

#[derive(Serialize, Deserialize)]
struct RequestRecord {
    id: u64,
    text: String,
    role: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    intent_id: Option<IntentId>,
    arrival_index: u64,
}

/// Serializes one request as a single JSON object line (no trailing newline).
pub fn request_to_line(r: &Request) -> Result<String> {
    to_json(&RequestRecord {
        id: r.id,
        text: r.text.clone(),
        role: r.role.name().to_owned(),
        intent_id: r.role.intent_id(),
        arrival_index: r.arrival_index,
    })
}

pub fn request_from_line(line: &str) -> Result<Request> {
    let rec: RequestRecord = from_json(line)?;
    Ok(Request {
        id: rec.id,
        text: rec.text,
        role: Role::from_parts(&rec.role, rec.intent_id)?,
        arrival_index: rec.arrival_index,
    })
}

/// Checks the stream invariants: arrival indices dense from 1, no anchors.
pub fn validate_stream(stream: &[Request]) -> Result<()> {
    for (pos, r) in stream.iter().enumerate() {
        if r.arrival_index != pos as u64 + 1 {
            return Err(Error::Format(format!(
                "arrival index {} at position {}",
                r.arrival_index,
                pos + 1
            )));
        }
        if matches!(r.role, Role::MaliciousAnchor(_)) {
            return Err(Error::Format("anchor inside an evaluation stream".into()));
        }
        if r.text.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
    }
    Ok(())
}

/// Re-submits a `fraction` of the benign requests verbatim at random later
/// positions. Copies get fresh ids after the largest existing one; arrival
/// indices are renumbered.
pub fn with_benign_duplicates(stream: &[Request], fraction: f64, seed: u64) -> Result<Vec<Request>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("duplicate fraction {fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut benign: Vec<usize> = (0..stream.len()).filter(|&i| stream[i].role.is_benign()).collect();
    benign.shuffle(&mut rng);
    let n = (fraction * benign.len() as f64).round() as usize;
    let mut chosen = benign[..n].to_vec();
    chosen.sort_unstable();
    // Copies land after the slot they are keyed to.
    let mut after: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &chosen {
        let slot = rng.random_range(i..stream.len());
        after.entry(slot).or_default().push(i);
    }
    let mut next_id = stream.iter().map(|r| r.id + 1).max().unwrap_or(0);
    let mut out = Vec::with_capacity(stream.len() + n);
    for (pos, r) in stream.iter().enumerate() {
        out.push(r.clone());
        for &src in after.get(&pos).map(Vec::as_slice).unwrap_or(&[]) {
            out.push(Request { id: next_id, ..stream[src].clone() });
            next_id += 1;
        }
    }
    for (pos, r) in out.iter_mut().enumerate() {
        r.arrival_index = pos as u64 + 1;
    }
    Ok(out)
}
