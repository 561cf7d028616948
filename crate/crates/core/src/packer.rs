//! Random sample picker: builds fixed-length training sequences by drawing
//! duration-feasible samples from a duration-sorted pool.
//!
//! Each draw looks up, by binary search, the samples that fit in the time
//! remaining, picks one of the still-available ones uniformly, and removes
//! it. Drawing stops once the sequence holds at least `fill_ratio · L`
//! seconds. When too few samples fit, the pool is refreshed (all samples
//! become available again) and the draw is retried.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};

/// Minimum fill fraction of the context window.
pub const DEFAULT_FILL_RATIO: f64 = 0.8;

/// Index of one pool member back into the slice handed to [`prepare_pool`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub source_index: usize,
    pub id: String,
    pub duration_s: f64,
}

/// Fenwick tree over 0/1 availability flags.
#[derive(Debug, Clone)]
struct AliveTree {
    tree: Vec<u32>,
}

impl AliveTree {
    fn full(n: usize) -> Self {
        let mut tree = vec![0u32; n + 1];
        for i in 1..=n {
            tree[i] += 1;
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        AliveTree { tree }
    }

    fn remove(&mut self, index: usize) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] -= 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of alive entries among the first `len` positions.
    fn prefix(&self, len: usize) -> usize {
        let mut i = len;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i] as usize;
            i &= i - 1;
        }
        acc
    }

    /// Position of the `k`-th (0-based) alive entry.
    fn select(&self, mut k: usize) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && (self.tree[next] as usize) <= k {
                k -= self.tree[next] as usize;
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

/// Samples sorted ascending by duration, with availability flags.
#[derive(Debug, Clone)]
pub struct SortedPool {
    entries: Vec<PoolEntry>,
    durations: Vec<f64>,
    alive: Vec<bool>,
    alive_count: usize,
    tree: AliveTree,
    refreshes: usize,
}

impl SortedPool {
    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive_count
    }

    pub fn is_alive(&self, pos: usize) -> bool {
        self.alive[pos]
    }

    /// Number of refreshes performed over the pool's lifetime.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    /// Count of entries with duration ≤ `limit` (rightmost-match bisection).
    pub fn upper_bound(&self, limit: f64) -> usize {
        self.durations.partition_point(|&d| d <= limit)
    }

    /// Available entries among those with duration ≤ `limit`.
    pub fn feasible_alive(&self, limit: f64) -> usize {
        self.tree.prefix(self.upper_bound(limit))
    }

    pub fn refresh(&mut self) {
        self.alive.fill(true);
        self.alive_count = self.entries.len();
        self.tree = AliveTree::full(self.entries.len());
        self.refreshes += 1;
    }

    fn take(&mut self, pos: usize) {
        debug_assert!(self.alive[pos]);
        self.alive[pos] = false;
        self.alive_count -= 1;
        self.tree.remove(pos);
    }
}

/// Extract `samples[start..end]` and sort it by duration (stable).
pub fn prepare_pool(samples: &[Sample], start: usize, end: usize) -> Result<SortedPool> {
    if start >= end || end > samples.len() {
        return Err(Error::Empty("pool range is empty or out of bounds"));
    }
    let mut entries: Vec<PoolEntry> = samples[start..end]
        .iter()
        .enumerate()
        .map(|(i, s)| PoolEntry {
            source_index: start + i,
            id: s.id.clone(),
            duration_s: s.duration_s,
        })
        .collect();
    entries.sort_by(|a, b| a.duration_s.total_cmp(&b.duration_s));
    let n = entries.len();
    Ok(SortedPool {
        durations: entries.iter().map(|e| e.duration_s).collect(),
        entries,
        alive: vec![true; n],
        alive_count: n,
        tree: AliveTree::full(n),
        refreshes: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackerConfig {
    pub target_length_s: f64,
    pub fill_ratio: f64,
    pub refresh_threshold: usize,
}

impl Default for PackerConfig {
    fn default() -> Self {
        PackerConfig {
            target_length_s: 30.0,
            fill_ratio: DEFAULT_FILL_RATIO,
            refresh_threshold: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub sample_ids: Vec<String>,
    /// Indices into the slice the pool was prepared from, in draw order.
    pub source_indices: Vec<usize>,
    pub durations_s: Vec<f64>,
    pub total_duration_s: f64,
    pub target_length_s: f64,
    /// True if the pool was refreshed while this sequence was being drawn.
    pub refreshed: bool,
}

pub fn retrieve_sequence<R: Rng + ?Sized>(
    pool: &mut SortedPool,
    cfg: &PackerConfig,
    rng: &mut R,
) -> Result<PackedSequence> {
    let length = cfg.target_length_s;
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::OutOfRange(format!("target length {length}")));
    }
    if !(cfg.fill_ratio > 0.0 && cfg.fill_ratio <= 1.0) {
        return Err(Error::OutOfRange(format!("fill ratio {}", cfg.fill_ratio)));
    }
    let goal = cfg.fill_ratio * length;
    let mut seq = PackedSequence {
        sample_ids: Vec::new(),
        source_indices: Vec::new(),
        durations_s: Vec::new(),
        total_duration_s: 0.0,
        target_length_s: length,
        refreshed: false,
    };
    let mut just_refreshed = false;
    while seq.total_duration_s < goal {
        let remaining = length - seq.total_duration_s;
        let feasible = pool.feasible_alive(remaining);
        if feasible < cfg.refresh_threshold && !just_refreshed {
            pool.refresh();
            seq.refreshed = true;
            just_refreshed = true;
            continue;
        }
        if feasible == 0 {
            return Err(Error::Unsatisfiable(format!(
                "no sample fits in the remaining {remaining:.3}s (have {:.3}s of {length}s)",
                seq.total_duration_s
            )));
        }
        let pos = pool.tree.select(rng.random_range(0..feasible));
        pool.take(pos);
        let entry = &pool.entries[pos];
        seq.sample_ids.push(entry.id.clone());
        seq.source_indices.push(entry.source_index);
        seq.durations_s.push(entry.duration_s);
        seq.total_duration_s += entry.duration_s;
        just_refreshed = false;
    }
    Ok(seq)
}

/// Frame-level soft targets for a packed sequence: each member's scores are
/// tiled over its own frames; frames past the last member are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub targets: Vec<[f32; 8]>,
    pub mask: Vec<bool>,
}

/// `spans` holds `(start_s, dur_s, scores)` per member in sequence order.
pub fn frame_targets(spans: &[(f64, f64, [f32; 8])], n_frames: usize, frame_hop_s: f64) -> FrameTargets {
    let mut targets = vec![[0.0f32; 8]; n_frames];
    let mut mask = vec![false; n_frames];
    for (start, dur, scores) in spans {
        let a = ((start / frame_hop_s).round() as usize).min(n_frames);
        let b = (((start + dur) / frame_hop_s).round() as usize).min(n_frames);
        for f in a..b {
            targets[f] = *scores;
            mask[f] = true;
        }
    }
    FrameTargets { targets, mask }
}
