//! Regression tree grower shared by the bagged forest and the boosting
//! machine. Split search runs on pre-binned feature codes (quantile bins,
//! exact when a feature has few distinct values) with integer row
//! multiplicities, which keeps per-tree cost low enough for the Monte Carlo
//! experiment scales used here.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MAX_BINS: usize = 32;

/// Column-major feature storage plus row-major bin codes and per-bin value
/// ranges.
pub struct BinnedFeatures {
    pub n: usize,
    pub d: usize,
    /// Raw values, `cols[f * n + i]`.
    pub cols: Vec<f64>,
    /// Bin code per (row, feature), `codes[i * d + f]`; row-major so a
    /// node-row visit touches one cache line per row.
    pub codes: Vec<u8>,
    /// Bins per feature.
    pub bins: Vec<u8>,
    /// Per feature: for each bin, the largest raw value it contains.
    pub bin_upper: Vec<Vec<f64>>,
    /// Per feature: for each bin, the smallest raw value it contains.
    pub bin_lower: Vec<Vec<f64>>,
}

impl BinnedFeatures {
    /// Build from row-major rows (`rows[i * d + j]`).
    pub fn from_rows(rows: &[f64], n: usize, d: usize) -> BinnedFeatures {
        let mut cols = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                cols[j * n + i] = rows[i * d + j];
            }
        }
        Self::from_cols(cols, n, d)
    }

    pub fn from_cols(cols: Vec<f64>, n: usize, d: usize) -> BinnedFeatures {
        let mut codes = vec![0u8; n * d];
        let mut bins = Vec::with_capacity(d);
        let mut bin_upper = Vec::with_capacity(d);
        let mut bin_lower = Vec::with_capacity(d);
        let mut sorted: Vec<f64> = Vec::with_capacity(n);
        for f in 0..d {
            let col = &cols[f * n..(f + 1) * n];
            sorted.clear();
            sorted.extend_from_slice(col);
            sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            sorted.dedup();
            let uniq = sorted.len();

            // Cut points: one bin per distinct value when few, otherwise
            // evenly spaced quantiles of the distinct values.
            let mut cuts: Vec<f64> = if uniq <= MAX_BINS {
                sorted.clone()
            } else {
                (1..=MAX_BINS)
                    .map(|b| sorted[(b * uniq / MAX_BINS).min(uniq) - 1])
                    .collect()
            };
            cuts.dedup();

            let nb = cuts.len();
            let mut upper = vec![f64::NEG_INFINITY; nb];
            let mut lower = vec![f64::INFINITY; nb];
            for i in 0..n {
                let v = col[i];
                // First cut >= v.
                let b = cuts.partition_point(|&c| c < v).min(nb - 1);
                codes[i * d + f] = b as u8;
                if v > upper[b] {
                    upper[b] = v;
                }
                if v < lower[b] {
                    lower[b] = v;
                }
            }
            bins.push(nb as u8);
            bin_upper.push(upper);
            bin_lower.push(lower);
        }
        BinnedFeatures {
            n,
            d,
            cols,
            codes,
            bins,
            bin_upper,
            bin_lower,
        }
    }

    /// Split threshold halfway between bin `b`'s occupied top and the next
    /// occupied bin's bottom, so raw-value prediction reproduces the
    /// training partition exactly.
    fn threshold(&self, f: usize, b: usize) -> f64 {
        let upper = self.bin_upper[f][b];
        let lower = self.bin_lower[f][b + 1..]
            .iter()
            .copied()
            .find(|v| v.is_finite())
            .unwrap_or(upper);
        0.5 * (upper + lower)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    /// Levels below the root; `usize::MAX` grows until purity/min_node.
    pub max_depth: usize,
    /// Nodes with at most this many distinct rows become leaves.
    pub min_node: usize,
    /// Features sampled per node.
    pub mtry: usize,
    /// Record per-row leaf ordinals (needed by boosting, skipped by forests).
    pub track_leaves: bool,
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

/// A fitted regression tree over raw feature rows.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Predict for row `i` of a column-major matrix without materializing
    /// the row.
    pub fn predict_from_cols(&self, cols: &[f64], n: usize, i: usize) -> f64 {
        let mut idx = 0usize;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if cols[feature as usize * n + i] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    /// Leaf index (dense, 0-based) in node-creation order.
    fn leaf_ordinal(&self) -> Vec<u32> {
        let mut ord = vec![u32::MAX; self.nodes.len()];
        let mut next = 0u32;
        for (i, n) in self.nodes.iter().enumerate() {
            if matches!(n, Node::Leaf { .. }) {
                ord[i] = next;
                next += 1;
            }
        }
        ord
    }

    /// Overwrite leaf values by dense leaf ordinal.
    pub fn set_leaf_values(&mut self, values: &[f64]) {
        let ord = self.leaf_ordinal();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if let Node::Leaf { value } = node {
                *value = values[ord[i] as usize];
            }
        }
    }
}

struct NodeWork {
    node_idx: u32,
    start: u32,
    len: u32,
    depth: u32,
    /// Pool slot of a pre-computed histogram (sibling subtraction), or -1.
    hist_slot: i32,
    sum_cnt: u64,
    sum_wg: f64,
}

/// Reusable growing buffers; one per fitting context, never shared across
/// threads.
pub struct TreeScratch {
    rows: Vec<u32>,
    queue: Vec<NodeWork>,
    feat_pool: Vec<u32>,
    /// Per-candidate-feature histograms: bin counts and gradient sums.
    hist_cnt: Vec<u32>,
    hist_wg: Vec<f64>,
    /// Arena of per-node full-feature histograms for sibling subtraction.
    pool_cnt: Vec<u32>,
    pool_wg: Vec<f64>,
    free_slots: Vec<u32>,
    /// Slots handed out so far in the current tree; the arena itself is
    /// reused across trees without re-zeroing (callers always refill).
    next_fresh: u32,
    swap: Vec<u32>,
    /// Leaf ordinal per active-row position (parallel to `rows`).
    pub leaf_of_row: Vec<u32>,
    leaf_starts: Vec<(u32, u32, u32)>,
}

impl TreeScratch {
    pub fn new() -> TreeScratch {
        TreeScratch {
            rows: Vec::new(),
            queue: Vec::new(),
            feat_pool: Vec::new(),
            hist_cnt: Vec::new(),
            hist_wg: Vec::new(),
            pool_cnt: Vec::new(),
            pool_wg: Vec::new(),
            free_slots: Vec::new(),
            next_fresh: 0,
            swap: Vec::new(),
            leaf_of_row: Vec::new(),
            leaf_starts: Vec::new(),
        }
    }

    /// Active rows of the last grown tree (positions parallel to
    /// `leaf_of_row`).
    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    fn take_slot(&mut self, stride: usize) -> u32 {
        if let Some(s) = self.free_slots.pop() {
            return s;
        }
        let s = self.next_fresh;
        self.next_fresh += 1;
        if (s as usize + 1) * stride > self.pool_wg.len() {
            self.pool_cnt.resize((s as usize + 1) * stride, 0);
            self.pool_wg.resize((s as usize + 1) * stride, 0.0);
        }
        s
    }
}

impl Default for TreeScratch {
    fn default() -> Self {
        Self::new()
    }
}

/// Accumulate per-bin (count, gradient-sum) histograms for the selected
/// features over a row set. `hist_*` hold `sel.len()` consecutive blocks of
/// MAX_BINS.
#[inline]
fn accumulate(
    hist_cnt: &mut [u32],
    hist_wg: &mut [f64],
    rows: &[u32],
    codes: &[u8],
    d: usize,
    counts: &[u32],
    wg: &[f64],
    sel: &[u32],
) {
    for &r in rows {
        let ri = r as usize;
        let ci = counts[ri];
        let gi = wg[ri];
        let rc = &codes[ri * d..ri * d + d];
        // Fixed-size chunks let the masked bin index skip bounds checks.
        let cnt_chunks = hist_cnt.chunks_exact_mut(MAX_BINS);
        let wg_chunks = hist_wg.chunks_exact_mut(MAX_BINS);
        for ((&f, hc), hw) in sel.iter().zip(cnt_chunks).zip(wg_chunks) {
            let b = (rc[f as usize] as usize) & (MAX_BINS - 1);
            hc[b] += ci;
            hw[b] += gi;
        }
    }
}

/// Best (feature, last-left bin) over the selected features given
/// accumulated histograms; ties keep the earliest candidate.
#[inline]
fn best_split(
    hist_cnt: &[u32],
    hist_wg: &[f64],
    feats: &BinnedFeatures,
    sel: &[u32],
    sum_cnt: u64,
    sum_wg: f64,
    parent_score: f64,
) -> Option<(usize, usize)> {
    let mut best_gain = 0.0f64;
    let mut best: Option<(usize, usize)> = None;
    for (t, &f) in sel.iter().enumerate() {
        let f = f as usize;
        let bins = feats.bins[f] as usize;
        if bins < 2 {
            continue;
        }
        let base = t * MAX_BINS;
        let mut lc = 0u64;
        let mut lwg = 0.0;
        for b in 0..bins - 1 {
            lc += hist_cnt[base + b] as u64;
            lwg += hist_wg[base + b];
            if lc == 0 {
                continue;
            }
            if lc >= sum_cnt {
                break;
            }
            let rwg = sum_wg - lwg;
            let gain =
                lwg * lwg / lc as f64 + rwg * rwg / (sum_cnt - lc) as f64 - parent_score;
            if gain > best_gain + 1e-12 {
                best_gain = gain;
                best = Some((f, b));
            }
        }
    }
    best
}

/// Grow a least-squares tree on per-row gradient sums `wg` (already weighted
/// by the integer multiplicities `counts`) over the given active rows.
pub fn grow(
    feats: &BinnedFeatures,
    wg: &[f64],
    counts: &[u32],
    active: &[u32],
    cfg: &TreeConfig,
    rng: &mut ChaCha8Rng,
    scratch: &mut TreeScratch,
) -> Tree {
    let d = feats.d;
    let mtry = cfg.mtry.clamp(1, d);
    // Full-feature nodes reuse parent histograms: scan only the smaller
    // child and derive the sibling by subtraction. Requires a fixed feature
    // set, so it applies exactly when every feature is a candidate.
    let subtract = mtry == d;
    let stride = d * MAX_BINS;

    scratch.rows.clear();
    scratch.rows.extend_from_slice(active);
    scratch.queue.clear();
    scratch.leaf_starts.clear();
    scratch.free_slots.clear();
    scratch.next_fresh = 0;
    if scratch.feat_pool.len() != d {
        scratch.feat_pool = (0..d as u32).collect();
    }
    scratch.hist_cnt.resize(mtry * MAX_BINS, 0);
    scratch.hist_wg.resize(mtry * MAX_BINS, 0.0);

    let mut nodes: Vec<Node> = Vec::with_capacity(64);
    let mut n_leaves = 0usize;

    let mut sum_cnt = 0u64;
    let mut sum_wg = 0.0;
    for &r in &scratch.rows {
        sum_cnt += counts[r as usize] as u64;
        sum_wg += wg[r as usize];
    }

    nodes.push(Node::Leaf { value: 0.0 });
    scratch.queue.push(NodeWork {
        node_idx: 0,
        start: 0,
        len: scratch.rows.len() as u32,
        depth: 0,
        hist_slot: -1,
        sum_cnt,
        sum_wg,
    });

    while let Some(work) = scratch.queue.pop() {
        let mean = if work.sum_cnt > 0 {
            work.sum_wg / work.sum_cnt as f64
        } else {
            0.0
        };

        let can_split = (work.depth as usize) < cfg.max_depth
            && (work.len as usize) > cfg.min_node
            && work.len >= 2;
        if !can_split {
            nodes[work.node_idx as usize] = Node::Leaf { value: mean };
            n_leaves += 1;
            if cfg.track_leaves {
                scratch.leaf_starts.push((work.start, work.len, work.node_idx));
            }
            if work.hist_slot >= 0 {
                scratch.free_slots.push(work.hist_slot as u32);
            }
            continue;
        }

        let node_range = work.start as usize..(work.start + work.len) as usize;
        let parent_score = work.sum_wg * mean;
        let (best, node_slot) = if subtract {
            // Natural feature order; histogram comes from the pool (either
            // inherited from the parent's subtraction or freshly scanned).
            let slot = if work.hist_slot >= 0 {
                work.hist_slot as u32
            } else {
                let s = scratch.take_slot(stride);
                let range = s as usize * stride..(s as usize + 1) * stride;
                let (rows, pc, pw) = (&scratch.rows, &mut scratch.pool_cnt, &mut scratch.pool_wg);
                pc[range.clone()].fill(0);
                pw[range.clone()].fill(0.0);
                accumulate(
                    &mut pc[range.clone()],
                    &mut pw[range],
                    &rows[node_range.clone()],
                    &feats.codes,
                    d,
                    counts,
                    wg,
                    &scratch.feat_pool,
                );
                s
            };
            let range = slot as usize * stride..(slot as usize + 1) * stride;
            (
                best_split(
                    &scratch.pool_cnt[range.clone()],
                    &scratch.pool_wg[range],
                    feats,
                    &scratch.feat_pool,
                    work.sum_cnt,
                    work.sum_wg,
                    parent_score,
                ),
                Some(slot),
            )
        } else {
            // Sample mtry features without replacement (partial Fisher-Yates).
            for t in 0..mtry {
                let j = t + rng.gen_range(0..d - t);
                scratch.feat_pool.swap(t, j);
            }
            let sel = &scratch.feat_pool[..mtry];
            for (t, &f) in sel.iter().enumerate() {
                let bins = feats.bins[f as usize] as usize;
                scratch.hist_cnt[t * MAX_BINS..t * MAX_BINS + bins].fill(0);
                scratch.hist_wg[t * MAX_BINS..t * MAX_BINS + bins].fill(0.0);
            }
            accumulate(
                &mut scratch.hist_cnt,
                &mut scratch.hist_wg,
                &scratch.rows[node_range.clone()],
                &feats.codes,
                d,
                counts,
                wg,
                sel,
            );
            (
                best_split(
                    &scratch.hist_cnt,
                    &scratch.hist_wg,
                    feats,
                    sel,
                    work.sum_cnt,
                    work.sum_wg,
                    parent_score,
                ),
                None,
            )
        };

        let Some((bf, bb)) = best else {
            nodes[work.node_idx as usize] = Node::Leaf { value: mean };
            n_leaves += 1;
            if cfg.track_leaves {
                scratch.leaf_starts.push((work.start, work.len, work.node_idx));
            }
            if let Some(slot) = node_slot {
                scratch.free_slots.push(slot);
            }
            continue;
        };

        // Stable in-place partition of this node's row segment; the write
        // cursor never passes the read cursor.
        scratch.swap.clear();
        let mut write = work.start as usize;
        let end = (work.start + work.len) as usize;
        let mut lcnt = 0u64;
        let mut lwg = 0.0;
        for i in work.start as usize..end {
            let r = scratch.rows[i];
            let ri = r as usize;
            if feats.codes[ri * d + bf] as usize <= bb {
                scratch.rows[write] = r;
                write += 1;
                lcnt += counts[ri] as u64;
                lwg += wg[ri];
            } else {
                scratch.swap.push(r);
            }
        }
        scratch.rows[write..end].copy_from_slice(&scratch.swap);
        let left_len = write as u32 - work.start;
        let right_len = work.len - left_len;
        debug_assert!(left_len > 0 && right_len > 0);

        let left_idx = nodes.len() as u32;
        nodes.push(Node::Leaf { value: 0.0 });
        let right_idx = nodes.len() as u32;
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[work.node_idx as usize] = Node::Split {
            feature: bf as u32,
            threshold: feats.threshold(bf, bb),
            left: left_idx,
            right: right_idx,
        };

        // Child histograms: scan the smaller side, subtract for the other;
        // the parent's slot is reused by the derived child. Children at the
        // depth limit cannot split, so their histograms are skipped.
        let (mut left_slot, mut right_slot) = (-1i32, -1i32);
        if let Some(parent_slot) = node_slot {
            if (work.depth as usize) + 1 < cfg.max_depth {
                let small = scratch.take_slot(stride);
                let (small_range, small_is_left) = if left_len <= right_len {
                    (work.start as usize..write, true)
                } else {
                    (write..end, false)
                };
                {
                    let range = small as usize * stride..(small as usize + 1) * stride;
                    let (rows, pc, pw) =
                        (&scratch.rows, &mut scratch.pool_cnt, &mut scratch.pool_wg);
                    pc[range.clone()].fill(0);
                    pw[range.clone()].fill(0.0);
                    accumulate(
                        &mut pc[range.clone()],
                        &mut pw[range],
                        &rows[small_range],
                        &feats.codes,
                        d,
                        counts,
                        wg,
                        &scratch.feat_pool,
                    );
                }
                let (pa, pb) = (parent_slot as usize * stride, small as usize * stride);
                for i in 0..stride {
                    scratch.pool_cnt[pa + i] -= scratch.pool_cnt[pb + i];
                    scratch.pool_wg[pa + i] -= scratch.pool_wg[pb + i];
                }
                if small_is_left {
                    left_slot = small as i32;
                    right_slot = parent_slot as i32;
                } else {
                    right_slot = small as i32;
                    left_slot = parent_slot as i32;
                }
            } else {
                scratch.free_slots.push(parent_slot);
            }
        }

        scratch.queue.push(NodeWork {
            node_idx: right_idx,
            start: work.start + left_len,
            len: right_len,
            depth: work.depth + 1,
            hist_slot: right_slot,
            sum_cnt: work.sum_cnt - lcnt,
            sum_wg: work.sum_wg - lwg,
        });
        scratch.queue.push(NodeWork {
            node_idx: left_idx,
            start: work.start,
            len: left_len,
            depth: work.depth + 1,
            hist_slot: left_slot,
            sum_cnt: lcnt,
            sum_wg: lwg,
        });
    }

    let tree = Tree { nodes, n_leaves };

    if cfg.track_leaves {
        // Leaf ordinals straight from the final partition segments.
        let ord = tree.leaf_ordinal();
        scratch.leaf_of_row.resize(scratch.rows.len(), 0);
        for &(start, len, node_idx) in &scratch.leaf_starts {
            let leaf = ord[node_idx as usize];
            for pos in start as usize..(start + len) as usize {
                scratch.leaf_of_row[pos] = leaf;
            }
        }
    }

    tree
}
