//! Random forest regression with extractable neighbor weights.
//!
//! Trees are CART-style regression trees grown on bootstrap resamples with
//! sqrt(p) feature subsampling per split. Split search runs on per-feature
//! quantile bins (exact when a feature has at most `max_bins` distinct
//! values, which covers every dataset this crate simulates at its default
//! sizes). Leaf values are the means of all training points routed to the
//! leaf, so predictions coincide exactly with the weight-matrix inner
//! product against the training targets: the weight of training point k for
//! a query is the tree-average of 1{k lands in the query's leaf} / leaf size.

use super::{derive_seed, LearnError, Learner, Matrix};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSubsampling {
    /// max(1, floor(sqrt(p))), the classic forest default.
    Sqrt,
    /// Every feature at every split, as in the reference learner menus.
    All,
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<u32>,
    pub min_leaf: usize,
    pub min_split: usize,
    pub mtry: FeatureSubsampling,
    pub max_bins: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 250,
            max_depth: None,
            min_leaf: 5,
            min_split: 10,
            mtry: FeatureSubsampling::Sqrt,
            max_bins: 256,
        }
    }
}

impl ForestParams {
    /// The depth-2 variant of the standard learner menu.
    pub fn shallow() -> Self {
        Self { max_depth: Some(2), ..Self::default() }
    }

    pub fn with_all_features(mut self) -> Self {
        self.mtry = FeatureSubsampling::All;
        self
    }
}

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    feature: u32,
    /// Split rule: go left iff x[feature] <= threshold. For leaves,
    /// `feature == LEAF` and `left` holds the leaf id.
    threshold: f64,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    leaf_values: Vec<f64>,
    /// CSR layout of training indices per leaf (all training points routed
    /// through the tree, not just the bootstrap sample).
    leaf_offsets: Vec<u32>,
    leaf_members: Vec<u32>,
}

impl Tree {
    fn leaf_of(&self, x: &[f64]) -> u32 {
        let mut node = 0usize;
        loop {
            let n = &self.nodes[node];
            if n.feature == LEAF {
                return n.left;
            }
            node = if x[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<Tree>,
    pub params: ForestParams,
    pub seed: u64,
    n_train: usize,
    n_features: usize,
}

impl Learner for ForestModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for tree in &self.trees {
            acc += tree.leaf_values[tree.leaf_of(x) as usize];
        }
        acc / self.trees.len() as f64
    }
}

struct BinnedData {
    /// Feature-major u16 bin codes, bins[f * n + i].
    codes: Vec<u16>,
    /// Per-feature ascending cut points; bin(x) = #edges < x, go left iff
    /// x <= edges[b].
    edges: Vec<Vec<f64>>,
    n: usize,
}

fn bin_features(x: &Matrix, max_bins: usize) -> BinnedData {
    let n = x.n_rows();
    let p = x.n_cols();
    let mut codes = vec![0u16; n * p];
    let mut edges = Vec::with_capacity(p);
    let mut col = vec![0.0f64; n];
    for f in 0..p {
        for i in 0..n {
            col[i] = x.get(i, f);
        }
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        let e: Vec<f64> = if sorted.len() <= max_bins {
            // exact mode: midpoints between consecutive distinct values
            sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
        } else {
            let mut cuts = Vec::with_capacity(max_bins - 1);
            for q in 1..max_bins {
                let pos = q * (sorted.len() - 1) / max_bins;
                cuts.push(0.5 * (sorted[pos] + sorted[pos + 1]));
            }
            cuts.dedup_by(|a, b| a == b);
            cuts
        };
        for i in 0..n {
            let b = e.partition_point(|&edge| edge < col[i]);
            codes[f * n + i] = b as u16;
        }
        edges.push(e);
    }
    BinnedData { codes, edges, n }
}

struct GrowCtx<'a> {
    binned: &'a BinnedData,
    params: &'a ForestParams,
    mtry: usize,
    rng: ChaCha8Rng,
    // workspaces; idx and y_boot stay aligned through partitions
    idx: Vec<u32>,
    y_boot: Vec<f64>,
    scratch: Vec<u32>,
    scratch_y: Vec<f64>,
    hist_cnt: Vec<u32>,
    hist_sum: Vec<f64>,
    feat_pool: Vec<u32>,
    nodes: Vec<Node>,
    n_leaves: u32,
}

impl GrowCtx<'_> {
    fn grow(&mut self, start: usize, end: usize, sum: f64, depth: u32) -> u32 {
        let m = end - start;
        let at_depth_limit = self.params.max_depth.is_some_and(|d| depth >= d);
        if at_depth_limit || m < self.params.min_split || m < 2 * self.params.min_leaf {
            return self.make_leaf();
        }
        let parent_score = sum * sum / m as f64;

        // sample mtry candidate features without replacement
        let p = self.feat_pool.len();
        let mut best: Option<(f64, u32, u16, f64)> = None;
        for t in 0..self.mtry.min(p) {
            let j = self.rng.random_range(t..p);
            self.feat_pool.swap(t, j);
            let f = self.feat_pool[t];
            if let Some((gain, bin, sum_left)) = self.best_split_for(f, start, end, sum, m) {
                if best.is_none_or(|(g, _, _, _)| gain > g) {
                    best = Some((gain, f, bin, sum_left));
                }
            }
        }
        let Some((gain, feature, bin, sum_left)) = best else {
            return self.make_leaf();
        };
        if gain - parent_score <= 1e-9 * (parent_score.abs() + 1e-12) {
            return self.make_leaf();
        }

        // stable partition by bin code, preserving order within children
        let n = self.binned.n;
        let codes = &self.binned.codes[feature as usize * n..(feature as usize + 1) * n];
        self.scratch.clear();
        self.scratch_y.clear();
        let mut write = start;
        for k in start..end {
            let i = self.idx[k];
            let yv = self.y_boot[k];
            if codes[i as usize] <= bin {
                self.idx[write] = i;
                self.y_boot[write] = yv;
                write += 1;
            } else {
                self.scratch.push(i);
                self.scratch_y.push(yv);
            }
        }
        self.idx[write..end].copy_from_slice(&self.scratch);
        self.y_boot[write..end].copy_from_slice(&self.scratch_y);
        let mid = write;

        let node_id = self.nodes.len() as u32;
        self.nodes.push(Node {
            feature,
            threshold: self.binned.edges[feature as usize][bin as usize],
            left: 0,
            right: 0,
        });
        let left = self.grow(start, mid, sum_left, depth + 1);
        let right = self.grow(mid, end, sum - sum_left, depth + 1);
        self.nodes[node_id as usize].left = left;
        self.nodes[node_id as usize].right = right;
        node_id
    }

    fn make_leaf(&mut self) -> u32 {
        let leaf_id = self.n_leaves;
        self.n_leaves += 1;
        let node_id = self.nodes.len() as u32;
        self.nodes.push(Node { feature: LEAF, threshold: 0.0, left: leaf_id, right: 0 });
        node_id
    }

    /// Best (gain, bin, left sum) for one feature; gain is
    /// sum_l^2/n_l + sum_r^2/n_r.
    fn best_split_for(
        &mut self,
        feature: u32,
        start: usize,
        end: usize,
        total_sum: f64,
        total_cnt: usize,
    ) -> Option<(f64, u16, f64)> {
        let n = self.binned.n;
        let codes = &self.binned.codes[feature as usize * n..(feature as usize + 1) * n];
        let n_bins = self.binned.edges[feature as usize].len() + 1;
        if n_bins < 2 {
            return None;
        }
        let mut lo = u16::MAX;
        let mut hi = 0u16;
        for k in start..end {
            let b = codes[self.idx[k] as usize];
            self.hist_cnt[b as usize] += 1;
            self.hist_sum[b as usize] += self.y_boot[k];
            lo = lo.min(b);
            hi = hi.max(b);
        }
        let mut best: Option<(f64, u16, f64)> = None;
        if lo < hi {
            let min_leaf = self.params.min_leaf;
            let mut cnt_l = 0usize;
            let mut sum_l = 0.0;
            for b in lo..hi {
                cnt_l += self.hist_cnt[b as usize] as usize;
                sum_l += self.hist_sum[b as usize];
                let cnt_r = total_cnt - cnt_l;
                if cnt_l < min_leaf {
                    continue;
                }
                if cnt_r < min_leaf {
                    break;
                }
                let sum_r = total_sum - sum_l;
                let gain = sum_l * sum_l / cnt_l as f64 + sum_r * sum_r / cnt_r as f64;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, b, sum_l));
                }
            }
        }
        for b in lo..=hi {
            self.hist_cnt[b as usize] = 0;
            self.hist_sum[b as usize] = 0.0;
        }
        best
    }
}

/// Fits a random forest. Per-tree randomness is derived from `seed` by
/// counter, so results do not depend on evaluation order.
pub fn fit_forest(
    x: &Matrix,
    y: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, LearnError> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n == 0 || p == 0 {
        return Err(LearnError::EmptyData);
    }
    if n != y.len() {
        return Err(LearnError::LengthMismatch { rows: n, targets: y.len() });
    }
    if n < 2 {
        return Err(LearnError::NotEnoughData { need: 2, got: n });
    }
    let binned = bin_features(x, params.max_bins);
    let mtry = match params.mtry {
        FeatureSubsampling::Sqrt => ((p as f64).sqrt().floor() as usize).max(1),
        FeatureSubsampling::All => p,
        FeatureSubsampling::Fixed(k) => k.clamp(1, p),
    };
    let max_bins_actual = binned.edges.iter().map(|e| e.len() + 1).max().unwrap_or(1);

    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        let mut idx = vec![0u32; n];
        let mut y_boot = vec![0.0f64; n];
        let mut root_sum = 0.0;
        for k in 0..n {
            let i = rng.random_range(0..n);
            idx[k] = i as u32;
            y_boot[k] = y[i];
            root_sum += y[i];
        }
        let mut ctx = GrowCtx {
            binned: &binned,
            params,
            mtry,
            rng,
            idx,
            y_boot,
            scratch: Vec::with_capacity(n),
            scratch_y: Vec::with_capacity(n),
            hist_cnt: vec![0u32; max_bins_actual],
            hist_sum: vec![0.0; max_bins_actual],
            feat_pool: (0..p as u32).collect(),
            nodes: Vec::new(),
            n_leaves: 0,
        };
        let root = ctx.grow(0, n, root_sum, 0);
        debug_assert_eq!(root, 0);
        let n_leaves = ctx.n_leaves as usize;
        let nodes = ctx.nodes;

        // route the full training set through the tree to value the leaves
        let tmp = Tree {
            nodes,
            leaf_values: vec![0.0; n_leaves],
            leaf_offsets: vec![],
            leaf_members: vec![],
        };
        let mut counts = vec![0u32; n_leaves];
        let mut sums = vec![0.0f64; n_leaves];
        let mut assignment = vec![0u32; n];
        for i in 0..n {
            let leaf = tmp.leaf_of(x.row(i));
            assignment[i] = leaf;
            counts[leaf as usize] += 1;
            sums[leaf as usize] += y[i];
        }
        let mut leaf_values = vec![0.0; n_leaves];
        for l in 0..n_leaves {
            debug_assert!(counts[l] > 0, "leaf without training members");
            leaf_values[l] = sums[l] / counts[l] as f64;
        }
        let mut leaf_offsets = vec![0u32; n_leaves + 1];
        for &leaf in &assignment {
            leaf_offsets[leaf as usize + 1] += 1;
        }
        for l in 0..n_leaves {
            leaf_offsets[l + 1] += leaf_offsets[l];
        }
        let mut cursor = leaf_offsets[..n_leaves].to_vec();
        let mut leaf_members = vec![0u32; n];
        for (i, &leaf) in assignment.iter().enumerate() {
            leaf_members[cursor[leaf as usize] as usize] = i as u32;
            cursor[leaf as usize] += 1;
        }
        trees.push(Tree { nodes: tmp.nodes, leaf_values, leaf_offsets, leaf_members });
    }
    Ok(ForestModel { trees, params: params.clone(), seed, n_train: n, n_features: p })
}

/// Neighbor weights of the queries against the training set: entry (i, k) is
/// the tree-average of 1{train k in the leaf of query i} / leaf size. Rows
/// are nonnegative and sum to one; predictions equal weights * targets.
pub fn forest_weights(model: &ForestModel, queries: &Matrix) -> Matrix {
    assert_eq!(queries.n_cols(), model.n_features, "query feature dimension mismatch");
    let n_query = queries.n_rows();
    let n_train = model.n_train;
    let inv_trees = 1.0 / model.trees.len() as f64;
    let mut out = Matrix::zeros(n_query, n_train);
    for i in 0..n_query {
        let row = queries.row(i);
        for tree in &model.trees {
            let leaf = tree.leaf_of(row) as usize;
            let lo = tree.leaf_offsets[leaf] as usize;
            let hi = tree.leaf_offsets[leaf + 1] as usize;
            let w = inv_trees / (hi - lo) as f64;
            for &k in &tree.leaf_members[lo..hi] {
                let cell = out.get(i, k as usize) + w;
                out.set(i, k as usize, cell);
            }
        }
    }
    out
}
