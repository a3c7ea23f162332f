//! Depth-limited binary decision trees grown greedily over presorted columns.
//!
//! The split criterion is pluggable: random forests use Gini impurity over
//! (weight, positive weight) sums, boosting uses second-order gradient
//! statistics. Both reduce to `gain = score(left) + score(right) - score(parent)`.

use rand::seq::index::sample;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { value } => Some(*value),
                Node::Split { .. } => None,
            })
            .collect()
    }
}

/// Additive per-sample statistics plus the scoring rule built on them.
pub trait Criterion {
    type Stats: Copy + Default;

    fn sample(&self, i: usize) -> Self::Stats;
    fn add(a: Self::Stats, b: Self::Stats) -> Self::Stats;
    fn sub(a: Self::Stats, b: Self::Stats) -> Self::Stats;
    /// Larger is purer; split gain is the children's sum minus the parent's.
    fn score(&self, s: Self::Stats) -> f64;
    fn leaf_value(&self, s: Self::Stats) -> f64;
    /// Whether a child with these statistics may exist.
    fn admissible(&self, s: Self::Stats) -> bool;
    /// Whether a node with these statistics may be split at all.
    fn splittable(&self, s: Self::Stats) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: Option<usize>,
    /// Features examined per node; `None` means all.
    pub max_features: Option<usize>,
    /// A split must improve the score by more than this; `-inf` lets impure
    /// nodes split even when no single split helps (e.g. XOR at the root).
    pub min_gain: f64,
}

/// Per-feature sample orderings for the rows that take part in training.
pub struct Presorted {
    columns: Vec<Vec<usize>>,
}

impl Presorted {
    /// Sorts `rows` (indices into `x`) by every feature; ties keep index order.
    pub fn new(x: &[Vec<f64>], rows: &[usize], n_features: usize) -> Self {
        let columns = (0..n_features)
            .map(|f| {
                let mut col = rows.to_vec();
                col.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
                col
            })
            .collect();
        Presorted { columns }
    }

    /// Same orderings restricted to rows where `keep` is true.
    pub fn filtered(&self, keep: &[bool]) -> Self {
        Presorted {
            columns: self
                .columns
                .iter()
                .map(|c| c.iter().copied().filter(|&i| keep[i]).collect())
                .collect(),
        }
    }
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

pub fn grow<C: Criterion, R: Rng>(
    x: &[Vec<f64>],
    presorted: &Presorted,
    criterion: &C,
    params: &GrowParams,
    rng: &mut R,
) -> Tree {
    let n_rows = x.len();
    let mut tree = Tree { nodes: Vec::new() };
    let mut goes_left = vec![false; n_rows];
    build(
        x,
        presorted.columns.clone(),
        criterion,
        params,
        rng,
        0,
        &mut tree,
        &mut goes_left,
    );
    tree
}

#[allow(clippy::too_many_arguments)]
fn build<C: Criterion, R: Rng>(
    x: &[Vec<f64>],
    columns: Vec<Vec<usize>>,
    criterion: &C,
    params: &GrowParams,
    rng: &mut R,
    depth: usize,
    tree: &mut Tree,
    goes_left: &mut [bool],
) -> usize {
    let id = tree.nodes.len();
    let Some(rows) = columns.first() else {
        tree.nodes.push(Node::Leaf { value: 0.0 });
        return id;
    };
    let total = rows
        .iter()
        .fold(C::Stats::default(), |acc, &i| C::add(acc, criterion.sample(i)));
    tree.nodes.push(Node::Leaf {
        value: criterion.leaf_value(total),
    });

    let depth_ok = params.max_depth.is_none_or(|d| depth < d);
    if !depth_ok || rows.len() < 2 || !criterion.splittable(total) {
        return id;
    }

    let n_features = columns.len();
    let candidates: Vec<usize> = match params.max_features {
        Some(k) if k < n_features => sample(rng, n_features, k.max(1)).into_vec(),
        _ => (0..n_features).collect(),
    };

    let parent_score = criterion.score(total);
    let mut best: Option<Best> = None;
    for &f in &candidates {
        let col = &columns[f];
        let mut left = C::Stats::default();
        for w in 0..col.len() - 1 {
            let i = col[w];
            left = C::add(left, criterion.sample(i));
            let (a, b) = (x[i][f], x[col[w + 1]][f]);
            if !(a < b) {
                continue;
            }
            let right = C::sub(total, left);
            if !criterion.admissible(left) || !criterion.admissible(right) {
                continue;
            }
            let gain = criterion.score(left) + criterion.score(right) - parent_score;
            if gain > params.min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                best = Some(Best {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
    }
    let Some(best) = best else {
        return id;
    };

    for &i in rows {
        goes_left[i] = x[i][best.feature] <= best.threshold;
    }
    let (left_cols, right_cols): (Vec<Vec<usize>>, Vec<Vec<usize>>) = columns
        .iter()
        .map(|c| c.iter().partition::<Vec<usize>, _>(|&&i| goes_left[i]))
        .unzip();
    drop(columns);

    let left = build(x, left_cols, criterion, params, rng, depth + 1, tree, goes_left);
    let right = build(x, right_cols, criterion, params, rng, depth + 1, tree, goes_left);
    tree.nodes[id] = Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left,
        right,
    };
    id
}

/// Gini impurity over sample weights; leaf value is the positive fraction.
pub struct Gini<'a> {
    pub targets: &'a [bool],
    pub weights: &'a [f64],
    pub min_split_weight: f64,
}

impl Criterion for Gini<'_> {
    type Stats = (f64, f64);

    fn sample(&self, i: usize) -> (f64, f64) {
        let w = self.weights[i];
        (w, if self.targets[i] { w } else { 0.0 })
    }

    fn add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        (a.0 + b.0, a.1 + b.1)
    }

    fn sub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        (a.0 - b.0, a.1 - b.1)
    }

    // negative weighted impurity up to a constant: (pos^2 + neg^2) / w
    fn score(&self, (w, pos): (f64, f64)) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        let neg = w - pos;
        (pos * pos + neg * neg) / w
    }

    fn leaf_value(&self, (w, pos): (f64, f64)) -> f64 {
        if w > 0.0 {
            (pos / w).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    fn admissible(&self, (w, _): (f64, f64)) -> bool {
        w >= 1.0 - 1e-12
    }

    fn splittable(&self, (w, pos): (f64, f64)) -> bool {
        w >= self.min_split_weight && pos > 1e-12 && (w - pos) > 1e-12
    }
}

/// Second-order boosting statistics with L2-regularized leaf weights.
pub struct Newton<'a> {
    pub gradients: &'a [f64],
    pub hessians: &'a [f64],
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Criterion for Newton<'_> {
    type Stats = (f64, f64);

    fn sample(&self, i: usize) -> (f64, f64) {
        (self.gradients[i], self.hessians[i])
    }

    fn add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        (a.0 + b.0, a.1 + b.1)
    }

    fn sub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        (a.0 - b.0, a.1 - b.1)
    }

    fn score(&self, (g, h): (f64, f64)) -> f64 {
        0.5 * g * g / (h + self.lambda)
    }

    fn leaf_value(&self, (g, h): (f64, f64)) -> f64 {
        -g / (h + self.lambda)
    }

    fn admissible(&self, (_, h): (f64, f64)) -> bool {
        h >= self.min_child_weight
    }

    fn splittable(&self, (_, h): (f64, f64)) -> bool {
        h >= 2.0 * self.min_child_weight
    }
}
