//! Bagged CART trees with Gini splits, plus Gini and permutation importance.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::AlertClass;
use crate::features::DenseMatrix;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("schema mismatch: model has {expected} features, input has {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("invalid forest setting: {0}")]
    InvalidHyper(String),
    #[error("non-finite feature value in row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self { n_trees: 1000, max_depth: 5, min_samples_split: 2, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Weighted counts of (real, artifact) training rows reaching the leaf.
    Leaf { counts: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Weighted impurity decrease per feature, normalized within the tree.
    #[serde(skip)]
    importance: Vec<f64>,
}

impl Tree {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { counts } => return counts[1] / (counts[0] + counts[1]),
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedForest {
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub hyper: ForestHyper,
    pub trees: Vec<Tree>,
    /// Mean impurity decrease per feature, summing to 1 when any split exists.
    pub gini_importance: Vec<f64>,
}

fn gini(c: [f64; 2]) -> f64 {
    let n = c[0] + c[1];
    if n <= 0.0 {
        return 0.0;
    }
    let p = c[1] / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    hyper: &'a ForestHyper,
    max_features: usize,
    total_weight: f64,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[(usize, f64)]) -> [f64; 2] {
        let mut c = [0.0; 2];
        for &(i, w) in rows {
            c[self.y[i]] += w;
        }
        c
    }

    /// Best threshold on one feature, or None when the feature is constant here.
    fn split_on(&self, rows: &mut [(usize, f64)], f: usize, parent: [f64; 2]) -> Option<Best> {
        rows.sort_by(|a, b| self.x[a.0][f].total_cmp(&self.x[b.0][f]).then(a.0.cmp(&b.0)));
        let first = self.x[rows[0].0][f];
        let last = self.x[rows[rows.len() - 1].0][f];
        if first == last {
            return None;
        }
        let n = parent[0] + parent[1];
        let base = gini(parent);
        let mut left = [0.0; 2];
        let mut best: Option<Best> = None;
        for k in 0..rows.len() - 1 {
            let (i, w) = rows[k];
            left[self.y[i]] += w;
            let v = self.x[i][f];
            let next = self.x[rows[k + 1].0][f];
            if v == next {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let nl = left[0] + left[1];
            let gain = base - (nl * gini(left) + (n - nl) * gini(right)) / n;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some(Best { feature: f, threshold, gain });
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [(usize, f64)], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let n = counts[0] + counts[1];
        if depth >= self.hyper.max_depth
            || rows.len() < self.hyper.min_samples_split
            || counts[0] == 0.0
            || counts[1] == 0.0
        {
            return id;
        }
        // Features are visited in random order until `max_features` of them
        // turn out non-constant at this node.
        let d = self.x[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        let mut visited = 0;
        let mut best: Option<Best> = None;
        for f in order {
            if visited >= self.max_features {
                break;
            }
            if let Some(b) = self.split_on(rows, f, counts) {
                visited += 1;
                if best.as_ref().is_none_or(|cur| b.gain > cur.gain) {
                    best = Some(b);
                }
            }
        }
        let Some(best) = best.filter(|b| b.gain > 1e-12) else {
            return id;
        };
        self.importance[best.feature] += n / self.total_weight * best.gain;
        let (f, t) = (best.feature, best.threshold);
        rows.sort_by(|a, b| {
            (self.x[a.0][f] > t).cmp(&(self.x[b.0][f] > t)).then(a.0.cmp(&b.0))
        });
        let cut = rows.partition_point(|r| self.x[r.0][f] <= t);
        let (l, r) = rows.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: f, threshold: t, left, right };
        id
    }
}

/// Per-tree stream of the master seed, so trees can be built in any order.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

fn fit_tree(x: &[Vec<f64>], y: &[usize], hyper: &ForestHyper, seed: u64, t: usize) -> Tree {
    let n = x.len();
    let d = x[0].len();
    let mut rng = tree_rng(seed, t);
    let mut weight = vec![0.0; n];
    if hyper.bootstrap {
        for _ in 0..n {
            weight[rng.random_range(0..n)] += 1.0;
        }
    } else {
        weight.fill(1.0);
    }
    let mut rows: Vec<(usize, f64)> =
        weight.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, w)| (i, *w)).collect();
    let total_weight = rows.iter().map(|r| r.1).sum();
    let mut b = Builder {
        x,
        y,
        hyper,
        max_features: ((d as f64).sqrt().floor() as usize).max(1),
        total_weight,
        nodes: Vec::new(),
        importance: vec![0.0; d],
    };
    b.grow(&mut rows, 0, &mut rng);
    let s: f64 = b.importance.iter().sum();
    if s > 0.0 {
        b.importance.iter_mut().for_each(|v| *v /= s);
    }
    Tree { nodes: b.nodes, importance: b.importance }
}

fn check_finite(x: &[Vec<f64>]) -> Result<(), ForestError> {
    for (row, r) in x.iter().enumerate() {
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Fits the forest. Rows are put in a canonical order first, so the result
/// does not depend on how the training set was ordered.
pub fn train_random_forest(
    data: &DenseMatrix,
    labels: &[AlertClass],
    hyper: &ForestHyper,
    seed: u64,
) -> Result<TrainedForest, ForestError> {
    let n = data.n_rows();
    if labels.len() != n {
        return Err(ForestError::LabelCount { rows: n, labels: labels.len() });
    }
    if n < 2 {
        return Err(ForestError::TooFewRows(n));
    }
    if hyper.n_trees == 0 || hyper.min_samples_split < 2 {
        return Err(ForestError::InvalidHyper(format!(
            "n_trees {} and min_samples_split {} must be >= 1 and >= 2",
            hyper.n_trees, hyper.min_samples_split
        )));
    }
    if data.n_features() == 0 {
        return Err(ForestError::InvalidHyper("no features".into()));
    }
    check_finite(&data.x)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        data.x[a]
            .iter()
            .zip(&data.x[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(labels[a].as_u8().cmp(&labels[b].as_u8()))
    });
    let x: Vec<Vec<f64>> = order.iter().map(|&i| data.x[i].clone()).collect();
    let y: Vec<usize> = order.iter().map(|&i| labels[i].as_u8() as usize).collect();
    if y.iter().all(|&v| v == y[0]) {
        return Err(ForestError::SingleClass);
    }

    let trees: Vec<Tree> =
        (0..hyper.n_trees).into_par_iter().map(|t| fit_tree(&x, &y, hyper, seed, t)).collect();
    let d = data.n_features();
    let mut gi = vec![0.0; d];
    for t in &trees {
        for (g, v) in gi.iter_mut().zip(&t.importance) {
            *g += v;
        }
    }
    let s: f64 = gi.iter().sum();
    if s > 0.0 {
        gi.iter_mut().for_each(|v| *v /= s);
    }
    Ok(TrainedForest {
        feature_names: data.names.clone(),
        seed,
        hyper: *hyper,
        trees,
        gini_importance: gi,
    })
}

impl TrainedForest {
    fn check_schema(&self, data: &DenseMatrix) -> Result<(), ForestError> {
        if data.names != self.feature_names {
            return Err(ForestError::SchemaMismatch {
                expected: self.feature_names.len(),
                got: data.names.len(),
            });
        }
        Ok(())
    }

    /// Mean over trees of the leaf artifact frequency.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        s / self.trees.len() as f64
    }

    pub fn predict_proba(&self, data: &DenseMatrix) -> Result<Vec<f64>, ForestError> {
        self.check_schema(data)?;
        Ok(data.x.par_iter().map(|r| self.predict_row(r)).collect())
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ImportanceMode {
    Gi,
    Pfi,
}

fn accuracy(scores: &[f64], y: &[AlertClass]) -> f64 {
    let hits = scores.iter().zip(y).filter(|(s, c)| (**s > 0.5) == c.is_artifact()).count();
    hits as f64 / y.len() as f64
}

/// Ranked (feature, score), descending, ties by name. PFI is the mean accuracy
/// drop over `repeats` seeded shuffles of each column.
pub fn feature_importance(
    model: &TrainedForest,
    data: &DenseMatrix,
    labels: &[AlertClass],
    mode: ImportanceMode,
    repeats: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>, ForestError> {
    model.check_schema(data)?;
    if labels.len() != data.n_rows() {
        return Err(ForestError::LabelCount { rows: data.n_rows(), labels: labels.len() });
    }
    let scores: Vec<f64> = match mode {
        ImportanceMode::Gi => model.gini_importance.clone(),
        ImportanceMode::Pfi => {
            let base = accuracy(&model.predict_proba(data)?, labels);
            (0..data.n_features())
                .into_par_iter()
                .map(|f| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(f as u64);
                    let mut col: Vec<f64> = data.x.iter().map(|r| r[f]).collect();
                    let mut drop = 0.0;
                    for _ in 0..repeats.max(1) {
                        col.shuffle(&mut rng);
                        let preds: Vec<f64> = data
                            .x
                            .iter()
                            .zip(&col)
                            .map(|(r, v)| {
                                let mut row = r.clone();
                                row[f] = *v;
                                model.predict_row(&row)
                            })
                            .collect();
                        drop += base - accuracy(&preds, labels);
                    }
                    drop / repeats.max(1) as f64
                })
                .collect()
        }
    };
    let mut ranked: Vec<(String, f64)> = model.feature_names.iter().cloned().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(x: Vec<Vec<f64>>) -> DenseMatrix {
        let d = x[0].len();
        DenseMatrix {
            names: (0..d).map(|j| format!("f{j}")).collect(),
            row_ids: (0..x.len()).map(|i| format!("r{i}")).collect(),
            x,
        }
    }

    fn separable(n: usize, seed: u64) -> (DenseMatrix, Vec<AlertClass>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            y.push(if a + 0.5 * b > 0.0 { AlertClass::Artifact } else { AlertClass::Real });
            x.push(vec![a, b]);
        }
        (dense(x), y)
    }

    fn small() -> ForestHyper {
        ForestHyper { n_trees: 100, ..Default::default() }
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini([5.0, 5.0]), 0.5);
        assert_eq!(gini([3.0, 0.0]), 0.0);
        assert_eq!(gini([0.0, 0.0]), 0.0);
    }

    #[test]
    fn fits_separable_set() {
        let (x, y) = separable(100, 1);
        let f = train_random_forest(&x, &y, &small(), 3).unwrap();
        let acc = accuracy(&f.predict_proba(&x).unwrap(), &y);
        assert!(acc >= 0.99, "{acc}");
        assert!(f.max_depth() <= 5);
    }

    #[test]
    fn depth_limit_holds_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..300).map(|_| (0..6).map(|_| rng.random()).collect()).collect();
        let y: Vec<AlertClass> =
            (0..300).map(|_| AlertClass::from_u8(rng.random_range(0..2)).unwrap()).collect();
        let hyper = ForestHyper { n_trees: 50, max_depth: 3, ..Default::default() };
        let f = train_random_forest(&dense(x.clone()), &y, &hyper, 1).unwrap();
        assert!(f.trees.iter().all(|t| t.depth() <= 3));
        let p = f.predict_proba(&dense(x)).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_seed_same_forest_any_row_order() {
        let (x, y) = separable(80, 4);
        let a = train_random_forest(&x, &y, &small(), 9).unwrap();
        let mut idx: Vec<usize> = (0..80).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
        let xs = dense(idx.iter().map(|&i| x.x[i].clone()).collect());
        let ys: Vec<AlertClass> = idx.iter().map(|&i| y[i]).collect();
        let b = train_random_forest(&xs, &ys, &small(), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        let c = train_random_forest(&x, &y, &small(), 10).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, _) = separable(10, 0);
        assert!(matches!(
            train_random_forest(&x, &[AlertClass::Real; 10], &small(), 0),
            Err(ForestError::SingleClass)
        ));
        let one = dense(vec![vec![1.0]]);
        assert!(matches!(
            train_random_forest(&one, &[AlertClass::Real], &small(), 0),
            Err(ForestError::TooFewRows(1))
        ));
        let nan = dense(vec![vec![1.0], vec![f64::NAN]]);
        let y = [AlertClass::Real, AlertClass::Artifact];
        assert!(matches!(train_random_forest(&nan, &y, &small(), 0), Err(ForestError::NonFinite { .. })));
    }

    #[test]
    fn single_informative_feature_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1000;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random();
            y.push(if a > 0.6 { AlertClass::Artifact } else { AlertClass::Real });
            x.push(vec![rng.random(), a, rng.random()]);
        }
        let x = dense(x);
        let f = train_random_forest(&x, &y, &small(), 1).unwrap();
        let gi = feature_importance(&f, &x, &y, ImportanceMode::Gi, 0, 0).unwrap();
        assert_eq!(gi[0].0, "f1");
        assert!((gi.iter().map(|g| g.1).sum::<f64>() - 1.0).abs() < 1e-9);
        let pfi = feature_importance(&f, &x, &y, ImportanceMode::Pfi, 5, 0).unwrap();
        assert_eq!(pfi[0].0, "f1");
        for (name, s) in &pfi[1..] {
            assert!(s.abs() < 0.02, "{name} {s}");
        }
    }

    #[test]
    fn importance_rejects_other_schema() {
        let (x, y) = separable(40, 0);
        let f = train_random_forest(&x, &y, &small(), 0).unwrap();
        let mut other = x.clone();
        other.names[0] = "zz".into();
        assert!(feature_importance(&f, &other, &y, ImportanceMode::Gi, 1, 0).is_err());
    }
}
