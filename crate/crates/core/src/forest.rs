//! Random-forest classifier over categorical features and out-of-bag
//! permutation importance (mean decrease in accuracy).
//!
//! Trees split a node into two groups of categories of one feature. The
//! split maximizing the Gini decrease is found exhaustively for up to
//! [`EXHAUSTIVE_MAX_CATEGORIES`] categories present at the node, and by a
//! one-vs-rest seed plus single-category moves above that.
//!
//! Every tree draws from its own ChaCha stream (`seed`, stream = tree index),
//! so results do not depend on the number of worker threads.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{DataDictionary, RecordSet};

pub const EXHAUSTIVE_MAX_CATEGORIES: usize = 12;

fn default_n_trees() -> usize {
    500
}

fn default_min_node_size() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    /// Features tried per node; `floor(sqrt(#features))` when absent.
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default = "default_min_node_size")]
    pub min_node_size: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: default_n_trees(),
            mtry: None,
            min_node_size: default_min_node_size(),
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1))
    }
}

/// Gini split quality as the exact fraction `num / den`; larger is better.
///
/// For children L and R this is `sum_c L_c^2 / |L| + sum_c R_c^2 / |R|`, which
/// is `n` minus the size-weighted child Gini impurity.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn parent(counts: &[u32]) -> Self {
        let n: u128 = counts.iter().map(|&c| c as u128).sum();
        SplitScore {
            num: counts.iter().map(|&c| (c as u128).pow(2)).sum(),
            den: n.max(1),
        }
    }

    fn children(left: &[u32], right: &[u32]) -> Self {
        let nl: u128 = left.iter().map(|&c| c as u128).sum();
        let nr: u128 = right.iter().map(|&c| c as u128).sum();
        let sl: u128 = left.iter().map(|&c| (c as u128).pow(2)).sum();
        let sr: u128 = right.iter().map(|&c| (c as u128).pow(2)).sum();
        SplitScore {
            num: sl * nr + sr * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &SplitScore) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    #[cfg(test)]
    pub(crate) fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Class counts of one category present at a node.
#[derive(Debug, Clone)]
pub(crate) struct CategoryCounts {
    pub category: u16,
    pub counts: Vec<u32>,
}

/// Best binary partition of the present categories, as a bitmask of
/// dictionary category codes sent left. `None` when no partition leaves both
/// children with at least `min_node_size` records.
pub(crate) fn best_split(
    table: &[CategoryCounts],
    n_classes: usize,
    min_node_size: usize,
) -> Option<(u64, SplitScore)> {
    let m = table.len();
    if m < 2 {
        return None;
    }
    let totals: Vec<u32> = (0..n_classes)
        .map(|k| table.iter().map(|c| c.counts[k]).sum())
        .collect();
    let evaluate = |members: u64| -> Option<SplitScore> {
        let mut left = vec![0u32; n_classes];
        for (j, cat) in table.iter().enumerate() {
            if members & (1 << j) != 0 {
                for (l, &c) in left.iter_mut().zip(&cat.counts) {
                    *l += c;
                }
            }
        }
        let right: Vec<u32> = totals.iter().zip(&left).map(|(t, l)| t - l).collect();
        let nl: u32 = left.iter().sum();
        let nr: u32 = right.iter().sum();
        (nl as usize >= min_node_size.max(1) && nr as usize >= min_node_size.max(1))
            .then(|| SplitScore::children(&left, &right))
    };
    let consider = |best: &mut Option<(u64, SplitScore)>, members: u64| {
        if let Some(score) = evaluate(members) {
            if best
                .as_ref()
                .is_none_or(|(_, b)| score.cmp(b) == Ordering::Greater)
            {
                *best = Some((members, score));
            }
        }
    };

    let mut best: Option<(u64, SplitScore)> = None;
    if m <= EXHAUSTIVE_MAX_CATEGORIES {
        // The last present category always goes right, so each partition is
        // visited once.
        for members in 1..(1u64 << (m - 1)) {
            consider(&mut best, members);
        }
    } else {
        for j in 0..m {
            consider(&mut best, 1 << j);
        }
        let full = (1u64 << m) - 1;
        loop {
            let (current, _) = best?;
            let mut improved = best;
            for j in 0..m {
                let moved = current ^ (1 << j);
                if moved != 0 && moved != full {
                    consider(&mut improved, moved);
                }
            }
            if improved.map(|(mask, _)| mask) == Some(current) {
                break;
            }
            best = improved;
        }
    }
    best.map(|(members, score)| {
        let mask = table
            .iter()
            .enumerate()
            .filter(|(j, _)| members & (1 << j) != 0)
            .fold(0u64, |acc, (_, c)| acc | (1 << c.category));
        (mask, score)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Leaf {
        class_counts: Vec<u32>,
        prediction: u16,
    },
    Split {
        /// Index into the forest's feature list.
        feature: usize,
        /// Category codes routed to `left`; all others go right.
        left_categories: u64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    nodes: Vec<Node>,
    uses_feature: Vec<bool>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn uses_feature(&self, feature: usize) -> bool {
        self.uses_feature[feature]
    }

    /// Walks from the root; `value(f)` yields the category code of feature `f`.
    pub fn predict_with(&self, value: impl Fn(usize) -> u16) -> u16 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { prediction, .. } => return *prediction,
                Node::Split {
                    feature,
                    left_categories,
                    left,
                    right,
                } => {
                    at = if left_categories & (1 << value(*feature)) != 0 {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

fn majority(counts: &[u32]) -> u16 {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best as u16
}

/// Feature columns and labels as category codes.
struct Columns {
    features: Vec<Vec<u16>>,
    n_categories: Vec<usize>,
    labels: Vec<u16>,
    n_classes: usize,
}

impl Columns {
    fn build(rs: &RecordSet, response: usize, features: &[usize]) -> Self {
        let dict = rs.dictionary();
        Columns {
            features: features
                .iter()
                .map(|&f| rs.records().iter().map(|r| r.values[f]).collect())
                .collect(),
            n_categories: features
                .iter()
                .map(|&f| dict.variable(f).categories.len())
                .collect(),
            labels: rs.records().iter().map(|r| r.values[response]).collect(),
            n_classes: dict.variable(response).categories.len(),
        }
    }

    fn row_predict(&self, tree: &Tree, row: usize) -> u16 {
        tree.predict_with(|f| self.features[f][row])
    }
}

struct Grower<'a> {
    data: &'a Columns,
    config: &'a ForestConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    uses_feature: Vec<bool>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> usize {
        let data = self.data;
        let mut class_counts = vec![0u32; data.n_classes];
        for &r in &rows {
            class_counts[data.labels[r as usize] as usize] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            prediction: majority(&class_counts),
            class_counts: class_counts.clone(),
        });

        let pure = class_counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || rows.len() < 2 * self.config.min_node_size.max(1) {
            return id;
        }

        let n_features = data.features.len();
        let tried = rand::seq::index::sample(&mut self.rng, n_features, self.mtry);
        let parent = SplitScore::parent(&class_counts);
        let mut best: Option<(usize, u64, SplitScore)> = None;
        for f in tried.iter() {
            let column = &data.features[f];
            let mut table = vec![vec![0u32; data.n_classes]; data.n_categories[f]];
            for &r in &rows {
                table[column[r as usize] as usize][data.labels[r as usize] as usize] += 1;
            }
            let present: Vec<CategoryCounts> = table
                .into_iter()
                .enumerate()
                .filter(|(_, counts)| counts.iter().any(|&c| c > 0))
                .map(|(category, counts)| CategoryCounts {
                    category: category as u16,
                    counts,
                })
                .collect();
            if let Some((mask, score)) =
                best_split(&present, data.n_classes, self.config.min_node_size)
            {
                if best
                    .as_ref()
                    .is_none_or(|(_, _, b)| score.cmp(b) == Ordering::Greater)
                {
                    best = Some((f, mask, score));
                }
            }
        }
        let Some((feature, mask, score)) = best else {
            return id;
        };
        if score.cmp(&parent) != Ordering::Greater {
            return id;
        }

        let column = &data.features[feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| mask & (1 << column[r as usize]) != 0);
        self.uses_feature[feature] = true;
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            left_categories: mask,
            left,
            right,
        };
        id
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    in_bag: Vec<Vec<u32>>,
    out_of_bag: Vec<Vec<u32>>,
    dictionary: Arc<DataDictionary>,
    response: usize,
    features: Vec<usize>,
    n_records: usize,
    config: ForestConfig,
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    /// In-bag draw count per record for tree `t`.
    pub fn in_bag(&self, t: usize) -> &[u32] {
        &self.in_bag[t]
    }

    pub fn out_of_bag(&self, t: usize) -> &[u32] {
        &self.out_of_bag[t]
    }

    pub fn response(&self) -> &str {
        &self.dictionary.variable(self.response).name
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features
            .iter()
            .map(|&f| self.dictionary.variable(f).name.clone())
            .collect()
    }

    pub fn classes(&self) -> &[String] {
        &self.dictionary.variable(self.response).categories
    }

    fn check(&self, rs: &RecordSet) -> Result<Columns> {
        if **rs.dictionary() != *self.dictionary {
            return Err(Error::ForestMismatch("different dictionary".into()));
        }
        if rs.len() != self.n_records {
            return Err(Error::ForestMismatch(format!(
                "trained on {} records, given {}",
                self.n_records,
                rs.len()
            )));
        }
        Ok(Columns::build(rs, self.response, &self.features))
    }
}

/// Grows `n_trees` trees on bootstrap samples of `rs`.
pub fn train(
    rs: &RecordSet,
    response: &str,
    features: &[impl AsRef<str>],
    config: &ForestConfig,
) -> Result<Forest> {
    let dict = rs.dictionary();
    if features.is_empty() {
        return Err(Error::InvalidArgument("no feature variables".into()));
    }
    let response_var = dict.require(response)?;
    let mut feature_vars = Vec::with_capacity(features.len());
    for f in features {
        let v = dict.require(f.as_ref())?;
        if v == response_var {
            return Err(Error::InvalidArgument(format!(
                "response `{}` is also listed as a feature",
                dict.variable(v).name
            )));
        }
        if feature_vars.contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "feature `{}` listed twice",
                dict.variable(v).name
            )));
        }
        feature_vars.push(v);
    }
    if config.n_trees < 1 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    let mtry = config.resolved_mtry(feature_vars.len());
    if mtry < 1 || mtry > feature_vars.len() {
        return Err(Error::InvalidArgument(format!(
            "mtry {mtry} outside 1..={}",
            feature_vars.len()
        )));
    }

    let data = Columns::build(rs, response_var, &feature_vars);
    let mut seen = vec![false; data.n_classes];
    for &l in &data.labels {
        seen[l as usize] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::InvalidArgument(format!(
            "response `{}` has fewer than two classes present",
            dict.variable(response_var).name
        )));
    }

    let n = rs.len();
    let grown: Vec<(Tree, Vec<u32>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64);
            let mut in_bag = vec![0u32; n];
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                let r = rng.gen_range(0..n);
                in_bag[r] += 1;
                rows.push(r as u32);
            }
            rows.sort_unstable();
            let mut grower = Grower {
                data: &data,
                config,
                mtry,
                rng,
                nodes: Vec::new(),
                uses_feature: vec![false; feature_vars.len()],
            };
            grower.grow(rows, 0);
            let tree = Tree {
                nodes: grower.nodes,
                uses_feature: grower.uses_feature,
            };
            (tree, in_bag)
        })
        .collect();

    let mut trees = Vec::with_capacity(grown.len());
    let mut in_bag = Vec::with_capacity(grown.len());
    let mut out_of_bag = Vec::with_capacity(grown.len());
    for (tree, bag) in grown {
        out_of_bag.push(
            bag.iter()
                .enumerate()
                .filter(|(_, &c)| c == 0)
                .map(|(i, _)| i as u32)
                .collect(),
        );
        trees.push(tree);
        in_bag.push(bag);
    }
    Ok(Forest {
        trees,
        in_bag,
        out_of_bag,
        dictionary: Arc::clone(dict),
        response: response_var,
        features: feature_vars,
        n_records: n,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    /// Majority vote over trees where the record was out of bag, as a
    /// response category code. `None` for records in bag everywhere.
    pub predictions: Vec<Option<u16>>,
    pub covered: usize,
    pub accuracy: f64,
}

pub fn oob_predict(forest: &Forest, rs: &RecordSet) -> Result<OobPrediction> {
    let data = forest.check(rs)?;
    let per_tree: Vec<Vec<u16>> = forest
        .trees
        .par_iter()
        .zip(&forest.out_of_bag)
        .map(|(tree, oob)| {
            oob.iter()
                .map(|&r| data.row_predict(tree, r as usize))
                .collect()
        })
        .collect();
    let mut votes = vec![vec![0u32; data.n_classes]; rs.len()];
    for (preds, oob) in per_tree.iter().zip(&forest.out_of_bag) {
        for (&p, &r) in preds.iter().zip(oob) {
            votes[r as usize][p as usize] += 1;
        }
    }
    let predictions: Vec<Option<u16>> = votes
        .iter()
        .map(|v| v.iter().any(|&c| c > 0).then(|| majority(v)))
        .collect();
    let covered = predictions.iter().filter(|p| p.is_some()).count();
    let correct = predictions
        .iter()
        .zip(&data.labels)
        .filter(|(p, &l)| **p == Some(l))
        .count();
    Ok(OobPrediction {
        predictions,
        covered,
        accuracy: if covered == 0 {
            0.0
        } else {
            correct as f64 / covered as f64
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceEntry {
    pub variable: String,
    pub mda: f64,
    pub sd: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub response: String,
    pub n_trees: usize,
    pub oob_accuracy: f64,
    /// Descending by `mda`, ties in dictionary order.
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn get(&self, variable: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.variable == variable)
    }
}

/// Per-tree drop in out-of-bag accuracy when one feature is permuted among
/// that tree's out-of-bag records; mean and sample standard deviation over
/// trees with a nonempty out-of-bag set.
pub fn mda_importance(forest: &Forest, rs: &RecordSet, seed: u64) -> Result<ImportanceReport> {
    let data = forest.check(rs)?;
    let oob_accuracy = oob_predict(forest, rs)?.accuracy;
    let n_features = forest.features.len();

    let drops: Vec<Option<Vec<f64>>> = forest
        .trees
        .par_iter()
        .zip(&forest.out_of_bag)
        .enumerate()
        .map(|(t, (tree, oob))| {
            if oob.is_empty() {
                return None;
            }
            let base = oob
                .iter()
                .filter(|&&r| data.row_predict(tree, r as usize) == data.labels[r as usize])
                .count();
            let per_feature = (0..n_features)
                .map(|f| {
                    if !tree.uses_feature(f) {
                        return 0.0;
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream((t * n_features + f) as u64);
                    let mut donors = oob.clone();
                    donors.shuffle(&mut rng);
                    let permuted = oob
                        .iter()
                        .zip(&donors)
                        .filter(|(&r, &d)| {
                            let pred = tree.predict_with(|g| {
                                let row = if g == f { d } else { r };
                                data.features[g][row as usize]
                            });
                            pred == data.labels[r as usize]
                        })
                        .count();
                    (base as f64 - permuted as f64) / oob.len() as f64
                })
                .collect();
            Some(per_feature)
        })
        .collect();

    let scored: Vec<&Vec<f64>> = drops.iter().flatten().collect();
    let k = scored.len();
    let mut entries: Vec<(usize, ImportanceEntry)> = (0..n_features)
        .map(|f| {
            let (mda, sd) = if k == 0 {
                (0.0, 0.0)
            } else {
                let mean = scored.iter().map(|d| d[f]).sum::<f64>() / k as f64;
                let sd = if k < 2 {
                    0.0
                } else {
                    let ss: f64 = scored.iter().map(|d| (d[f] - mean).powi(2)).sum();
                    (ss / (k - 1) as f64).sqrt()
                };
                (mean, sd)
            };
            let var = forest.features[f];
            (
                var,
                ImportanceEntry {
                    variable: forest.dictionary.variable(var).name.clone(),
                    mda,
                    sd,
                    rank: 0,
                },
            )
        })
        .collect();
    entries.sort_by(|(va, a), (vb, b)| b.mda.total_cmp(&a.mda).then(va.cmp(vb)));
    let entries = entries
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut e))| {
            e.rank = i + 1;
            e
        })
        .collect();
    Ok(ImportanceReport {
        response: forest.response().to_string(),
        n_trees: forest.trees.len(),
        oob_accuracy,
        entries,
    })
}

/// The `k` most important variables.
pub fn select_top_k(report: &ImportanceReport, k: usize) -> Result<Vec<String>> {
    if k < 1 || k > report.entries.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            report.entries.len()
        )));
    }
    Ok(report.entries[..k]
        .iter()
        .map(|e| e.variable.clone())
        .collect())
}
