//! Gradient-boosted regression trees with a squared-error objective.
//!
//! Exact greedy splits, shrinkage, row and column subsampling, learned
//! default directions for missing values, early stopping on a holdout, and
//! total-gain feature importance.

mod fit;
mod split;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureRow;

pub use fit::{fit_weighted, ColumnData, FitHistory};
pub use split::{best_split, leaf_weight, split_gain, SplitCandidate};

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("need at least two training rows")]
    EmptyMatrix,
    #[error("target contains a non-finite value")]
    NonFiniteTarget,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("ensemble file: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtHyperparams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample: f64,
    pub n_estimators: usize,
    pub early_stopping_rounds: usize,
    pub l2_leaf: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbtHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_depth: 3,
            subsample: 0.8,
            colsample: 0.8,
            n_estimators: 100,
            early_stopping_rounds: 10,
            l2_leaf: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl GbtHyperparams {
    pub fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: &str| Err(GbtError::InvalidHyperparams(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("colsample must lie in (0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.l2_leaf >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("l2_leaf and min_child_weight must be nonnegative");
        }
        if self.early_stopping_rounds == 0 {
            return bad("early_stopping_rounds must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Flat tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf weight reached by a row whose column `j` reads `value(j)`.
    pub fn leaf_value(&self, value: impl Fn(usize) -> Option<f64>) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match value(*feature) {
                        Some(v) => v < *threshold,
                        None => *default_left,
                    };
                    id = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Same tree with nodes laid out in depth-first preorder.
    pub(crate) fn into_preorder(self) -> Tree {
        fn walk(src: &[Node], id: usize, out: &mut Vec<Node>) -> usize {
            let at = out.len();
            out.push(src[id].clone());
            if let Node::Split { left, right, .. } = src[id] {
                let l = walk(src, left, out);
                let r = walk(src, right, out);
                if let Node::Split { left, right, .. } = &mut out[at] {
                    *left = l;
                    *right = r;
                }
            }
            at
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(&self.nodes, 0, &mut out);
        Tree { nodes: out }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, gain, .. } => Some((*feature, *gain)),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub schema: Vec<String>,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    /// Prediction for a row aligned with `schema`.
    pub fn predict_values(&self, values: &[Option<f64>]) -> f64 {
        assert_eq!(values.len(), self.schema.len(), "row length differs from schema");
        self.trees.iter().fold(self.base_score, |acc, t| {
            acc + self.learning_rate * t.leaf_value(|j| values[j].filter(|v| v.is_finite()))
        })
    }

    /// Prediction for a named row; absent names count as missing.
    pub fn predict(&self, row: &FeatureRow) -> Result<f64, GbtError> {
        if let Some(k) = row.values.keys().find(|k| !self.schema.contains(k)) {
            return Err(GbtError::SchemaMismatch(format!("feature {k:?} not in ensemble schema")));
        }
        let values: Vec<Option<f64>> = self.schema.iter().map(|n| row.get(n)).collect();
        Ok(self.predict_values(&values))
    }

    /// Total split gain per feature, normalized to sum to 1 when positive.
    pub fn gain_importance(&self) -> BTreeMap<String, f64> {
        let mut totals = vec![0.0; self.schema.len()];
        for t in &self.trees {
            for (f, g) in t.splits() {
                totals[f] += g;
            }
        }
        let sum: f64 = totals.iter().sum();
        if sum > 0.0 {
            totals.iter_mut().for_each(|v| *v /= sum);
        }
        self.schema.iter().cloned().zip(totals).collect()
    }

    pub fn to_json(&self) -> Result<String, GbtError> {
        let doc = EnsembleDoc {
            format: FORMAT.to_string(),
            version: VERSION,
            base_score: self.base_score,
            learning_rate: self.learning_rate,
            schema: self.schema.clone(),
            trees: self.trees.iter().map(|t| to_doc(t, 0, &self.schema)).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self, GbtError> {
        let doc: EnsembleDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(GbtError::SchemaMismatch(format!(
                "unsupported ensemble format {} v{}",
                doc.format, doc.version
            )));
        }
        let trees = doc
            .trees
            .iter()
            .map(|d| {
                let mut nodes = Vec::new();
                from_doc(d, &doc.schema, &mut nodes)?;
                Ok(Tree { nodes })
            })
            .collect::<Result<_, GbtError>>()?;
        Ok(Self {
            base_score: doc.base_score,
            learning_rate: doc.learning_rate,
            schema: doc.schema,
            trees,
        })
    }
}

const FORMAT: &str = "affect-risk-gbt";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EnsembleDoc {
    format: String,
    version: u32,
    base_score: f64,
    learning_rate: f64,
    schema: Vec<String>,
    trees: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeDoc {
    Split {
        feature: String,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: Box<NodeDoc>,
        right: Box<NodeDoc>,
    },
    Leaf {
        leaf: f64,
    },
}

fn to_doc(tree: &Tree, id: usize, schema: &[String]) -> NodeDoc {
    match &tree.nodes[id] {
        Node::Leaf { weight } => NodeDoc::Leaf { leaf: *weight },
        Node::Split {
            feature,
            threshold,
            default_left,
            gain,
            left,
            right,
        } => NodeDoc::Split {
            feature: schema[*feature].clone(),
            threshold: *threshold,
            default_left: *default_left,
            gain: *gain,
            left: Box::new(to_doc(tree, *left, schema)),
            right: Box::new(to_doc(tree, *right, schema)),
        },
    }
}

fn from_doc(doc: &NodeDoc, schema: &[String], nodes: &mut Vec<Node>) -> Result<usize, GbtError> {
    let id = nodes.len();
    match doc {
        NodeDoc::Leaf { leaf } => nodes.push(Node::Leaf { weight: *leaf }),
        NodeDoc::Split {
            feature,
            threshold,
            default_left,
            gain,
            left,
            right,
        } => {
            let f = schema
                .iter()
                .position(|n| n == feature)
                .ok_or_else(|| GbtError::SchemaMismatch(format!("split on unknown feature {feature:?}")))?;
            nodes.push(Node::Leaf { weight: 0.0 });
            let l = from_doc(left, schema, nodes)?;
            let r = from_doc(right, schema, nodes)?;
            nodes[id] = Node::Split {
                feature: f,
                threshold: *threshold,
                default_left: *default_left,
                gain: *gain,
                left: l,
                right: r,
            };
        }
    }
    Ok(id)
}

/// Fits on `x`/`y`, early-stopping on `valid` when given.
pub fn fit(
    x: &[Vec<Option<f64>>],
    schema: &[String],
    y: &[f64],
    valid: Option<(&[Vec<Option<f64>>], &[f64])>,
    hp: &GbtHyperparams,
) -> Result<(TreeEnsemble, FitHistory), GbtError> {
    if x.len() != y.len() {
        return Err(GbtError::SchemaMismatch("row count differs from target length".into()));
    }
    if x.len() < 2 {
        return Err(GbtError::EmptyMatrix);
    }
    let mut rows: Vec<&[Option<f64>]> = x.iter().map(|r| r.as_slice()).collect();
    let mut targets = y.to_vec();
    let mut weights = vec![1u32; x.len()];
    let mut valid_idx = Vec::new();
    if let Some((vx, vy)) = valid {
        if vx.len() != vy.len() {
            return Err(GbtError::SchemaMismatch("holdout row count differs from target length".into()));
        }
        for (r, &t) in vx.iter().zip(vy) {
            valid_idx.push(rows.len());
            rows.push(r);
            targets.push(t);
            weights.push(0);
        }
    }
    if rows.iter().any(|r| r.len() != schema.len()) {
        return Err(GbtError::SchemaMismatch("row length differs from schema".into()));
    }
    let data = ColumnData::from_rows(&rows, schema.len());
    fit_weighted(&data, schema, &targets, &weights, valid.map(|_| valid_idx.as_slice()), hp)
}
