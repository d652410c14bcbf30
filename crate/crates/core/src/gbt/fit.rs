use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::split::{leaf_weight, midpoint, split_gain, RELATIVE_GAIN_TOL};
use super::{GbtError, GbtHyperparams, Node, Tree, TreeEnsemble};

/// Column-major feature storage with each column's non-missing rows presorted.
///
/// Built once per matrix; every fit on a subset or resample of its rows reuses
/// the sort through per-row weights.
#[derive(Debug, Clone)]
pub struct ColumnData {
    pub(crate) n_rows: usize,
    /// NaN marks a missing value.
    pub(crate) cols: Vec<Vec<f64>>,
    pub(crate) sorted: Vec<Vec<u32>>,
    pub(crate) missing: Vec<Vec<u32>>,
}

impl ColumnData {
    pub fn from_rows<R: AsRef<[Option<f64>]>>(rows: &[R], n_cols: usize) -> Self {
        let n_rows = rows.len();
        let mut cols = vec![Vec::with_capacity(n_rows); n_cols];
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n_cols, "ragged feature rows");
            for (j, v) in r.iter().enumerate() {
                cols[j].push(v.filter(|x| x.is_finite()).unwrap_or(f64::NAN));
            }
        }
        let mut sorted = Vec::with_capacity(n_cols);
        let mut missing = Vec::with_capacity(n_cols);
        for col in &cols {
            let mut present: Vec<u32> = (0..n_rows as u32).filter(|&i| !col[i as usize].is_nan()).collect();
            // stable: equal values keep row order
            present.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            sorted.push(present);
            missing.push((0..n_rows as u32).filter(|&i| col[i as usize].is_nan()).collect());
        }
        Self {
            n_rows,
            cols,
            sorted,
            missing,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub(crate) fn value(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.cols[col][row];
        (!v.is_nan()).then_some(v)
    }
}

/// Per-round diagnostics of a fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitHistory {
    /// Weighted training RMSE after each round; index 0 is the base score alone.
    pub train_rmse: Vec<f64>,
    /// Holdout RMSE on the same schedule, when a holdout was supplied.
    pub valid_rmse: Vec<f64>,
    /// Number of trees kept.
    pub best_rounds: usize,
}

const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Copy, Default)]
struct ScanState {
    gl: f64,
    hl: f64,
    last: f64,
    started: bool,
}

#[derive(Clone, Copy)]
struct NodeBest {
    feature: usize,
    threshold: f64,
    gain: f64,
    default_left: bool,
}

fn weighted_rmse(pred: &[f64], y: &[f64], w: &[u32]) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..y.len() {
        if w[i] > 0 {
            let d = pred[i] - y[i];
            s += w[i] as f64 * d * d;
            n += w[i] as f64;
        }
    }
    (s / n).sqrt()
}

fn rmse_on(pred: &[f64], y: &[f64], idx: &[usize]) -> f64 {
    let s: f64 = idx.iter().map(|&i| (pred[i] - y[i]).powi(2)).sum();
    (s / idx.len() as f64).sqrt()
}

/// Fits a squared-error boosted ensemble.
///
/// `weights[i]` is the multiplicity of row `i` in the training sample (0 =
/// excluded). `valid` lists rows scored for early stopping; it should not
/// overlap the training rows.
pub fn fit_weighted(
    data: &ColumnData,
    schema: &[String],
    y: &[f64],
    weights: &[u32],
    valid: Option<&[usize]>,
    hp: &GbtHyperparams,
) -> Result<(TreeEnsemble, FitHistory), GbtError> {
    hp.validate()?;
    let n = data.n_rows();
    if y.len() != n || weights.len() != n || schema.len() != data.n_cols() {
        return Err(GbtError::SchemaMismatch("data, target and weights disagree in shape".into()));
    }
    let total_w: u64 = weights.iter().map(|&w| w as u64).sum();
    if total_w < 2 {
        return Err(GbtError::EmptyMatrix);
    }
    if (0..n).any(|i| weights[i] > 0 && !y[i].is_finite()) {
        return Err(GbtError::NonFiniteTarget);
    }
    let valid = valid.filter(|v| !v.is_empty());
    if let Some(v) = valid {
        if v.iter().any(|&i| i >= n || !y[i].is_finite()) {
            return Err(GbtError::NonFiniteTarget);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let base_score = {
        let mut s = crate::scalar::CompensatedSum::new();
        let mut first = None;
        let mut constant = true;
        for i in 0..n {
            if weights[i] > 0 {
                s.add(weights[i] as f64 * y[i]);
                match first {
                    None => first = Some(y[i]),
                    Some(f) => constant &= f == y[i],
                }
            }
        }
        if constant {
            first.unwrap()
        } else {
            s.value() / total_w as f64
        }
    };

    let n_cols = data.n_cols();
    let k_cols = ((n_cols as f64 * hp.colsample).floor() as usize).clamp(1, n_cols);
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut round_w = weights.to_vec();
    let mut trees: Vec<Tree> = Vec::new();
    let mut history = FitHistory::default();
    history.train_rmse.push(weighted_rmse(&pred, y, weights));
    let mut best = (f64::INFINITY, 0usize);
    if let Some(v) = valid {
        let r = rmse_on(&pred, y, v);
        history.valid_rmse.push(r);
        best = (r, 0);
    }

    // Expanded instance list for subsampling with multiplicities.
    let instances: Vec<u32> = (0..n as u32)
        .flat_map(|i| std::iter::repeat_n(i, weights[i as usize] as usize))
        .collect();
    let k_rows = ((instances.len() as f64 * hp.subsample).floor() as usize).clamp(1, instances.len());

    for round in 0..hp.n_estimators {
        if hp.subsample < 1.0 {
            round_w.iter_mut().for_each(|w| *w = 0);
            for k in sample(&mut rng, instances.len(), k_rows) {
                round_w[instances[k] as usize] += 1;
            }
        }
        let mut cols: Vec<usize> = if k_cols < n_cols {
            sample(&mut rng, n_cols, k_cols).into_vec()
        } else {
            (0..n_cols).collect()
        };
        cols.sort_unstable();

        for i in 0..n {
            grad[i] = pred[i] - y[i];
        }
        let tree = grow_tree(data, &grad, &round_w, &cols, hp);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += hp.learning_rate * tree.leaf_value(|j| data.value(i, j));
        }
        trees.push(tree);
        history.train_rmse.push(weighted_rmse(&pred, y, weights));

        if let Some(v) = valid {
            let r = rmse_on(&pred, y, v);
            history.valid_rmse.push(r);
            if r < best.0 {
                best = (r, round + 1);
            } else if round + 1 - best.1 >= hp.early_stopping_rounds {
                break;
            }
        }
    }
    if valid.is_some() {
        trees.truncate(best.1);
    }
    history.best_rounds = trees.len();
    Ok((
        TreeEnsemble {
            base_score,
            learning_rate: hp.learning_rate,
            schema: schema.to_vec(),
            trees,
        },
        history,
    ))
}

fn grow_tree(data: &ColumnData, grad: &[f64], w: &[u32], cols: &[usize], hp: &GbtHyperparams) -> Tree {
    let n = data.n_rows();
    let mut nodes: Vec<Node> = vec![Node::Leaf { weight: 0.0 }];
    let mut node_of: Vec<u32> = (0..n).map(|i| if w[i] > 0 { 0 } else { NO_NODE }).collect();
    // Per-node totals: G, H, Σ w g² (gain scale).
    let mut stats: Vec<(f64, f64, f64)> = vec![(0.0, 0.0, 0.0)];
    for i in 0..n {
        if w[i] > 0 {
            let wi = w[i] as f64;
            stats[0].0 += wi * grad[i];
            stats[0].1 += wi;
            stats[0].2 += wi * grad[i] * grad[i];
        }
    }
    let mut frontier: Vec<usize> = vec![0];

    for _depth in 0..hp.max_depth {
        if frontier.is_empty() {
            break;
        }
        // slot[node] = position in frontier
        let mut slot = vec![usize::MAX; nodes.len()];
        for (k, &id) in frontier.iter().enumerate() {
            slot[id] = k;
        }
        let m = frontier.len();
        let mut best: Vec<Option<NodeBest>> = vec![None; m];
        let tol: Vec<f64> = frontier.iter().map(|&id| RELATIVE_GAIN_TOL * 0.5 * stats[id].2).collect();
        let mut miss = vec![(0.0f64, 0.0f64); m];
        let mut scan = vec![ScanState::default(); m];

        for &j in cols {
            miss.iter_mut().for_each(|x| *x = (0.0, 0.0));
            for &r in &data.missing[j] {
                let r = r as usize;
                let node = node_of[r];
                if node == NO_NODE || slot[node as usize] == usize::MAX {
                    continue;
                }
                let s = slot[node as usize];
                miss[s].0 += w[r] as f64 * grad[r];
                miss[s].1 += w[r] as f64;
            }
            scan.iter_mut().for_each(|x| *x = ScanState::default());
            let col = &data.cols[j];
            for &r in &data.sorted[j] {
                let r = r as usize;
                let node = node_of[r];
                if node == NO_NODE || slot[node as usize] == usize::MAX {
                    continue;
                }
                let s = slot[node as usize];
                let v = col[r];
                let st = &mut scan[s];
                if st.started && v != st.last {
                    let (g_tot, h_tot, _) = stats[frontier[s]];
                    let threshold = midpoint(st.last, v);
                    for default_left in [true, false] {
                        let (lg, lh) = if default_left {
                            (st.gl + miss[s].0, st.hl + miss[s].1)
                        } else {
                            (st.gl, st.hl)
                        };
                        let (rg, rh) = (g_tot - lg, h_tot - lh);
                        if lh < hp.min_child_weight || rh < hp.min_child_weight || lh <= 0.0 || rh <= 0.0 {
                            continue;
                        }
                        let gain = split_gain(lg, lh, rg, rh, hp.l2_leaf);
                        if gain > tol[s] && best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(NodeBest {
                                feature: j,
                                threshold,
                                gain,
                                default_left,
                            });
                        }
                    }
                }
                st.gl += w[r] as f64 * grad[r];
                st.hl += w[r] as f64;
                st.last = v;
                st.started = true;
            }
        }

        let mut next = Vec::new();
        let mut child_of = vec![(0u32, 0u32); m];
        for (s, &id) in frontier.iter().enumerate() {
            if let Some(b) = best[s] {
                let l = nodes.len();
                nodes.push(Node::Leaf { weight: 0.0 });
                nodes.push(Node::Leaf { weight: 0.0 });
                stats.push((0.0, 0.0, 0.0));
                stats.push((0.0, 0.0, 0.0));
                nodes[id] = Node::Split {
                    feature: b.feature,
                    threshold: b.threshold,
                    default_left: b.default_left,
                    gain: b.gain,
                    left: l,
                    right: l + 1,
                };
                child_of[s] = (l as u32, l as u32 + 1);
                next.push(l);
                next.push(l + 1);
            }
        }
        if next.is_empty() {
            break;
        }
        for r in 0..n {
            let node = node_of[r];
            if node == NO_NODE || slot[node as usize] == usize::MAX {
                continue;
            }
            let s = slot[node as usize];
            if let Some(b) = best[s] {
                let go_left = match data.value(r, b.feature) {
                    None => b.default_left,
                    Some(v) => v < b.threshold,
                };
                let child = if go_left { child_of[s].0 } else { child_of[s].1 };
                node_of[r] = child;
                let wi = w[r] as f64;
                let st = &mut stats[child as usize];
                st.0 += wi * grad[r];
                st.1 += wi;
                st.2 += wi * grad[r] * grad[r];
            }
        }
        frontier = next;
    }

    for (id, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { weight } = node {
            *weight = leaf_weight(stats[id].0, stats[id].1, hp.l2_leaf);
        }
    }
    Tree { nodes }.into_preorder()
}
