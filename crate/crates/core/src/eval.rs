//! Out-of-sample R², train/test splitting, bootstrap validation and
//! importance distributions, and the four-variant modality ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureKey, FeatureMatrix, Modality, HIST_VOL};
use crate::gbt::{fit_weighted, ColumnData, GbtError, GbtHyperparams};
use crate::ingest::Horizon;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("target has zero variance around the baseline mean")]
    DegenerateTarget,
    #[error("predictions and actuals must have equal, non-zero length")]
    LengthMismatch,
    #[error("need at least two calls to split, got {0}")]
    TooFewCalls(usize),
    #[error("no call has targets for horizon {0}")]
    MissingTargets(Horizon),
    #[error("invalid evaluation option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Fit(#[from] GbtError),
}

/// `1 − Σ(y − ŷ)² / Σ(y − baseline_mean)²`.
pub fn r2_oos(predictions: &[f64], actuals: &[f64], baseline_mean: f64) -> Result<f64, EvalError> {
    if predictions.len() != actuals.len() || actuals.is_empty() {
        return Err(EvalError::LengthMismatch);
    }
    let sse: f64 = predictions.iter().zip(actuals).map(|(p, y)| (y - p).powi(2)).sum();
    let sst: f64 = actuals.iter().map(|y| (y - baseline_mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(EvalError::DegenerateTarget);
    }
    Ok(1.0 - sse / sst)
}

/// As [`r2_oos`], but a constant test target predicted exactly scores 0.
fn r2_or_flat(predictions: &[f64], actuals: &[f64], baseline_mean: f64) -> Result<f64, EvalError> {
    match r2_oos(predictions, actuals, baseline_mean) {
        Err(EvalError::DegenerateTarget) if predictions.iter().zip(actuals).all(|(p, y)| p == y) => Ok(0.0),
        r => r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Chronological,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPolicy {
    pub mode: SplitMode,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self {
            mode: SplitMode::Chronological,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Partitions positions `0..order_keys.len()` into sorted (train, test).
///
/// The test set has `floor(n · test_fraction)` calls, clamped to `1..=n−1`.
/// Chronological mode takes the calls with the largest keys (ties by
/// position); random mode takes a seeded shuffle's prefix.
pub fn split(order_keys: &[u64], policy: &SplitPolicy) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    let n = order_keys.len();
    if n < 2 {
        return Err(EvalError::TooFewCalls(n));
    }
    if !(policy.test_fraction > 0.0 && policy.test_fraction < 1.0) {
        return Err(EvalError::InvalidOption("test_fraction must lie in (0, 1)".into()));
    }
    let n_test = ((n as f64 * policy.test_fraction + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut test = match policy.mode {
        SplitMode::Chronological => {
            idx.sort_by_key(|&i| (order_keys[i], i));
            idx.split_off(n - n_test)
        }
        SplitMode::Random => {
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(policy.seed));
            let rest = idx.split_off(n_test);
            std::mem::replace(&mut idx, rest)
        }
    };
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Car,
    RealizedVol,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Car => "car",
            TargetKind::RealizedVol => "realized_vol",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub horizon: Horizon,
    pub kind: TargetKind,
}

/// Rows carrying the target, with its values.
fn target_rows(matrix: &FeatureMatrix, target: Target) -> Result<(Vec<usize>, Vec<f64>), EvalError> {
    let (idx, y): (Vec<usize>, Vec<f64>) = matrix
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let t = r.targets.get(&target.horizon)?;
            let v = match target.kind {
                TargetKind::Car => t.car,
                TargetKind::RealizedVol => t.realized_vol,
            };
            v.is_finite().then_some((i, v))
        })
        .unzip();
    if idx.is_empty() {
        return Err(EvalError::MissingTargets(target.horizon));
    }
    Ok((idx, y))
}

/// Compensated mean; exact for a constant sequence.
fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let mut s = crate::scalar::CompensatedSum::new();
    let (mut n, mut first, mut constant) = (0usize, f64::NAN, true);
    for x in xs {
        if n == 0 {
            first = x;
        }
        constant &= x == first;
        s.add(x);
        n += 1;
    }
    if constant {
        first
    } else {
        s.value() / n as f64
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Interval {
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            mean: mean_of(samples.iter().copied()),
            ci_low: percentile(&s, 0.025),
            ci_high: percentile(&s, 0.975),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub target: Target,
    pub n_train: usize,
    pub n_test: usize,
    /// One out-of-sample R² per iteration, in iteration order.
    pub r2: Vec<f64>,
    pub summary: Interval,
    /// Trees kept after early stopping, per iteration.
    pub rounds: Vec<usize>,
}

impl BootstrapReport {
    /// One JSON object per iteration.
    pub fn to_jsonl(&self) -> String {
        self.r2
            .iter()
            .zip(&self.rounds)
            .enumerate()
            .map(|(i, (r, n))| {
                serde_json::json!({"iteration": i, "r2": r, "trees": n}).to_string() + "\n"
            })
            .collect()
    }
}

fn resample_weights(rng: &mut ChaCha8Rng, n_total: usize, pool: &[usize]) -> Vec<u32> {
    let mut w = vec![0u32; n_total];
    for _ in 0..pool.len() {
        w[pool[rng.random_range(0..pool.len())]] += 1;
    }
    w
}

/// Fixed test set, bootstrap-resampled training set per iteration.
///
/// Training rows left out of a resample form that iteration's
/// early-stopping holdout. Iteration `i` uses seed `derive_seed(hp.seed, i)`.
pub fn bootstrap_validate(
    matrix: &FeatureMatrix,
    target: Target,
    hp: &GbtHyperparams,
    policy: &SplitPolicy,
    iterations: usize,
) -> Result<BootstrapReport, EvalError> {
    if iterations == 0 {
        return Err(EvalError::InvalidOption("iterations must be positive".into()));
    }
    hp.validate()?;
    let (rows, y) = target_rows(matrix, target)?;
    let keys: Vec<u64> = rows.iter().map(|&i| matrix.rows[i].order_key).collect();
    let (train, test) = split(&keys, policy)?;
    let values: Vec<&[Option<f64>]> = rows.iter().map(|&i| matrix.rows[i].values.as_slice()).collect();
    let data = ColumnData::from_rows(&values, matrix.n_cols());
    let baseline = mean_of(train.iter().map(|&i| y[i]));
    let actual: Vec<f64> = test.iter().map(|&i| y[i]).collect();

    let runs = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let seed = derive_seed(hp.seed, it as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = resample_weights(&mut rng, y.len(), &train);
            let oob: Vec<usize> = train.iter().copied().filter(|&i| w[i] == 0).collect();
            let hp_i = GbtHyperparams { seed, ..hp.clone() };
            let (ens, _) = fit_weighted(&data, &matrix.schema, &y, &w, Some(&oob), &hp_i)?;
            let pred: Vec<f64> = test.iter().map(|&i| ens.predict_values(values[i])).collect();
            Ok((r2_or_flat(&pred, &actual, baseline)?, ens.trees.len()))
        })
        .collect::<Result<Vec<(f64, usize)>, EvalError>>()?;
    let (r2, rounds): (Vec<f64>, Vec<usize>) = runs.into_iter().unzip();
    Ok(BootstrapReport {
        target,
        n_train: train.len(),
        n_test: test.len(),
        summary: Interval::of(&r2),
        r2,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    /// Per-iteration importance, in iteration order.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub target: Target,
    pub iterations: usize,
    /// Sorted by descending mean importance, ties by schema order.
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    pub fn get(&self, feature: &str) -> Option<&FeatureImportance> {
        self.features.iter().find(|f| f.feature == feature)
    }

    /// Fraction of iterations in which `feature` ranks within the top `k`.
    pub fn top_k_rate(&self, feature: &str, k: usize) -> f64 {
        let Some(target) = self.get(feature) else {
            return 0.0;
        };
        let pos = self.features.iter().position(|f| f.feature == feature).unwrap();
        let mut hits = 0;
        for it in 0..self.iterations {
            let v = target.samples[it];
            let better = self
                .features
                .iter()
                .enumerate()
                .filter(|(j, f)| f.samples[it] > v || (f.samples[it] == v && *j < pos))
                .count();
            hits += usize::from(better < k && v > 0.0);
        }
        hits as f64 / self.iterations as f64
    }

    /// One JSON object per iteration with the full importance vector.
    pub fn to_jsonl(&self) -> String {
        (0..self.iterations)
            .map(|it| {
                let m: BTreeMap<&str, f64> =
                    self.features.iter().map(|f| (f.feature.as_str(), f.samples[it])).collect();
                serde_json::json!({"iteration": it, "importance": m}).to_string() + "\n"
            })
            .collect()
    }

    /// Aligned ranking of the top `k` features.
    pub fn render_top(&self, k: usize) -> String {
        let rows = &self.features[..k.min(self.features.len())];
        let w = rows.iter().map(|f| f.feature.len()).max().unwrap_or(7).max(7);
        let mut out = format!(
            "{:>4}  {:<w$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
            "rank", "feature", "mean", "ci_low", "ci_high", "median"
        );
        for (i, f) in rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>4}  {:<w$}  {:>9.5}  {:>9.5}  {:>9.5}  {:>9.5}",
                i + 1,
                f.feature,
                f.mean,
                f.ci_low,
                f.ci_high,
                f.median
            );
        }
        out
    }
}

/// Importance distribution over bootstrap resamples of every row with the
/// target; each fit runs exactly `hp.n_estimators` rounds.
pub fn bootstrap_importance(
    matrix: &FeatureMatrix,
    target: Target,
    hp: &GbtHyperparams,
    iterations: usize,
) -> Result<ImportanceReport, EvalError> {
    if iterations == 0 {
        return Err(EvalError::InvalidOption("iterations must be positive".into()));
    }
    hp.validate()?;
    let (rows, y) = target_rows(matrix, target)?;
    let values: Vec<&[Option<f64>]> = rows.iter().map(|&i| matrix.rows[i].values.as_slice()).collect();
    let data = ColumnData::from_rows(&values, matrix.n_cols());
    let pool: Vec<usize> = (0..y.len()).collect();
    let vectors = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let seed = derive_seed(hp.seed, it as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = resample_weights(&mut rng, y.len(), &pool);
            let hp_i = GbtHyperparams { seed, ..hp.clone() };
            let (ens, _) = fit_weighted(&data, &matrix.schema, &y, &w, None, &hp_i)?;
            let imp = ens.gain_importance();
            Ok(matrix.schema.iter().map(|n| imp[n]).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<Vec<f64>>, EvalError>>()?;

    let mut features: Vec<FeatureImportance> = matrix
        .schema
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let samples: Vec<f64> = vectors.iter().map(|v| v[j]).collect();
            let mut s = samples.clone();
            s.sort_by(f64::total_cmp);
            let iv = Interval::of(&samples);
            FeatureImportance {
                feature: name.clone(),
                mean: iv.mean,
                ci_low: iv.ci_low,
                ci_high: iv.ci_high,
                q1: percentile(&s, 0.25),
                median: percentile(&s, 0.5),
                q3: percentile(&s, 0.75),
                min: s[0],
                max: s[s.len() - 1],
                samples,
            }
        })
        .collect();
    // stable sort keeps schema order among equal means
    features.sort_by(|a, b| b.mean.total_cmp(&a.mean));
    Ok(ImportanceReport {
        target,
        iterations,
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FactorsOnly,
    AcousticOnly,
    TextOnly,
    Multimodal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::FactorsOnly,
        Variant::AcousticOnly,
        Variant::TextOnly,
        Variant::Multimodal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::FactorsOnly => "Factors-Only",
            Variant::AcousticOnly => "Acoustic-Only",
            Variant::TextOnly => "Text-Only",
            Variant::Multimodal => "Multimodal",
        }
    }

    /// Whether a column belongs to this variant's feature set.
    ///
    /// Modality-only variants keep columns built solely from that modality,
    /// without the control.
    pub fn keeps(self, column: &str) -> bool {
        match self {
            Variant::Multimodal => true,
            Variant::FactorsOnly => column == HIST_VOL,
            Variant::AcousticOnly | Variant::TextOnly => {
                let want = if self == Variant::AcousticOnly {
                    Modality::Acoustic
                } else {
                    Modality::Text
                };
                match FeatureKey::parse(column).map(|k| k.sources()) {
                    Some((mods, control)) => !control && mods == [want],
                    None => false,
                }
            }
        }
    }

    pub fn columns(self, schema: &[String]) -> Vec<String> {
        schema.iter().filter(|c| self.keeps(c)).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub variant: Variant,
    pub horizons: Vec<Horizon>,
    pub target_kind: TargetKind,
}

impl AblationConfig {
    /// CAR for the multimodal model and volatility for all four variants.
    pub fn table7(horizons: &[Horizon]) -> Vec<AblationConfig> {
        let mut out = vec![AblationConfig {
            variant: Variant::Multimodal,
            horizons: horizons.to_vec(),
            target_kind: TargetKind::Car,
        }];
        out.extend(Variant::ALL.into_iter().map(|variant| AblationConfig {
            variant,
            horizons: horizons.to_vec(),
            target_kind: TargetKind::RealizedVol,
        }));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub horizon: Horizon,
    pub target_kind: TargetKind,
    pub n_features: usize,
    pub r2: Interval,
    /// Per-iteration R², in iteration order.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub iterations: usize,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant, horizon: Horizon, kind: TargetKind) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.horizon == horizon && c.target_kind == kind)
    }

    /// One JSON object per (cell, iteration).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            for (i, r) in c.samples.iter().enumerate() {
                let rec = serde_json::json!({
                    "variant": c.variant,
                    "horizon": c.horizon,
                    "target": c.target_kind,
                    "iteration": i,
                    "r2": r,
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        out
    }

    /// Plain-text table: one row per horizon, CAR (multimodal) then the
    /// volatility variants.
    pub fn render_text(&self) -> String {
        let mut horizons: Vec<Horizon> = self.cells.iter().map(|c| c.horizon).collect();
        horizons.sort();
        horizons.dedup();
        let mut cols: Vec<(Variant, TargetKind, String)> = Vec::new();
        for c in &self.cells {
            let key = (c.variant, c.target_kind);
            if !cols.iter().any(|(v, k, _)| (*v, *k) == key) {
                let head = match c.target_kind {
                    TargetKind::Car => format!("CAR {}", c.variant.label()),
                    TargetKind::RealizedVol => format!("Vol {}", c.variant.label()),
                };
                cols.push((c.variant, c.target_kind, head));
            }
        }
        let mut out = format!("{:<8}", "Horizon");
        for (_, _, head) in &cols {
            let _ = write!(out, "  {head:>18}");
        }
        out.push('\n');
        for h in horizons {
            let _ = write!(out, "{:<8}", format!("t+{}", h.days()));
            for (v, k, _) in &cols {
                match self.get(*v, h, *k) {
                    Some(c) => {
                        let _ = write!(out, "  {:>18.3}", c.r2.mean);
                    }
                    None => {
                        let _ = write!(out, "  {:>18}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Mean bootstrap R² for every (variant × horizon × target) cell requested.
pub fn run_ablation(
    matrix: &FeatureMatrix,
    configs: &[AblationConfig],
    policy: &SplitPolicy,
    hp: &GbtHyperparams,
    iterations: usize,
) -> Result<AblationTable, EvalError> {
    let mut cells = Vec::new();
    for cfg in configs {
        let cols = cfg.variant.columns(&matrix.schema);
        if cols.is_empty() {
            return Err(EvalError::InvalidOption(format!(
                "variant {:?} selects no columns",
                cfg.variant
            )));
        }
        let sub = matrix
            .select_columns(&cols)
            .expect("columns come from the schema");
        for &horizon in &cfg.horizons {
            let target = Target {
                horizon,
                kind: cfg.target_kind,
            };
            let rep = bootstrap_validate(&sub, target, hp, policy, iterations)?;
            cells.push(AblationCell {
                variant: cfg.variant,
                horizon,
                target_kind: cfg.target_kind,
                n_features: cols.len(),
                r2: rep.summary,
                samples: rep.r2,
            });
        }
    }
    Ok(AblationTable { iterations, cells })
}
