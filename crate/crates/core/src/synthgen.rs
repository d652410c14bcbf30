//! Synthetic earnings-call corpora with planted affect → volatility effects.
//!
//! Each call draws a latent annual volatility, simulates 30 daily returns to
//! obtain `hist_vol_30d`, and emits emotion labels per role, section and
//! modality from categorical distributions. Text labels lean positive, and a
//! per-call stress level pushes Q&A labels toward negative emotions. The
//! 30-day realized volatility is a linear function of the control and the
//! planted features plus Gaussian noise; shorter horizons add more noise.
//! Abnormal returns are pure noise.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asl::{AslTable, EmotionLabel};
use crate::features::{build_features, default_interactions, schema, FeatureKey};
use crate::ingest::{CallRecord, Horizon, HorizonTargets, Role, Section, Utterance};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid plant spec: {0}")]
    InvalidSpec(String),
    #[error("realized volatility needs at least two returns, got {0}")]
    TooFewReturns(usize),
}

/// Annualized population standard deviation of daily log returns.
pub fn realized_vol(daily_log_returns: &[f64]) -> Result<f64, SynthError> {
    let n = daily_log_returns.len();
    if n < 2 {
        return Err(SynthError::TooFewReturns(n));
    }
    let mean = daily_log_returns.iter().sum::<f64>() / n as f64;
    let var = daily_log_returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    Ok((var * 252.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSpec {
    /// Planted linear effect of each feature on 30-day realized volatility.
    pub coefficients: BTreeMap<String, f64>,
    /// Coefficient on `hist_vol_30d`.
    pub hist_vol_coef: f64,
    /// Constant added to the 30-day volatility signal.
    pub intercept: f64,
    pub noise_sd: f64,
    /// Additional noise at the 7-day and 1-day horizons.
    pub extra_noise_sd_7d: f64,
    pub extra_noise_sd_1d: f64,
    pub car_noise_sd: f64,
    pub n_calls: usize,
    pub cfo_presence: f64,
    pub cxo_presence: f64,
    pub utterances_min: usize,
    pub utterances_max: usize,
    /// Strength of the stress shift on Q&A labels.
    pub stress_shift: f64,
    pub hist_vol_median: f64,
    pub hist_vol_log_sd: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            coefficients: BTreeMap::from([
                ("CFO_delta_text_stability_mean".to_string(), -0.11),
                ("CEO_q&a_text_arousal_std".to_string(), 0.18),
            ]),
            hist_vol_coef: 0.5,
            intercept: 0.1,
            noise_sd: 0.085,
            extra_noise_sd_7d: 0.061,
            extra_noise_sd_1d: 0.118,
            car_noise_sd: 0.03,
            n_calls: 1795,
            cfo_presence: 0.9,
            cxo_presence: 0.6,
            utterances_min: 3,
            utterances_max: 8,
            stress_shift: 0.8,
            hist_vol_median: 0.3,
            hist_vol_log_sd: 0.35,
        }
    }
}

impl PlantSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let names = schema(&self.interactions());
        for (name, c) in &self.coefficients {
            if !names.contains(name) {
                return bad(format!("planted feature {name:?} is not a valid feature name"));
            }
            if !c.is_finite() {
                return bad(format!("coefficient of {name:?} is not finite"));
            }
        }
        if self.n_calls == 0 {
            return bad("n_calls must be positive".into());
        }
        for (n, p) in [("cfo_presence", self.cfo_presence), ("cxo_presence", self.cxo_presence)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{n} must lie in [0, 1]"));
            }
        }
        if self.utterances_min == 0 || self.utterances_min > self.utterances_max {
            return bad("utterance range must satisfy 1 <= min <= max".into());
        }
        for (n, v) in [
            ("noise_sd", self.noise_sd),
            ("extra_noise_sd_7d", self.extra_noise_sd_7d),
            ("extra_noise_sd_1d", self.extra_noise_sd_1d),
            ("car_noise_sd", self.car_noise_sd),
            ("hist_vol_log_sd", self.hist_vol_log_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{n} must be finite and nonnegative"));
            }
        }
        if !(self.hist_vol_median > 0.0) || !self.hist_vol_coef.is_finite() || !self.intercept.is_finite() {
            return bad("hist_vol_median must be positive; coefficients finite".into());
        }
        Ok(())
    }

    /// Default interactions plus any planted interaction columns.
    pub fn interactions(&self) -> Vec<(String, String)> {
        let mut spec = default_interactions();
        for name in self.coefficients.keys() {
            if let Some(FeatureKey::Interaction(a, b)) = FeatureKey::parse(name) {
                if !spec.contains(&(a.clone(), b.clone())) {
                    spec.push((a, b));
                }
            }
        }
        spec
    }
}

/// Planted values for one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTruth {
    pub call_id: String,
    /// Planted feature values (`None` = missing, contributes 0).
    pub features: BTreeMap<String, Option<f64>>,
    /// Noise-free 30-day volatility signal before clipping.
    pub signal: f64,
    pub latent_annual_vol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub spec: PlantSpec,
    pub calls: Vec<CallTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub calls: Vec<CallRecord>,
    pub truth: Truth,
}

// Emission weights in label order: happiness, surprise, neutral, sadness, fear, anger, disgust.
const TEXT_PRES: [f64; 7] = [0.36, 0.08, 0.36, 0.05, 0.05, 0.05, 0.05];
const TEXT_QA: [f64; 7] = [0.26, 0.10, 0.34, 0.08, 0.08, 0.07, 0.07];
const ACOUSTIC_PRES: [f64; 7] = [0.14, 0.10, 0.46, 0.09, 0.08, 0.07, 0.06];
const ACOUSTIC_QA: [f64; 7] = [0.12, 0.12, 0.40, 0.11, 0.10, 0.08, 0.07];
/// Direction of the stress shift per label.
const STRESS_SIGN: [f64; 7] = [-1.0, 0.0, -0.5, 1.0, 1.0, 1.0, 1.0];

fn emission(role: Role, section: Section, text: bool, stress: f64, shift: f64) -> WeightedIndex<f64> {
    let base = match (text, section) {
        (true, Section::Presentation) => TEXT_PRES,
        (true, Section::Qa) => TEXT_QA,
        (false, Section::Presentation) => ACOUSTIC_PRES,
        (false, Section::Qa) => ACOUSTIC_QA,
    };
    let mut w = base;
    match role {
        Role::Cfo => w[2] *= 1.3,
        Role::Cxo => w[0] *= 1.2,
        Role::Ceo => {}
    }
    if section == Section::Qa {
        let k = if text { shift } else { 0.5 * shift };
        for (wi, s) in w.iter_mut().zip(STRESS_SIGN) {
            *wi *= (k * s * stress).exp();
        }
    }
    WeightedIndex::new(w).expect("positive weights")
}

fn generate_call(spec: &PlantSpec, index: usize, seed: u64, table: &AslTable, inter: &[(String, String)]) -> (CallRecord, CallTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let annual = spec.hist_vol_median * (spec.hist_vol_log_sd * std_normal.sample(&mut rng)).exp();
    let daily = annual / 252f64.sqrt();
    let returns: Vec<f64> = (0..30).map(|_| daily * std_normal.sample(&mut rng)).collect();
    let hist_vol = realized_vol(&returns).expect("30 returns");

    let stress = std_normal.sample(&mut rng);
    let present = [
        true,
        rng.random_bool(spec.cfo_presence),
        rng.random_bool(spec.cxo_presence),
    ];
    let mut utterances = Vec::new();
    let mut order = 0u64;
    for section in Section::ALL {
        for role in Role::ALL {
            if !present[role.index()] {
                continue;
            }
            let role_stress = stress + 0.5 * std_normal.sample(&mut rng);
            let text = emission(role, section, true, role_stress, spec.stress_shift);
            let acoustic = emission(role, section, false, role_stress, spec.stress_shift);
            let n = rng.random_range(spec.utterances_min..=spec.utterances_max);
            for _ in 0..n {
                utterances.push(Utterance {
                    speaker_role: role,
                    section,
                    order_index: order,
                    text_emotion: EmotionLabel::from_index(text.sample(&mut rng)),
                    acoustic_emotion: EmotionLabel::from_index(acoustic.sample(&mut rng)),
                    transcript: None,
                });
                order += 1;
            }
        }
    }

    let mut call = CallRecord {
        call_id: format!("call-{index:05}"),
        firm_id: format!("firm-{:03}", index % 250),
        seq: Some(index as u64),
        utterances,
        hist_vol_30d: hist_vol,
        targets: BTreeMap::new(),
    };
    let row = build_features(&call, table, inter).expect("generated calls are well formed");
    let mut signal = spec.intercept + spec.hist_vol_coef * hist_vol;
    let mut features = BTreeMap::new();
    for (name, c) in &spec.coefficients {
        let v = row.get(name);
        signal += c * v.unwrap_or(0.0);
        features.insert(name.clone(), v);
    }
    let noise = |sd: f64, rng: &mut ChaCha8Rng| if sd > 0.0 { sd * std_normal.sample(rng) } else { 0.0 };
    let e30 = noise(spec.noise_sd, &mut rng);
    let e7 = e30 + noise(spec.extra_noise_sd_7d, &mut rng);
    let e1 = e7 + noise(spec.extra_noise_sd_1d, &mut rng);
    for (h, e) in [(Horizon::D1, e1), (Horizon::D7, e7), (Horizon::D30, e30)] {
        call.targets.insert(
            h,
            HorizonTargets {
                car: noise(spec.car_noise_sd, &mut rng),
                realized_vol: (signal + e).max(0.0),
            },
        );
    }
    let truth = CallTruth {
        call_id: call.call_id.clone(),
        features,
        signal,
        latent_annual_vol: annual,
    };
    (call, truth)
}

/// Generates `spec.n_calls` calls; output does not depend on thread count.
pub fn generate_corpus(spec: &PlantSpec, seed: u64) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let table = AslTable::default();
    let inter = spec.interactions();
    let (calls, truths): (Vec<_>, Vec<_>) = (0..spec.n_calls)
        .into_par_iter()
        .map(|i| generate_call(spec, i, seed, &table, &inter))
        .unzip();
    Ok(SynthCorpus {
        calls,
        truth: Truth {
            seed,
            spec: spec.clone(),
            calls: truths,
        },
    })
}
