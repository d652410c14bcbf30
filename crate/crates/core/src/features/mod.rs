//! Per-call feature rows: affective moments per (role, section, modality,
//! dimension), Q&A-minus-presentation deltas, interaction products, and the
//! historical-volatility control.

mod concordance;
mod matrix;
mod moments;
mod names;

use std::collections::BTreeMap;

use thiserror::Error;

pub use concordance::{modality_concordance, Concordance, ConcordanceReport};
pub use matrix::{FeatureMatrix, FeatureMetadata, MatrixRow};
pub use moments::{moments, Moments};
pub use names::{
    base_keys, delta_keys, feature_name, interaction_name, FeatureKey, FeatureSection, Modality,
    Stat, HIST_VOL,
};

use crate::asl::{AslDimension, AslTable, AslVector};
use crate::ingest::{CallRecord, Role, Section};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("moments of an empty series")]
    EmptySeries,
    #[error("invalid feature combination: {0}")]
    InvalidCombination(String),
    #[error("unknown feature name {0:?}")]
    UnknownFeatureName(String),
    #[error("no utterance carries both acoustic and text labels")]
    NoDualLabeledUtterances,
}

/// Pairs of feature names whose products are added as interaction columns.
pub type InteractionSpec = Vec<(String, String)>;

/// Per role: stability×tension text deltas, and control × stability delta.
pub fn default_interactions() -> InteractionSpec {
    let mut spec = Vec::new();
    for role in Role::ALL {
        let stab = format!("{}_delta_text_stability_mean", role.tag());
        let tens = format!("{}_delta_text_tension_mean", role.tag());
        spec.push((stab.clone(), tens));
        spec.push((HIST_VOL.to_string(), stab));
    }
    spec
}

/// Named feature values for one call; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub call_id: String,
    pub values: BTreeMap<String, Option<f64>>,
}

impl FeatureRow {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied().flatten()
    }
}

/// Affective coordinates of every matching utterance, in `order_index` order.
pub fn asl_series(
    call: &CallRecord,
    role: Role,
    section: Section,
    modality: Modality,
    table: &AslTable,
) -> Vec<AslVector> {
    let mut hits: Vec<_> = call
        .utterances
        .iter()
        .filter(|u| u.speaker_role == role && u.section == section)
        .filter_map(|u| u.emotion(modality).map(|e| (u.order_index, table.get(e))))
        .collect();
    hits.sort_by_key(|(k, _)| *k);
    hits.into_iter().map(|(_, v)| v).collect()
}

/// Complete schema in column order for a given interaction spec.
pub fn schema(spec: &[(String, String)]) -> Vec<String> {
    base_keys()
        .iter()
        .chain(delta_keys().iter())
        .map(FeatureKey::name)
        .chain(spec.iter().map(|(a, b)| interaction_name(a, b)))
        .chain(std::iter::once(HIST_VOL.to_string()))
        .collect()
}

fn stat_of(m: &Moments<f64>, stat: Stat) -> f64 {
    match stat {
        Stat::Mean => m.mean,
        Stat::Std => m.std,
        Stat::Skewness => m.skewness,
        Stat::Kurtosis => m.kurtosis_excess,
    }
}

/// Builds the full feature row of a call.
pub fn build_features(
    call: &CallRecord,
    table: &AslTable,
    spec: &[(String, String)],
) -> Result<FeatureRow, FeatureError> {
    let mut values = BTreeMap::new();
    for role in Role::ALL {
        for modality in Modality::ALL {
            // [section][dimension]
            let mut cell: [[Option<Moments<f64>>; 3]; 2] = [[None; 3]; 2];
            for (si, section) in Section::ALL.into_iter().enumerate() {
                let series = asl_series(call, role, section, modality, table);
                for (di, dim) in AslDimension::ALL.into_iter().enumerate() {
                    let xs: Vec<f64> = series.iter().map(|v| v.get(dim)).collect();
                    cell[si][di] = moments(&xs).ok();
                    for stat in Stat::ALL {
                        let name = feature_name(role, section.into(), modality, dim, stat)?;
                        values.insert(name, cell[si][di].as_ref().map(|m| stat_of(m, stat)));
                    }
                }
            }
            for (di, dim) in AslDimension::ALL.into_iter().enumerate() {
                for stat in Stat::DELTA {
                    let name = feature_name(role, FeatureSection::Delta, modality, dim, stat)?;
                    let v = match (&cell[0][di], &cell[1][di]) {
                        (Some(p), Some(q)) => Some(stat_of(q, stat) - stat_of(p, stat)),
                        _ => None,
                    };
                    values.insert(name, v);
                }
            }
        }
    }
    values.insert(HIST_VOL.to_string(), Some(call.hist_vol_30d));
    let mut row = FeatureRow {
        call_id: call.call_id.clone(),
        values,
    };
    for (name, v) in build_interactions(&row, spec)? {
        row.values.insert(name, v);
    }
    Ok(row)
}

/// `inter__{a}__{b}` = a × b, missing when either operand is missing.
pub fn build_interactions(
    row: &FeatureRow,
    spec: &[(String, String)],
) -> Result<Vec<(String, Option<f64>)>, FeatureError> {
    spec.iter()
        .map(|(a, b)| {
            let va = row
                .values
                .get(a)
                .ok_or_else(|| FeatureError::UnknownFeatureName(a.clone()))?;
            let vb = row
                .values
                .get(b)
                .ok_or_else(|| FeatureError::UnknownFeatureName(b.clone()))?;
            Ok((interaction_name(a, b), va.zip(*vb).map(|(x, y)| x * y)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asl::EmotionLabel;
    use crate::ingest::{HorizonTargets, Horizon, Utterance};

    fn utt(role: Role, section: Section, order: u64, text: Option<EmotionLabel>, ac: Option<EmotionLabel>) -> Utterance {
        Utterance {
            speaker_role: role,
            section,
            order_index: order,
            text_emotion: text,
            acoustic_emotion: ac,
            transcript: None,
        }
    }

    pub(crate) fn full_call() -> CallRecord {
        use EmotionLabel::*;
        let mut u = Vec::new();
        let mut k = 0;
        for section in Section::ALL {
            for role in Role::ALL {
                for e in [Happiness, Neutral, Fear] {
                    let a = if section == Section::Qa { Anger } else { Surprise };
                    u.push(utt(role, section, k, Some(e), Some(if k % 2 == 0 { a } else { Sadness })));
                    k += 1;
                }
            }
        }
        let mut targets = BTreeMap::new();
        for h in Horizon::ALL {
            targets.insert(h, HorizonTargets { car: 0.0, realized_vol: 0.2 });
        }
        CallRecord {
            call_id: "full".into(),
            firm_id: "F".into(),
            seq: None,
            utterances: u,
            hist_vol_30d: 0.25,
            targets,
        }
    }

    #[test]
    fn series_examples() {
        let t = AslTable::default();
        let mut c = full_call();
        c.utterances.retain(|u| !(u.speaker_role == Role::Cfo && u.section == Section::Qa));
        assert!(asl_series(&c, Role::Cfo, Section::Qa, Modality::Text, &t).is_empty());

        c.utterances = vec![utt(Role::Ceo, Section::Qa, 0, Some(EmotionLabel::Fear), None)];
        assert_eq!(
            asl_series(&c, Role::Ceo, Section::Qa, Modality::Text, &t),
            vec![AslVector::new(1.0, -1.0, 0.8)]
        );
        assert!(asl_series(&c, Role::Ceo, Section::Qa, Modality::Acoustic, &t).is_empty());

        c.utterances = vec![
            utt(Role::Ceo, Section::Qa, 0, Some(EmotionLabel::Neutral), None),
            utt(Role::Ceo, Section::Qa, 1, Some(EmotionLabel::Neutral), None),
        ];
        let s = asl_series(&c, Role::Ceo, Section::Qa, Modality::Text, &t);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn full_call_schema_cardinality() {
        let spec = default_interactions();
        let row = build_features(&full_call(), &AslTable::default(), &spec).unwrap();
        assert_eq!(row.values.len(), 187);
        assert_eq!(schema(&spec).len(), 187);
        let names: std::collections::BTreeSet<_> = schema(&spec).into_iter().collect();
        assert_eq!(names.len(), 187);
        assert!(row.values.keys().all(|k| names.contains(k)));
        assert!(row.values.values().all(|v| v.is_some_and(f64::is_finite)));
        for (a, b) in &spec {
            assert!(row.values.contains_key(&interaction_name(a, b)));
        }
    }

    #[test]
    fn delta_is_difference_of_means() {
        use EmotionLabel::*;
        let mut c = full_call();
        // CFO text stability: presentation neutral,neutral → 0.5; qa surprise → 0.2
        c.utterances.retain(|u| u.speaker_role != Role::Cfo);
        c.utterances.push(utt(Role::Cfo, Section::Presentation, 100, Some(Neutral), None));
        c.utterances.push(utt(Role::Cfo, Section::Presentation, 101, Some(Neutral), None));
        c.utterances.push(utt(Role::Cfo, Section::Qa, 102, Some(Surprise), None));
        let row = build_features(&c, &AslTable::default(), &[]).unwrap();
        let d = row.get("CFO_delta_text_stability_mean").unwrap();
        assert!((d - -0.3).abs() < 1e-15);
        assert_eq!(row.get("CFO_delta_text_stability_std"), Some(0.0));
        // no CFO acoustic labels at all
        assert_eq!(row.values["CFO_delta_acoustic_stability_mean"], None);
    }

    #[test]
    fn absent_role_is_missing_everywhere() {
        let mut c = full_call();
        c.utterances.retain(|u| u.speaker_role != Role::Cxo);
        let row = build_features(&c, &AslTable::default(), &default_interactions()).unwrap();
        let missing: Vec<_> = row
            .values
            .iter()
            .filter(|(k, v)| k.starts_with("CXO_") && v.is_none())
            .collect();
        assert_eq!(missing.len(), 48 + 12);
        assert_eq!(
            row.values["inter__CXO_delta_text_stability_mean__CXO_delta_text_tension_mean"],
            None
        );
        assert!(row.get("CEO_q&a_text_arousal_std").is_some());
    }

    #[test]
    fn interactions() {
        let mut row = FeatureRow { call_id: "x".into(), values: BTreeMap::new() };
        row.values.insert("a".into(), Some(2.0));
        row.values.insert("b".into(), Some(3.0));
        row.values.insert("m".into(), None);
        let add = build_interactions(&row, &[("a".into(), "b".into()), ("a".into(), "m".into())]).unwrap();
        assert_eq!(add, vec![("inter__a__b".into(), Some(6.0)), ("inter__a__m".into(), None)]);
        assert!(build_interactions(&row, &[]).unwrap().is_empty());
        assert_eq!(
            build_interactions(&row, &[("a".into(), "zz".into())]),
            Err(FeatureError::UnknownFeatureName("zz".into()))
        );
    }

    #[test]
    fn utterance_permutation_invariance() {
        let c = full_call();
        let mut p = c.clone();
        p.utterances.reverse();
        p.utterances.swap(1, 7);
        let t = AslTable::default();
        let spec = default_interactions();
        assert_eq!(build_features(&c, &t, &spec).unwrap(), build_features(&p, &t, &spec).unwrap());
    }
}
