use std::collections::BTreeMap;

use serde::Serialize;

use super::FeatureError;
use crate::asl::EmotionLabel;
use crate::ingest::{CallRecord, Role};

/// Agreement between acoustic and text labels on the same utterances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Concordance {
    /// `contingency[acoustic][text]`, indexed by [`EmotionLabel::index`].
    pub contingency: [[u64; 7]; 7],
    pub total: u64,
    pub agreement: f64,
    pub kappa: f64,
}

impl Concordance {
    pub fn from_pairs<I: IntoIterator<Item = (EmotionLabel, EmotionLabel)>>(pairs: I) -> Option<Self> {
        let mut contingency = [[0u64; 7]; 7];
        let mut total = 0u64;
        for (a, t) in pairs {
            contingency[a.index()][t.index()] += 1;
            total += 1;
        }
        (total > 0).then(|| Self::from_table(contingency))
    }

    fn from_table(contingency: [[u64; 7]; 7]) -> Self {
        let total: u64 = contingency.iter().flatten().sum();
        let n = total as f64;
        let trace: u64 = (0..7).map(|k| contingency[k][k]).sum();
        let po = trace as f64 / n;
        let pe: f64 = (0..7)
            .map(|k| {
                let row: u64 = contingency[k].iter().sum();
                let col: u64 = contingency.iter().map(|r| r[k]).sum();
                (row as f64 / n) * (col as f64 / n)
            })
            .sum();
        // Both raters used one identical label throughout: perfect agreement.
        let kappa = if 1.0 - pe <= f64::EPSILON {
            1.0
        } else {
            (po - pe) / (1.0 - pe)
        };
        Self {
            contingency,
            total,
            agreement: po,
            kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcordanceReport {
    pub per_role: BTreeMap<Role, Concordance>,
    pub pooled: Concordance,
}

/// Per-role and pooled label agreement over utterances carrying both labels.
pub fn modality_concordance(calls: &[CallRecord]) -> Result<ConcordanceReport, FeatureError> {
    let mut tables: BTreeMap<Role, [[u64; 7]; 7]> = BTreeMap::new();
    let mut pooled = [[0u64; 7]; 7];
    for u in calls.iter().flat_map(|c| c.utterances.iter()) {
        if let (Some(a), Some(t)) = (u.acoustic_emotion, u.text_emotion) {
            tables.entry(u.speaker_role).or_insert([[0; 7]; 7])[a.index()][t.index()] += 1;
            pooled[a.index()][t.index()] += 1;
        }
    }
    if tables.is_empty() {
        return Err(FeatureError::NoDualLabeledUtterances);
    }
    Ok(ConcordanceReport {
        per_role: tables
            .into_iter()
            .map(|(r, t)| (r, Concordance::from_table(t)))
            .collect(),
        pooled: Concordance::from_table(pooled),
    })
}
