use std::fmt;

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::asl::AslDimension;
use crate::ingest::{Role, Section};

pub const HIST_VOL: &str = "hist_vol_30d";
const INTERACTION_PREFIX: &str = "inter__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Acoustic,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Acoustic, Modality::Text];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Acoustic => "acoustic",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stat {
    Mean,
    Std,
    Skewness,
    Kurtosis,
}

impl Stat {
    pub const ALL: [Stat; 4] = [Stat::Mean, Stat::Std, Stat::Skewness, Stat::Kurtosis];
    pub const DELTA: [Stat; 2] = [Stat::Mean, Stat::Std];

    pub fn as_str(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Std => "std",
            Stat::Skewness => "skewness",
            Stat::Kurtosis => "kurtosis",
        }
    }
}

/// Either a real call section or the Q&A-minus-presentation pseudo-section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureSection {
    Section(Section),
    Delta,
}

impl From<Section> for FeatureSection {
    fn from(s: Section) -> Self {
        FeatureSection::Section(s)
    }
}

/// Structured identity of a feature column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKey {
    Affect {
        role: Role,
        section: FeatureSection,
        modality: Modality,
        dimension: AslDimension,
        stat: Stat,
    },
    Interaction(String, String),
    HistVol,
}

/// `{ROLE}_{section}_{modality}_{dimension}_{stat}` or
/// `{ROLE}_delta_{modality}_{dimension}_{stat}`; deltas only carry mean and std.
pub fn feature_name(
    role: Role,
    section: FeatureSection,
    modality: Modality,
    dimension: AslDimension,
    stat: Stat,
) -> Result<String, FeatureError> {
    let sec = match section {
        FeatureSection::Section(s) => s.tag(),
        FeatureSection::Delta => {
            if !Stat::DELTA.contains(&stat) {
                return Err(FeatureError::InvalidCombination(format!(
                    "delta features carry mean/std only, got {}",
                    stat.as_str()
                )));
            }
            "delta"
        }
    };
    Ok(format!(
        "{}_{}_{}_{}_{}",
        role.tag(),
        sec,
        modality.as_str(),
        dimension.as_str(),
        stat.as_str()
    ))
}

pub fn interaction_name(a: &str, b: &str) -> String {
    format!("{INTERACTION_PREFIX}{a}__{b}")
}

impl FeatureKey {
    pub fn name(&self) -> String {
        match self {
            FeatureKey::Affect {
                role,
                section,
                modality,
                dimension,
                stat,
            } => feature_name(*role, *section, *modality, *dimension, *stat)
                .expect("FeatureKey holds a valid combination"),
            FeatureKey::Interaction(a, b) => interaction_name(a, b),
            FeatureKey::HistVol => HIST_VOL.to_string(),
        }
    }

    /// Inverse of [`FeatureKey::name`].
    pub fn parse(name: &str) -> Option<FeatureKey> {
        if name == HIST_VOL {
            return Some(FeatureKey::HistVol);
        }
        if let Some(rest) = name.strip_prefix(INTERACTION_PREFIX) {
            // Operand names never contain a double underscore.
            let (a, b) = rest.split_once("__")?;
            FeatureKey::parse(a)?;
            FeatureKey::parse(b)?;
            return Some(FeatureKey::Interaction(a.to_string(), b.to_string()));
        }
        let parts: Vec<&str> = name.split('_').collect();
        if parts.len() != 5 {
            return None;
        }
        let role = Role::ALL.into_iter().find(|r| r.tag() == parts[0])?;
        let section = match parts[1] {
            "presentation" => FeatureSection::Section(Section::Presentation),
            "q&a" => FeatureSection::Section(Section::Qa),
            "delta" => FeatureSection::Delta,
            _ => return None,
        };
        let modality = Modality::ALL.into_iter().find(|m| m.as_str() == parts[2])?;
        let dimension = AslDimension::ALL
            .into_iter()
            .find(|d| d.as_str() == parts[3])?;
        let stat = Stat::ALL.into_iter().find(|s| s.as_str() == parts[4])?;
        feature_name(role, section, modality, dimension, stat).ok()?;
        Some(FeatureKey::Affect {
            role,
            section,
            modality,
            dimension,
            stat,
        })
    }

    /// Modalities this feature reads, and whether it reads the control.
    pub fn sources(&self) -> (Vec<Modality>, bool) {
        match self {
            FeatureKey::Affect { modality, .. } => (vec![*modality], false),
            FeatureKey::HistVol => (vec![], true),
            FeatureKey::Interaction(a, b) => {
                let (mut ma, ca) = FeatureKey::parse(a).map(|k| k.sources()).unwrap_or_default();
                let (mb, cb) = FeatureKey::parse(b).map(|k| k.sources()).unwrap_or_default();
                ma.extend(mb);
                ma.sort();
                ma.dedup();
                (ma, ca || cb)
            }
        }
    }
}

/// Base moment columns in schema order: role, section, modality, dimension, stat.
pub fn base_keys() -> Vec<FeatureKey> {
    let mut out = Vec::with_capacity(144);
    for role in Role::ALL {
        for section in Section::ALL {
            for modality in Modality::ALL {
                for dimension in AslDimension::ALL {
                    for stat in Stat::ALL {
                        out.push(FeatureKey::Affect {
                            role,
                            section: section.into(),
                            modality,
                            dimension,
                            stat,
                        });
                    }
                }
            }
        }
    }
    out
}

pub fn delta_keys() -> Vec<FeatureKey> {
    let mut out = Vec::with_capacity(36);
    for role in Role::ALL {
        for modality in Modality::ALL {
            for dimension in AslDimension::ALL {
                for stat in Stat::DELTA {
                    out.push(FeatureKey::Affect {
                        role,
                        section: FeatureSection::Delta,
                        modality,
                        dimension,
                        stat,
                    });
                }
            }
        }
    }
    out
}
