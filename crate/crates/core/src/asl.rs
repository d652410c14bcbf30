//! Discrete emotion vocabulary and its fixed mapping onto the
//! Tension / Stability / Arousal affective space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AslError {
    #[error("unknown emotion label: {0:?}")]
    UnknownEmotion(String),
    #[error("ASL override rejected: {0}")]
    OverrideRejected(String),
}

/// The seven discrete emotion labels, in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Happiness,
    Surprise,
    Neutral,
    Sadness,
    Fear,
    Anger,
    Disgust,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Happiness,
        EmotionLabel::Surprise,
        EmotionLabel::Neutral,
        EmotionLabel::Sadness,
        EmotionLabel::Fear,
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
    ];

    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Lowercase spelling used in every file format.
    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = AslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_emotion(s)
    }
}

/// Case-insensitive parse after trimming surrounding whitespace.
pub fn parse_emotion(text: &str) -> Result<EmotionLabel, AslError> {
    let t = text.trim();
    EmotionLabel::ALL
        .iter()
        .copied()
        .find(|l| l.as_str().eq_ignore_ascii_case(t))
        .ok_or_else(|| AslError::UnknownEmotion(text.to_string()))
}

/// A point in the affective space. Each coordinate lies in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AslVector {
    pub tension: f64,
    pub stability: f64,
    pub arousal: f64,
}

impl AslVector {
    pub const fn new(tension: f64, stability: f64, arousal: f64) -> Self {
        Self {
            tension,
            stability,
            arousal,
        }
    }

    pub fn get(&self, dim: AslDimension) -> f64 {
        match dim {
            AslDimension::Tension => self.tension,
            AslDimension::Stability => self.stability,
            AslDimension::Arousal => self.arousal,
        }
    }

    pub fn in_range(&self) -> bool {
        [self.tension, self.stability, self.arousal]
            .iter()
            .all(|c| (-1.0..=1.0).contains(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AslDimension {
    Tension,
    Stability,
    Arousal,
}

impl AslDimension {
    pub const ALL: [AslDimension; 3] = [
        AslDimension::Tension,
        AslDimension::Stability,
        AslDimension::Arousal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AslDimension::Tension => "tension",
            AslDimension::Stability => "stability",
            AslDimension::Arousal => "arousal",
        }
    }
}

const TABLE: [AslVector; 7] = [
    AslVector::new(-0.5, 1.0, 0.6), // happiness
    AslVector::new(0.2, 0.2, 0.9),  // surprise
    AslVector::new(0.0, 0.5, 0.0),  // neutral
    AslVector::new(0.6, -0.8, -0.5), // sadness
    AslVector::new(1.0, -1.0, 0.8), // fear
    AslVector::new(0.9, -0.7, 0.7), // anger
    AslVector::new(0.8, -0.9, 0.4), // disgust
];

/// Fixed emotion → affective coordinates mapping.
pub fn map_emotion(label: EmotionLabel) -> AslVector {
    TABLE[label.index()]
}

/// Emotion → coordinate lookup used by feature building.
///
/// [`AslTable::default`] is the compiled-in mapping. An override table can
/// only be constructed through [`AslTable::from_override`], which refuses to
/// run unless the caller explicitly opts in.
#[derive(Debug, Clone, PartialEq)]
pub struct AslTable {
    rows: [AslVector; 7],
    overridden: bool,
}

impl Default for AslTable {
    fn default() -> Self {
        Self {
            rows: TABLE,
            overridden: false,
        }
    }
}

/// On-disk override shape: `{"fear": [1.0, -1.0, 0.8], ...}`. Labels not
/// listed keep their compiled-in coordinates.
pub type AslOverrideFile = std::collections::BTreeMap<String, [f64; 3]>;

impl AslTable {
    pub fn from_override(file: &AslOverrideFile, allow_unsafe: bool) -> Result<Self, AslError> {
        if !allow_unsafe {
            return Err(AslError::OverrideRejected(
                "pass --unsafe-asl-override to replace the built-in mapping".into(),
            ));
        }
        let mut rows = TABLE;
        for (name, coords) in file {
            let label = parse_emotion(name)?;
            let v = AslVector::new(coords[0], coords[1], coords[2]);
            if !v.in_range() {
                return Err(AslError::OverrideRejected(format!(
                    "coordinates for {label} outside [-1, 1]"
                )));
            }
            rows[label.index()] = v;
        }
        Ok(Self {
            rows,
            overridden: true,
        })
    }

    pub fn get(&self, label: EmotionLabel) -> AslVector {
        self.rows[label.index()]
    }

    pub fn is_overridden(&self) -> bool {
        self.overridden
    }
}
