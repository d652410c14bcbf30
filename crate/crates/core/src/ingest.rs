//! Line-delimited JSON call corpora: parsing, presentation / Q&A
//! segmentation, structural validation, and serialization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::asl::EmotionLabel;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: duplicate call_id {id:?}")]
    DuplicateCallId { line: usize, id: String },
    #[error("line {line}: invalid role {value:?}")]
    InvalidRole { line: usize, value: String },
    #[error("line {line}: invalid section {value:?}")]
    InvalidSection { line: usize, value: String },
    #[error("line {line}: unknown emotion {value:?}")]
    UnknownEmotion { line: usize, value: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "ceo")]
    Ceo,
    #[serde(rename = "cfo")]
    Cfo,
    #[serde(rename = "cxo")]
    Cxo,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Ceo, Role::Cfo, Role::Cxo];

    /// Spelling in corpus files.
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Ceo => "ceo",
            Role::Cfo => "cfo",
            Role::Cxo => "cxo",
        }
    }

    /// Spelling in feature names.
    pub fn tag(self) -> &'static str {
        match self {
            Role::Ceo => "CEO",
            Role::Cfo => "CFO",
            Role::Cxo => "CXO",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Non-executive speakers present in transcripts but unused by any feature.
const DROPPED_ROLES: [&str; 3] = ["analyst", "operator", "other"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Presentation,
    Qa,
}

impl Section {
    pub const ALL: [Section; 2] = [Section::Presentation, Section::Qa];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Presentation => "presentation",
            Section::Qa => "qa",
        }
    }

    /// Spelling in feature names.
    pub fn tag(self) -> &'static str {
        match self {
            Section::Presentation => "presentation",
            Section::Qa => "q&a",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Post-call horizon in trading days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Horizon {
    D1,
    D7,
    D30,
}

impl Horizon {
    pub const ALL: [Horizon; 3] = [Horizon::D1, Horizon::D7, Horizon::D30];

    pub fn days(self) -> u32 {
        match self {
            Horizon::D1 => 1,
            Horizon::D7 => 7,
            Horizon::D30 => 30,
        }
    }

    pub fn from_days(days: u32) -> Option<Self> {
        match days {
            1 => Some(Horizon::D1),
            7 => Some(Horizon::D7),
            30 => Some(Horizon::D30),
            _ => None,
        }
    }
}

impl TryFrom<u32> for Horizon {
    type Error = String;
    fn try_from(d: u32) -> Result<Self, Self::Error> {
        Horizon::from_days(d).ok_or_else(|| format!("unsupported horizon {d} (allowed: 1, 7, 30)"))
    }
}

impl From<Horizon> for u32 {
    fn from(h: Horizon) -> u32 {
        h.days()
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.days())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonTargets {
    pub car: f64,
    pub realized_vol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_role: Role,
    pub section: Section,
    pub order_index: u64,
    pub text_emotion: Option<EmotionLabel>,
    pub acoustic_emotion: Option<EmotionLabel>,
    pub transcript: Option<String>,
}

impl Utterance {
    pub fn emotion(&self, modality: crate::features::Modality) -> Option<EmotionLabel> {
        match modality {
            crate::features::Modality::Acoustic => self.acoustic_emotion,
            crate::features::Modality::Text => self.text_emotion,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub call_id: String,
    pub firm_id: String,
    /// Chronological ordering key; falls back to file position when absent.
    pub seq: Option<u64>,
    pub utterances: Vec<Utterance>,
    pub hist_vol_30d: f64,
    pub targets: BTreeMap<Horizon, HorizonTargets>,
}

impl CallRecord {
    pub fn target(&self, horizon: Horizon) -> Option<HorizonTargets> {
        self.targets.get(&horizon).copied()
    }
}

/// Default phrases that open the Q&A section.
pub const DEFAULT_QA_MARKERS: [&str; 4] = [
    "question-and-answer session",
    "q&a session",
    "first question",
    "open the line for questions",
];

pub fn default_markers() -> Vec<String> {
    DEFAULT_QA_MARKERS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub sections: Vec<Section>,
    pub no_qa_detected: bool,
}

/// Splits an ordered transcript list at the first utterance containing any
/// marker (case-insensitive substring). That utterance and everything after
/// it belong to Q&A.
pub fn segment_sections<S: AsRef<str>>(transcripts: &[S], markers: &[String]) -> Segmentation {
    let lowered: Vec<String> = markers.iter().map(|m| m.to_lowercase()).collect();
    let first = transcripts.iter().position(|t| {
        let t = t.as_ref().to_lowercase();
        lowered.iter().any(|m| !m.is_empty() && t.contains(m.as_str()))
    });
    match first {
        Some(k) => Segmentation {
            sections: (0..transcripts.len())
                .map(|i| if i < k { Section::Presentation } else { Section::Qa })
                .collect(),
            no_qa_detected: false,
        },
        None => Segmentation {
            sections: vec![Section::Presentation; transcripts.len()],
            no_qa_detected: true,
        },
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub qa_markers: Vec<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            qa_markers: default_markers(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub records: Vec<CallRecord>,
    /// Unrecognised JSON keys seen anywhere in the file.
    pub unknown_fields: usize,
    /// Analyst / operator utterances discarded at ingestion.
    pub dropped_utterances: usize,
    /// call_ids whose sections were inferred from transcripts with no marker hit.
    pub no_qa_detected: Vec<String>,
}

#[derive(Deserialize)]
struct RawUtterance {
    role: String,
    #[serde(default)]
    section: Option<String>,
    #[serde(default)]
    transcript: Option<String>,
    order: u64,
    #[serde(default)]
    text_emotion: Option<String>,
    #[serde(default)]
    acoustic_emotion: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawTarget {
    car: f64,
    realized_vol: f64,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawCall {
    call_id: String,
    firm_id: String,
    hist_vol_30d: f64,
    utterances: Vec<RawUtterance>,
    targets: BTreeMap<String, RawTarget>,
    #[serde(default)]
    seq: Option<u64>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// Parses a line-delimited JSON corpus. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<ParsedCorpus, IngestError> {
    let mut out = ParsedCorpus::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCall = serde_json::from_str(&line).map_err(|e| IngestError::MalformedLine {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !seen.insert(raw.call_id.clone()) {
            return Err(IngestError::DuplicateCallId {
                line: line_no,
                id: raw.call_id,
            });
        }
        let record = convert_call(raw, line_no, opts, &mut out)?;
        out.records.push(record);
    }
    Ok(out)
}

pub fn parse_corpus_str(text: &str) -> Result<ParsedCorpus, IngestError> {
    parse_corpus(text.as_bytes(), &ParseOptions::default())
}

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

/// File formats use the exact lowercase spelling, unlike [`crate::asl::parse_emotion`].
fn parse_label(line: usize, v: &Option<String>) -> Result<Option<EmotionLabel>, IngestError> {
    match v {
        None => Ok(None),
        Some(s) => EmotionLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .map(Some)
            .ok_or_else(|| IngestError::UnknownEmotion {
                line,
                value: s.clone(),
            }),
    }
}

fn convert_call(
    raw: RawCall,
    line: usize,
    opts: &ParseOptions,
    stats: &mut ParsedCorpus,
) -> Result<CallRecord, IngestError> {
    stats.unknown_fields += raw.extra.len();
    if !raw.hist_vol_30d.is_finite() || raw.hist_vol_30d < 0.0 {
        return Err(malformed(line, "hist_vol_30d must be finite and nonnegative"));
    }

    let mut targets = BTreeMap::new();
    for (k, t) in &raw.targets {
        stats.unknown_fields += t.extra.len();
        let h = k
            .parse::<u32>()
            .ok()
            .and_then(Horizon::from_days)
            .ok_or_else(|| malformed(line, format!("unsupported target horizon {k:?}")))?;
        if !t.car.is_finite() || !t.realized_vol.is_finite() || t.realized_vol < 0.0 {
            return Err(malformed(line, format!("invalid targets for horizon {k}")));
        }
        targets.insert(
            h,
            HorizonTargets {
                car: t.car,
                realized_vol: t.realized_vol,
            },
        );
    }

    // Sections: explicit on every utterance, or inferred from transcripts on all.
    let with_section = raw.utterances.iter().filter(|u| u.section.is_some()).count();
    let sections: Vec<Section> = if with_section == raw.utterances.len() {
        raw.utterances
            .iter()
            .map(|u| match u.section.as_deref() {
                Some("presentation") => Ok(Section::Presentation),
                Some("qa") => Ok(Section::Qa),
                Some(other) => Err(IngestError::InvalidSection {
                    line,
                    value: other.to_string(),
                }),
                None => unreachable!(),
            })
            .collect::<Result<_, _>>()?
    } else if with_section == 0 {
        let mut order: Vec<usize> = (0..raw.utterances.len()).collect();
        order.sort_by_key(|&i| raw.utterances[i].order);
        let mut transcripts = Vec::with_capacity(order.len());
        for &i in &order {
            match &raw.utterances[i].transcript {
                Some(t) => transcripts.push(t.as_str()),
                None => {
                    return Err(malformed(
                        line,
                        "utterance has neither `section` nor `transcript`",
                    ))
                }
            }
        }
        let seg = segment_sections(&transcripts, &opts.qa_markers);
        if seg.no_qa_detected && !order.is_empty() {
            stats.no_qa_detected.push(raw.call_id.clone());
        }
        let mut sections = vec![Section::Presentation; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            sections[i] = seg.sections[pos];
        }
        sections
    } else {
        return Err(malformed(
            line,
            "either every utterance or none must carry `section`",
        ));
    };

    let mut utterances = Vec::with_capacity(raw.utterances.len());
    for (u, section) in raw.utterances.iter().zip(sections) {
        stats.unknown_fields += u.extra.len();
        let role = match u.role.as_str() {
            "ceo" => Role::Ceo,
            "cfo" => Role::Cfo,
            "cxo" => Role::Cxo,
            r if DROPPED_ROLES.contains(&r) => {
                stats.dropped_utterances += 1;
                continue;
            }
            r => {
                return Err(IngestError::InvalidRole {
                    line,
                    value: r.to_string(),
                })
            }
        };
        let text_emotion = parse_label(line, &u.text_emotion)?;
        let acoustic_emotion = parse_label(line, &u.acoustic_emotion)?;
        if text_emotion.is_none() && acoustic_emotion.is_none() {
            return Err(malformed(
                line,
                format!("utterance {} carries no emotion label", u.order),
            ));
        }
        utterances.push(Utterance {
            speaker_role: role,
            section,
            order_index: u.order,
            text_emotion,
            acoustic_emotion,
            transcript: u.transcript.clone(),
        });
    }

    Ok(CallRecord {
        call_id: raw.call_id,
        firm_id: raw.firm_id,
        seq: raw.seq,
        utterances,
        hist_vol_30d: raw.hist_vol_30d,
        targets,
    })
}

#[derive(Serialize)]
struct OutUtterance<'a> {
    role: Role,
    section: Section,
    order: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    text_emotion: Option<EmotionLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acoustic_emotion: Option<EmotionLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transcript: Option<&'a str>,
}

#[derive(Serialize)]
struct OutCall<'a> {
    call_id: &'a str,
    firm_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    hist_vol_30d: f64,
    utterances: Vec<OutUtterance<'a>>,
    targets: BTreeMap<String, HorizonTargets>,
}

/// Renders one record as a single JSON line (no trailing newline).
pub fn serialize_call(call: &CallRecord) -> String {
    let out = OutCall {
        call_id: &call.call_id,
        firm_id: &call.firm_id,
        seq: call.seq,
        hist_vol_30d: call.hist_vol_30d,
        utterances: call
            .utterances
            .iter()
            .map(|u| OutUtterance {
                role: u.speaker_role,
                section: u.section,
                order: u.order_index,
                text_emotion: u.text_emotion,
                acoustic_emotion: u.acoustic_emotion,
                transcript: u.transcript.as_deref(),
            })
            .collect(),
        targets: call
            .targets
            .iter()
            .map(|(h, t)| (h.days().to_string(), *t))
            .collect(),
    };
    serde_json::to_string(&out).expect("corpus records serialize")
}

pub fn write_corpus<W: Write>(calls: &[CallRecord], mut w: W) -> std::io::Result<()> {
    for c in calls {
        w.write_all(serialize_call(c).as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Structural problems found by [`validate_call`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "issue", content = "detail")]
pub enum Issue {
    MissingRole(Role),
    EmptySection(Section),
    MissingTargets(Horizon),
    NonMonotoneOrder,
    /// A presentation utterance follows a Q&A utterance.
    SectionInterleaved,
}

pub fn validate_call(call: &CallRecord) -> Vec<Issue> {
    let mut issues = Vec::new();
    for role in Role::ALL {
        if !call.utterances.iter().any(|u| u.speaker_role == role) {
            issues.push(Issue::MissingRole(role));
        }
    }
    for section in Section::ALL {
        if !call.utterances.iter().any(|u| u.section == section) {
            issues.push(Issue::EmptySection(section));
        }
    }
    for h in Horizon::ALL {
        if !call.targets.contains_key(&h) {
            issues.push(Issue::MissingTargets(h));
        }
    }
    if call
        .utterances
        .windows(2)
        .any(|w| w[1].order_index <= w[0].order_index)
    {
        issues.push(Issue::NonMonotoneOrder);
    }
    let mut sorted: Vec<&Utterance> = call.utterances.iter().collect();
    sorted.sort_by_key(|u| u.order_index);
    let first_qa = sorted.iter().position(|u| u.section == Section::Qa);
    if let Some(k) = first_qa {
        if sorted[k..].iter().any(|u| u.section == Section::Presentation) {
            issues.push(Issue::SectionInterleaved);
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_line(id: &str) -> String {
        format!(
            r#"{{"call_id":"{id}","firm_id":"F1","hist_vol_30d":0.3,"utterances":[
            {{"role":"ceo","section":"presentation","order":0,"text_emotion":"happiness","acoustic_emotion":"neutral"}},
            {{"role":"cfo","section":"presentation","order":1,"text_emotion":"neutral"}},
            {{"role":"cxo","section":"presentation","order":2,"acoustic_emotion":"fear"}},
            {{"role":"ceo","section":"qa","order":3,"text_emotion":"fear"}},
            {{"role":"cfo","section":"qa","order":4,"text_emotion":"anger"}},
            {{"role":"cxo","section":"qa","order":5,"text_emotion":"sadness"}}],
            "targets":{{"1":{{"car":0.01,"realized_vol":0.2}},"7":{{"car":0.0,"realized_vol":0.25}},"30":{{"car":-0.02,"realized_vol":0.3}}}}}}"#
        )
        .replace('\n', "")
    }

    #[test]
    fn empty_stream() {
        assert!(parse_corpus_str("").unwrap().records.is_empty());
    }

    #[test]
    fn one_line() {
        let p = parse_corpus_str(&full_line("c1")).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.records[0].call_id, "c1");
        assert_eq!(p.records[0].utterances.len(), 6);
        assert!(validate_call(&p.records[0]).is_empty());
    }

    #[test]
    fn duplicate_id() {
        let text = format!("{}\n{}\n", full_line("a"), full_line("a"));
        assert!(matches!(
            parse_corpus_str(&text),
            Err(IngestError::DuplicateCallId { line: 2, .. })
        ));
    }

    #[test]
    fn bad_tokens_report_line() {
        let bad_role = full_line("x").replacen("\"cxo\"", "\"cto\"", 1);
        assert!(matches!(
            parse_corpus_str(&format!("\n{bad_role}")),
            Err(IngestError::InvalidRole { line: 2, .. })
        ));
        let bad_emotion = full_line("x").replacen("\"fear\"", "\"joy\"", 1);
        assert!(matches!(
            parse_corpus_str(&bad_emotion),
            Err(IngestError::UnknownEmotion { line: 1, .. })
        ));
        let bad_section = full_line("x").replacen("\"qa\"", "\"q&a\"", 1);
        assert!(matches!(
            parse_corpus_str(&bad_section),
            Err(IngestError::InvalidSection { .. })
        ));
        assert!(matches!(
            parse_corpus_str("{not json"),
            Err(IngestError::MalformedLine { line: 1, .. })
        ));
        let bad_h = full_line("x").replacen("\"7\"", "\"14\"", 1);
        assert!(matches!(
            parse_corpus_str(&bad_h),
            Err(IngestError::MalformedLine { .. })
        ));
    }

    #[test]
    fn unknown_fields_counted_and_analysts_dropped() {
        let line = full_line("u")
            .replacen("\"firm_id\"", "\"venue\":\"x\",\"firm_id\"", 1)
            .replacen(
                "\"utterances\":[",
                "\"utterances\":[{\"role\":\"analyst\",\"section\":\"qa\",\"order\":99,\"mood\":1},",
                1,
            );
        let p = parse_corpus_str(&line).unwrap();
        assert_eq!(p.unknown_fields, 2);
        assert_eq!(p.dropped_utterances, 1);
        assert_eq!(p.records[0].utterances.len(), 6);
    }

    #[test]
    fn segmentation_examples() {
        let m = default_markers();
        let s = segment_sections(
            &[
                "welcome...",
                "we will now begin the question-and-answer session",
                "thanks, first question...",
            ],
            &m,
        );
        assert_eq!(s.sections, vec![Section::Presentation, Section::Qa, Section::Qa]);
        assert!(!s.no_qa_detected);

        let s = segment_sections(&["hello", "our revenue grew"], &m);
        assert_eq!(s.sections, vec![Section::Presentation; 2]);
        assert!(s.no_qa_detected);

        let s = segment_sections(&["Q&A Session begins", "x"], &m);
        assert_eq!(s.sections, vec![Section::Qa; 2]);
    }

    #[test]
    fn transcripts_segment_before_dropping_operator() {
        let line = r#"{"call_id":"t","firm_id":"F","hist_vol_30d":0.2,"utterances":[
          {"role":"ceo","order":0,"transcript":"welcome","text_emotion":"happiness"},
          {"role":"operator","order":1,"transcript":"We will now open the line for questions"},
          {"role":"cfo","order":2,"transcript":"good question","text_emotion":"fear"}],
          "targets":{}}"#
            .replace('\n', "");
        let p = parse_corpus_str(&line).unwrap();
        let u = &p.records[0].utterances;
        assert_eq!(u.len(), 2);
        assert_eq!(u[0].section, Section::Presentation);
        assert_eq!(u[1].section, Section::Qa);
        assert_eq!(p.dropped_utterances, 1);
    }

    #[test]
    fn validation_issues() {
        let mut c = parse_corpus_str(&full_line("v")).unwrap().records.remove(0);
        c.utterances.retain(|u| u.speaker_role != Role::Cfo);
        assert_eq!(validate_call(&c), vec![Issue::MissingRole(Role::Cfo)]);

        let mut c = parse_corpus_str(&full_line("v")).unwrap().records.remove(0);
        c.targets.remove(&Horizon::D30);
        assert_eq!(validate_call(&c), vec![Issue::MissingTargets(Horizon::D30)]);

        let mut c = parse_corpus_str(&full_line("v")).unwrap().records.remove(0);
        c.utterances.swap(0, 1);
        assert_eq!(validate_call(&c), vec![Issue::NonMonotoneOrder]);

        let mut c = parse_corpus_str(&full_line("v")).unwrap().records.remove(0);
        c.utterances[5].section = Section::Presentation;
        assert_eq!(validate_call(&c), vec![Issue::SectionInterleaved]);

        let mut c = parse_corpus_str(&full_line("v")).unwrap().records.remove(0);
        c.utterances.iter_mut().for_each(|u| u.section = Section::Presentation);
        assert_eq!(validate_call(&c), vec![Issue::EmptySection(Section::Qa)]);
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let p = parse_corpus_str(&full_line("r")).unwrap();
        let mut buf = Vec::new();
        write_corpus(&p.records, &mut buf).unwrap();
        let q = parse_corpus(&buf[..], &ParseOptions::default()).unwrap();
        assert_eq!(p.records, q.records);
    }

    #[test]
    fn horizon_parsing() {
        assert_eq!(Horizon::try_from(30).unwrap(), Horizon::D30);
        assert!(Horizon::try_from(14).is_err());
    }
}
