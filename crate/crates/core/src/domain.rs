//! PHQ-8 scoring semantics, severity bands, labels and cohort containers.
//!
//! Item order everywhere in this crate (and in every file it reads or
//! writes) is: NoInterest, Depressed, Sleep, Tired, Appetite, Failure,
//! Concentrating, Moving.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ITEM_COUNT: usize = 8;
pub const MAX_ITEM_SCORE: u8 = 3;
pub const MAX_TOTAL: u8 = 24;
pub const EMBEDDING_DIM: usize = 64;
/// Totals at or above this value indicate probable major depression.
pub const BINARY_CUTOFF: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Item {
    NoInterest,
    Depressed,
    Sleep,
    Tired,
    Appetite,
    Failure,
    Concentrating,
    Moving,
}

impl Item {
    pub const ALL: [Item; ITEM_COUNT] = [
        Item::NoInterest,
        Item::Depressed,
        Item::Sleep,
        Item::Tired,
        Item::Appetite,
        Item::Failure,
        Item::Concentrating,
        Item::Moving,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Item::NoInterest => "NoInterest",
            Item::Depressed => "Depressed",
            Item::Sleep => "Sleep",
            Item::Tired => "Tired",
            Item::Appetite => "Appetite",
            Item::Failure => "Failure",
            Item::Concentrating => "Concentrating",
            Item::Moving => "Moving",
        }
    }
}

/// Eight item scores, each in `0..=3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "[u8; ITEM_COUNT]", into = "[u8; ITEM_COUNT]")]
pub struct Phq8Items([u8; ITEM_COUNT]);

impl Phq8Items {
    pub fn new(items: [u8; ITEM_COUNT]) -> Result<Self> {
        if let Some((k, &v)) = items.iter().enumerate().find(|(_, &v)| v > MAX_ITEM_SCORE) {
            return Err(Error::domain(format!(
                "item {} score {v} outside 0..=3",
                Item::ALL[k].name()
            )));
        }
        Ok(Phq8Items(items))
    }

    pub fn uniform(score: u8) -> Result<Self> {
        Self::new([score; ITEM_COUNT])
    }

    pub fn get(&self, item: Item) -> u8 {
        self.0[item.index()]
    }

    pub fn as_array(&self) -> &[u8; ITEM_COUNT] {
        &self.0
    }

    pub fn total(&self) -> u8 {
        self.0.iter().sum()
    }
}

impl TryFrom<[u8; ITEM_COUNT]> for Phq8Items {
    type Error = Error;

    fn try_from(items: [u8; ITEM_COUNT]) -> Result<Self> {
        Phq8Items::new(items)
    }
}

impl From<Phq8Items> for [u8; ITEM_COUNT] {
    fn from(items: Phq8Items) -> Self {
        items.0
    }
}

/// Five severity bands partitioning totals `0..=24`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    None,
    Mild,
    Moderate,
    ModeratelySevere,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::None,
        Severity::Mild,
        Severity::Moderate,
        Severity::ModeratelySevere,
        Severity::Severe,
    ];

    /// Zero-based position in `ALL`; also the router's class index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::domain(format!("severity index {i} outside 0..5")))
    }

    pub fn range(self) -> RangeInclusive<u8> {
        let start = self.band_start();
        start..=start + 4
    }

    pub fn band_start(self) -> u8 {
        5 * self as u8
    }

    /// Stable lowercase name used in files.
    pub fn name(self) -> &'static str {
        match self {
            Severity::None => "none",
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::ModeratelySevere => "moderately_severe",
            Severity::Severe => "severe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown severity '{s}'")))
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn severity_of(total: u32) -> Result<Severity> {
    if total > u32::from(MAX_TOTAL) {
        return Err(Error::domain(format!("total {total} outside 0..=24")));
    }
    Ok(Severity::ALL[(total / 5) as usize])
}

pub fn binary_of(total: u32) -> Result<bool> {
    if total > u32::from(MAX_TOTAL) {
        return Err(Error::domain(format!("total {total} outside 0..=24")));
    }
    Ok(total >= u32::from(BINARY_CUTOFF))
}

/// Ground-truth label for one speaker.
///
/// Fields are public so that labels read from external files can be held
/// as-is and checked with [`validate_cohort`]; [`SpeakerLabel::new`] always
/// produces a consistent label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerLabel {
    pub speaker_id: String,
    pub items: Phq8Items,
    pub total: u8,
    pub binary: bool,
    pub severity: Severity,
}

impl SpeakerLabel {
    pub fn new(speaker_id: impl Into<String>, items: Phq8Items) -> Self {
        let total = items.total();
        SpeakerLabel {
            speaker_id: speaker_id.into(),
            items,
            total,
            binary: total >= BINARY_CUTOFF,
            severity: Severity::ALL[usize::from(total / 5)],
        }
    }

    /// Rule violations of this label alone (not cohort-level rules).
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let v = |rule| Violation {
            speaker_id: self.speaker_id.clone(),
            rule,
        };
        if self.total != self.items.total() {
            out.push(v(Rule::TotalMismatch {
                stated: self.total,
                item_sum: self.items.total(),
            }));
        }
        if self.binary != (self.total >= BINARY_CUTOFF) {
            out.push(v(Rule::BinaryMismatch {
                total: self.total,
                binary: self.binary,
            }));
        }
        match severity_of(u32::from(self.total)) {
            Ok(s) if s == self.severity => {}
            _ => out.push(v(Rule::SeverityMismatch {
                total: self.total,
                severity: self.severity,
            })),
        }
        out
    }
}

/// One utterance-group embedding for one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEmbedding<T> {
    pub speaker_id: String,
    pub group_index: usize,
    pub vector: Vec<T>,
}

impl<T: Scalar> GroupEmbedding<T> {
    /// Builds an embedding, rejecting wrong dimensionality or non-finite values.
    pub fn new(speaker_id: impl Into<String>, group_index: usize, vector: Vec<T>) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::domain(format!(
                "embedding has {} components, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        if let Some(j) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("embedding component {j} is not finite")));
        }
        Ok(GroupEmbedding {
            speaker_id: speaker_id.into(),
            group_index,
            vector,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            other => Err(Error::domain(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<T> {
    pub labels: Vec<SpeakerLabel>,
    pub embeddings: Vec<GroupEmbedding<T>>,
    pub split: Split,
}

impl<T: Scalar> Cohort<T> {
    pub fn label(&self, speaker_id: &str) -> Option<&SpeakerLabel> {
        self.labels.iter().find(|l| l.speaker_id == speaker_id)
    }

    /// Groups of each speaker, keyed by id, each list sorted by group index.
    pub fn groups_by_speaker(&self) -> BTreeMap<&str, Vec<&GroupEmbedding<T>>> {
        let mut map: BTreeMap<&str, Vec<&GroupEmbedding<T>>> = BTreeMap::new();
        for e in &self.embeddings {
            map.entry(e.speaker_id.as_str()).or_default().push(e);
        }
        for groups in map.values_mut() {
            groups.sort_by_key(|g| g.group_index);
        }
        map
    }

    /// Fails with [`Error::Validation`] when any invariant is broken.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_cohort(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(report))
        }
    }
}

/// A single broken invariant, attributed to a speaker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub speaker_id: String,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    TotalMismatch { stated: u8, item_sum: u8 },
    BinaryMismatch { total: u8, binary: bool },
    SeverityMismatch { total: u8, severity: Severity },
    DuplicateSpeaker,
    OrphanEmbedding { group_index: usize },
    NoEmbeddings,
    EmbeddingShape { group_index: usize, len: usize },
    NonFiniteEmbedding { group_index: usize },
}

impl Rule {
    /// Short machine-readable rule name.
    pub fn name(&self) -> &'static str {
        match self {
            Rule::TotalMismatch { .. } => "total",
            Rule::BinaryMismatch { .. } => "binary",
            Rule::SeverityMismatch { .. } => "severity",
            Rule::DuplicateSpeaker => "duplicate-speaker",
            Rule::OrphanEmbedding { .. } => "orphan",
            Rule::NoEmbeddings => "no-embeddings",
            Rule::EmbeddingShape { .. } => "embedding-shape",
            Rule::NonFiniteEmbedding { .. } => "non-finite",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "speaker {} violates rule {}", self.speaker_id, self.rule.name())?;
        match &self.rule {
            Rule::TotalMismatch { stated, item_sum } => {
                write!(f, " (total {stated} != item sum {item_sum})")
            }
            Rule::BinaryMismatch { total, binary } => {
                write!(f, " (total {total} with binary {})", u8::from(*binary))
            }
            Rule::SeverityMismatch { total, severity } => {
                write!(f, " (total {total} with severity {severity})")
            }
            Rule::OrphanEmbedding { group_index } => {
                write!(f, " (group {group_index} has no label)")
            }
            Rule::EmbeddingShape { group_index, len } => {
                write!(f, " (group {group_index} has {len} components)")
            }
            Rule::NonFiniteEmbedding { group_index } => write!(f, " (group {group_index})"),
            Rule::DuplicateSpeaker | Rule::NoEmbeddings => Ok(()),
        }
    }
}

/// Lists every broken label or cohort invariant; empty means valid.
pub fn validate_cohort<T: Scalar>(cohort: &Cohort<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for label in &cohort.labels {
        if !seen.insert(label.speaker_id.as_str()) {
            out.push(Violation {
                speaker_id: label.speaker_id.clone(),
                rule: Rule::DuplicateSpeaker,
            });
        }
        out.extend(label.violations());
    }

    let mut with_groups = HashSet::new();
    for e in &cohort.embeddings {
        let v = |rule| Violation {
            speaker_id: e.speaker_id.clone(),
            rule,
        };
        if !seen.contains(e.speaker_id.as_str()) {
            out.push(v(Rule::OrphanEmbedding {
                group_index: e.group_index,
            }));
        }
        if e.vector.len() != EMBEDDING_DIM {
            out.push(v(Rule::EmbeddingShape {
                group_index: e.group_index,
                len: e.vector.len(),
            }));
        }
        if e.vector.iter().any(|x| !x.is_finite()) {
            out.push(v(Rule::NonFiniteEmbedding {
                group_index: e.group_index,
            }));
        }
        with_groups.insert(e.speaker_id.as_str());
    }

    let mut reported = HashSet::new();
    for label in &cohort.labels {
        let id = label.speaker_id.as_str();
        if !with_groups.contains(id) && reported.insert(id) {
            out.push(Violation {
                speaker_id: label.speaker_id.clone(),
                rule: Rule::NoEmbeddings,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionSource {
    BottomUp { predicted_items: Phq8Items },
    TopDown { expert: Severity },
}

/// Speaker-level output of either ensemble.
///
/// Only constructible through checked constructors, so the total, binary
/// flag, severity and source always agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    speaker_id: String,
    predicted_total: u8,
    predicted_binary: bool,
    predicted_severity: Severity,
    source: PredictionSource,
}

impl Prediction {
    pub fn bottom_up(speaker_id: impl Into<String>, items: Phq8Items) -> Self {
        let total = items.total();
        Prediction {
            speaker_id: speaker_id.into(),
            predicted_total: total,
            predicted_binary: total >= BINARY_CUTOFF,
            predicted_severity: Severity::ALL[usize::from(total / 5)],
            source: PredictionSource::BottomUp {
                predicted_items: items,
            },
        }
    }

    /// `class_index` is the expert's output class, i.e. the offset in its band.
    pub fn top_down(speaker_id: impl Into<String>, expert: Severity, class_index: usize) -> Result<Self> {
        if class_index >= 5 {
            return Err(Error::domain(format!("expert class index {class_index} outside 0..5")));
        }
        let total = expert.band_start() + class_index as u8;
        Ok(Prediction {
            speaker_id: speaker_id.into(),
            predicted_total: total,
            predicted_binary: total >= BINARY_CUTOFF,
            predicted_severity: expert,
            source: PredictionSource::TopDown { expert },
        })
    }

    /// Rebuilds a prediction from stored fields, rejecting any disagreement.
    pub fn from_parts(
        speaker_id: impl Into<String>,
        total: u8,
        binary: bool,
        severity: Severity,
        source: PredictionSource,
    ) -> Result<Self> {
        let speaker_id = speaker_id.into();
        let rebuilt = match source {
            PredictionSource::BottomUp { predicted_items } => {
                Prediction::bottom_up(speaker_id.clone(), predicted_items)
            }
            PredictionSource::TopDown { expert } => {
                if !expert.range().contains(&total) {
                    return Err(Error::domain(format!(
                        "speaker {speaker_id}: total {total} outside expert band {expert}"
                    )));
                }
                Prediction::top_down(speaker_id.clone(), expert, usize::from(total - expert.band_start()))?
            }
        };
        if rebuilt.predicted_total != total || rebuilt.predicted_binary != binary || rebuilt.predicted_severity != severity
        {
            return Err(Error::domain(format!(
                "speaker {speaker_id}: inconsistent prediction (total {total}, binary {}, severity {severity})",
                u8::from(binary)
            )));
        }
        Ok(rebuilt)
    }

    pub fn speaker_id(&self) -> &str {
        &self.speaker_id
    }

    pub fn predicted_total(&self) -> u8 {
        self.predicted_total
    }

    pub fn predicted_binary(&self) -> bool {
        self.predicted_binary
    }

    pub fn predicted_severity(&self) -> Severity {
        self.predicted_severity
    }

    pub fn source(&self) -> &PredictionSource {
        &self.source
    }

    pub fn predicted_items(&self) -> Option<&Phq8Items> {
        match &self.source {
            PredictionSource::BottomUp { predicted_items } => Some(predicted_items),
            PredictionSource::TopDown { .. } => None,
        }
    }

    /// Re-checks every alignment invariant.
    pub fn is_consistent(&self) -> bool {
        let t = u32::from(self.predicted_total);
        let aligned = binary_of(t).ok() == Some(self.predicted_binary)
            && severity_of(t).ok() == Some(self.predicted_severity);
        let sourced = match &self.source {
            PredictionSource::BottomUp { predicted_items } => predicted_items.total() == self.predicted_total,
            PredictionSource::TopDown { expert } => {
                expert.range().contains(&self.predicted_total) && *expert == self.predicted_severity
            }
        };
        aligned && sourced
    }
}
