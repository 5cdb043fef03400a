//! Multi-annotator dataset ingestion, preprocessing and sampling.
//!
//! The unit of ingestion is an [`AnnotationRecord`]: one annotator's binary
//! label for one text. Records are grouped by instance into
//! [`DatasetEntry`] values, each carrying the preprocessed text and the
//! labels of every annotator that saw it.

mod io;
mod preprocess;
mod sample;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_annotations, load_dataset_json, save_dataset_json};
pub use preprocess::preprocess_text;
pub use sample::{assign_test_split, sample_imbalanced, split_dataset};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Binary annotation label. Positive is the hate class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// Class index used by the classifier: 0 = negative, 1 = positive.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// Split membership, either of a whole dataset or of a single entry when the
/// source carries an official train/test split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unsplit,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        };
        f.write_str(name)
    }
}

/// How an exact tie between positive and negative votes is aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Ties count as positive (minority-class favouring).
    #[default]
    Positive,
    Negative,
}

/// One line of the JSONL input format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub text: String,
    pub annotator_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub instance_id: String,
    /// Preprocessed text.
    pub text: String,
    pub labels: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
}

impl DatasetEntry {
    pub fn positive_votes(&self) -> usize {
        self.labels.values().filter(|l| l.is_positive()).count()
    }

    pub fn negative_votes(&self) -> usize {
        self.labels.len() - self.positive_votes()
    }

    /// True when every annotator chose the same label.
    pub fn is_unanimous(&self) -> bool {
        let pos = self.positive_votes();
        pos == 0 || pos == self.labels.len()
    }

    pub fn majority_label_with(&self, tie: TieRule) -> Label {
        let pos = self.positive_votes();
        let neg = self.negative_votes();
        match pos.cmp(&neg) {
            std::cmp::Ordering::Greater => Label::Positive,
            std::cmp::Ordering::Less => Label::Negative,
            std::cmp::Ordering::Equal => match tie {
                TieRule::Positive => Label::Positive,
                TieRule::Negative => Label::Negative,
            },
        }
    }

    /// Majority label under the default tie rule.
    pub fn majority_label(&self) -> Label {
        self.majority_label_with(TieRule::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    pub annotator_ids: Vec<String>,
    pub split_tag: SplitTag,
}

impl Dataset {
    /// Builds a dataset from entries, collecting annotators in order of first
    /// appearance. Fails on duplicate instance ids or label-less entries.
    pub fn new(entries: Vec<DatasetEntry>, split_tag: SplitTag) -> Result<Self> {
        let mut seen_ids = HashSet::with_capacity(entries.len());
        let mut annotator_ids = Vec::new();
        let mut seen_annotators = HashSet::new();
        for entry in &entries {
            if entry.instance_id.is_empty() {
                return Err(Error::InvalidRecord("empty instance_id".into()));
            }
            if !seen_ids.insert(entry.instance_id.as_str()) {
                return Err(Error::InvalidRecord(format!(
                    "duplicate instance_id {:?}",
                    entry.instance_id
                )));
            }
            if entry.labels.is_empty() {
                return Err(Error::InvalidRecord(format!(
                    "instance {:?} has no labels",
                    entry.instance_id
                )));
            }
            for annotator in entry.labels.keys() {
                if annotator.is_empty() {
                    return Err(Error::InvalidRecord("empty annotator_id".into()));
                }
                if seen_annotators.insert(annotator.clone()) {
                    annotator_ids.push(annotator.clone());
                }
            }
        }
        Ok(Dataset {
            entries,
            annotator_ids,
            split_tag,
        })
    }

    /// Groups records by instance id, preserving the order of first
    /// appearance. Text is preprocessed here.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = AnnotationRecord>,
    {
        let mut entries: Vec<DatasetEntry> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for record in records {
            validate_record(&record)?;
            match index.get(&record.instance_id) {
                Some(&i) => {
                    let entry = &mut entries[i];
                    if entry.labels.contains_key(&record.annotator_id) {
                        return Err(Error::Duplicate {
                            instance_id: record.instance_id,
                            annotator_id: record.annotator_id,
                        });
                    }
                    if entry.split.is_none() {
                        entry.split = record.split;
                    }
                    entry.labels.insert(record.annotator_id, record.label);
                }
                None => {
                    index.insert(record.instance_id.clone(), entries.len());
                    let mut labels = BTreeMap::new();
                    labels.insert(record.annotator_id, record.label);
                    entries.push(DatasetEntry {
                        instance_id: record.instance_id,
                        text: preprocess_text(&record.text),
                        labels,
                        split: record.split,
                    });
                }
            }
        }
        Dataset::new(entries, SplitTag::Unsplit)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Flattens entries back into one record per annotation.
    pub fn to_records(&self) -> Vec<AnnotationRecord> {
        self.entries
            .iter()
            .flat_map(|e| {
                e.labels.iter().map(move |(a, &l)| AnnotationRecord {
                    instance_id: e.instance_id.clone(),
                    text: e.text.clone(),
                    annotator_id: a.clone(),
                    label: l,
                    split: e.split,
                })
            })
            .collect()
    }

    pub fn annotation_count(&self) -> usize {
        self.entries.iter().map(|e| e.labels.len()).sum()
    }

    pub fn disagreement_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_unanimous()).count()
    }

    /// Fraction of entries whose majority label is positive.
    pub fn positive_rate(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let pos = self
            .entries
            .iter()
            .filter(|e| e.majority_label().is_positive())
            .count();
        pos as f64 / self.entries.len() as f64
    }

    /// Largest number of annotators attached to any single entry.
    pub fn max_annotators_per_entry(&self) -> usize {
        self.entries.iter().map(|e| e.labels.len()).max().unwrap_or(0)
    }

    pub fn annotator_index(&self) -> HashMap<&str, usize> {
        self.annotator_ids
            .iter()
            .enumerate()
            .map(|(i, a)| (a.as_str(), i))
            .collect()
    }

    /// Keeps the given entries (in order) and recomputes the annotator list.
    pub(crate) fn subset(&self, entries: Vec<DatasetEntry>, split_tag: SplitTag) -> Dataset {
        // Entries come from a validated dataset, so re-validation cannot fail.
        let mut out = Dataset::new(entries, split_tag).expect("subset of a valid dataset");
        // Keep the parent's annotator order for annotators still present.
        let present: HashSet<&String> = out.annotator_ids.iter().collect();
        let ordered: Vec<String> = self
            .annotator_ids
            .iter()
            .filter(|a| present.contains(a))
            .cloned()
            .collect();
        out.annotator_ids = ordered;
        out
    }
}

fn validate_record(record: &AnnotationRecord) -> Result<()> {
    if record.instance_id.is_empty() {
        return Err(Error::InvalidRecord("empty instance_id".into()));
    }
    if record.annotator_id.is_empty() {
        return Err(Error::InvalidRecord(format!(
            "empty annotator_id for instance {:?}",
            record.instance_id
        )));
    }
    Ok(())
}
