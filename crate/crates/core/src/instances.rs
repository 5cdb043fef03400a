//! Training and evaluation instances.
//!
//! At training time an entry is split by label choice: one instance per
//! group of annotators that chose the same label, with that label's text
//! appended after a separator. Evaluation instances carry the bare text, all
//! annotators of the entry, and the aggregated majority label.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetEntry, Label, TieRule};
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTextConfig {
    pub positive_text: String,
    pub negative_text: String,
}

/// Named label-text pairs.
pub const LABEL_PRESETS: [(&str, &str, &str); 5] = [
    ("hate-not", "hate", "not"),
    ("misogynistic-not", "misogynistic", "not"),
    ("hate-not-hate", "hate", "not hate"),
    ("misogynistic-nonmisogynistic", "misogynistic", "nonmisogynistic"),
    ("yes-no", "yes", "no"),
];

impl LabelTextConfig {
    pub fn new(positive_text: impl Into<String>, negative_text: impl Into<String>) -> Result<Self> {
        let cfg = LabelTextConfig {
            positive_text: positive_text.into(),
            negative_text: negative_text.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self> {
        LABEL_PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(_, p, n)| LabelTextConfig::new(p, n).expect("presets are valid"))
            .ok_or_else(|| {
                let names: Vec<&str> = LABEL_PRESETS.iter().map(|p| p.0).collect();
                Error::Config(format!(
                    "unknown label preset {name:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive_text.trim().is_empty() || self.negative_text.trim().is_empty() {
            return Err(Error::Config("label texts must be non-empty".into()));
        }
        if self.positive_text == self.negative_text {
            return Err(Error::Config("positive and negative label texts must differ".into()));
        }
        Ok(())
    }

    pub fn text_for(&self, label: Label) -> &str {
        match label {
            Label::Positive => &self.positive_text,
            Label::Negative => &self.negative_text,
        }
    }

    pub fn swapped(&self) -> Self {
        LabelTextConfig {
            positive_text: self.negative_text.clone(),
            negative_text: self.positive_text.clone(),
        }
    }
}

impl Default for LabelTextConfig {
    fn default() -> Self {
        LabelTextConfig::preset("misogynistic-not").expect("default preset exists")
    }
}

/// Loss target of a split training instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// The label the group chose (the one whose text is appended).
    #[default]
    Group,
    /// The entry's aggregated majority label.
    Majority,
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(TargetMode::Group),
            "majority" => Ok(TargetMode::Majority),
            other => Err(Error::Config(format!("unknown target mode {other:?}"))),
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::Group => "group",
            TargetMode::Majority => "majority",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub instance_id: String,
    pub text: String,
    /// Label text of the group's choice.
    pub label_text: String,
    pub annotator_group: Vec<String>,
    /// The label the group chose.
    pub choice: Label,
    pub target: Label,
}

impl TrainingInstance {
    /// `text [SEP] label_text`.
    pub fn input_text(&self) -> String {
        format!("{} {SEP_TOKEN} {}", self.text, self.label_text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub instance_id: String,
    pub text: String,
    pub annotator_group: Vec<String>,
    pub target: Label,
    /// Whether all annotators of the entry agreed.
    pub unanimous: bool,
}

impl EvalInstance {
    pub fn input_text(&self) -> &str {
        &self.text
    }
}

/// Splits an entry by label choice with group targets.
pub fn build_training_instances(entry: &DatasetEntry, cfg: &LabelTextConfig) -> Vec<TrainingInstance> {
    build_training_instances_with(entry, cfg, TargetMode::Group, TieRule::default())
}

/// One instance per label-choice group (positive group first); a unanimous
/// entry yields a single instance.
pub fn build_training_instances_with(
    entry: &DatasetEntry,
    cfg: &LabelTextConfig,
    mode: TargetMode,
    tie: TieRule,
) -> Vec<TrainingInstance> {
    let majority = entry.majority_label_with(tie);
    [Label::Positive, Label::Negative]
        .into_iter()
        .filter_map(|choice| {
            let group: Vec<String> = entry
                .labels
                .iter()
                .filter(|(_, &l)| l == choice)
                .map(|(a, _)| a.clone())
                .collect();
            (!group.is_empty()).then(|| TrainingInstance {
                instance_id: entry.instance_id.clone(),
                text: entry.text.clone(),
                label_text: cfg.text_for(choice).to_owned(),
                annotator_group: group,
                choice,
                target: match mode {
                    TargetMode::Group => choice,
                    TargetMode::Majority => majority,
                },
            })
        })
        .collect()
}

pub fn build_eval_instance(entry: &DatasetEntry) -> EvalInstance {
    build_eval_instance_with(entry, TieRule::default())
}

pub fn build_eval_instance_with(entry: &DatasetEntry, tie: TieRule) -> EvalInstance {
    EvalInstance {
        instance_id: entry.instance_id.clone(),
        text: entry.text.clone(),
        annotator_group: entry.labels.keys().cloned().collect(),
        target: entry.majority_label_with(tie),
        unanimous: entry.is_unanimous(),
    }
}

/// Anything that can be rendered into model input.
pub trait ModelText {
    fn text(&self) -> &str;
    /// Appended label text, present only for training inputs.
    fn label_text(&self) -> Option<&str>;
    fn annotator_group(&self) -> &[String];
}

impl ModelText for TrainingInstance {
    fn text(&self) -> &str {
        &self.text
    }

    fn label_text(&self) -> Option<&str> {
        Some(&self.label_text)
    }

    fn annotator_group(&self) -> &[String] {
        &self.annotator_group
    }
}

impl ModelText for EvalInstance {
    fn text(&self) -> &str {
        &self.text
    }

    fn label_text(&self) -> Option<&str> {
        None
    }

    fn annotator_group(&self) -> &[String] {
        &self.annotator_group
    }
}

/// Lowercased whitespace tokenizer. Out-of-vocabulary words fall back to
/// their characters; characters outside the vocabulary map to `[UNK]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerFile", into = "TokenizerFile")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    max_len: usize,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: Vec<String>,
    max_len: usize,
}

impl From<TokenizerFile> for Tokenizer {
    fn from(f: TokenizerFile) -> Self {
        Tokenizer::from_vocab(f.vocab, f.max_len)
    }
}

impl From<Tokenizer> for TokenizerFile {
    fn from(t: Tokenizer) -> Self {
        TokenizerFile {
            vocab: t.vocab,
            max_len: t.max_len,
        }
    }
}

impl Tokenizer {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;

    /// Special tokens, then printable ASCII characters, then every word of
    /// `texts` in order of first appearance.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_len: usize) -> Self {
        let mut vocab: Vec<String> = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        vocab.extend((b'!'..=b'~').map(|c| (c as char).to_string()));
        let mut tok = Tokenizer::from_vocab(vocab, max_len);
        for text in texts {
            for word in text.split_whitespace() {
                let word = word.to_lowercase();
                if !tok.index.contains_key(&word) {
                    tok.index.insert(word.clone(), tok.vocab.len() as u32);
                    tok.vocab.push(word);
                }
            }
        }
        tok
    }

    pub fn from_vocab(vocab: Vec<String>, max_len: usize) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Tokenizer { vocab, index, max_len }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let word = word.to_lowercase();
            match self.index.get(&word) {
                Some(&id) => out.push(id),
                None => {
                    let mut buf = [0u8; 4];
                    out.extend(word.chars().map(|c| {
                        *self.index.get(&*c.encode_utf8(&mut buf)).unwrap_or(&Self::UNK)
                    }))
                }
            }
        }
        out
    }
}

/// Token ids `[CLS] text` for evaluation inputs and
/// `[CLS] text [SEP] label` for training inputs. Text tokens are truncated
/// so the sequence fits `max_len`; the label suffix is never cut.
pub fn render_tokens(instance: &impl ModelText, tokenizer: &Tokenizer) -> Vec<u32> {
    let max_len = tokenizer.max_len().max(1);
    let suffix: Vec<u32> = match instance.label_text() {
        Some(label) => std::iter::once(Tokenizer::SEP)
            .chain(tokenizer.tokenize(label))
            .collect(),
        None => Vec::new(),
    };
    let text = tokenizer.tokenize(instance.text());
    let suffix_len = suffix.len().min(max_len - 1);
    let budget = max_len - 1 - suffix_len;
    let mut ids = Vec::with_capacity(1 + budget.min(text.len()) + suffix_len);
    ids.push(Tokenizer::CLS);
    ids.extend_from_slice(&text[..budget.min(text.len())]);
    ids.extend_from_slice(&suffix[..suffix_len]);
    ids
}
