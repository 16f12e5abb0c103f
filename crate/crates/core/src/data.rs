//! Dialogue feature records, the line-delimited dataset file, and
//! training-sample windowing.
//!
//! A dataset file is UTF-8 with one JSON object per line. The first line is
//! a header:
//!
//! ```text
//! {"format":"ficg-dialogue","version":1,"dims":{"word_text":16,"word_speech":16,"utt_text":16,"utt_speech":16},"n_speakers":2}
//! ```
//!
//! and every following non-blank line is one [`DialogueRecord`]. Floats are
//! written with at most 9 significant digits, so `save → load → save` is
//! byte-stable.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_NAME: &str = "ficg-dialogue";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed syntax: {message}")]
    Syntax { line: usize, message: String },
    #[error("bad header: {0}")]
    Header(String),
    #[error("dialogue {dialogue_id}{}: {constraint}", fmt_utt(*.utterance))]
    Schema {
        dialogue_id: String,
        utterance: Option<usize>,
        constraint: String,
    },
    #[error("dialogue {dialogue_id}, utterance {utterance}: {field} has dim {found}, dataset declares {expected}")]
    InconsistentDims {
        dialogue_id: String,
        utterance: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },
}

fn fmt_utt(u: Option<usize>) -> String {
    u.map(|i| format!(", utterance {i}")).unwrap_or_default()
}

/// Rounds to 9 significant decimal digits, the storage precision of dataset
/// files.
pub fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// A dense feature vector; its dim is its length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn quantized(&self) -> Self {
        Self(self.0.iter().copied().map(quantize).collect())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Raw input dimensions of the four feature sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    pub word_text: usize,
    pub word_speech: usize,
    pub utt_text: usize,
    pub utt_speech: usize,
}

impl FeatureDims {
    pub fn uniform(d: usize) -> Self {
        Self {
            word_text: d,
            word_speech: d,
            utt_text: d,
            utt_speech: d,
        }
    }
}

impl fmt::Display for FeatureDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "word_text={} word_speech={} utt_text={} utt_speech={}",
            self.word_text, self.word_speech, self.utt_text, self.utt_speech
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub speaker_id: usize,
    pub words: Vec<String>,
    pub word_text_feats: Vec<FeatureVector>,
    pub word_speech_feats: Vec<FeatureVector>,
    pub utt_text_feat: FeatureVector,
    pub utt_speech_feat: FeatureVector,
    /// Normalized log-F0 mean of the utterance.
    pub pitch_target: f64,
    /// Normalized RMS mean of the utterance.
    pub energy_target: f64,
}

impl UtteranceRecord {
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    fn quantized(&self) -> Self {
        Self {
            speaker_id: self.speaker_id,
            words: self.words.clone(),
            word_text_feats: self.word_text_feats.iter().map(FeatureVector::quantized).collect(),
            word_speech_feats: self.word_speech_feats.iter().map(FeatureVector::quantized).collect(),
            utt_text_feat: self.utt_text_feat.quantized(),
            utt_speech_feat: self.utt_speech_feat.quantized(),
            pitch_target: quantize(self.pitch_target),
            energy_target: quantize(self.energy_target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    pub dialogue_id: String,
    pub utterances: Vec<UtteranceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    dims: FeatureDims,
    n_speakers: usize,
}

/// A validated collection of dialogues sharing one set of feature dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: FeatureDims,
    pub n_speakers: usize,
    pub dialogues: Vec<DialogueRecord>,
}

impl Dataset {
    pub fn new(dims: FeatureDims, n_speakers: usize, dialogues: Vec<DialogueRecord>) -> Self {
        Self {
            dims,
            n_speakers,
            dialogues,
        }
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn get(&self, dialogue_id: &str) -> Option<&DialogueRecord> {
        self.dialogues.iter().find(|d| d.dialogue_id == dialogue_id)
    }

    /// Checks every record and dialogue-id uniqueness.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for record in &self.dialogues {
            validate_record(record, &self.dims, self.n_speakers)?;
            if !seen.insert(record.dialogue_id.as_str()) {
                return Err(DataError::Schema {
                    dialogue_id: record.dialogue_id.clone(),
                    utterance: None,
                    constraint: "duplicate dialogue_id".into(),
                });
            }
        }
        Ok(())
    }

    /// Splits dialogues in file order by the given ratio weights, e.g.
    /// `[8, 1, 1]`. Every part except the last gets `floor(n·w/Σw)`.
    pub fn split(&self, weights: &[usize]) -> Vec<Dataset> {
        let total: usize = weights.iter().sum();
        let n = self.dialogues.len();
        let mut parts = Vec::with_capacity(weights.len());
        let mut start = 0;
        for (k, w) in weights.iter().enumerate() {
            let end = if k + 1 == weights.len() {
                n
            } else {
                (start + n * w / total.max(1)).min(n)
            };
            parts.push(Dataset::new(
                self.dims,
                self.n_speakers,
                self.dialogues[start..end].to_vec(),
            ));
            start = end;
        }
        parts
    }

    /// All windowed training samples of all dialogues, in file order.
    pub fn samples(&self, max_history: Option<usize>) -> Vec<TrainingSample<'_>> {
        self.dialogues
            .iter()
            .flat_map(|d| make_training_samples(d, max_history))
            .collect()
    }
}

/// Checks one record against the dataset's declared dims and speaker count.
pub fn validate_record(
    record: &DialogueRecord,
    dims: &FeatureDims,
    n_speakers: usize,
) -> Result<(), DataError> {
    let id = &record.dialogue_id;
    let schema = |utterance: Option<usize>, constraint: String| DataError::Schema {
        dialogue_id: id.clone(),
        utterance,
        constraint,
    };
    if record.utterances.is_empty() {
        return Err(schema(None, "dialogue has no utterances".into()));
    }
    for (u, utt) in record.utterances.iter().enumerate() {
        let q = utt.words.len();
        if q == 0 {
            return Err(schema(Some(u), "utterance has no words".into()));
        }
        if utt.word_text_feats.len() != q {
            return Err(schema(
                Some(u),
                format!("declares {q} words but has {} word_text_feats", utt.word_text_feats.len()),
            ));
        }
        if utt.word_speech_feats.len() != q {
            return Err(schema(
                Some(u),
                format!(
                    "declares {q} words but has {} word_speech_feats",
                    utt.word_speech_feats.len()
                ),
            ));
        }
        if utt.speaker_id >= n_speakers {
            return Err(schema(
                Some(u),
                format!("speaker_id {} outside declared {n_speakers} speakers", utt.speaker_id),
            ));
        }
        let dim_check = |field: &'static str, expected: usize, v: &FeatureVector| {
            if v.dim() != expected {
                return Err(DataError::InconsistentDims {
                    dialogue_id: id.clone(),
                    utterance: u,
                    field,
                    expected,
                    found: v.dim(),
                });
            }
            if !v.is_finite() {
                return Err(schema(Some(u), format!("{field} has a non-finite entry")));
            }
            Ok(())
        };
        for v in &utt.word_text_feats {
            dim_check("word_text_feats", dims.word_text, v)?;
        }
        for v in &utt.word_speech_feats {
            dim_check("word_speech_feats", dims.word_speech, v)?;
        }
        dim_check("utt_text_feat", dims.utt_text, &utt.utt_text_feat)?;
        dim_check("utt_speech_feat", dims.utt_speech, &utt.utt_speech_feat)?;
        if !utt.pitch_target.is_finite() || !utt.energy_target.is_finite() {
            return Err(schema(Some(u), "prosody target is not finite".into()));
        }
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

/// Parses the text of a dataset file.
pub fn parse_dataset(text: &str) -> Result<Dataset, DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| DataError::Header("file is empty".into()))?;
    let header: Header = serde_json::from_str(htext).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => DataError::Header(e.to_string()),
        _ => DataError::Syntax {
            line: hline,
            message: e.to_string(),
        },
    })?;
    if header.format != FORMAT_NAME {
        return Err(DataError::Header(format!(
            "format is {:?}, expected {FORMAT_NAME:?}",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(DataError::Header(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let mut dialogues = Vec::new();
    for (line, l) in lines {
        let record: DialogueRecord = serde_json::from_str(l).map_err(|e| match e.classify() {
            serde_json::error::Category::Data => DataError::Schema {
                dialogue_id: peek_dialogue_id(l).unwrap_or_else(|| format!("<line {line}>")),
                utterance: None,
                constraint: e.to_string(),
            },
            _ => DataError::Syntax {
                line,
                message: e.to_string(),
            },
        })?;
        dialogues.push(record);
    }
    let dataset = Dataset::new(header.dims, header.n_speakers, dialogues);
    dataset.validate()?;
    Ok(dataset)
}

fn peek_dialogue_id(line: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    v.get("dialogue_id")?.as_str().map(str::to_owned)
}

/// Serializes a dataset to its file text. Values are quantized to the
/// storage precision first.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        dims: dataset.dims,
        n_speakers: dataset.n_speakers,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for d in &dataset.dialogues {
        let q = DialogueRecord {
            dialogue_id: d.dialogue_id.clone(),
            utterances: d.utterances.iter().map(UtteranceRecord::quantized).collect(),
        };
        out.push_str(&serde_json::to_string(&q).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(dataset_to_string(dataset).as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_err)
}

/// A target utterance with its preceding dialogue history, most recent last.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSample<'a> {
    pub history: &'a [UtteranceRecord],
    pub current: &'a UtteranceRecord,
}

impl TrainingSample<'_> {
    pub fn history_len(&self) -> usize {
        self.history.len()
    }
}

/// One sample per utterance with at least one predecessor. `max_history`
/// of `None` means unbounded.
pub fn make_training_samples(
    record: &DialogueRecord,
    max_history: Option<usize>,
) -> Vec<TrainingSample<'_>> {
    let utts = &record.utterances;
    (1..utts.len())
        .map(|c| {
            let start = match max_history {
                Some(h) => c.saturating_sub(h.max(1)),
                None => 0,
            };
            TrainingSample {
                history: &utts[start..c],
                current: &utts[c],
            }
        })
        .collect()
}
