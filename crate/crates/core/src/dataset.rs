//! Labeled intent corpus and its line-delimited file format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{IntentId, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

/// One corpus sample. `topic` and `noise` record how the text was composed;
/// the attack simulator uses them to build variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetItem {
    pub role: Role,
    pub text: String,
    pub topic: Vec<String>,
    pub noise: Vec<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntentDataset {
    pub items: Vec<DatasetItem>,
    /// Filler vocabulary shared by every role.
    pub noise_vocab: Vec<String>,
}

impl IntentDataset {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn split(&self, split: Split) -> IntentDataset {
        IntentDataset {
            items: self.items.iter().filter(|i| i.split == split).cloned().collect(),
            noise_vocab: self.noise_vocab.clone(),
        }
    }

    /// Malicious intent ids in order of first appearance.
    pub fn malicious_intents(&self) -> Vec<IntentId> {
        let mut seen = Vec::new();
        for item in &self.items {
            if let Role::MaliciousFragment(id) | Role::MaliciousAnchor(id) = item.role {
                if !seen.contains(&id) {
                    seen.push(id);
                }
            }
        }
        seen
    }

    /// Fragments of one malicious intent, in dataset order.
    pub fn fragments_of(&self, intent: IntentId) -> Vec<&DatasetItem> {
        self.items
            .iter()
            .filter(|i| i.role == Role::MaliciousFragment(intent))
            .collect()
    }

    pub fn anchor_of(&self, intent: IntentId) -> Option<&DatasetItem> {
        self.items.iter().find(|i| i.role == Role::MaliciousAnchor(intent))
    }

    pub fn benign_items(&self) -> Vec<&DatasetItem> {
        self.items.iter().filter(|i| i.role.is_benign()).collect()
    }

    /// Every distinct token that appears in the corpus plus the noise vocabulary.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut set: BTreeMap<&str, ()> = BTreeMap::new();
        for t in &self.noise_vocab {
            set.insert(t, ());
        }
        for item in &self.items {
            for t in item.topic.iter().chain(&item.noise) {
                set.insert(t, ());
            }
        }
        set.into_keys().map(str::to_owned).collect()
    }

    /// Writes one split as a header line followed by one line per item.
    pub fn write_split<W: Write>(&self, split: Split, mut w: W) -> Result<()> {
        let header = HeaderRecord {
            format: FORMAT_TAG.to_owned(),
            split: split.as_str().to_owned(),
            noise_vocab: self.noise_vocab.clone(),
        };
        writeln!(w, "{}", to_json(&header)?)?;
        for item in self.items.iter().filter(|i| i.split == split) {
            let rec = ItemRecord {
                role: item.role.name().to_owned(),
                intent_id: item.role.intent_id(),
                text: item.text.clone(),
                topic: item.topic.clone(),
                noise: item.noise.clone(),
            };
            writeln!(w, "{}", to_json(&rec)?)?;
        }
        Ok(())
    }

    /// Reads a split file and aborts if its split tag differs from `expected`.
    pub fn read_split<R: BufRead>(r: R, expected: Split) -> Result<IntentDataset> {
        let mut lines = r.lines();
        let header: HeaderRecord = match lines.next() {
            Some(line) => from_json(&line?)?,
            None => return Err(Error::Format("empty dataset file".into())),
        };
        if header.format != FORMAT_TAG {
            return Err(Error::Format(format!("unexpected dataset format {:?}", header.format)));
        }
        let split = Split::parse(&header.split)?;
        if split != expected {
            return Err(Error::SplitMismatch { found: split.as_str().into(), expected: expected.as_str().into() });
        }
        let mut items = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ItemRecord = from_json(&line)?;
            items.push(DatasetItem {
                role: Role::from_parts(&rec.role, rec.intent_id)?,
                text: rec.text,
                topic: rec.topic,
                noise: rec.noise,
                split,
            });
        }
        Ok(IntentDataset { items, noise_vocab: header.noise_vocab })
    }
}

const FORMAT_TAG: &str = "intent-dataset/1";

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    format: String,
    split: String,
    noise_vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ItemRecord {
    role: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    intent_id: Option<IntentId>,
    text: String,
    topic: Vec<String>,
    noise: Vec<String>,
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

pub(crate) fn from_json<'a, T: Deserialize<'a>>(s: &'a str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
}
