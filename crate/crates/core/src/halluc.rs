//! Caption-space hallucination metrics: CHAIR and co-occurrence analysis.
//!
//! Mentions are extracted by whole-word, case-insensitive matching of lexicon
//! surface forms, longest form first. A mention is hallucinated when its
//! canonical category is not among the image's ground-truth objects.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical categories plus surface-form synonyms.
#[derive(Debug, Clone)]
pub struct ObjectLexicon {
    categories: BTreeSet<String>,
    forms: HashMap<Vec<String>, String>,
    max_words: usize,
    fold_plurals: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct LexiconFile {
    categories: Vec<String>,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
    #[serde(default)]
    fold_plurals: bool,
}

/// Lowercased alphanumeric word runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl ObjectLexicon {
    /// Every synonym must map to one of `categories`.
    pub fn new<C, S>(categories: C, synonyms: S) -> Result<Self>
    where
        C: IntoIterator,
        C::Item: AsRef<str>,
        S: IntoIterator<Item = (String, String)>,
    {
        let categories: BTreeSet<String> = categories
            .into_iter()
            .map(|c| words(c.as_ref()).join(" "))
            .filter(|c| !c.is_empty())
            .collect();
        let mut forms = HashMap::new();
        for c in &categories {
            forms.insert(words(c), c.clone());
        }
        for (surface, canonical) in synonyms {
            let canonical = words(&canonical).join(" ");
            if !categories.contains(&canonical) {
                return Err(Error::UnknownCategory(canonical));
            }
            let key = words(&surface);
            if key.is_empty() {
                return Err(Error::schema("synonyms", format!("surface form {surface:?} has no words")));
            }
            forms.insert(key, canonical);
        }
        let max_words = forms.keys().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            categories,
            forms,
            max_words,
            fold_plurals: false,
        })
    }

    /// Also match a word with a trailing `s` removed when the word itself is
    /// not a surface form.
    pub fn with_plural_folding(mut self, on: bool) -> Self {
        self.fold_plurals = on;
        self
    }

    /// The objects used in the dining-table co-occurrence study, with common
    /// synonyms.
    pub fn builtin() -> Self {
        let categories = ["dining table", "person", "cup", "bottle", "chair", "fork", "knife"];
        let synonyms = [
            ("table", "dining table"),
            ("dinner table", "dining table"),
            ("kitchen table", "dining table"),
            ("man", "person"),
            ("men", "person"),
            ("woman", "person"),
            ("women", "person"),
            ("people", "person"),
            ("boy", "person"),
            ("girl", "person"),
            ("child", "person"),
            ("children", "person"),
            ("guy", "person"),
            ("lady", "person"),
            ("mug", "cup"),
            ("teacup", "cup"),
            ("coffee cup", "cup"),
            ("stool", "chair"),
            ("knives", "knife"),
        ];
        Self::new(
            categories,
            synonyms.iter().map(|(s, c)| (s.to_string(), c.to_string())),
        )
        .expect("builtin lexicon is consistent")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: LexiconFile =
            serde_json::from_str(text).map_err(|e| Error::schema("lexicon", e.to_string()))?;
        Ok(Self::new(file.categories, file.synonyms)?.with_plural_folding(file.fold_plurals))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn categories(&self) -> &BTreeSet<String> {
        &self.categories
    }

    fn lookup(&self, key: &[String]) -> Option<&String> {
        if let Some(c) = self.forms.get(key) {
            return Some(c);
        }
        if self.fold_plurals {
            let last = key.last()?;
            if last.len() > 1 && last.ends_with('s') {
                let mut folded = key.to_vec();
                folded.last_mut().expect("non-empty").pop();
                return self.forms.get(&folded);
            }
        }
        None
    }

    /// Maps a category name or synonym to its canonical name.
    pub fn canonical(&self, name: &str) -> Result<String> {
        self.lookup(&words(name))
            .cloned()
            .ok_or_else(|| Error::UnknownCategory(name.to_owned()))
    }

    /// Canonical object mentions in order of appearance, with duplicates.
    pub fn extract_mentions(&self, caption: &str) -> Vec<String> {
        let w = words(caption);
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < w.len() {
            let longest = self.max_words.min(w.len() - i);
            for len in (1..=longest).rev() {
                if let Some(c) = self.lookup(&w[i..i + len]) {
                    out.push(c.clone());
                    i += len;
                    continue 'outer;
                }
            }
            i += 1;
        }
        out
    }
}

pub fn extract_mentions(caption: &str, lexicon: &ObjectLexicon) -> Vec<String> {
    lexicon.extract_mentions(caption)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
    pub ground_truth: BTreeSet<String>,
}

impl CaptionRecord {
    /// Canonicalizes the ground-truth names through `lexicon`.
    pub fn new<I, S>(image_id: impl Into<String>, caption: impl Into<String>, ground_truth: I, lexicon: &ObjectLexicon) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Ok(Self {
            image_id: image_id.into(),
            caption: caption.into(),
            ground_truth: ground_truth
                .into_iter()
                .map(|n| lexicon.canonical(n.as_ref()))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    pub chair_i: f64,
    pub chair_s: f64,
    pub recall: f64,
    pub hallucinated_mentions: usize,
    pub total_mentions: usize,
    pub hallucinated_captions: usize,
    pub total_captions: usize,
    pub recalled_objects: usize,
    pub ground_truth_objects: usize,
    /// Captions that mention no lexicon object at all.
    pub zero_mention_captions: usize,
    /// Set when no caption mentions anything; `chair_i` is then reported as 0.
    pub no_mentions: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn chair(records: &[CaptionRecord], lexicon: &ObjectLexicon) -> Result<ChairReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("CHAIR needs at least one caption".into()));
    }
    let mut r = ChairReport {
        chair_i: 0.0,
        chair_s: 0.0,
        recall: 0.0,
        hallucinated_mentions: 0,
        total_mentions: 0,
        hallucinated_captions: 0,
        total_captions: records.len(),
        recalled_objects: 0,
        ground_truth_objects: 0,
        zero_mention_captions: 0,
        no_mentions: false,
    };
    for rec in records {
        let mentions = lexicon.extract_mentions(&rec.caption);
        if mentions.is_empty() {
            r.zero_mention_captions += 1;
        }
        let hallucinated = mentions.iter().filter(|m| !rec.ground_truth.contains(*m)).count();
        r.total_mentions += mentions.len();
        r.hallucinated_mentions += hallucinated;
        if hallucinated > 0 {
            r.hallucinated_captions += 1;
        }
        let mentioned: BTreeSet<&String> = mentions.iter().collect();
        r.recalled_objects += rec.ground_truth.iter().filter(|g| mentioned.contains(g)).count();
        r.ground_truth_objects += rec.ground_truth.len();
    }
    r.no_mentions = r.total_mentions == 0;
    if r.zero_mention_captions > 0 {
        log::warn!("{} caption(s) mention no lexicon object", r.zero_mention_captions);
    }
    r.chair_i = ratio(r.hallucinated_mentions, r.total_mentions);
    r.chair_s = ratio(r.hallucinated_captions, r.total_captions);
    r.recall = ratio(r.recalled_objects, r.ground_truth_objects);
    Ok(r)
}

/// How often a probe object is mentioned in captions of images that contain
/// the base object but not the probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFrequency {
    pub probe: String,
    pub qualifying_images: usize,
    pub mentioning_images: usize,
    pub frequency: f64,
}

pub fn cooccurrence_hallucination(
    records: &[CaptionRecord],
    base_object: &str,
    probe_objects: &[String],
    lexicon: &ObjectLexicon,
) -> Result<Vec<(String, Result<ProbeFrequency>)>> {
    let base = lexicon.canonical(base_object)?;
    let probes: Vec<String> = probe_objects
        .iter()
        .map(|p| lexicon.canonical(p))
        .collect::<Result<_>>()?;
    let with_base: Vec<(&CaptionRecord, BTreeSet<String>)> = records
        .iter()
        .filter(|r| r.ground_truth.contains(&base))
        .map(|r| (r, lexicon.extract_mentions(&r.caption).into_iter().collect()))
        .collect();
    Ok(probes
        .into_iter()
        .map(|probe| {
            let mut qualifying = 0;
            let mut mentioning = 0;
            for (rec, mentions) in &with_base {
                if rec.ground_truth.contains(&probe) {
                    continue;
                }
                qualifying += 1;
                if mentions.contains(&probe) {
                    mentioning += 1;
                }
            }
            let result = if qualifying == 0 {
                Err(Error::NoQualifyingImages {
                    base: base.clone(),
                    probe: probe.clone(),
                })
            } else {
                Ok(ProbeFrequency {
                    probe: probe.clone(),
                    qualifying_images: qualifying,
                    mentioning_images: mentioning,
                    frequency: mentioning as f64 / qualifying as f64,
                })
            };
            (probe, result)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    pub images: usize,
    /// Number of images containing each object.
    pub counts: BTreeMap<String, usize>,
    /// `conditional[a][b] = P(b ∈ GT | a ∈ GT)`.
    pub conditional: BTreeMap<String, BTreeMap<String, f64>>,
    /// Requested objects that never occur; they have no conditional row.
    pub absent: Vec<String>,
}

/// Conditional co-occurrence frequencies over ground-truth annotations.
/// `universe` adds objects that may not occur, so they can be flagged.
pub fn cooccurrence_stats(
    annotations: &BTreeMap<String, BTreeSet<String>>,
    universe: &[String],
) -> Result<CooccurrenceTable> {
    if annotations.is_empty() {
        return Err(Error::EmptyInput("no annotations".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for objects in annotations.values() {
        for a in objects {
            *counts.entry(a.clone()).or_default() += 1;
            for b in objects {
                *joint.entry((a.as_str(), b.as_str())).or_default() += 1;
            }
        }
    }
    let objects: BTreeSet<&String> = counts.keys().chain(universe).collect();
    let mut conditional = BTreeMap::new();
    let mut absent = Vec::new();
    for a in &objects {
        let Some(&na) = counts.get(*a) else {
            absent.push((*a).clone());
            continue;
        };
        let row = objects
            .iter()
            .map(|b| {
                let nab = joint.get(&(a.as_str(), b.as_str())).copied().unwrap_or(0);
                ((*b).clone(), nab as f64 / na as f64)
            })
            .collect();
        conditional.insert((*a).clone(), row);
    }
    if !absent.is_empty() {
        log::warn!("objects never annotated: {}", absent.join(", "));
    }
    Ok(CooccurrenceTable {
        images: annotations.len(),
        counts,
        conditional,
        absent,
    })
}
