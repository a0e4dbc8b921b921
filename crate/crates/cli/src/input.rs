//! File readers, layer selection and JSON output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ortholens::halluc::{CaptionRecord, ObjectLexicon};
use ortholens::{Error, Result};
use serde::{Deserialize, Serialize};

fn io_error(path: &Path, e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        field: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// `image_id → [names]` files (labels and annotations).
pub fn read_category_lists(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    read_json(path)
}

#[derive(Debug, Deserialize)]
struct CaptionLine {
    image_id: String,
    caption: String,
}

pub fn read_captions(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CaptionLine = serde_json::from_str(line).map_err(|e| Error::Schema {
            field: format!("{}:{}", path.display(), i + 1),
            reason: e.to_string(),
        })?;
        out.push((row.image_id, row.caption));
    }
    Ok(out)
}

pub fn load_lexicon(path: Option<&Path>) -> Result<ObjectLexicon> {
    match path {
        Some(p) => ObjectLexicon::from_json_str(&read_text(p)?),
        None => Ok(ObjectLexicon::builtin()),
    }
}

pub fn caption_records(
    captions: &Path,
    annotations: &BTreeMap<String, Vec<String>>,
    lexicon: &ObjectLexicon,
) -> Result<Vec<CaptionRecord>> {
    read_captions(captions)?
        .into_iter()
        .map(|(id, caption)| {
            let gt = annotations.get(&id).ok_or_else(|| Error::Schema {
                field: format!("annotations[{id}]"),
                reason: "captioned image has no annotation entry".into(),
            })?;
            CaptionRecord::new(id, caption, gt.iter(), lexicon)
        })
        .collect()
}

/// Parsed `--layers` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelection {
    /// Half-open or closed range; selects whichever available layers fall inside.
    Range { start: usize, end: usize },
    /// Explicit list; every entry must exist.
    List(Vec<usize>),
}

fn layer_number(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad layer `{s}` in --layers")))
}

impl LayerSelection {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some((a, b)) = s.split_once("..") {
            let start = layer_number(a)?;
            let end = match b.strip_prefix('=') {
                Some(b) => layer_number(b)? + 1,
                None => layer_number(b)?,
            };
            if end <= start {
                return Err(Error::InvalidArgument(format!("empty layer range `{s}`")));
            }
            return Ok(LayerSelection::Range { start, end });
        }
        let list = s.split(',').map(layer_number).collect::<Result<Vec<_>>>()?;
        Ok(LayerSelection::List(list))
    }

    /// Every layer the selection names, for inputs without a fixed layer set.
    pub fn expand(&self) -> Vec<usize> {
        match self {
            LayerSelection::Range { start, end } => (*start..*end).collect(),
            LayerSelection::List(v) => v.clone(),
        }
    }

    /// Intersects with the layers actually present, in ascending order.
    pub fn resolve(&self, available: &[usize]) -> Result<Vec<usize>> {
        let chosen: Vec<usize> = match self {
            LayerSelection::Range { start, end } => available
                .iter()
                .copied()
                .filter(|l| (*start..*end).contains(l))
                .collect(),
            LayerSelection::List(v) => {
                if let Some(l) = v.iter().find(|l| !available.contains(l)) {
                    return Err(Error::InvalidArgument(format!(
                        "layer {l} is not in the dump (available: {available:?})"
                    )));
                }
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        if chosen.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "--layers selects none of the dumped layers {available:?}"
            )));
        }
        Ok(chosen)
    }
}

/// Sorts and deduplicates k values, warning on repeats.
pub fn normalize_k(k: &[usize]) -> Vec<usize> {
    let mut v = k.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != k.len() {
        log::warn!("duplicate k values in {k:?}; using {v:?}");
    }
    v
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e)),
        None => Ok(()),
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}
