use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ortholens::geometry::{alignment_score, similarity_matrix};
use ortholens::halluc::{chair, cooccurrence_hallucination, cooccurrence_stats};
use ortholens::lens::lens_compare;
use ortholens::manifold::manifold_from_manifest;
use ortholens::probe::{probe_sweep, ProbeDataset};
use ortholens::{
    alignment_trajectory, debias_matrix, debias_tensor, load_manifest, read_tensor, write_tensor,
    DumpManifest, EmbeddingMatrix, Error, LayerDumpSet, ManifoldSet, Result, Role, SpectralBasis,
    TextManifold,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::input::{
    caption_records, ensure_parent, load_lexicon, normalize_k, read_category_lists, sidecar_path,
    write_json, LayerSelection,
};

/// Shared header of every JSON output.
#[derive(Serialize)]
pub struct Config<'a, A: Serialize> {
    pub command: &'static str,
    pub seed: u64,
    pub threads: usize,
    #[serde(flatten)]
    pub args: &'a A,
}

#[derive(Serialize)]
struct Output<'a, A: Serialize, B: Serialize> {
    config: &'a Config<'a, A>,
    #[serde(flatten)]
    body: B,
}

fn emit<A: Serialize>(path: &Path, config: &Config<'_, A>, body: impl Serialize) -> Result<()> {
    write_json(path, &Output { config, body })
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn vision_dumps(manifest: &DumpManifest) -> Result<LayerDumpSet> {
    let dumps = LayerDumpSet::from_manifest(manifest, Role::VisionLayer)?;
    if dumps.layer_ids().is_empty() {
        return Err(Error::MissingRole("vision_layer_<l>".into()));
    }
    Ok(dumps)
}

fn manifold_summary(m: &TextManifold) -> Value {
    let eig = m.basis().eigenvalues();
    json!({
        "k": m.rank(),
        "d": m.dim(),
        "caption_rows": m.source().caption_rows,
        "eigenvalues": eig,
        "degenerate": m.is_degenerate(),
    })
}

pub fn fit_manifold(a: &FitManifoldArgs, cfg: &Config<'_, FitManifoldArgs>) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    if a.chunk_rows == 0 {
        return Err(invalid("--chunk-rows must be positive"));
    }
    let set = if a.per_layer {
        ManifoldSet::per_layer_from_manifest(&manifest, a.k, a.chunk_rows)?
    } else {
        ManifoldSet::Fixed(manifold_from_manifest(&manifest, a.k, a.chunk_rows)?)
    };
    set.save(&a.out)?;
    let manifolds: BTreeMap<String, Value> = match &set {
        ManifoldSet::Fixed(m) => BTreeMap::from([("all".to_string(), manifold_summary(m))]),
        ManifoldSet::PerLayer(map) => map
            .iter()
            .map(|(l, m)| (format!("layer_{l}"), manifold_summary(m)))
            .collect(),
    };
    emit(
        &a.out.join("run.json"),
        cfg,
        json!({ "source_manifest_hash": manifest.source_hash(), "manifolds": manifolds }),
    )
}

pub fn debias(a: &DebiasArgs, cfg: &Config<'_, DebiasArgs>) -> Result<()> {
    if a.out.extension().is_some_and(|e| e == "json") {
        return Err(invalid(
            "--out names the tensor; the sidecar gets the .json extension",
        ));
    }
    let set = ManifoldSet::load(&a.manifold)?;
    let manifold = match (&set, a.layer) {
        (ManifoldSet::Fixed(m), _) => m,
        (ManifoldSet::PerLayer(_), Some(l)) => set.for_layer(l)?,
        (ManifoldSet::PerLayer(_), None) => {
            return Err(invalid("--layer is required with a per-layer manifold"))
        }
    };
    let (tensor, source) = match (&a.manifest, &a.input) {
        (Some(path), _) => {
            let layer = a
                .layer
                .ok_or_else(|| invalid("--layer is required with --manifest"))?;
            let manifest = load_manifest(path)?;
            let role = match a.kind {
                DumpKind::Vision => Role::VisionLayer(layer),
                DumpKind::Hidden => Role::HiddenStatesLayer(layer),
            };
            (
                manifest.load_tensor(role)?,
                Some(manifest.source_hash().to_owned()),
            )
        }
        (None, Some(path)) => (read_tensor(path)?, None),
        (None, None) => return Err(invalid("one of --manifest or --input is required")),
    };
    let out = debias_tensor(&tensor, manifold, a.k)?;
    ensure_parent(&a.out)?;
    write_tensor(&a.out, &out)?;
    emit(
        &sidecar_path(&a.out),
        cfg,
        json!({
            "tensor": a.out,
            "shape": out.shape(),
            "source_manifest_hash": source,
            "manifold_rank": manifold.rank(),
        }),
    )
}

#[derive(Serialize)]
struct AlignRow {
    layer: usize,
    score: f64,
    tokens: usize,
    excluded: usize,
}

pub fn align(a: &AlignArgs, cfg: &Config<'_, AlignArgs>) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let set = ManifoldSet::load(&a.manifold)?;
    let traj = alignment_trajectory(&vision_dumps(&manifest)?, &set, a.drop_k)?;
    let rows: Vec<AlignRow> = (0..traj.layer_ids.len())
        .map(|i| AlignRow {
            layer: traj.layer_ids[i],
            score: traj.scores[i],
            tokens: traj.token_counts[i],
            excluded: traj.excluded[i],
        })
        .collect();
    emit(
        &a.out,
        cfg,
        json!({ "source_manifest_hash": manifest.source_hash(), "drop_k": a.drop_k, "rows": rows }),
    )
}

pub fn subspace_sim(a: &SubspaceSimArgs, cfg: &Config<'_, SubspaceSimArgs>) -> Result<()> {
    let mut bases: Vec<(String, SpectralBasis)> = Vec::with_capacity(a.bases.len());
    for dir in &a.bases {
        let m = TextManifold::load(dir)?;
        let basis = match a.top {
            Some(t) if t > m.rank() => {
                return Err(Error::KOutOfRange {
                    k: t,
                    min: 1,
                    max: m.rank(),
                })
            }
            Some(0) => return Err(invalid("--top must be positive")),
            Some(t) => m.basis().slice(0, t),
            None => m.basis().clone(),
        };
        bases.push((dir.display().to_string(), basis));
    }
    let sim = similarity_matrix(&bases)?;
    emit(
        &a.out,
        cfg,
        json!({ "labels": sim.labels, "values": sim.values }),
    )
}

pub fn probe(a: &ProbeArgs, cfg: &Config<'_, ProbeArgs>) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let mut dumps = vision_dumps(&manifest)?;
    if let Some(sel) = &a.layers {
        let keep = LayerSelection::parse(sel)?.resolve(dumps.layer_ids())?;
        dumps = dumps.select_layers(&keep)?;
    }
    let lists = read_category_lists(&a.labels)?;
    let dataset = ProbeDataset::from_category_lists(&lists, dumps.image_ids())?;
    let set = ManifoldSet::load(&a.manifold)?;
    let k = normalize_k(&a.k);
    let table = probe_sweep(&dumps, &dataset, &set, &k, a.lambda, cfg.seed)?;
    emit(
        &a.out,
        cfg,
        json!({ "source_manifest_hash": manifest.source_hash(), "table": table }),
    )
}

pub fn lens(a: &LensArgs, cfg: &Config<'_, LensArgs>) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let role = [Role::HiddenStatesLayer(a.layer), Role::VisionLayer(a.layer)]
        .into_iter()
        .find(|r| manifest.entry(*r).is_some())
        .ok_or_else(|| {
            Error::MissingRole(format!(
                "hidden_states_layer_{0} or vision_layer_{0}",
                a.layer
            ))
        })?;
    let image = match &a.image {
        Some(id) => manifest
            .image_ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| invalid(format!("image `{id}` is not in the manifest")))?,
        None => 0,
    };
    let image_id = manifest
        .image_ids
        .get(image)
        .cloned()
        .ok_or_else(|| Error::EmptyInput("manifest lists no images".into()))?;
    let hidden = manifest.load_tensor(role)?;
    let states = match hidden.rank() {
        3 => hidden.outer(image)?,
        _ => hidden.as_matrix()?,
    };
    let unembedding = manifest.load_tensor(Role::Unembedding)?;
    let unembedding = unembedding.as_matrix()?;
    let vocab: Vec<String> = match &manifest.token_strings {
        Some(v) => v.clone(),
        None => (0..unembedding.nrows()).map(|i| i.to_string()).collect(),
    };
    let debiased: Option<EmbeddingMatrix> = match &a.debias_manifold {
        Some(dir) => {
            let set = ManifoldSet::load(dir)?;
            Some(debias_matrix(states, set.for_layer(a.layer)?, a.k)?)
        }
        None => None,
    };
    let pairs = lens_compare(
        states,
        debiased.as_ref().map_or(states, EmbeddingMatrix::view),
        unembedding,
        &vocab,
        a.topk,
        a.pre_norm.into(),
        a.patches.as_deref(),
        Some(a.layer),
    )?;
    let patches: Vec<Value> = pairs
        .into_iter()
        .map(|p| {
            let mut v = json!({
                "patch_index": p.baseline.patch_index,
                "baseline": p.baseline.ranked,
            });
            if debiased.is_some() {
                v["debiased"] = json!(p.debiased.ranked);
            }
            v
        })
        .collect();
    emit(
        &a.out,
        cfg,
        json!({
            "source_manifest_hash": manifest.source_hash(),
            "role": role.to_string(),
            "image_id": image_id,
            "patches": patches,
        }),
    )
}

pub fn chair_cmd(a: &ChairArgs, cfg: &Config<'_, ChairArgs>) -> Result<()> {
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let annotations = read_category_lists(&a.annotations)?;
    let records = caption_records(&a.captions, &annotations, &lexicon)?;
    let report = chair(&records, &lexicon)?;
    emit(&a.out, cfg, json!({ "report": report }))
}

pub fn cooccur(a: &CooccurArgs, cfg: &Config<'_, CooccurArgs>) -> Result<()> {
    let lexicon = load_lexicon(a.lexicon.as_deref())?;
    let annotations = read_category_lists(&a.annotations)?;
    let records = caption_records(&a.captions, &annotations, &lexicon)?;
    let results = cooccurrence_hallucination(&records, &a.base, &a.probes, &lexicon)?;
    let probes: Vec<Value> = results
        .into_iter()
        .map(|(probe, r)| match r {
            Ok(f) => json!(f),
            Err(e) => {
                json!({ "probe": probe, "error": { "code": e.code(), "message": e.to_string() } })
            }
        })
        .collect();

    let canonical: BTreeMap<String, BTreeSet<String>> = annotations
        .iter()
        .map(|(id, objs)| {
            let set = objs
                .iter()
                .map(|o| lexicon.canonical(o))
                .collect::<Result<_>>()?;
            Ok((id.clone(), set))
        })
        .collect::<Result<_>>()?;
    let universe: Vec<String> = std::iter::once(&a.base)
        .chain(&a.probes)
        .map(|o| lexicon.canonical(o))
        .collect::<Result<_>>()?;
    let stats = cooccurrence_stats(&canonical, &universe)?;
    emit(
        &a.out,
        cfg,
        json!({ "base": lexicon.canonical(&a.base)?, "probes": probes, "cooccurrence": stats }),
    )
}

#[derive(Serialize)]
struct SweepCell {
    k: usize,
    layer: usize,
    value: f64,
    detail: Value,
}

fn require<'a, T: ?Sized>(v: Option<&'a T>, flag: &str, metric: &str) -> Result<&'a T> {
    v.ok_or_else(|| invalid(format!("--{flag} is required for --metric {metric}")))
}

pub fn sweep(a: &SweepArgs, cfg: &Config<'_, SweepArgs>) -> Result<()> {
    let k_values = normalize_k(&a.k);
    let selection = LayerSelection::parse(&a.layers)?;
    let mut cells = Vec::with_capacity(k_values.len());
    let layers: Vec<usize>;
    match a.metric {
        Metric::Alignment => {
            let manifest = load_manifest(require(a.manifest.as_deref(), "manifest", "alignment")?)?;
            let set = ManifoldSet::load(require(a.manifold.as_deref(), "manifold", "alignment")?)?;
            let all = vision_dumps(&manifest)?;
            layers = selection.resolve(all.layer_ids())?;
            let dumps = all.select_layers(&layers)?;
            for &k in &k_values {
                for (li, &layer) in layers.iter().enumerate() {
                    let s = alignment_score(dumps.layer_tokens(li), set.for_layer(layer)?, k)
                        .map_err(|e| Error::Layer {
                            layer,
                            source: Box::new(e),
                        })?;
                    cells.push(SweepCell {
                        k,
                        layer,
                        value: s.score,
                        detail: json!({ "tokens": s.tokens, "excluded": s.excluded }),
                    });
                }
            }
        }
        Metric::ProbeMap => {
            let manifest = load_manifest(require(a.manifest.as_deref(), "manifest", "probe-map")?)?;
            let set = ManifoldSet::load(require(a.manifold.as_deref(), "manifold", "probe-map")?)?;
            let lists = read_category_lists(require(a.labels.as_deref(), "labels", "probe-map")?)?;
            let all = vision_dumps(&manifest)?;
            layers = selection.resolve(all.layer_ids())?;
            let dumps = all.select_layers(&layers)?;
            let dataset = ProbeDataset::from_category_lists(&lists, dumps.image_ids())?;
            let table = probe_sweep(&dumps, &dataset, &set, &k_values, a.lambda, cfg.seed)?;
            for &k in &k_values {
                for &layer in &layers {
                    let c = table
                        .cell(layer, k)
                        .expect("every (layer, k) cell is evaluated");
                    cells.push(SweepCell {
                        k,
                        layer,
                        value: c.map,
                        detail: json!({
                            "evaluated_categories": c.evaluated_categories,
                            "per_category_ap": c.per_category_ap,
                        }),
                    });
                }
            }
        }
        Metric::Chair => {
            let template = require(a.captions.as_deref(), "captions", "chair")?;
            let annotations =
                read_category_lists(require(a.annotations.as_deref(), "annotations", "chair")?)?;
            let lexicon = load_lexicon(a.lexicon.as_deref())?;
            layers = selection.expand();
            for &k in &k_values {
                for &layer in &layers {
                    let path = template
                        .replace("{k}", &k.to_string())
                        .replace("{layer}", &layer.to_string());
                    let records = caption_records(Path::new(&path), &annotations, &lexicon)?;
                    let r = chair(&records, &lexicon)?;
                    cells.push(SweepCell {
                        k,
                        layer,
                        value: r.chair_i,
                        detail: json!({ "captions": path, "chair_s": r.chair_s, "recall": r.recall }),
                    });
                }
            }
        }
    }
    let table: Vec<Vec<f64>> = cells
        .chunks(layers.len())
        .map(|row| row.iter().map(|c| c.value).collect())
        .collect();
    emit(
        &a.out,
        cfg,
        json!({
            "metric": a.metric,
            "k_values": k_values,
            "layers": layers,
            "table": table,
            "cells": cells,
        }),
    )
}
