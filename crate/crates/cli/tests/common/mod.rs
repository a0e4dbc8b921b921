#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ortholens::synth::{gaussian_vec, planted_probe, rng, CaptionDistribution, PlantedProbeConfig};
use ortholens::{write_tensor, EmbeddingMatrix};
use tempfile::TempDir;

pub const DIM: usize = 32;
pub const LAYERS: usize = 4;
pub const VOCAB: usize = 40;

pub struct Fixture {
    pub dir: TempDir,
    pub manifest: PathBuf,
    pub labels: PathBuf,
    /// Manifold matching the planted probe's geometry (K = 8).
    pub manifold: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Text embeddings, four vision layers, an unembedding matrix and labels.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut r = rng(11);

    let text =
        CaptionDistribution::random(&mut r, DIM, &[6.0, 5.0, 3.0, 2.5, 2.0, 1.5, 1.2, 1.0], 0.2)
            .sample(&mut r, 600);
    write_tensor(root.join("text.emb"), &text).unwrap();

    let cfg = PlantedProbeConfig {
        images: 40,
        tokens_per_image: 8,
        ..PlantedProbeConfig::default()
    };
    let planted = planted_probe(3, &cfg);
    for i in 0..LAYERS {
        write_tensor(
            root.join(format!("vision_{i}.emb")),
            planted.dumps.layer_tensor(i),
        )
        .unwrap();
    }
    planted
        .manifold
        .save(root.join("planted_manifold"))
        .unwrap();

    let unembedding: Vec<Vec<f64>> = (0..VOCAB).map(|_| gaussian_vec(&mut r, DIM)).collect();
    write_tensor(
        root.join("unembed.emb"),
        &EmbeddingMatrix::from_f64_rows(&unembedding).unwrap(),
    )
    .unwrap();

    let mut files = serde_json::Map::new();
    files.insert("text_embeddings".into(), "text.emb".into());
    files.insert("unembedding".into(), "unembed.emb".into());
    for i in 0..LAYERS {
        files.insert(
            format!("vision_layer_{i}"),
            format!("vision_{i}.emb").into(),
        );
        files.insert(format!("text_layer_{i}"), "text.emb".into());
    }
    let manifest = serde_json::json!({
        "model_id": "synthetic",
        "layer_ids": (0..LAYERS).collect::<Vec<_>>(),
        "image_ids": planted.dataset.image_ids,
        "token_strings": (0..VOCAB).map(|i| format!("w{i}")).collect::<Vec<_>>(),
        "files": files,
    });
    std::fs::write(root.join("manifest.json"), manifest.to_string()).unwrap();

    let labels: BTreeMap<&String, Vec<&String>> = planted
        .dataset
        .image_ids
        .iter()
        .zip(&planted.dataset.labels)
        .map(|(id, row)| {
            let cats = row
                .iter()
                .zip(&planted.dataset.category_names)
                .filter(|(on, _)| **on)
                .map(|(_, c)| c)
                .collect();
            (id, cats)
        })
        .collect();
    std::fs::write(
        root.join("labels.json"),
        serde_json::to_string(&labels).unwrap(),
    )
    .unwrap();

    Fixture {
        manifest: root.join("manifest.json"),
        labels: root.join("labels.json"),
        manifold: root.join("planted_manifold"),
        dir,
    }
}

pub fn ortholens() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ortholens"));
    c.env_remove("ORTHOLENS_THREADS");
    c
}

pub fn run(args: &[&str]) -> Output {
    ortholens().args(args).output().unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        stderr(o)
    );
}
