mod common;

use common::{basis_rows, column_mean, max_principal_sine, rel_err};
use ortholens::manifold::{DEFAULT_BASIS_SIZE, ManifoldSource};
use ortholens::synth::{rng, CaptionDistribution};
use ortholens::{
    fit_manifold, load_manifest, manifold_from_manifest, subspace_similarity, write_tensor,
    EmbeddingMatrix, Error, ManifoldSet, TextManifold,
};

fn caption_rows(seed: u64, n: usize, d: usize) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let stds: Vec<f64> = (0..8).map(|i| 6.0 - 0.6 * i as f64).collect();
    CaptionDistribution::random(&mut r, d, &stds, 0.3).sample(&mut r, n)
}

fn scaled(m: &EmbeddingMatrix, c: f32, t: &[f32]) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = m
        .rows()
        .map(|r| r.iter().zip(t).map(|(&x, &s)| c * x + s).collect())
        .collect();
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

#[test]
fn hand_fit() {
    let rows = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [-1.0, 0.0], [0.0, 0.1], [0.0, -0.1]]).unwrap();
    let m = fit_manifold(&rows, 1).unwrap();
    assert_eq!(m.mean(), &[0.0, 0.0]);
    assert!((m.basis().row(0)[0] - 1.0).abs() < 1e-12);
    assert!(m.basis().row(0)[1].abs() < 1e-12);
}

#[test]
fn constant_rows_are_degenerate_not_an_error() {
    let rows = EmbeddingMatrix::from_rows(&[[2.0f32, -1.0, 0.5]; 6]).unwrap();
    let m = fit_manifold(&rows, 2).unwrap();
    assert!(m.is_degenerate());
    assert!(m.basis().eigenvalues().iter().all(|&l| l == 0.0));
    assert!(m.basis().orthonormality_error() < 1e-10);
}

#[test]
fn bad_k_and_too_few_rows() {
    let rows = caption_rows(1, 20, 10);
    assert!(matches!(fit_manifold(&rows, 11), Err(Error::KOutOfRange { k: 11, .. })));
    assert!(matches!(fit_manifold(&rows, 0), Err(Error::KOutOfRange { .. })));
    let few = EmbeddingMatrix::from_rows(&[[1.0f32, 2.0, 3.0, 4.0], [0.0, 1.0, 0.0, 1.0]]).unwrap();
    assert!(matches!(fit_manifold(&few, 2), Err(Error::TooFewRows { needed: 3, got: 2 })));
}

#[test]
fn drop_top_slices_rows_in_order() {
    let m = fit_manifold(&caption_rows(2, 200, 10), 5).unwrap();
    let d = m.drop_top(2).unwrap();
    assert_eq!(d.rank(), 3);
    assert_eq!(d.mean(), m.mean());
    for i in 0..3 {
        assert_eq!(d.basis().row(i), m.basis().row(i + 2));
        assert_eq!(d.basis().eigenvalues()[i], m.basis().eigenvalues()[i + 2]);
    }
    assert_eq!(m.drop_top(0).unwrap(), m);
    assert_eq!(m.drop_top(5).unwrap().rank(), 0);
    assert!(matches!(m.drop_top(6), Err(Error::KOutOfRange { .. })));
}

#[test]
fn mean_matches_column_mean() {
    let rows = caption_rows(3, 500, 12);
    let m = fit_manifold(&rows, 4).unwrap();
    assert!(rel_err(m.mean(), &column_mean(&rows)) < 1e-12);
}

#[test]
fn scale_invariance() {
    let rows = caption_rows(4, 800, 16);
    let base = fit_manifold(&rows, 4).unwrap();
    let c = 2.5f32;
    let up = fit_manifold(&scaled(&rows, c, &[0.0; 16]), 4).unwrap();
    for (a, b) in base.basis().rows().zip(up.basis().rows()) {
        assert!(rel_err(b, a) < 1e-5);
    }
    for (a, b) in base.basis().eigenvalues().iter().zip(up.basis().eigenvalues()) {
        assert!((b / a - f64::from(c * c)).abs() < 1e-4);
    }
}

#[test]
fn translation_invariance() {
    let rows = caption_rows(5, 800, 16);
    let t: Vec<f32> = (0..16).map(|i| i as f32 * 0.25 - 2.0).collect();
    let base = fit_manifold(&rows, 4).unwrap();
    let moved = fit_manifold(&scaled(&rows, 1.0, &t), 4).unwrap();
    for ((a, b), s) in base.mean().iter().zip(moved.mean()).zip(&t) {
        assert!((b - a - f64::from(*s)).abs() < 1e-5);
    }
    for (a, b) in base.basis().rows().zip(moved.basis().rows()) {
        assert!(rel_err(b, a) < 1e-4);
    }
}

#[test]
fn disjoint_halves_share_top_subspace() {
    let rows = caption_rows(6, 4000, 32);
    let first = EmbeddingMatrix::from_rows(&(0..2000).map(|i| rows.row(i)).collect::<Vec<_>>()).unwrap();
    let second = EmbeddingMatrix::from_rows(&(2000..4000).map(|i| rows.row(i)).collect::<Vec<_>>()).unwrap();
    let a = fit_manifold(&first, 2).unwrap();
    let b = fit_manifold(&second, 2).unwrap();
    let s = subspace_similarity(a.basis(), b.basis()).unwrap();
    assert!(s > 0.95, "similarity {s}");
}

fn manifest_with_text(dir: &std::path::Path, rows: &EmbeddingMatrix) -> ortholens::DumpManifest {
    write_tensor(dir.join("text.emb"), rows).unwrap();
    std::fs::write(
        dir.join("manifest.json"),
        r#"{"model_id": "synthetic", "layer_ids": [], "files": {"text_embeddings": "text.emb"}, "image_ids": []}"#,
    )
    .unwrap();
    load_manifest(dir.join("manifest.json")).unwrap()
}

#[test]
fn streamed_fit_equals_in_memory_fit() {
    let rows = caption_rows(7, 10_000, 64);
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest_with_text(dir.path(), &rows);
    let memory = fit_manifold(&rows, 8).unwrap();
    let streamed = manifold_from_manifest(&manifest, 8, 1000).unwrap();
    assert!(rel_err(streamed.mean(), memory.mean()) < 1e-5);
    assert!(max_principal_sine(&basis_rows(streamed.basis()), &basis_rows(memory.basis())) < 1e-5);
    assert_eq!(streamed.source().caption_rows, 10_000);
    assert_eq!(streamed.source().manifest_hash.as_deref(), Some(manifest.source_hash()));
}

#[test]
fn chunk_size_one_equals_one_chunk() {
    let rows = caption_rows(8, 10_000, 64);
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest_with_text(dir.path(), &rows);
    let tiny = manifold_from_manifest(&manifest, 8, 1).unwrap();
    let whole = manifold_from_manifest(&manifest, 8, 10_000).unwrap();
    assert!(max_principal_sine(&basis_rows(tiny.basis()), &basis_rows(whole.basis())) < 1e-5);
}

#[test]
fn manifest_without_text_role() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"model_id": "m", "layer_ids": [], "files": {}, "image_ids": []}"#,
    )
    .unwrap();
    let manifest = load_manifest(dir.path().join("manifest.json")).unwrap();
    assert!(matches!(
        manifold_from_manifest(&manifest, 2, 16),
        Err(Error::MissingRole(_))
    ));
}

#[test]
fn save_and_load_round_trip() {
    let m = fit_manifold(&caption_rows(9, 300, 10), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = TextManifold::load(dir.path()).unwrap();
    assert_eq!(back, m);

    let mut per_layer = std::collections::BTreeMap::new();
    per_layer.insert(3, m.clone());
    per_layer.insert(7, m.drop_top(1).unwrap());
    let set = ManifoldSet::PerLayer(per_layer);
    let d2 = tempfile::tempdir().unwrap();
    set.save(d2.path()).unwrap();
    match ManifoldSet::load(d2.path()).unwrap() {
        ManifoldSet::PerLayer(map) => {
            assert_eq!(map.keys().copied().collect::<Vec<_>>(), vec![3, 7]);
            assert_eq!(map[&7].rank(), 3);
        }
        ManifoldSet::Fixed(_) => panic!("expected per-layer set"),
    }
}

#[test]
fn default_source_and_basis_size() {
    assert_eq!(DEFAULT_BASIS_SIZE, 32);
    assert_eq!(ManifoldSource::default().caption_rows, 0);
}
