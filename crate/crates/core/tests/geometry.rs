mod common;

use common::{basis_rows, principal_cosines};
use ortholens::geometry::similarity_matrix;
use ortholens::synth::{
    gaussian_vec, manifold_from_directions, planted_alignment_dumps, planted_fraction_tokens,
    random_orthonormal, rng,
};
use ortholens::{
    alignment_score, alignment_trajectory, debias_matrix, subspace_similarity, EmbeddingMatrix,
    Error, LayerDumpSet, ManifoldSet, SpectralBasis, Tensor, TextManifold,
};
use proptest::prelude::*;

fn basis(d: usize, rows: &[Vec<f64>]) -> SpectralBasis {
    let eig = (0..rows.len()).map(|i| (rows.len() - i) as f64).collect();
    SpectralBasis::from_rows(d, rows.iter().flatten().copied().collect(), eig).unwrap()
}

fn random_manifold(seed: u64, d: usize, k: usize) -> TextManifold {
    let mut r = rng(seed);
    let dirs = random_orthonormal(&mut r, k, d, &[]);
    manifold_from_directions(gaussian_vec(&mut r, d), &dirs)
}

fn rows_from(vs: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_f64_rows(vs).unwrap()
}

#[test]
fn hand_alignment_cases() {
    let m = manifold_from_directions(vec![1.0, 1.0, 1.0], &[vec![1.0, 0.0, 0.0]]);
    let inside = rows_from(&vec![vec![2.0, 1.0, 1.0]; 3]);
    assert!((alignment_score(&inside, &m, 0).unwrap().score - 1.0).abs() < 1e-7);
    let outside = rows_from(&[vec![1.0, 2.0, 1.0]]);
    assert_eq!(alignment_score(&outside, &m, 0).unwrap().score, 0.0);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let half = rows_from(&[vec![1.0 + h, 1.0, 1.0 + h]]);
    assert!((alignment_score(&half, &m, 0).unwrap().score - h).abs() < 1e-6);
}

#[test]
fn degenerate_tokens_are_excluded() {
    let m = manifold_from_directions(vec![0.0, 0.0], &[vec![1.0, 0.0]]);
    let rows = rows_from(&[vec![0.0, 0.0], vec![3.0, 0.0]]);
    let s = alignment_score(&rows, &m, 0).unwrap();
    assert_eq!((s.tokens, s.excluded), (1, 1));
    assert!((s.score - 1.0).abs() < 1e-12);
    let all_mean = rows_from(&vec![vec![0.0, 0.0]; 2]);
    assert!(matches!(
        alignment_score(&all_mean, &m, 0),
        Err(Error::AllTokensDegenerate { count: 2 })
    ));
    assert!(matches!(
        alignment_score(&rows_from(&[vec![0.0; 3]]), &m, 0),
        Err(Error::DimMismatch { .. })
    ));
}

#[test]
fn drop_all_components_scores_zero() {
    let m = random_manifold(1, 12, 4);
    let rows = planted_fraction_tokens(&mut rng(2), &m, 0, 0.9, 50);
    assert_eq!(alignment_score(&rows, &m, 4).unwrap().score, 0.0);
}

#[test]
fn trajectory_tracks_planted_fractions() {
    let m = random_manifold(3, 32, 8);
    let fractions = [0.1, 0.35, 0.6, 0.85, 0.95];
    let dumps = planted_alignment_dumps(&mut rng(4), &m, &fractions, 6, 20);
    let traj = alignment_trajectory(&dumps, &ManifoldSet::Fixed(m.clone()), 0).unwrap();
    assert_eq!(traj.layer_ids, vec![0, 1, 2, 3, 4]);
    for (s, f) in traj.scores.iter().zip(fractions) {
        assert!((s - f).abs() < 0.02, "{s} vs {f}");
    }
    assert!(traj.token_counts.iter().all(|&n| n == 120));
    let dropped = alignment_trajectory(&dumps, &ManifoldSet::Fixed(m), 8).unwrap();
    assert!(dropped.scores.iter().all(|&s| s == 0.0));
}

#[test]
fn single_token_trajectory_equals_score() {
    let m = random_manifold(5, 6, 2);
    let t = Tensor::new(vec![1, 1, 6], vec![0.3, -1.0, 2.0, 0.5, 0.0, 1.0]).unwrap();
    let dumps = LayerDumpSet::new(vec![4], vec!["x".into()], vec![t.clone()]).unwrap();
    let traj = alignment_trajectory(&dumps, &ManifoldSet::Fixed(m.clone()), 1).unwrap();
    let direct = alignment_score(t.outer(0).unwrap(), &m, 1).unwrap();
    assert_eq!(traj.scores, vec![direct.score]);
}

#[test]
fn debiased_rows_against_removed_and_retained_bases() {
    let m = random_manifold(6, 20, 6);
    let mut r = rng(7);
    let rows = rows_from(&(0..200).map(|_| gaussian_vec(&mut r, 20)).collect::<Vec<_>>());
    let k = 2;
    let deb = debias_matrix(&rows, &m, k).unwrap();
    let retained_only = alignment_score(&rows, &m, k).unwrap().score;
    let on_debiased = alignment_score(&deb, &m, k).unwrap().score;
    assert!(on_debiased >= retained_only - 1e-6);

    let removed = manifold_from_directions(
        m.mean().to_vec(),
        &basis_rows(m.basis())[..k],
    );
    assert!(alignment_score(&deb, &removed, 0).unwrap().score < 1e-5);
}

#[test]
fn subspace_hand_cases() {
    let a = basis(3, &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    let b = basis(3, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
    let c = basis(3, &[vec![0.0, 0.0, 1.0]]);
    assert!((subspace_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!((subspace_similarity(&a, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert_eq!(subspace_similarity(&a, &c).unwrap(), 0.0);
    let wide = basis(4, &[vec![1.0, 0.0, 0.0, 0.0]]);
    assert!(matches!(subspace_similarity(&a, &wide), Err(Error::DimMismatch { .. })));
}

#[test]
fn similarity_matrix_against_principal_angles() {
    let mut r = rng(8);
    let bases: Vec<(String, SpectralBasis)> = (0..3)
        .map(|i| (format!("s{i}"), basis(8, &random_orthonormal(&mut r, 2, 8, &[]))))
        .collect();
    let mat = similarity_matrix(&bases).unwrap();
    for i in 0..3 {
        assert!((mat.values[i][i] - 1.0).abs() < 1e-6);
        for j in 0..3 {
            let cos = principal_cosines(&basis_rows(&bases[i].1), &basis_rows(&bases[j].1));
            let oracle = cos.iter().map(|c| c * c).sum::<f64>().sqrt() / 2f64.sqrt();
            assert!((mat.values[i][j] - oracle).abs() < 1e-6);
            assert!((mat.values[i][j] - mat.values[j][i]).abs() < 1e-6);
        }
    }
}

#[test]
fn similarity_matrix_copies_and_complements() {
    let full = random_orthonormal(&mut rng(9), 4, 4, &[]);
    let a = basis(4, &full[..2]);
    let b = basis(4, &full[2..]);
    let same = similarity_matrix(&[("a".into(), a.clone()), ("a2".into(), a.clone())]).unwrap();
    assert!(same.values.iter().flatten().all(|v| (v - 1.0).abs() < 1e-12));
    let comp = similarity_matrix(&[("a".into(), a), ("b".into(), b)]).unwrap();
    assert!(comp.values[0][1].abs() < 1e-12);
    let other = basis(5, &[vec![1.0, 0.0, 0.0, 0.0, 0.0]]);
    let err = similarity_matrix(&[("a".into(), basis(4, &full[..1])), ("odd".into(), other)]).unwrap_err();
    assert!(format!("{err}").contains("odd"), "{err}");
}

fn rotate(q: &ortholens::nalgebra::DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (q * ortholens::nalgebra::DVector::from_column_slice(v)).iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn rotation_invariance(seed in any::<u64>()) {
        let d = 10;
        let m = random_manifold(seed, d, 3);
        let mut r = rng(seed ^ 1);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| gaussian_vec(&mut r, d)).collect();
        let q_rows = random_orthonormal(&mut r, d, d, &[]);
        let q = ortholens::nalgebra::DMatrix::from_fn(d, d, |i, j| q_rows[i][j]);

        let rot_rows: Vec<Vec<f64>> = rows.iter().map(|v| rotate(&q, v)).collect();
        let rot_dirs: Vec<Vec<f64>> = basis_rows(m.basis()).iter().map(|v| rotate(&q, v)).collect();
        let rot_m = manifold_from_directions(rotate(&q, m.mean()), &rot_dirs);

        let a = alignment_score(&rows_from(&rows), &m, 1).unwrap().score;
        let b = alignment_score(&rows_from(&rot_rows), &rot_m, 1).unwrap().score;
        prop_assert!((a - b).abs() < 1e-5);
    }

    #[test]
    fn similarity_ignores_basis_choice_and_is_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a_rows = random_orthonormal(&mut r, 3, 9, &[]);
        let b_rows = random_orthonormal(&mut r, 3, 9, &[]);
        // Mix a's rows by a random 3×3 rotation.
        let mix = random_orthonormal(&mut r, 3, 3, &[]);
        let mixed: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..9).map(|c| (0..3).map(|j| mix[i][j] * a_rows[j][c]).sum()).collect())
            .collect();
        let a = basis(9, &a_rows);
        let b = basis(9, &b_rows);
        let s = subspace_similarity(&a, &b).unwrap();
        let s_mixed = subspace_similarity(&basis(9, &mixed), &b).unwrap();
        prop_assert!((s - s_mixed).abs() < 1e-6);
        prop_assert_eq!(s, subspace_similarity(&b, &a).unwrap());
        prop_assert!((0.0..=1.0 + 1e-9).contains(&s));
    }

    #[test]
    fn scores_stay_in_unit_interval(seed in any::<u64>(), drop_k in 0usize..=4) {
        let m = random_manifold(seed, 7, 4);
        let mut r = rng(seed ^ 2);
        let rows: Vec<Vec<f64>> = (0..10).map(|_| gaussian_vec(&mut r, 7)).collect();
        let s = alignment_score(&rows_from(&rows), &m, drop_k).unwrap().score;
        prop_assert!((0.0..=1.0 + 1e-6).contains(&s));
    }
}
