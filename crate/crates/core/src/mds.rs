//! Classical (Torgerson) multidimensional scaling.

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::{Configuration, DissimilarityMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MdsResult {
    pub configuration: Configuration,
    /// Every eigenvalue of the double-centered matrix, largest first.
    pub eigenvalues: Vec<f64>,
    /// Retained axes whose eigenvalue was negative and were zeroed out.
    pub clamped_axes: Vec<usize>,
}

/// `B = -1/2 · J · D² · J` with `J = I - 11ᵀ/n`.
pub fn double_center(d: &DissimilarityMatrix) -> DMatrix<f64> {
    let n = d.len();
    let sq = d.values().map(|v| v * v);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            // sq is symmetric, so column means equal row means
            let v = -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    b
}

/// Embeds `d` into `k` dimensions from the top-k eigenpairs of its
/// double-centered matrix.
pub fn classical_mds(d: &DissimilarityMatrix, k: usize) -> Result<MdsResult> {
    let n = d.len();
    if n < 2 {
        return Err(Error::OutOfRange(format!("need at least 2 points, got {n}")));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::OutOfRange(format!("k = {k} outside 1..={}", n - 1)));
    }
    let eig = SymmetricEigen::new(double_center(d));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut coords = DMatrix::zeros(n, k);
    let mut clamped_axes = Vec::new();
    for (axis, &src) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[src];
        if lambda < 0.0 {
            clamped_axes.push(axis);
            continue;
        }
        let v = eig.eigenvectors.column(src);
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign * lambda.sqrt();
        for i in 0..n {
            coords[(i, axis)] = v[i] * scale;
        }
    }
    if !clamped_axes.is_empty() {
        warn!(
            "classical MDS: {} of the top {k} eigenvalues are negative (non-Euclidean input); axes {:?} set to zero",
            clamped_axes.len(),
            clamped_axes
        );
    }
    Ok(MdsResult {
        configuration: Configuration::new(Arc::clone(d.concepts()), coords)?,
        eigenvalues,
        clamped_axes,
    })
}

/// Euclidean distances between the rows of a configuration.
pub fn distance_matrix(c: &Configuration) -> DissimilarityMatrix {
    let n = c.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = c.squared_distance(i, j).sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DissimilarityMatrix::new(Arc::clone(c.concepts()), d).expect("Euclidean distances are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ConceptSet;
    use crate::synthetic::gaussian_configuration;
    use proptest::prelude::*;

    fn dissim(n: usize, upper: &[f64]) -> DissimilarityMatrix {
        let mut m = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                m[(i, j)] = upper[k];
                m[(j, i)] = upper[k];
                k += 1;
            }
        }
        DissimilarityMatrix::new(Arc::new(ConceptSet::numbered(n).unwrap()), m).unwrap()
    }

    #[test]
    fn double_center_two_points_at_distance_two() {
        // Two points need a three-concept set; a third point at the midpoint
        // of the segment keeps the geometry one-dimensional.
        let d = dissim(3, &[2.0, 1.0, 1.0]);
        let b = double_center(&d);
        // coordinates -1, +1, 0 have Gram matrix [[1,-1,0],[-1,1,0],[0,0,0]]
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((b - expected).amax() < 1e-12);
    }

    #[test]
    fn double_center_zero_matrix() {
        let b = double_center(&dissim(4, &[0.0; 6]));
        assert!(b.amax() == 0.0);
    }

    #[test]
    fn two_point_embedding_is_plus_minus_one() {
        let r = classical_mds(&dissim(3, &[2.0, 1.0, 1.0]), 1).unwrap();
        let c = r.configuration.coords();
        // sign convention: largest-magnitude entry positive; first point wins the tie
        assert!((c[(0, 0)] - 1.0).abs() < 1e-9 || (c[(0, 0)] + 1.0).abs() < 1e-9);
        assert!((c[(0, 0)] + c[(1, 0)]).abs() < 1e-9);
        assert!(c[(2, 0)].abs() < 1e-9);
        assert!((r.eigenvalues[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equilateral_triangle_eigenvalues() {
        // Brute-force oracle: the Gram matrix of a centered unit equilateral
        // triangle is J/2 with J the centering matrix, eigenvalues {1/2, 1/2, 0}.
        let r = classical_mds(&dissim(3, &[1.0, 1.0, 1.0]), 2).unwrap();
        assert!((r.eigenvalues[0] - 0.5).abs() < 1e-12);
        assert!((r.eigenvalues[1] - 0.5).abs() < 1e-12);
        assert!(r.eigenvalues[2].abs() < 1e-12);
        let back = distance_matrix(&r.configuration);
        assert!((back.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_out_of_range() {
        let d = dissim(3, &[1.0, 1.0, 1.0]);
        assert!(matches!(classical_mds(&d, 0), Err(Error::OutOfRange(_))));
        assert!(matches!(classical_mds(&d, 3), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn non_euclidean_axes_are_clamped() {
        // Violates the triangle inequality badly, forcing a negative eigenvalue.
        let d = dissim(4, &[1.0, 1.0, 10.0, 1.0, 1.0, 1.0]);
        let r = classical_mds(&d, 3).unwrap();
        assert!(r.eigenvalues.iter().any(|&l| l < 0.0));
        assert_eq!(r.clamped_axes, vec![2]);
        assert!(r.configuration.coords().column(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_matrix_examples() {
        let cs = Arc::new(ConceptSet::numbered(3).unwrap());
        let same = Configuration::new(cs.clone(), DMatrix::from_element(3, 2, 0.7)).unwrap();
        assert_eq!(distance_matrix(&same).values().amax(), 0.0);
        let line = Configuration::new(cs, DMatrix::from_row_slice(3, 1, &[0.0, 3.0, 3.0])).unwrap();
        assert_eq!(distance_matrix(&line).get(0, 1), 3.0);
    }

    #[test]
    fn full_rank_round_trip_reproduces_distances() {
        for seed in 0..5 {
            let planted = gaussian_configuration(12, 4, seed);
            let d = distance_matrix(&planted);
            let r = classical_mds(&d, 11).unwrap();
            let back = distance_matrix(&r.configuration);
            assert!((back.values() - d.values()).amax() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn invariants_on_random_euclidean_input(seed in 0u64..10_000, n in 4usize..15) {
            let planted = gaussian_configuration(n, 3, seed);
            let d = distance_matrix(&planted);
            let b = double_center(&d);
            for i in 0..n {
                prop_assert!(b.row(i).sum().abs() < 1e-9);
            }
            let r = classical_mds(&d, 3).unwrap();
            prop_assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let positive: f64 = r.eigenvalues.iter().filter(|&&l| l > 0.0).sum();
            prop_assert!((positive - b.trace()).abs() < 1e-6);
        }

        #[test]
        fn permuting_input_permutes_output(seed in 0u64..10_000) {
            let n = 8;
            let planted = gaussian_configuration(n, 3, seed);
            let d = distance_matrix(&planted);
            let perm: Vec<usize> = (0..n).map(|i| (i * 3 + seed as usize) % n).collect();
            let pd = DMatrix::from_fn(n, n, |i, j| d.get(perm[i], perm[j]));
            let pd = DissimilarityMatrix::new(d.concepts().clone(), pd).unwrap();
            let a = distance_matrix(&classical_mds(&d, 3).unwrap().configuration);
            let b = distance_matrix(&classical_mds(&pd, 3).unwrap().configuration);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((b.get(i, j) - a.get(perm[i], perm[j])).abs() < 1e-9);
                }
            }
        }
    }
}
