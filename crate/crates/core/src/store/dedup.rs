use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::SampleManifest;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, norm, Scalar};

pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub i: usize,
    pub j: usize,
    pub cosine: f64,
}

/// All row pairs `i < j` with cosine similarity `>= threshold`, most similar first.
pub fn find_duplicates<T: Scalar>(m: &Matrix<T>, threshold: f64) -> Result<Vec<DuplicatePair>> {
    let norms: Vec<f64> = m.row_iter().map(norm).collect();
    if let Some(row) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::invalid(format!(
            "row {row} has zero norm; cosine similarity is undefined"
        )));
    }
    let mut pairs: Vec<DuplicatePair> = (0..m.nrows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let norms = &norms;
            (i + 1..m.nrows()).filter_map(move |j| {
                let cosine = dot(m.row(i), m.row(j)) / (norms[i] * norms[j]);
                (cosine >= threshold).then_some(DuplicatePair { i, j, cosine })
            })
        })
        .collect();
    pairs.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then((a.i, a.j).cmp(&(b.i, b.j))));
    Ok(pairs)
}

/// Records `duplicate_of` on the later member of each pair, pointing at the
/// earliest matching record. Returns the number of newly flagged records.
pub fn mark_duplicates(manifest: &mut SampleManifest, pairs: &[DuplicatePair]) -> usize {
    let mut first = vec![None::<usize>; manifest.len()];
    for p in pairs {
        let slot = &mut first[p.j];
        *slot = Some(slot.map_or(p.i, |i| i.min(p.i)));
    }
    let mut flagged = 0;
    for (j, earlier) in first.into_iter().enumerate() {
        if let Some(i) = earlier {
            if manifest.records[j].duplicate_of.is_none() {
                manifest.records[j].duplicate_of = Some(manifest.records[i].sample_id.clone());
                flagged += 1;
            }
        }
    }
    flagged
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_rows() {
        let m = Matrix::from_rows(&[[1.0f32, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap();
        let p = find_duplicates(&m, DEFAULT_DUPLICATE_THRESHOLD).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].i, p[0].j), (0, 1));
        assert!((p[0].cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_rows() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(find_duplicates(&m, DEFAULT_DUPLICATE_THRESHOLD).unwrap().is_empty());
    }

    #[test]
    fn sixty_degrees() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.5, 0.75f64.sqrt()]]).unwrap();
        let p = find_duplicates(&m, 0.4).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].cosine - 0.5).abs() < 1e-6);
    }

    #[test]
    fn zero_row_named() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let err = find_duplicates(&m, 0.9).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn sorted_descending_and_marked() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.1], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = find_duplicates(&m, 0.99).unwrap();
        assert_eq!(p.iter().map(|p| (p.i, p.j)).collect::<Vec<_>>(), vec![(0, 2), (0, 1), (1, 2)]);
        let mut manifest = SampleManifest::from_scores(&[0.1, 0.2, 0.3, 0.4], 1, 0).unwrap();
        assert_eq!(mark_duplicates(&mut manifest, &p), 2);
        assert_eq!(manifest.records[1].duplicate_of.as_deref(), Some("s00000"));
        assert_eq!(manifest.records[2].duplicate_of.as_deref(), Some("s00000"));
        manifest.validate().unwrap();
    }

    proptest! {
        #[test]
        fn permutation_relabels_pairs(seed in any::<u64>()) {
            let base = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.3, 0.3, 1.0], [0.0, 1.0, 1e-9]]).unwrap();
            let perm = crate::stats::shuffled_labels(&[0usize, 1, 2, 3, 4], seed);
            let permuted = base.select_rows(&perm);
            let canon = |pairs: Vec<DuplicatePair>, map: &dyn Fn(usize) -> usize| {
                let mut v: Vec<(usize, usize)> = pairs.iter().map(|p| {
                    let (a, b) = (map(p.i), map(p.j));
                    (a.min(b), a.max(b))
                }).collect();
                v.sort_unstable();
                v
            };
            let a = canon(find_duplicates(&base, 0.999).unwrap(), &|i| i);
            let b = canon(find_duplicates(&permuted, 0.999).unwrap(), &|i| perm[i]);
            prop_assert_eq!(a, b);
        }
    }
}
