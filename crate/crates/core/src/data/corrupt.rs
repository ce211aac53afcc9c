//! Robustness scenarios: noisy features, missing features and sparse training links.

use crate::data::features::FeatureTable;
use crate::data::triples::TripleStore;
use crate::error::{Error, Result};
use crate::numeric::rng::{Rng, Stream};

fn check_ratio(ratio: f64, upper_inclusive: bool) -> Result<()> {
    let ok = ratio >= 0.0 && if upper_inclusive { ratio <= 1.0 } else { ratio < 1.0 };
    if ok {
        Ok(())
    } else {
        let range = if upper_inclusive { "[0, 1]" } else { "[0, 1)" };
        Err(Error::Validation(format!("ratio {ratio} outside {range}")))
    }
}

/// `floor(ratio * n)`, tolerant of representation error just below an integer.
fn ratio_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

fn selected_rows(ratio: f64, n: usize, seed: u64, salt: u64) -> Vec<usize> {
    let k = ratio_count(ratio, n);
    let mut rng = Rng::for_substream(seed, Stream::Corruption, salt);
    let mut rows = rng.permutation(n);
    rows.truncate(k);
    rows.sort_unstable();
    rows
}

/// Adds `N(0, scale^2)` noise element-wise to `floor(ratio * |E|)` seeded rows.
pub fn corrupt_features_noise(table: &FeatureTable, ratio: f64, scale: f64, seed: u64) -> Result<FeatureTable> {
    check_ratio(ratio, true)?;
    if !(scale >= 0.0) {
        return Err(Error::Validation(format!("noise scale {scale} must be nonnegative")));
    }
    let mut out = table.clone();
    let rows = selected_rows(ratio, table.num_entities(), seed, table.modality as u64);
    let mut rng = Rng::for_substream(seed, Stream::Corruption, 100 + table.modality as u64);
    for e in rows {
        for v in out.row_mut(e) {
            let z = rng.normal();
            if scale > 0.0 {
                *v = (*v as f64 + scale * z) as f32;
            }
        }
    }
    Ok(out)
}

/// Drops the features of `floor(ratio * |E|)` seeded entities and imputes them.
pub fn corrupt_features_missing(table: &FeatureTable, ratio: f64, seed: u64) -> Result<FeatureTable> {
    check_ratio(ratio, true)?;
    let mut out = table.clone();
    let rows = selected_rows(ratio, table.num_entities(), seed, table.modality as u64);
    if !rows.is_empty() {
        let mut rng = Rng::for_substream(seed, Stream::Imputation, 100 + table.modality as u64);
        out.impute(&rows, &mut rng);
    }
    Ok(out)
}

/// Keeps `ceil((1 - ratio) * |train|)` seeded train triples in their original order.
pub fn sparsify_triples(store: &TripleStore, ratio: f64, seed: u64) -> Result<TripleStore> {
    check_ratio(ratio, false)?;
    let n = store.train.len();
    let keep = n - ratio_count(ratio, n);
    let mut rng = Rng::for_substream(seed, Stream::Corruption, 7);
    let mut idx = rng.permutation(n);
    idx.truncate(keep);
    idx.sort_unstable();
    let mut out = store.clone();
    out.train = idx.into_iter().map(|i| store.train[i]).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::triples::{NamedTriple, Triple};
    use crate::modality::Modality;

    fn table(n: usize, dim: usize) -> FeatureTable {
        let mut rng = Rng::new(3);
        FeatureTable {
            modality: Modality::Image,
            dim,
            values: (0..n * dim).map(|_| rng.normal() as f32).collect(),
            present: vec![true; n],
        }
    }

    fn store(n_train: usize) -> TripleStore {
        let named = |range: std::ops::Range<usize>| -> Vec<NamedTriple> {
            range
                .map(|i| (format!("h{i}"), "r".to_string(), format!("t{i}")))
                .collect()
        };
        TripleStore::from_named(&named(0..n_train), &named(100..103), &named(200..204), &[], &[]).unwrap()
    }

    #[test]
    fn noise_identities() {
        let t = table(20, 4);
        assert_eq!(corrupt_features_noise(&t, 0.0, 1.0, 5).unwrap(), t);
        assert_eq!(corrupt_features_noise(&t, 1.0, 0.0, 5).unwrap(), t);
        let a = corrupt_features_noise(&t, 0.5, 1.0, 5).unwrap();
        assert_eq!(a, corrupt_features_noise(&t, 0.5, 1.0, 5).unwrap());
        let changed = (0..20).filter(|e| a.row(*e) != t.row(*e)).count();
        assert_eq!(changed, 10);
        assert!(corrupt_features_noise(&t, 1.5, 1.0, 5).is_err());
    }

    #[test]
    fn missing_identities() {
        let t = table(20, 4);
        assert_eq!(corrupt_features_missing(&t, 0.0, 9).unwrap(), t);
        let all = corrupt_features_missing(&t, 1.0, 9).unwrap();
        assert!(all.present.iter().all(|p| !p));
        let a = corrupt_features_missing(&t, 0.25, 9).unwrap();
        assert_eq!(a, corrupt_features_missing(&t, 0.25, 9).unwrap());
        assert_eq!(a.present.iter().filter(|p| !**p).count(), 5);
        assert!(corrupt_features_missing(&t, -0.1, 9).is_err());
    }

    #[test]
    fn sparsify_counts() {
        let s = store(10);
        assert_eq!(sparsify_triples(&s, 0.0, 1).unwrap(), s);
        let sp = sparsify_triples(&s, 0.3, 1).unwrap();
        assert_eq!(sp.train.len(), 7);
        assert_eq!((sp.valid.len(), sp.test.len()), (3, 4));
        assert_eq!(sp.entities, s.entities);
        let kept: std::collections::HashSet<Triple> = sp.train.iter().copied().collect();
        assert!(kept.iter().all(|t| s.train.contains(t)));
        assert!(matches!(sparsify_triples(&s, 1.0, 1), Err(Error::Validation(_))));
    }
}
