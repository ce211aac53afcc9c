use crate::data::triples::{Triple, TripleStore};
use crate::error::{Error, Result};
use crate::numeric::rng::{Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TripleBatch {
    pub triples: Vec<Triple>,
    /// Distinct heads and tails of `triples`, ascending.
    pub entities: Vec<usize>,
}

impl TripleBatch {
    pub fn new(triples: Vec<Triple>) -> Self {
        let mut entities: Vec<usize> = triples.iter().flat_map(|t| [t.head, t.tail]).collect();
        entities.sort_unstable();
        entities.dedup();
        Self { triples, entities }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Distinct relations of the batch, ascending.
    pub fn relations(&self) -> Vec<usize> {
        let mut rels: Vec<usize> = self.triples.iter().map(|t| t.relation).collect();
        rels.sort_unstable();
        rels.dedup();
        rels
    }
}

/// One epoch: a seeded permutation of the train split cut into consecutive batches.
pub fn make_batches(store: &TripleStore, batch_size: usize, epoch_seed: u64) -> Result<Vec<TripleBatch>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    let mut rng = Rng::for_stream(epoch_seed, Stream::Batching);
    let order = rng.permutation(store.train.len());
    Ok(order
        .chunks(batch_size)
        .map(|chunk| TripleBatch::new(chunk.iter().map(|&i| store.train[i]).collect()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::triples::NamedTriple;

    fn store(n: usize) -> TripleStore {
        let t: Vec<NamedTriple> = (0..n)
            .map(|i| (format!("e{i}"), "r".into(), format!("e{}", (i + 1) % n)))
            .collect();
        TripleStore::from_named(&t, &[], &[], &[], &[]).unwrap()
    }

    #[test]
    fn sizes_partition_and_determinism() {
        let s = store(5);
        let batches = make_batches(&s, 2, 3).unwrap();
        assert_eq!(batches.iter().map(TripleBatch::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut all: Vec<Triple> = batches.iter().flat_map(|b| b.triples.clone()).collect();
        all.sort();
        let mut train = s.train.clone();
        train.sort();
        assert_eq!(all, train);
        assert_eq!(batches, make_batches(&s, 2, 3).unwrap());
        assert!(make_batches(&s, 0, 3).is_err());
    }

    #[test]
    fn batch_entities_are_heads_and_tails() {
        let b = TripleBatch::new(vec![Triple::new(4, 0, 1), Triple::new(1, 1, 7)]);
        assert_eq!(b.entities, vec![1, 4, 7]);
        assert_eq!(b.relations(), vec![0, 1]);
    }
}
