use std::collections::HashMap;

use crate::data::triples::TripleStore;

/// Known-true answers over every split, used to filter competing candidates at ranking time.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), Vec<usize>>,
    heads: HashMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    pub fn tails(&self, head: usize, relation: usize) -> &[usize] {
        self.tails.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn heads(&self, relation: usize, tail: usize) -> &[usize] {
        self.heads.get(&(relation, tail)).map_or(&[], Vec::as_slice)
    }
}

pub fn build_filter_index(store: &TripleStore) -> FilterIndex {
    let mut index = FilterIndex::default();
    for t in store.all_triples() {
        index.tails.entry((t.head, t.relation)).or_default().push(t.tail);
        index.heads.entry((t.relation, t.tail)).or_default().push(t.head);
    }
    for list in index.tails.values_mut().chain(index.heads.values_mut()) {
        list.sort_unstable();
        list.dedup();
    }
    index
}
