//! Filtered link-prediction ranking and its aggregate metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::dataset::Dataset;
use crate::data::filter::{build_filter_index, FilterIndex};
use crate::data::triples::{Split, Triple};
use crate::error::{Error, Result};
use crate::model::{Momok, RelationScorer};

/// A link-prediction query with its gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    /// `(head, relation, ?)` answered by `tail`.
    Tail { head: usize, relation: usize, tail: usize },
    /// `(?, relation, tail)` answered by `head`.
    Head { head: usize, relation: usize, tail: usize },
}

impl Query {
    pub fn relation(&self) -> usize {
        match *self {
            Query::Tail { relation, .. } | Query::Head { relation, .. } => relation,
        }
    }

    pub fn gold(&self) -> usize {
        match *self {
            Query::Tail { tail, .. } => tail,
            Query::Head { head, .. } => head,
        }
    }

    /// Known-true answers of the query.
    pub fn known<'a>(&self, filter: &'a FilterIndex) -> &'a [usize] {
        match *self {
            Query::Tail { head, relation, .. } => filter.tails(head, relation),
            Query::Head { relation, tail, .. } => filter.heads(relation, tail),
        }
    }
}

/// Rank of `gold` among `scores` after removing the other known answers in
/// `known` (sorted). Counts strictly greater scores; with `tie_split`, half of
/// the tied candidates (rounded up) are counted as well.
pub fn rank_from_scores(scores: &[f64], gold: usize, known: &[usize], tie_split: bool) -> Result<usize> {
    if gold >= scores.len() {
        return Err(Error::Contract(format!(
            "gold entity {gold} outside the {} candidates",
            scores.len()
        )));
    }
    let target = scores[gold];
    let (mut greater, mut equal) = (0usize, 0usize);
    for (c, &s) in scores.iter().enumerate() {
        if c == gold || known.binary_search(&c).is_ok() {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    Ok(1 + greater + if tie_split { equal.div_ceil(2) } else { 0 })
}

/// Filtered rank of one query; `channel` restricts scoring to one channel.
pub fn rank_query(
    scorer: &RelationScorer,
    query: Query,
    filter: &FilterIndex,
    channel: Option<usize>,
    tie_split: bool,
) -> Result<usize> {
    let scores = match query {
        Query::Tail { head, .. } => scorer.tail_scores(head, channel),
        Query::Head { tail, .. } => scorer.head_scores(tail, channel),
    };
    let scores = scores.as_slice().expect("contiguous scores");
    rank_from_scores(scores, query.gold(), query.known(filter), tie_split)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
    pub queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Validation("cannot evaluate an empty split".into()));
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(Self {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hit1: hits(1),
            hit3: hits(3),
            hit10: hits(10),
            queries: ranks.len(),
        })
    }

    /// `key<TAB>value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("mrr", self.mrr),
            ("hit1", self.hit1),
            ("hit3", self.hit3),
            ("hit10", self.hit10),
        ] {
            let _ = writeln!(out, "{k}\t{v:.6}");
        }
        let _ = writeln!(out, "queries\t{}", self.queries);
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub tie_split: bool,
}

/// Triples of a split grouped by relation, in split order within each group.
fn by_relation(triples: &[Triple]) -> BTreeMap<usize, Vec<Triple>> {
    let mut map: BTreeMap<usize, Vec<Triple>> = BTreeMap::new();
    for t in triples {
        map.entry(t.relation).or_default().push(*t);
    }
    map
}

/// Ranks of every query of `split`, grouped by relation. For each triple the
/// tail rank comes first, then the head rank. `channels` lists the scoring
/// channels to rank under (`None` is the ensemble sum).
pub fn split_ranks(
    model: &Momok,
    data: &Dataset,
    split: Split,
    channels: &[Option<usize>],
    opts: EvalOptions,
) -> Result<Vec<(usize, Vec<Vec<usize>>)>> {
    model.spec().check_compatible(data)?;
    let triples = data.store.split(split);
    if triples.is_empty() {
        return Err(Error::Validation(format!("the {} split is empty", split.name())));
    }
    let filter = build_filter_index(&data.store);
    let scorer = model.scorer(&data.features)?;
    let groups: Vec<(usize, Vec<Triple>)> = by_relation(triples).into_iter().collect();
    groups
        .par_iter()
        .map(|(r, ts)| {
            let rs = scorer.relation(*r)?;
            let mut per_channel = vec![Vec::with_capacity(2 * ts.len()); channels.len()];
            for t in ts {
                for q in [
                    Query::Tail {
                        head: t.head,
                        relation: t.relation,
                        tail: t.tail,
                    },
                    Query::Head {
                        head: t.head,
                        relation: t.relation,
                        tail: t.tail,
                    },
                ] {
                    for (ranks, &c) in per_channel.iter_mut().zip(channels) {
                        ranks.push(rank_query(&rs, q, &filter, c, opts.tie_split)?);
                    }
                }
            }
            Ok((*r, per_channel))
        })
        .collect()
}

/// Filtered MRR and Hit@1/3/10 over head and tail queries of `split`.
pub fn evaluate_split(model: &Momok, data: &Dataset, split: Split, opts: EvalOptions) -> Result<Metrics> {
    let ranks: Vec<usize> = split_ranks(model, data, split, &[None], opts)?
        .into_iter()
        .flat_map(|(_, mut per)| per.remove(0))
        .collect();
    Metrics::from_ranks(&ranks)
}
