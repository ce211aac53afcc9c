//! Interpretability reports: per-relation, per-channel MRR and mean gate weights.

use std::fmt::Write as _;

use crate::data::dataset::Dataset;
use crate::data::triples::Split;
use crate::error::{Error, Result};
use crate::eval::{split_ranks, EvalOptions, Metrics};
use crate::model::Momok;

#[derive(Debug, Clone, PartialEq)]
pub struct RelationRow {
    pub relation: String,
    pub queries: usize,
    /// `(column, MRR)` for each channel, then `sum`.
    pub mrr: Vec<(String, f64)>,
}

/// MRR per relation using each channel's score alone and the ensemble sum.
/// Relations absent from the split get no row.
pub fn per_relation_report(model: &Momok, data: &Dataset, split: Split, opts: EvalOptions) -> Result<Vec<RelationRow>> {
    let channels = model.spec().channels();
    let mut selectors: Vec<Option<usize>> = (0..channels.len()).map(Some).collect();
    selectors.push(None);
    let mut names: Vec<String> = channels.iter().map(|c| c.name().to_string()).collect();
    names.push("sum".into());
    split_ranks(model, data, split, &selectors, opts)?
        .into_iter()
        .map(|(r, per)| {
            let mrr = per
                .iter()
                .zip(&names)
                .map(|(ranks, name)| Ok((name.clone(), Metrics::from_ranks(ranks)?.mrr)))
                .collect::<Result<Vec<_>>>()?;
            Ok(RelationRow {
                relation: data.store.relations.name(r).to_string(),
                queries: per[0].len(),
                mrr,
            })
        })
        .collect()
}

pub fn relation_rows_to_tsv(rows: &[RelationRow]) -> String {
    let mut out = String::from("relation\tqueries");
    if let Some(first) = rows.first() {
        for (name, _) in &first.mrr {
            out.push('\t');
            out.push_str(name);
        }
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{}\t{}", row.relation, row.queries);
        for (_, v) in &row.mrr {
            let _ = write!(out, "\t{v:.6}");
        }
        out.push('\n');
    }
    out
}

/// Mean weights of one group (modality fusion or one modality's gate).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub relation: String,
    /// `fusion` or `gate.<modality>`.
    pub group: String,
    /// `(component, mean weight)`; components are modalities or `expertN`.
    pub weights: Vec<(String, f64)>,
}

/// Mean modality-fusion weights and mean expert gate weights per modality for
/// each requested relation, averaged over `entities` in eval mode.
pub fn gate_report(model: &Momok, data: &Dataset, relations: &[String], entities: &[usize]) -> Result<Vec<WeightRow>> {
    let unknown: Vec<String> = relations
        .iter()
        .filter(|r| data.store.relations.id(r).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Lookup {
            kind: "relation",
            names: unknown,
        });
    }
    if entities.is_empty() {
        return Err(Error::Validation("gate report needs at least one entity".into()));
    }
    model.spec().check_compatible(data)?;
    let arch = &model.arch;
    let values = model.values();
    let views = arch.views(values, &data.features, entities, None)?;
    let mut rows = Vec::new();
    for name in relations {
        let r = data.store.relation_id(name)?;
        let rf = arch.relation_forward(values, &views, r)?;
        if let Some(joint) = &rf.joint {
            let mean = joint.alpha.mean_axis(ndarray::Axis(0)).expect("non-empty");
            rows.push(WeightRow {
                relation: name.clone(),
                group: "fusion".into(),
                weights: arch
                    .spec
                    .modalities
                    .iter()
                    .map(|m| m.name().to_string())
                    .zip(mean.iter().copied())
                    .collect(),
            });
        }
        for (slot, w) in rf.weights.iter().enumerate() {
            let mean = w.mean_axis(ndarray::Axis(0)).expect("non-empty");
            rows.push(WeightRow {
                relation: name.clone(),
                group: format!("gate.{}", arch.spec.modalities[slot].name()),
                weights: mean
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (format!("expert{i}"), *v))
                    .collect(),
            });
        }
    }
    Ok(rows)
}

/// Long format: `relation<TAB>group<TAB>component<TAB>weight`.
pub fn weight_rows_to_tsv(rows: &[WeightRow]) -> String {
    let mut out = String::from("relation\tgroup\tcomponent\tweight\n");
    for row in rows {
        for (c, w) in &row.weights {
            let _ = writeln!(out, "{}\t{}\t{c}\t{w:.6}", row.relation, row.group);
        }
    }
    out
}
