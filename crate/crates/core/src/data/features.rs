//! Precomputed per-entity modality features.
//!
//! Two on-disk encodings are accepted:
//!
//! * text: `entity_name<TAB>v1,v2,...,vd` per line;
//! * binary: `MMKF`, `u32` count, `u32` dim, `count` length-prefixed UTF-8 names,
//!   then `count * dim` little-endian `f32` values, all little-endian.
//!
//! Entities missing from a file are imputed with Gaussian rows whose
//! per-dimension mean and standard deviation match the observed rows.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::data::triples::TripleStore;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numeric::rng::{Rng, Stream};

pub const FEATURE_MAGIC: &[u8; 4] = b"MMKF";
/// Imputation standard deviation when a modality has no observed rows at all.
pub const FALLBACK_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub modality: Modality,
    pub dim: usize,
    /// Row-major `num_entities * dim`.
    pub values: Vec<f32>,
    pub present: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureOptions {
    /// Z-score every dimension using the observed rows.
    pub standardize: bool,
    pub impute_seed: u64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            impute_seed: 0,
        }
    }
}

/// Per-dimension affine normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, table: &mut FeatureTable) {
        let dim = table.dim;
        for row in table.values.chunks_mut(dim) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[k]) / self.std[k]) as f32;
            }
        }
    }

    pub fn invert(&self, table: &mut FeatureTable) {
        let dim = table.dim;
        for row in table.values.chunks_mut(dim) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v as f64 * self.std[k] + self.mean[k]) as f32;
            }
        }
    }
}

impl FeatureTable {
    pub fn num_entities(&self) -> usize {
        self.present.len()
    }

    pub fn row(&self, entity: usize) -> &[f32] {
        &self.values[entity * self.dim..(entity + 1) * self.dim]
    }

    pub fn row_mut(&mut self, entity: usize) -> &mut [f32] {
        &mut self.values[entity * self.dim..(entity + 1) * self.dim]
    }

    /// Mean and population standard deviation per dimension over present rows,
    /// `None` when nothing is present.
    fn observed_moments(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let rows: Vec<usize> = (0..self.num_entities()).filter(|e| self.present[*e]).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for &e in &rows {
            for (m, v) in mean.iter_mut().zip(self.row(e)) {
                *m += *v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.dim];
        for &e in &rows {
            for (k, v) in self.row(e).iter().enumerate() {
                var[k] += (*v as f64 - mean[k]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Some((mean, std))
    }

    /// Standardization fitted on present rows; dimensions without spread keep unit scale.
    pub fn observed_stats(&self) -> Option<Standardization> {
        let (mean, std) = self.observed_moments()?;
        let std = std.into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Some(Standardization { mean, std })
    }

    /// Replaces `rows` with Gaussian draws matched to the remaining observed rows and
    /// marks them absent.
    pub fn impute(&mut self, rows: &[usize], rng: &mut Rng) {
        for &e in rows {
            self.present[e] = false;
        }
        let (mean, std) = self
            .observed_moments()
            .unwrap_or_else(|| (vec![0.0; self.dim], vec![FALLBACK_STD; self.dim]));
        let dim = self.dim;
        for &e in rows {
            let row = &mut self.values[e * dim..(e + 1) * dim];
            for k in 0..dim {
                row[k] = (mean[k] + std[k] * rng.normal()) as f32;
            }
        }
    }

    pub fn standardize(&mut self) -> Option<Standardization> {
        let stats = self.observed_stats()?;
        stats.apply(self);
        Some(stats)
    }
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

/// Named feature rows as decoded from a file.
pub type FeatureRows = Vec<(String, Vec<f32>)>;

/// Decodes either feature encoding into `(name, values)` rows.
pub fn parse_feature_rows(path: &Path, bytes: &[u8]) -> Result<(usize, FeatureRows)> {
    if bytes.starts_with(FEATURE_MAGIC) {
        parse_binary(path, bytes)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|_| format_err(path, "not UTF-8 text"))?;
        parse_text(path, text)
    }
}

fn parse_text(path: &Path, text: &str) -> Result<(usize, FeatureRows)> {
    let mut dim = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (name, values) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected `name<TAB>v1,v2,...`".into(),
        })?;
        let values = values
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("bad feature value: {e}"),
            })?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(format_err(
                    path,
                    format!(
                        "line {}: dimension mismatch, expected {d} values, found {}",
                        i + 1,
                        values.len()
                    ),
                ))
            }
            _ => {}
        }
        rows.push((name.to_string(), values));
    }
    let dim = dim.ok_or_else(|| format_err(path, "no feature rows"))?;
    Ok((dim, rows))
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<(usize, FeatureRows)> {
    let mut cursor = Cursor { bytes, pos: 4, path };
    let count = cursor.u32()?;
    let dim = cursor.u32()?;
    if dim == 0 {
        return Err(format_err(path, "feature dimension is zero"));
    }
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cursor.u32()?;
        let raw = cursor.take(len)?;
        names.push(String::from_utf8(raw.to_vec()).map_err(|_| format_err(path, "entity name is not UTF-8"))?);
    }
    let mut rows = Vec::with_capacity(count);
    for name in names {
        let raw = cursor.take(dim * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        rows.push((name, values));
    }
    if cursor.pos != bytes.len() {
        return Err(format_err(path, "trailing bytes after feature block"));
    }
    Ok((dim, rows))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format_err(self.path, "truncated binary feature file"))?;
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Aligns decoded rows to entity ids, imputes absent entities and optionally standardizes.
pub fn features_from_rows(
    path: &Path,
    modality: Modality,
    dim: usize,
    rows: Vec<(String, Vec<f32>)>,
    store: &TripleStore,
    opts: &FeatureOptions,
) -> Result<FeatureTable> {
    if !modality.has_features() {
        return Err(Error::Contract(format!(
            "modality {modality} does not take precomputed features"
        )));
    }
    let n = store.num_entities();
    let mut table = FeatureTable {
        modality,
        dim,
        values: vec![0.0; n * dim],
        present: vec![false; n],
    };
    let mut unknown = Vec::new();
    let mut seen = HashSet::new();
    for (name, values) in rows {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(format_err(path, format!("non-finite feature for {name}")));
        }
        match store.entities.id(&name) {
            Some(e) => {
                if !seen.insert(e) {
                    return Err(format_err(path, format!("duplicate feature row for {name}")));
                }
                table.row_mut(e).copy_from_slice(&values);
                table.present[e] = true;
            }
            None => unknown.push(name),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownEntities { names: unknown });
    }
    let absent: Vec<usize> = (0..n).filter(|e| !table.present[*e]).collect();
    if !absent.is_empty() {
        let mut rng = Rng::for_substream(opts.impute_seed, Stream::Imputation, modality as u64);
        table.impute(&absent, &mut rng);
    }
    if opts.standardize {
        table.standardize();
    }
    Ok(table)
}

pub fn load_features(
    path: &Path,
    modality: Modality,
    store: &TripleStore,
    opts: &FeatureOptions,
) -> Result<FeatureTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dim, rows) = parse_feature_rows(path, &bytes)?;
    features_from_rows(path, modality, dim, rows, store, opts)
}

/// Encoding used when writing a table back to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureEncoding {
    Text,
    Binary,
}

/// Writes the present rows of `table`, named through `store`'s vocabulary.
pub fn write_features(path: &Path, table: &FeatureTable, store: &TripleStore, encoding: FeatureEncoding) -> Result<()> {
    let rows: Vec<usize> = (0..table.num_entities()).filter(|e| table.present[*e]).collect();
    let bytes = match encoding {
        FeatureEncoding::Text => {
            let mut out = String::new();
            for e in rows {
                out.push_str(store.entities.name(e));
                out.push('\t');
                let vals: Vec<String> = table.row(e).iter().map(|v| v.to_string()).collect();
                out.push_str(&vals.join(","));
                out.push('\n');
            }
            out.into_bytes()
        }
        FeatureEncoding::Binary => {
            let mut out = Vec::new();
            out.extend_from_slice(FEATURE_MAGIC);
            out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
            out.extend_from_slice(&(table.dim as u32).to_le_bytes());
            for &e in &rows {
                let name = store.entities.name(e).as_bytes();
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name);
            }
            for &e in &rows {
                for v in table.row(e) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            out
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
