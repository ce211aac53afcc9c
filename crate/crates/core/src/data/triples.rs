use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Name-to-id map with ids assigned in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let names: Vec<String> = sorted.into_iter().collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self { head, relation, tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Named triple as read from disk.
pub type NamedTriple = (String, String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct TripleStore {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl TripleStore {
    /// Builds vocabularies over every split (plus optional extra names) and encodes the triples.
    pub fn from_named(
        train: &[NamedTriple],
        valid: &[NamedTriple],
        test: &[NamedTriple],
        extra_entities: &[String],
        extra_relations: &[String],
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Validation("train split is empty".into()));
        }
        let all = || train.iter().chain(valid).chain(test);
        let entities = Vocab::from_names(
            all()
                .flat_map(|(h, _, t)| [h.as_str(), t.as_str()])
                .chain(extra_entities.iter().map(String::as_str)),
        );
        let relations = Vocab::from_names(
            all()
                .map(|(_, r, _)| r.as_str())
                .chain(extra_relations.iter().map(String::as_str)),
        );
        let encode = |split: &[NamedTriple], label: &str| -> Result<Vec<Triple>> {
            let mut seen = HashSet::with_capacity(split.len());
            let mut out = Vec::with_capacity(split.len());
            for (h, r, t) in split {
                let triple = Triple::new(
                    entities.id(h).expect("vocab covers split"),
                    relations.id(r).expect("vocab covers split"),
                    entities.id(t).expect("vocab covers split"),
                );
                if !seen.insert(triple) {
                    return Err(Error::Validation(format!(
                        "duplicate triple ({h}, {r}, {t}) in {label} split"
                    )));
                }
                out.push(triple);
            }
            Ok(out)
        };
        Ok(Self {
            train: encode(train, "train")?,
            valid: encode(valid, "valid")?,
            test: encode(test, "test")?,
            entities,
            relations,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn relation_id(&self, name: &str) -> Result<usize> {
        self.relations.id(name).ok_or_else(|| Error::Lookup {
            kind: "relation",
            names: vec![name.to_string()],
        })
    }

    pub fn named(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entities.name(t.head),
            self.relations.name(t.relation),
            self.entities.name(t.tail),
        )
    }
}

/// Parses `head<TAB>relation<TAB>tail` lines; blank lines are skipped.
pub fn parse_triples(path: &Path, text: &str) -> Result<Vec<NamedTriple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()));
    }
    Ok(out)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path) -> Result<Vec<NamedTriple>> {
    parse_triples(path, &read_text(path)?)
}

/// Reads one name per line (optional vocabulary files).
pub fn read_name_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn load_triples(train_path: &Path, valid_path: &Path, test_path: &Path) -> Result<TripleStore> {
    load_triples_with_vocab(train_path, valid_path, test_path, &[], &[])
}

/// Like [`load_triples`], additionally registering names that may not occur in any triple.
pub fn load_triples_with_vocab(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
    extra_entities: &[String],
    extra_relations: &[String],
) -> Result<TripleStore> {
    let train = read_split(train_path)?;
    let valid = read_split(valid_path)?;
    let test = read_split(test_path)?;
    if train.is_empty() {
        return Err(Error::Validation(format!(
            "{}: train split is empty",
            train_path.display()
        )));
    }
    TripleStore::from_named(&train, &valid, &test, extra_entities, extra_relations)
}

pub fn write_triples(path: &Path, store: &TripleStore, triples: &[Triple]) -> Result<()> {
    let mut buf = Vec::new();
    for t in triples {
        let (h, r, tl) = store.named(t);
        writeln!(buf, "{h}\t{r}\t{tl}").expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_name_list(path: &Path, names: &[String]) -> Result<()> {
    let mut text = names.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
