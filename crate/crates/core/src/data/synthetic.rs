//! Small generated multi-modal knowledge graphs for tests, demos and acceptance runs.

use std::fs;
use std::path::Path;

use crate::data::dataset::{feature_file_name, Dataset};
use crate::data::features::{features_from_rows, FeatureOptions};
use crate::data::triples::{NamedTriple, TripleStore};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::numeric::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<NamedTriple>,
    pub valid: Vec<NamedTriple>,
    pub test: Vec<NamedTriple>,
    pub image: Vec<(String, Vec<f32>)>,
    pub text: Vec<(String, Vec<f32>)>,
}

impl SyntheticData {
    pub fn build(&self, opts: &FeatureOptions) -> Result<Dataset> {
        let store = TripleStore::from_named(&self.train, &self.valid, &self.test, &[], &[])?;
        let mut features = Vec::new();
        for (m, rows) in [(Modality::Image, &self.image), (Modality::Text, &self.text)] {
            let dim = rows.first().map_or(0, |r| r.1.len());
            let path = Path::new(m.name());
            features.push(features_from_rows(path, m, dim, rows.clone(), &store, opts)?);
        }
        Ok(Dataset { store, features })
    }

    /// Writes the dataset directory layout understood by [`crate::data::DataPaths::from_dir`].
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        let triples =
            |list: &[NamedTriple]| -> String { list.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect() };
        let feats = |rows: &[(String, Vec<f32>)]| -> String {
            rows.iter()
                .map(|(n, v)| {
                    let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                    format!("{n}\t{}\n", vals.join(","))
                })
                .collect()
        };
        write("train.tsv", triples(&self.train))?;
        write("valid.tsv", triples(&self.valid))?;
        write("test.tsv", triples(&self.test))?;
        write(&feature_file_name(Modality::Image, false), feats(&self.image))?;
        write(&feature_file_name(Modality::Text, false), feats(&self.text))?;
        Ok(())
    }
}

fn triple(h: &str, r: &str, t: &str) -> NamedTriple {
    (h.to_string(), r.to_string(), t.to_string())
}

fn random_rows(names: &[String], dim: usize, rng: &mut Rng) -> Vec<(String, Vec<f32>)> {
    names
        .iter()
        .map(|n| {
            let v = (0..dim).map(|_| rng.normal() as f32).collect();
            (n.clone(), v)
        })
        .collect()
}

/// Five entities, two relations, four-dimensional random image and text features.
pub fn toy5() -> SyntheticData {
    let names: Vec<String> = (0..5).map(|i| format!("e{i}")).collect();
    let mut train = Vec::new();
    for i in 0..5 {
        train.push(triple(&names[i], "next", &names[(i + 1) % 5]));
    }
    for i in [0, 1, 2] {
        train.push(triple(&names[i], "skip", &names[(i + 2) % 5]));
    }
    let mut rng = Rng::new(0x70E5);
    SyntheticData {
        train,
        valid: vec![triple(&names[3], "skip", &names[0])],
        test: vec![triple(&names[4], "skip", &names[1])],
        image: random_rows(&names, 4, &mut rng),
        text: random_rows(&names, 4, &mut rng),
    }
}

/// Parameters of the latent-attribute generator behind [`latent_mmkg`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpec {
    /// Levels of the attribute revealed by image features.
    pub image_levels: usize,
    /// Levels of the attribute revealed by text features.
    pub text_levels: usize,
    pub relations: usize,
    /// Extra facts per relation drawn from a second attribute mapping.
    pub secondary_per_relation: usize,
    pub valid: usize,
    pub test: usize,
    pub feature_dim: usize,
    /// Standard deviation of per-entity feature noise around the attribute prototype.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for LatentSpec {
    /// 50 entities, 5 relations, 300 train / 25 valid / 25 test triples, 16-dim features.
    fn default() -> Self {
        Self {
            image_levels: 5,
            text_levels: 10,
            relations: 5,
            secondary_per_relation: 20,
            valid: 25,
            test: 25,
            feature_dim: 16,
            feature_noise: 0.5,
            seed: 0x5EED,
        }
    }
}

/// Entities are the grid `image_level x text_level`. Every relation maps the two
/// attributes through its own pair of permutations, so a fact's tail is determined
/// by the head's attributes; a few secondary facts per relation use a second pair.
/// Image features are a noisy prototype of the first attribute, text features of
/// the second, so each feature modality alone sees only half of an entity.
pub fn latent_mmkg(spec: &LatentSpec) -> SyntheticData {
    let (na, nb) = (spec.image_levels, spec.text_levels);
    let n = na * nb;
    let width = (n.max(2) - 1).to_string().len();
    let names: Vec<String> = (0..n).map(|e| format!("e{e:0width$}")).collect();
    let rel_width = (spec.relations.max(2) - 1).to_string().len();
    let rel_names: Vec<String> = (0..spec.relations).map(|r| format!("r{r:0rel_width$}")).collect();
    let mut rng = Rng::new(spec.seed);
    let entity = |a: usize, b: usize| a * nb + b;

    let mut facts = Vec::new();
    for rel in &rel_names {
        let (fa, fb) = (rng.permutation(na), rng.permutation(nb));
        let (ga, gb) = (rng.permutation(na), rng.permutation(nb));
        for e in 0..n {
            let (a, b) = (e / nb, e % nb);
            facts.push(triple(&names[e], rel, &names[entity(fa[a], fb[b])]));
        }
        let mut added = 0;
        for e in rng.permutation(n) {
            if added == spec.secondary_per_relation {
                break;
            }
            let (a, b) = (e / nb, e % nb);
            let (primary, secondary) = (entity(fa[a], fb[b]), entity(ga[a], gb[b]));
            if primary != secondary {
                facts.push(triple(&names[e], rel, &names[secondary]));
                added += 1;
            }
        }
    }
    assert!(
        spec.valid + spec.test < facts.len(),
        "{} held-out triples requested from {} facts",
        spec.valid + spec.test,
        facts.len()
    );
    rng.shuffle(&mut facts);
    let test = facts.split_off(facts.len() - spec.test);
    let valid = facts.split_off(facts.len() - spec.valid);

    let proto = |levels: usize, rng: &mut Rng| -> Vec<Vec<f64>> {
        (0..levels)
            .map(|_| (0..spec.feature_dim).map(|_| rng.normal()).collect())
            .collect()
    };
    let (proto_a, proto_b) = (proto(na, &mut rng), proto(nb, &mut rng));
    let mut features = |level_of: &dyn Fn(usize) -> usize, protos: &[Vec<f64>]| {
        (0..n)
            .map(|e| {
                let p = &protos[level_of(e)];
                let v = p
                    .iter()
                    .map(|x| (x + spec.feature_noise * rng.normal()) as f32)
                    .collect();
                (names[e].clone(), v)
            })
            .collect::<Vec<_>>()
    };
    let image = features(&|e| e / nb, &proto_a);
    let text = features(&|e| e % nb, &proto_b);
    SyntheticData {
        train: facts,
        valid,
        test,
        image,
        text,
    }
}
