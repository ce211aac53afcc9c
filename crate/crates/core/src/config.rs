//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::corrupt::{corrupt_features_missing, corrupt_features_noise, sparsify_triples};
use crate::data::dataset::{DataPaths, Dataset};
use crate::data::features::FeatureOptions;
use crate::error::{Error, Result};
use crate::modality::{parse_modalities, Modality};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Noise,
    Missing,
    Sparse,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Noise => "noise",
            Scenario::Missing => "missing",
            Scenario::Sparse => "sparse",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Scenario::Noise),
            "missing" => Ok(Scenario::Missing),
            "sparse" => Ok(Scenario::Sparse),
            other => Err(Error::Config(format!(
                "unknown corruption scenario `{other}` (expected noise, missing or sparse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub data_dir: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub image_path: Option<PathBuf>,
    pub text_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub dim: usize,
    pub rel_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub experts: usize,
    pub lambda: f64,
    pub lr: f64,
    pub q_lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub modalities: Vec<Modality>,
    pub use_noise: bool,
    pub use_relation_temperature: bool,
    pub per_modality_temperature: bool,
    pub use_adaptive_fusion: bool,
    pub use_joint_training: bool,
    pub project_structure: bool,
    pub use_exid: bool,
    pub exid_steps: usize,
    pub club_normalized: bool,
    pub standardize: bool,
    pub corrupt: Option<Scenario>,
    pub corrupt_ratio: f64,
    pub corrupt_scale: f64,
    pub corrupt_seed: u64,
    pub corrupt_modalities: Vec<Modality>,
    pub tie_split: bool,
    pub eval_every: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: None,
            train_path: None,
            valid_path: None,
            test_path: None,
            image_path: None,
            text_path: None,
            out_dir: PathBuf::from("out"),
            dim: 250,
            rel_dim: None,
            hidden: None,
            experts: 3,
            lambda: 1e-4,
            lr: 1e-3,
            q_lr: None,
            batch_size: 1024,
            epochs: 100,
            seed: 0,
            modalities: Modality::BASE.to_vec(),
            use_noise: true,
            use_relation_temperature: true,
            per_modality_temperature: false,
            use_adaptive_fusion: true,
            use_joint_training: true,
            project_structure: true,
            use_exid: true,
            exid_steps: 1,
            club_normalized: true,
            standardize: true,
            corrupt: None,
            corrupt_ratio: 0.0,
            corrupt_scale: 1.0,
            corrupt_seed: 0,
            corrupt_modalities: Modality::FEATURE.to_vec(),
            tie_split: false,
            eval_every: 1,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    (
        "data_dir",
        "dataset directory (train.tsv, valid.tsv, test.tsv, optional feature files)",
    ),
    ("train_path", "train triples, overrides data_dir"),
    ("valid_path", "valid triples, overrides data_dir"),
    ("test_path", "test triples, overrides data_dir"),
    ("image_path", "image feature file, overrides data_dir"),
    ("text_path", "text feature file, overrides data_dir"),
    ("out_dir", "output directory for checkpoints, trace and metrics"),
    ("dim", "entity embedding dimension"),
    ("rel_dim", "relation embedding dimension (default: dim)"),
    ("hidden", "hidden width of every two-layer network (default: dim)"),
    ("experts", "experts per modality"),
    ("lambda", "weight of the CLUB penalty"),
    ("lr", "Adam learning rate of the model"),
    ("q_lr", "Adam learning rate of the approximators (default: lr)"),
    ("batch_size", "triples per batch"),
    ("epochs", "training epochs"),
    ("seed", "master seed"),
    ("modalities", "comma-separated subset of structure,image,text"),
    ("use_noise", "noisy gating during training"),
    (
        "use_relation_temperature",
        "one learned temperature per relation (false: one shared)",
    ),
    ("per_modality_temperature", "separate temperatures per modality"),
    (
        "use_adaptive_fusion",
        "attention weights in joint fusion (false: uniform)",
    ),
    ("use_joint_training", "train and score the joint channel"),
    (
        "project_structure",
        "apply the projection to the structural embedding in joint fusion",
    ),
    ("use_exid", "CLUB penalty and approximator training"),
    ("exid_steps", "approximator steps per batch"),
    ("club_normalized", "divide the CLUB negative term by |B|-1"),
    ("standardize", "z-score feature dimensions at load time"),
    (
        "corrupt",
        "corruption applied after loading: none, noise, missing, sparse",
    ),
    ("corrupt_ratio", "fraction of entities (or train triples) corrupted"),
    ("corrupt_scale", "noise standard deviation for the noise scenario"),
    ("corrupt_seed", "seed of the corruption"),
    ("corrupt_modalities", "modalities affected by noise/missing corruption"),
    (
        "tie_split",
        "split ties in ranks instead of counting strictly greater scores",
    ),
    ("eval_every", "validate every N epochs (0: never)"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_path(value: &str, base: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(value);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

impl Config {
    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim(), base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let opt_path = |v: &str| if v.is_empty() { None } else { Some(parse_path(v, base)) };
        match key {
            "data_dir" => self.data_dir = opt_path(value),
            "train_path" => self.train_path = opt_path(value),
            "valid_path" => self.valid_path = opt_path(value),
            "test_path" => self.test_path = opt_path(value),
            "image_path" => self.image_path = opt_path(value),
            "text_path" => self.text_path = opt_path(value),
            "out_dir" => self.out_dir = parse_path(value, base),
            "dim" => self.dim = parse(key, value)?,
            "rel_dim" => self.rel_dim = Some(parse(key, value)?),
            "hidden" => self.hidden = Some(parse(key, value)?),
            "experts" => self.experts = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "q_lr" => self.q_lr = Some(parse(key, value)?),
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "modalities" => self.modalities = parse_modalities(value)?,
            "use_noise" => self.use_noise = parse_bool(key, value)?,
            "use_relation_temperature" => self.use_relation_temperature = parse_bool(key, value)?,
            "per_modality_temperature" => self.per_modality_temperature = parse_bool(key, value)?,
            "use_adaptive_fusion" => self.use_adaptive_fusion = parse_bool(key, value)?,
            "use_joint_training" => self.use_joint_training = parse_bool(key, value)?,
            "project_structure" => self.project_structure = parse_bool(key, value)?,
            "use_exid" => self.use_exid = parse_bool(key, value)?,
            "exid_steps" => self.exid_steps = parse(key, value)?,
            "club_normalized" => self.club_normalized = parse_bool(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "corrupt" => {
                self.corrupt = match value {
                    "" | "none" => None,
                    other => Some(other.parse()?),
                }
            }
            "corrupt_ratio" => self.corrupt_ratio = parse(key, value)?,
            "corrupt_scale" => self.corrupt_scale = parse(key, value)?,
            "corrupt_seed" => self.corrupt_seed = parse(key, value)?,
            "corrupt_modalities" => self.corrupt_modalities = parse_modalities(value)?,
            "tie_split" => self.tie_split = parse_bool(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 || self.rel_dim == Some(0) || self.hidden == Some(0) {
            return bad("`dim`, `rel_dim` and `hidden` must be at least 1".into());
        }
        if self.experts == 0 {
            return bad("`experts` must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("`batch_size` must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("`lambda` must be a finite value >= 0, got {}", self.lambda));
        }
        for (key, lr) in [("lr", Some(self.lr)), ("q_lr", self.q_lr)] {
            if let Some(lr) = lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad(format!("`{key}` must be positive, got {lr}"));
                }
            }
        }
        if self.modalities.is_empty() || self.modalities.iter().any(|m| !m.is_base()) {
            return bad("`modalities` must list at least one of structure, image, text".into());
        }
        if self.corrupt_modalities.iter().any(|m| !m.has_features()) {
            return bad("`corrupt_modalities` may only list image and text".into());
        }
        if !(0.0..=1.0).contains(&self.corrupt_ratio) {
            return bad(format!(
                "`corrupt_ratio` must lie in [0, 1], got {}",
                self.corrupt_ratio
            ));
        }
        if !(self.corrupt_scale >= 0.0 && self.corrupt_scale.is_finite()) {
            return bad(format!("`corrupt_scale` must be >= 0, got {}", self.corrupt_scale));
        }
        Ok(())
    }

    pub fn rel_dim(&self) -> usize {
        self.rel_dim.unwrap_or(self.dim)
    }

    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(self.dim)
    }

    pub fn q_lr(&self) -> f64 {
        self.q_lr.unwrap_or(self.lr)
    }

    pub fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            standardize: self.standardize,
            impute_seed: self.seed,
        }
    }

    /// Data file locations: `data_dir` layout with explicit paths taking precedence.
    pub fn data_paths(&self) -> Result<DataPaths> {
        let mut paths = match &self.data_dir {
            Some(dir) => DataPaths::from_dir(dir),
            None => {
                let need = |p: &Option<PathBuf>, key: &str| {
                    p.clone()
                        .ok_or_else(|| Error::Config(format!("`{key}` is required when `data_dir` is unset")))
                };
                DataPaths {
                    train: need(&self.train_path, "train_path")?,
                    valid: need(&self.valid_path, "valid_path")?,
                    test: need(&self.test_path, "test_path")?,
                    entities: None,
                    relations: None,
                    image: None,
                    text: None,
                }
            }
        };
        for (target, src) in [
            (&mut paths.train, &self.train_path),
            (&mut paths.valid, &self.valid_path),
            (&mut paths.test, &self.test_path),
        ] {
            if let Some(p) = src {
                *target = p.clone();
            }
        }
        if self.image_path.is_some() {
            paths.image = self.image_path.clone();
        }
        if self.text_path.is_some() {
            paths.text = self.text_path.clone();
        }
        Ok(paths)
    }

    /// Loads the configured dataset and applies the configured corruption.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let data = Dataset::load(&self.data_paths()?, &self.feature_options())?;
        self.apply_corruption(data)
    }

    pub fn apply_corruption(&self, mut data: Dataset) -> Result<Dataset> {
        match self.corrupt {
            None => {}
            Some(Scenario::Sparse) => {
                data.store = sparsify_triples(&data.store, self.corrupt_ratio, self.corrupt_seed)?
            }
            Some(scenario) => {
                for &m in &self.corrupt_modalities {
                    if let Some(table) = data.features_mut(m) {
                        *table = match scenario {
                            Scenario::Noise => corrupt_features_noise(
                                table,
                                self.corrupt_ratio,
                                self.corrupt_scale,
                                self.corrupt_seed,
                            )?,
                            _ => corrupt_features_missing(table, self.corrupt_ratio, self.corrupt_seed)?,
                        };
                    }
                }
            }
        }
        Ok(data)
    }

    /// Renders the config back to `key = value` text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mods = |ms: &[Modality]| ms.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
        let lines: Vec<(&str, String)> = vec![
            ("data_dir", path(&self.data_dir)),
            ("train_path", path(&self.train_path)),
            ("valid_path", path(&self.valid_path)),
            ("test_path", path(&self.test_path)),
            ("image_path", path(&self.image_path)),
            ("text_path", path(&self.text_path)),
            ("out_dir", self.out_dir.display().to_string()),
            ("dim", self.dim.to_string()),
            ("rel_dim", self.rel_dim().to_string()),
            ("hidden", self.hidden().to_string()),
            ("experts", self.experts.to_string()),
            ("lambda", self.lambda.to_string()),
            ("lr", self.lr.to_string()),
            ("q_lr", self.q_lr().to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("modalities", mods(&self.modalities)),
            ("use_noise", self.use_noise.to_string()),
            ("use_relation_temperature", self.use_relation_temperature.to_string()),
            ("per_modality_temperature", self.per_modality_temperature.to_string()),
            ("use_adaptive_fusion", self.use_adaptive_fusion.to_string()),
            ("use_joint_training", self.use_joint_training.to_string()),
            ("project_structure", self.project_structure.to_string()),
            ("use_exid", self.use_exid.to_string()),
            ("exid_steps", self.exid_steps.to_string()),
            ("club_normalized", self.club_normalized.to_string()),
            ("standardize", self.standardize.to_string()),
            ("corrupt", self.corrupt.map_or("none", Scenario::name).to_string()),
            ("corrupt_ratio", self.corrupt_ratio.to_string()),
            ("corrupt_scale", self.corrupt_scale.to_string()),
            ("corrupt_seed", self.corrupt_seed.to_string()),
            ("corrupt_modalities", mods(&self.corrupt_modalities)),
            ("tie_split", self.tie_split.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = Config::parse(
            "# run\ndim = 32  # small\nmodalities = text,structure\nlambda=0\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.dim, 32);
        assert_eq!(cfg.rel_dim(), 32);
        assert_eq!(cfg.modalities, vec![Modality::Structure, Modality::Text]);
        assert_eq!(cfg.lambda, 0.0);
        assert_eq!(cfg.experts, 3);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let err = Config::parse("dimm = 3", None).unwrap_err();
        assert!(err.to_string().contains("dimm"));
        assert!(Config::parse("dim = x", None).is_err());
        assert!(Config::parse("use_noise = maybe", None).is_err());
        assert!(Config::parse("just text", None).is_err());
        let mut cfg = Config::default();
        cfg.set("lambda", "-1", None).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = Config::default();
        cfg.set("corrupt", "missing", None).unwrap();
        cfg.set("data_dir", "/tmp/x", None).unwrap();
        cfg.set("q_lr", "0.01", None).unwrap();
        let back = Config::parse(&cfg.to_text(), None).unwrap();
        assert_eq!(back.corrupt, Some(Scenario::Missing));
        assert_eq!(back.data_dir, cfg.data_dir);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn every_documented_key_is_settable() {
        for (key, _) in KEYS {
            let mut cfg = Config::default();
            let value = match *key {
                "modalities" => "structure",
                "corrupt_modalities" => "image",
                "corrupt" => "noise",
                k if k.starts_with("use_")
                    || k.contains("normalized")
                    || k.contains("standardize")
                    || k.contains("tie")
                    || k.contains("per_modality")
                    || k.contains("project") =>
                {
                    "false"
                }
                k if k.ends_with("path") || k.ends_with("dir") => "x",
                _ => "1",
            };
            cfg.set(key, value, None).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let cfg = Config::parse("data_dir = toy", Some(Path::new("/etc/cfgs"))).unwrap();
        assert_eq!(cfg.data_dir, Some(PathBuf::from("/etc/cfgs/toy")));
    }
}
