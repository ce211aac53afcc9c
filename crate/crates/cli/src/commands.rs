use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use momok_core::config::KEYS;
use momok_core::data::features::{load_features, write_features, FeatureEncoding};
use momok_core::data::triples::{load_triples_with_vocab, read_name_list, write_name_list, write_triples};
use momok_core::data::{corrupt_features_missing, corrupt_features_noise, sparsify_triples, DataPaths, FeatureOptions};
use momok_core::report::{gate_report, per_relation_report, relation_rows_to_tsv, weight_rows_to_tsv};
use momok_core::selfcheck::{gradcheck_config, run_gradcheck, GradcheckOptions, GRADCHECK_TOLERANCE};
use momok_core::{
    evaluate_split, Checkpoint, Config, Error, EvalOptions, Modality, Momok, Rng, Scenario, Split, Trainer,
};

use crate::{CorruptArgs, DataArgs, EvalArgs, Failure, GradcheckArgs, ReportArgs};

type CmdResult = Result<(), Failure>;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

/// Applies `--key value` / `--key=value` pairs; dashes in keys read as underscores.
fn apply_overrides(cfg: &mut Config, overrides: &[String]) -> Result<(), Error> {
    let mut tokens = overrides.iter();
    while let Some(token) = tokens.next() {
        let Some(flag) = token.strip_prefix("--") else {
            return Err(Error::Config(format!("expected `--key value`, got `{token}`")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = tokens
                    .next()
                    .ok_or_else(|| Error::Config(format!("missing value for `--{flag}`")))?;
                (flag.to_string(), v.clone())
            }
        };
        cfg.set(&key.replace('-', "_"), &value, None)?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, base: Config) -> Result<Config, Error> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(base),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// The config with every path made absolute, so it can be reloaded from anywhere.
fn portable_config(cfg: &Config) -> Config {
    let mut out = cfg.clone();
    for p in [
        &mut out.data_dir,
        &mut out.train_path,
        &mut out.valid_path,
        &mut out.test_path,
        &mut out.image_path,
        &mut out.text_path,
    ] {
        *p = p.as_deref().map(absolute);
    }
    out.out_dir = absolute(&out.out_dir);
    out
}

pub fn train(config: Option<&Path>, overrides: &[String]) -> CmdResult {
    let mut cfg = load_config(config, Config::default())?;
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let mut trainer = Trainer::new(&cfg, &data)?;
    println!("epoch\tkgc\tclub\texid\tvalid_mrr");
    for _ in 0..cfg.epochs {
        println!("{}", trainer.run_epoch()?.trace_line());
    }

    let out = &cfg.out_dir;
    create_dir(out)?;
    let best = trainer.best_checkpoint();
    write_file(&out.join("model.ckpt"), best.to_bytes())?;
    write_file(&out.join("last.ckpt"), trainer.checkpoint().to_bytes())?;
    let mut trace = String::from("epoch\tkgc\tclub\texid\tvalid_mrr\n");
    trace.push_str(&momok_core::train::trace_text(&trainer.trace));
    write_file(&out.join("trace.tsv"), trace)?;
    write_file(&out.join("config.txt"), portable_config(&cfg).to_text())?;

    if !data.store.valid.is_empty() {
        let (model, _) = Momok::from_checkpoint(&best)?;
        let opts = EvalOptions {
            tie_split: cfg.tie_split,
        };
        let metrics = evaluate_split(&model, &data, Split::Valid, opts)?;
        if let Some((_, epoch)) = trainer.best_epoch() {
            println!("best epoch\t{epoch}");
        }
        print!("{}", metrics.to_text());
        write_file(&out.join("metrics.txt"), metrics.to_text())?;
    }
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Momok, Error> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    Ok(Momok::from_checkpoint(&ckpt)?.0)
}

fn data_config(args: &DataArgs) -> Result<Config, Error> {
    if args.config.is_none() && args.data.is_none() {
        return Err(Error::Config("pass --config or --data".into()));
    }
    let mut cfg = load_config(args.config.as_deref(), Config::default())?;
    if let Some(dir) = &args.data {
        cfg.data_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn output_dir(explicit: Option<&Path>, checkpoint: &Path) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let split: Split = args.split.parse()?;
    let model = read_checkpoint(&args.checkpoint)?;
    let cfg = data_config(&args.data)?;
    let data = cfg.load_dataset()?;
    model.spec().check_compatible(&data)?;
    let opts = EvalOptions {
        tie_split: args.tie_split || cfg.tie_split,
    };
    let metrics = evaluate_split(&model, &data, split, opts)?;
    print!("{}", metrics.to_text());
    let out = output_dir(args.out_dir.as_deref(), &args.checkpoint);
    create_dir(&out)?;
    write_file(&out.join(format!("metrics_{}.txt", split.name())), metrics.to_text())?;
    if args.per_modality {
        let rows = per_relation_report(&model, &data, split, opts)?;
        let path = out.join(format!("per_relation_{}.tsv", split.name()));
        write_file(&path, relation_rows_to_tsv(&rows))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_modalities(list: &str) -> Result<Vec<Modality>, Error> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<Modality>()
                .map_err(|_| Error::Config(format!("unknown modality `{s}`")))
        })
        .collect()
}

fn copy_into(src: &Path, out: &Path) -> Result<(), Error> {
    let name = src
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file", src.display())))?;
    let dst = out.join(name);
    fs::copy(src, &dst).map_err(|e| io_err(&dst, e))?;
    Ok(())
}

fn encoding_of(path: &Path) -> FeatureEncoding {
    if path.extension().is_some_and(|e| e == "mmkf") {
        FeatureEncoding::Binary
    } else {
        FeatureEncoding::Text
    }
}

/// Copies the dataset verbatim, then rewrites only the files the scenario changes.
pub fn corrupt(args: &CorruptArgs) -> CmdResult {
    let scenario: Scenario = args.scenario.parse()?;
    let modalities = parse_modalities(&args.modality)?;
    let paths = DataPaths::from_dir(&args.data);
    if absolute(&args.data) == absolute(&args.out) {
        return Err(Error::Config("--out must differ from --data".into()).into());
    }
    let entities = paths
        .entities
        .as_deref()
        .map(read_name_list)
        .transpose()?
        .unwrap_or_default();
    let relations = paths
        .relations
        .as_deref()
        .map(read_name_list)
        .transpose()?
        .unwrap_or_default();
    let store = load_triples_with_vocab(&paths.train, &paths.valid, &paths.test, &entities, &relations)?;

    create_dir(&args.out)?;
    let files = [Some(&paths.train), Some(&paths.valid), Some(&paths.test)]
        .into_iter()
        .flatten()
        .chain(
            [&paths.entities, &paths.relations, &paths.image, &paths.text]
                .into_iter()
                .flatten(),
        );
    for f in files {
        copy_into(f, &args.out)?;
    }

    let mut changed = Vec::new();
    match scenario {
        Scenario::Sparse => {
            let sparse = sparsify_triples(&store, args.ratio, args.seed)?;
            if sparse.train.len() != store.train.len() {
                write_triples(&args.out.join("train.tsv"), &sparse, &sparse.train)?;
                // Keep the full vocabulary so entities seen only in dropped triples still resolve.
                write_name_list(&args.out.join("entities.txt"), sparse.entities.names())?;
                write_name_list(&args.out.join("relations.txt"), sparse.relations.names())?;
                changed.push(format!(
                    "train.tsv: kept {} of {} triples",
                    sparse.train.len(),
                    store.train.len()
                ));
            }
        }
        Scenario::Noise | Scenario::Missing => {
            let raw_opts = FeatureOptions {
                standardize: false,
                impute_seed: args.seed,
            };
            for m in modalities {
                let Some(path) = paths.feature_path(m) else { continue };
                let raw = load_features(path, m, &store, &raw_opts)?;
                let mut out = raw.clone();
                let mut rows = 0;
                if scenario == Scenario::Noise {
                    // Noise is drawn in standardized units and mapped back to the raw scale.
                    let Some(stats) = raw.observed_stats() else { continue };
                    let mut z = raw.clone();
                    stats.apply(&mut z);
                    let noisy = corrupt_features_noise(&z, args.ratio, args.scale, args.seed)?;
                    let mut back = noisy.clone();
                    stats.invert(&mut back);
                    for e in 0..raw.num_entities() {
                        if raw.present[e] && noisy.row(e) != z.row(e) {
                            out.row_mut(e).copy_from_slice(back.row(e));
                            rows += 1;
                        }
                    }
                } else {
                    let missing = corrupt_features_missing(&raw, args.ratio, args.seed)?;
                    rows = (0..raw.num_entities())
                        .filter(|e| raw.present[*e] && !missing.present[*e])
                        .count();
                    out.present = missing.present;
                }
                if rows > 0 {
                    let name = path.file_name().expect("feature file name");
                    write_features(&args.out.join(name), &out, &store, encoding_of(path))?;
                    changed.push(format!(
                        "{}: {rows} rows {}",
                        m,
                        if scenario == Scenario::Noise {
                            "perturbed"
                        } else {
                            "dropped"
                        }
                    ));
                }
            }
        }
    }
    if changed.is_empty() {
        println!("no changes; {} is a verbatim copy", args.out.display());
    }
    for c in changed {
        println!("{c}");
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> CmdResult {
    let split: Split = args.split.parse()?;
    let model = read_checkpoint(&args.checkpoint)?;
    let cfg = data_config(&args.data)?;
    let data = cfg.load_dataset()?;
    let relations: Vec<String> = if args.relations.trim() == "all" {
        data.store.relations.names().to_vec()
    } else {
        args.relations
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    };
    let n = data.store.num_entities();
    let entities: Vec<usize> = match args.sample {
        Some(k) if k < n => {
            let mut picked = Rng::new(args.seed).permutation(n);
            picked.truncate(k);
            picked.sort_unstable();
            picked
        }
        _ => (0..n).collect(),
    };
    let weights = gate_report(&model, &data, &relations, &entities)?;
    let opts = EvalOptions {
        tie_split: args.tie_split || cfg.tie_split,
    };
    let mut rows = per_relation_report(&model, &data, split, opts)?;
    rows.retain(|r| relations.contains(&r.relation));

    let out = output_dir(args.out_dir.as_deref(), &args.checkpoint);
    create_dir(&out)?;
    let gate_path = out.join("gate_weights.tsv");
    let mrr_path = out.join(format!("relation_mrr_{}.tsv", split.name()));
    write_file(&gate_path, weight_rows_to_tsv(&weights))?;
    write_file(&mrr_path, relation_rows_to_tsv(&rows))?;
    println!("wrote {}", gate_path.display());
    println!("wrote {}", mrr_path.display());
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> CmdResult {
    let mut cfg = load_config(args.config.as_deref(), gradcheck_config())?;
    apply_overrides(&mut cfg, &args.overrides)?;
    let opts = GradcheckOptions {
        config: cfg,
        probes: args.probes,
        eps: args.eps,
        corrupt_gradient: args.corrupt_gradient,
    };
    let checks = run_gradcheck(&opts)?;
    let mut text = String::new();
    let mut failed = false;
    for c in &checks {
        match &c.report {
            None => {
                let _ = writeln!(text, "{}\tskipped (identically zero)", c.name);
            }
            Some(r) => {
                let status = if c.passed() { "ok" } else { "FAIL" };
                failed |= !c.passed();
                let _ = write!(
                    text,
                    "{}\t{status}\tmax_rel_error {:.3e}\tprobes {}\tkinks_skipped {}",
                    c.name,
                    r.max_rel_error,
                    r.probes.len(),
                    r.kinks_skipped
                );
                if let Some(w) = r.worst() {
                    let _ = write!(
                        text,
                        "\tworst {}[{}] analytic {:.6e} numeric {:.6e}",
                        w.group, w.index, w.analytic, w.numeric
                    );
                }
                text.push('\n');
            }
        }
    }
    if failed {
        return Err(Failure::SelfCheck(format!("tolerance {GRADCHECK_TOLERANCE:e}\n{text}")));
    }
    print!("{text}");
    Ok(())
}

pub fn keys() {
    for (k, desc) in KEYS {
        println!("{k}\t{desc}");
    }
}
