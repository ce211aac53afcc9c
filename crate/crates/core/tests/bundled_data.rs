//! The directories under `data/` are generator output. Set
//! `MOMOK_REGENERATE_DATA=1` to rewrite them after changing a generator.

use std::fs;
use std::path::{Path, PathBuf};

use momok_core::data::synthetic::{latent_mmkg, toy5, LatentSpec, SyntheticData};
use momok_core::data::{DataPaths, FeatureOptions};
use momok_core::{Config, Dataset};

fn bundled() -> Vec<(&'static str, SyntheticData)> {
    vec![("toy5", toy5()), ("latent50", latent_mmkg(&LatentSpec::default()))]
}

fn data_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn bundled_directories_match_generators() {
    let regenerate = std::env::var_os("MOMOK_REGENERATE_DATA").is_some();
    for (name, gen) in bundled() {
        let dir = data_root().join(name);
        if regenerate {
            gen.write_dir(&dir).unwrap();
        }
        let fresh = tempfile::tempdir().unwrap();
        gen.write_dir(fresh.path()).unwrap();
        let names = file_names(fresh.path());
        assert_eq!(file_names(&dir), names, "{name}: file set");
        for f in names {
            let want = fs::read(fresh.path().join(&f)).unwrap();
            let got = fs::read(dir.join(&f)).unwrap();
            assert!(want == got, "{name}/{f} differs from generator output");
        }
    }
}

#[test]
fn loading_a_written_directory_reproduces_the_in_memory_dataset() {
    for (name, gen) in bundled() {
        let opts = FeatureOptions::default();
        let loaded = Dataset::load(&DataPaths::from_dir(&data_root().join(name)), &opts).unwrap();
        let built = gen.build(&opts).unwrap();
        assert_eq!(loaded.store, built.store, "{name}");
        assert_eq!(loaded.features, built.features, "{name}");
    }
}

#[test]
fn bundled_config_loads() {
    let cfg = Config::load(&data_root().join("toy5.cfg")).unwrap();
    cfg.validate().unwrap();
    let data = cfg.load_dataset().unwrap();
    assert_eq!(data.store.num_entities(), 5);
    assert_eq!(data.store.num_relations(), 2);
}
