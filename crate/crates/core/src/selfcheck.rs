//! Finite-difference verification of every model loss on a small random model.

use crate::config::Config;
use crate::data::batch::TripleBatch;
use crate::data::dataset::Dataset;
use crate::data::features::FeatureOptions;
use crate::data::synthetic::toy5;
use crate::error::Result;
use crate::exid::{exid_objective, Disentangler};
use crate::model::{LossTerms, ModelSpec, Momok};
use crate::numeric::gradcheck::{finite_diff_check, GradCheckReport};
use crate::numeric::rng::{Rng, Stream};

/// Relative-error threshold every loss must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub config: Config,
    pub probes: usize,
    pub eps: f64,
    /// Test hook: doubles every analytic gradient so the check must fail.
    pub corrupt_gradient: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            config: gradcheck_config(),
            probes: 150,
            eps: 1e-3,
            corrupt_gradient: false,
        }
    }
}

/// Toy model settings: `d = 8`, `K = 3` over the bundled five-entity graph.
pub fn gradcheck_config() -> Config {
    Config {
        dim: 8,
        hidden: Some(8),
        rel_dim: Some(8),
        experts: 3,
        ..Config::default()
    }
}

#[derive(Debug, Clone)]
pub struct LossCheck {
    pub name: &'static str,
    /// `None` when the loss is identically zero for this configuration.
    pub report: Option<GradCheckReport>,
}

impl LossCheck {
    pub fn passed(&self) -> bool {
        self.report
            .as_ref()
            .is_none_or(|r| r.max_rel_error < GRADCHECK_TOLERANCE)
    }
}

/// Checks `L_kgc`, `L_club` and `L_exid`. Uses the configured dataset when
/// one is set, otherwise the bundled five-entity graph.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<LossCheck>> {
    let cfg = &opts.config;
    cfg.validate()?;
    let data = if cfg.data_dir.is_some() || cfg.train_path.is_some() {
        cfg.load_dataset()?
    } else {
        toy5().build(&FeatureOptions {
            standardize: cfg.standardize,
            impute_seed: cfg.seed,
        })?
    };
    check_dataset(opts, &data)
}

pub fn check_dataset(opts: &GradcheckOptions, data: &Dataset) -> Result<Vec<LossCheck>> {
    let cfg = &opts.config;
    let spec = ModelSpec::from_config(cfg, data)?;
    let mut model = Momok::new(spec, cfg.seed)?;
    let mut dis = Disentangler::new(
        &cfg.modalities,
        cfg.dim,
        cfg.hidden(),
        cfg.club_normalized,
        &mut Rng::for_substream(cfg.seed, Stream::Init, 1),
    );
    let batch = TripleBatch::new(data.store.train.clone());
    let n = model.spec().num_entities;
    let noise = model.arch.draw_noise(n, &mut Rng::for_stream(cfg.seed, Stream::Gating));
    let features = &data.features;
    let scale = if opts.corrupt_gradient { 2.0 } else { 1.0 };
    let mut probe_rng = Rng::for_stream(cfg.seed, Stream::Sampling);
    let mut checks = Vec::new();

    let arch = model.arch.clone();
    let kgc = finite_diff_check(
        &mut model.store,
        |store, with_grad| {
            let (values, grads) = store.parts_mut();
            let views = arch.all_views(values, features, noise.as_deref()).expect("views");
            let terms = LossTerms { kgc: true, club: None };
            let loss = arch
                .loss_with_views(values, with_grad.then_some(grads), &views, &batch, terms)
                .expect("kgc loss")
                .kgc();
            if with_grad {
                scale_grads(store, scale);
            }
            loss
        },
        opts.eps,
        opts.probes,
        &mut probe_rng,
    );
    checks.push(LossCheck {
        name: "L_kgc",
        report: Some(kgc),
    });

    let club = if cfg.experts >= 2 {
        let frozen = &dis;
        Some(finite_diff_check(
            &mut model.store,
            |store, with_grad| {
                let (values, grads) = store.parts_mut();
                let views = arch.all_views(values, features, noise.as_deref()).expect("views");
                let terms = LossTerms {
                    kgc: false,
                    club: Some((frozen, 1.0)),
                };
                let loss = arch
                    .loss_with_views(values, with_grad.then_some(grads), &views, &batch, terms)
                    .expect("club loss")
                    .club;
                if with_grad {
                    scale_grads(store, scale);
                }
                loss
            },
            opts.eps,
            opts.probes,
            &mut probe_rng,
        ))
    } else {
        None
    };
    checks.push(LossCheck {
        name: "L_club",
        report: club,
    });

    let exid = if cfg.experts >= 2 {
        let views = arch.all_views(model.store.values(), features, noise.as_deref())?;
        let bv = arch.batch_views(&views, &batch);
        let nets = dis.nets.clone();
        Some(finite_diff_check(
            &mut dis.store,
            |store, with_grad| {
                let (values, grads) = store.parts_mut();
                let loss = exid_objective(&nets, values, with_grad.then_some(grads), &bv).expect("exid loss");
                if with_grad {
                    scale_grads(store, scale);
                }
                loss
            },
            opts.eps,
            opts.probes,
            &mut probe_rng,
        ))
    } else {
        None
    };
    checks.push(LossCheck {
        name: "L_exid",
        report: exid,
    });
    Ok(checks)
}

fn scale_grads(store: &mut crate::numeric::params::ParamStore, scale: f64) {
    if scale == 1.0 {
        return;
    }
    let ids: Vec<_> = store.values().ids().collect();
    for id in ids {
        store.grads_mut().get_mut(id).iter_mut().for_each(|g| *g *= scale);
    }
}
