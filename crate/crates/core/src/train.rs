//! Training loop: alternating approximator and model updates per batch.

use crate::config::Config;
use crate::data::batch::make_batches;
use crate::data::dataset::Dataset;
use crate::data::triples::Split;
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalOptions};
use crate::exid::Disentangler;
use crate::modality::Modality;
use crate::model::{LossTerms, ModelSpec, Momok};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::params::AdamConfig;
use crate::numeric::rng::{Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Summed channel loss per train triple.
    pub kgc: f64,
    /// Mean CLUB penalty per batch.
    pub club: f64,
    /// Mean approximator loss per batch.
    pub exid: f64,
    pub valid_mrr: Option<f64>,
    /// Per-channel loss per train triple.
    pub channels: Vec<(Modality, f64)>,
}

impl EpochRecord {
    /// `epoch<TAB>L_kgc<TAB>L_club<TAB>L_exid<TAB>valid_MRR`; a missing
    /// validation value is written as `-`.
    pub fn trace_line(&self) -> String {
        let valid = self.valid_mrr.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{valid}",
            self.epoch, self.kgc, self.club, self.exid
        )
    }
}

pub fn trace_text(records: &[EpochRecord]) -> String {
    records.iter().map(|r| r.trace_line() + "\n").collect()
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Stepwise trainer; [`train_run`] drives it to completion.
pub struct Trainer<'a> {
    pub config: Config,
    pub data: &'a Dataset,
    pub model: Momok,
    pub disentangler: Option<Disentangler>,
    pub trace: Vec<EpochRecord>,
    best: Option<(f64, usize, Checkpoint)>,
    adam: AdamConfig,
    q_adam: AdamConfig,
    step: u64,
    q_step: u64,
    noise_rng: Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &Config, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let spec = ModelSpec::from_config(config, data)?;
        let model = Momok::new(spec, config.seed)?;
        let disentangler = config.use_exid.then(|| {
            let mut rng = Rng::for_substream(config.seed, Stream::Init, 1);
            Disentangler::new(
                &config.modalities,
                config.dim,
                config.hidden(),
                config.club_normalized,
                &mut rng,
            )
        });
        Ok(Self {
            config: config.clone(),
            data,
            model,
            disentangler,
            trace: Vec::new(),
            best: None,
            adam: AdamConfig::with_lr(config.lr),
            q_adam: AdamConfig::with_lr(config.q_lr()),
            step: 0,
            q_step: 0,
            noise_rng: Rng::for_stream(config.seed, Stream::Gating),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.trace.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.model.to_checkpoint(self.disentangler.as_ref())
    }

    /// Best-validation checkpoint so far, or the current one if validation
    /// never ran.
    pub fn best_checkpoint(&self) -> Checkpoint {
        self.best
            .as_ref()
            .map_or_else(|| self.checkpoint(), |(_, _, c)| c.clone())
    }

    /// `(valid MRR, epoch)` of the best checkpoint.
    pub fn best_epoch(&self) -> Option<(f64, usize)> {
        self.best.as_ref().map(|(m, e, _)| (*m, *e))
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.trace.len() + 1;
        let cfg = &self.config;
        let data = self.data;
        let batches = make_batches(&data.store, cfg.batch_size, epoch_seed(cfg.seed, epoch))?;
        let channels = self.model.spec().channels();
        let mut channel_sums = vec![0.0; channels.len()];
        let (mut club_sum, mut exid_sum) = (0.0, 0.0);
        let n = self.model.spec().num_entities;
        for (b, batch) in batches.iter().enumerate() {
            let where_ = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} at epoch {epoch}, batch {}", b + 1)),
                other => other,
            };
            let noise = self.model.arch.draw_noise(n, &mut self.noise_rng);
            let views = self
                .model
                .arch
                .all_views(self.model.store.values(), &data.features, noise.as_deref())?;
            if let Some(dis) = self.disentangler.as_mut() {
                let bv = self.model.arch.batch_views(&views, batch);
                let mut last = 0.0;
                for _ in 0..cfg.exid_steps {
                    self.q_step += 1;
                    last = dis.step(&bv, &self.q_adam, self.q_step).map_err(where_)?;
                    if !last.is_finite() {
                        return Err(where_(Error::Numeric("non-finite L_exid".into())));
                    }
                }
                exid_sum += last;
            }
            let terms = LossTerms {
                kgc: true,
                club: self.disentangler.as_ref().map(|d| (d, cfg.lambda)),
            };
            self.model.store.zero_grads();
            let (values, grads) = self.model.store.parts_mut();
            let loss = self
                .model
                .arch
                .loss_with_views(values, Some(grads), &views, batch, terms)
                .map_err(where_)?;
            self.step += 1;
            self.model.store.adam_step(&self.adam, self.step).map_err(where_)?;
            for (sum, (_, l)) in channel_sums.iter_mut().zip(&loss.channels) {
                *sum += l;
            }
            club_sum += loss.club;
        }
        let triples = data.store.train.len() as f64;
        let nb = batches.len().max(1) as f64;
        let channels: Vec<(Modality, f64)> = channels
            .into_iter()
            .zip(channel_sums.iter().map(|s| s / triples))
            .collect();
        let validate = cfg.eval_every > 0 && epoch.is_multiple_of(cfg.eval_every) && !data.store.valid.is_empty();
        let valid_mrr = if validate {
            let opts = EvalOptions {
                tie_split: cfg.tie_split,
            };
            Some(evaluate_split(&self.model, data, Split::Valid, opts)?.mrr)
        } else {
            None
        };
        if let Some(mrr) = valid_mrr {
            if self.best.as_ref().is_none_or(|(best, _, _)| mrr > *best) {
                self.best = Some((mrr, epoch, self.checkpoint()));
            }
        }
        let record = EpochRecord {
            epoch,
            kgc: channels.iter().map(|(_, l)| l).sum(),
            club: club_sum / nb,
            exid: exid_sum / nb,
            valid_mrr,
            channels,
        };
        self.trace.push(record.clone());
        Ok(record)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Momok,
    pub disentangler: Option<Disentangler>,
    pub trace: Vec<EpochRecord>,
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub best_epoch: Option<(f64, usize)>,
}

/// Trains for `config.epochs` epochs.
pub fn train_run(config: &Config, data: &Dataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data)?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(TrainOutcome {
        last: trainer.checkpoint(),
        best: trainer.best_checkpoint(),
        best_epoch: trainer.best_epoch(),
        trace: trainer.trace,
        model: trainer.model,
        disentangler: trainer.disentangler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::toy5;
    use crate::data::FeatureOptions;

    fn toy_config() -> Config {
        Config {
            dim: 8,
            hidden: Some(8),
            batch_size: 4,
            epochs: 3,
            lr: 1e-2,
            ..Config::default()
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let data = toy5().build(&FeatureOptions::default()).unwrap();
        let a = train_run(&toy_config(), &data).unwrap();
        let b = train_run(&toy_config(), &data).unwrap();
        assert_eq!(a.last.to_bytes(), b.last.to_bytes());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 3);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let data = toy5().build(&FeatureOptions::default()).unwrap();
        let cfg = Config {
            epochs: 0,
            ..toy_config()
        };
        let out = train_run(&cfg, &data).unwrap();
        let init = Trainer::new(&cfg, &data).unwrap().checkpoint();
        assert_eq!(out.last.to_bytes(), init.to_bytes());
    }

    #[test]
    fn zero_lambda_without_exid_matches_plain_kgc() {
        let data = toy5().build(&FeatureOptions::default()).unwrap();
        let plain = Config {
            use_exid: false,
            ..toy_config()
        };
        let zero = Config {
            lambda: 0.0,
            ..plain.clone()
        };
        let a = train_run(&plain, &data).unwrap();
        let b = train_run(&zero, &data).unwrap();
        assert_eq!(a.last.to_bytes(), b.last.to_bytes());
        assert!(a.trace.iter().all(|r| r.club == 0.0 && r.exid == 0.0));
    }

    #[test]
    fn joint_channel_absent_when_disabled() {
        let data = toy5().build(&FeatureOptions::default()).unwrap();
        let cfg = Config {
            use_joint_training: false,
            epochs: 1,
            ..toy_config()
        };
        let out = train_run(&cfg, &data).unwrap();
        let chans: Vec<Modality> = out.trace[0].channels.iter().map(|(m, _)| *m).collect();
        assert_eq!(chans, vec![Modality::Structure, Modality::Image, Modality::Text]);
    }

    #[test]
    fn trace_line_format() {
        let r = EpochRecord {
            epoch: 3,
            kgc: 1.5,
            club: 0.0,
            exid: -2.25,
            valid_mrr: None,
            channels: vec![],
        };
        assert_eq!(r.trace_line(), "3\t1.500000\t0.000000\t-2.250000\t-");
    }
}
