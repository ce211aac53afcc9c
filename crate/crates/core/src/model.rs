//! The assembled model: experts per base modality, relation-tempered gating,
//! joint fusion and per-channel Tucker scorers over one parameter store.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use crate::config::Config;
use crate::data::batch::TripleBatch;
use crate::data::dataset::Dataset;
use crate::data::features::FeatureTable;
use crate::error::{Error, Result};
use crate::exid::{BatchViews, Disentangler};
use crate::modality::{parse_modalities, Modality};
use crate::mujod::{pair_cross_entropy, JointForward, JointFusion, ModalityScorer};
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::ops::sigmoid;
use crate::numeric::params::{Grads, Init, ParamId, ParamStore, Values};
use crate::numeric::rng::{Rng, Stream};
use crate::remoke::{
    fuse_views, gate_distribution, gate_fuse_backward, ExpertForward, ModalityExperts, NoiseDraws, RelationTemps,
};

/// Everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub num_entities: usize,
    pub num_relations: usize,
    pub dim: usize,
    pub rel_dim: usize,
    pub hidden: usize,
    pub experts: usize,
    pub modalities: Vec<Modality>,
    pub feature_dims: Vec<(Modality, usize)>,
    pub use_noise: bool,
    pub use_relation_temperature: bool,
    pub per_modality_temperature: bool,
    pub use_adaptive_fusion: bool,
    pub use_joint_training: bool,
    pub project_structure: bool,
    pub club_normalized: bool,
}

impl ModelSpec {
    pub fn from_config(cfg: &Config, data: &Dataset) -> Result<Self> {
        let mut feature_dims = Vec::new();
        for &m in cfg.modalities.iter().filter(|m| m.has_features()) {
            let table = data
                .features(m)
                .ok_or_else(|| Error::Validation(format!("modality {m} is enabled but no {m} features were loaded")))?;
            feature_dims.push((m, table.dim));
        }
        Ok(Self {
            num_entities: data.store.num_entities(),
            num_relations: data.store.num_relations(),
            dim: cfg.dim,
            rel_dim: cfg.rel_dim(),
            hidden: cfg.hidden(),
            experts: cfg.experts,
            modalities: cfg.modalities.clone(),
            feature_dims,
            use_noise: cfg.use_noise,
            use_relation_temperature: cfg.use_relation_temperature,
            per_modality_temperature: cfg.per_modality_temperature,
            use_adaptive_fusion: cfg.use_adaptive_fusion,
            use_joint_training: cfg.use_joint_training,
            project_structure: cfg.project_structure,
            club_normalized: cfg.club_normalized,
        })
    }

    /// The joint channel exists only with two or more base modalities.
    pub fn joint_enabled(&self) -> bool {
        self.use_joint_training && self.modalities.len() >= 2
    }

    /// Scored channels: the base modalities, then the joint channel if enabled.
    pub fn channels(&self) -> Vec<Modality> {
        let mut c = self.modalities.clone();
        if self.joint_enabled() {
            c.push(Modality::Joint);
        }
        c
    }

    pub fn feature_dim(&self, m: Modality) -> Option<usize> {
        self.feature_dims.iter().find(|(fm, _)| *fm == m).map(|(_, d)| *d)
    }

    pub fn to_header(&self) -> BTreeMap<String, String> {
        let mods = |ms: &[Modality]| ms.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
        let mut h = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            h.insert(k.to_string(), v);
        };
        put("num_entities", self.num_entities.to_string());
        put("num_relations", self.num_relations.to_string());
        put("dim", self.dim.to_string());
        put("rel_dim", self.rel_dim.to_string());
        put("hidden", self.hidden.to_string());
        put("experts", self.experts.to_string());
        put("modalities", mods(&self.modalities));
        for (m, d) in &self.feature_dims {
            put(&format!("feature_dim.{}", m.name()), d.to_string());
        }
        put("use_noise", self.use_noise.to_string());
        put("use_relation_temperature", self.use_relation_temperature.to_string());
        put("per_modality_temperature", self.per_modality_temperature.to_string());
        put("use_adaptive_fusion", self.use_adaptive_fusion.to_string());
        put("use_joint_training", self.use_joint_training.to_string());
        put("project_structure", self.project_structure.to_string());
        put("club_normalized", self.club_normalized.to_string());
        h
    }

    pub fn from_header(h: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            h.get(k)
                .ok_or_else(|| Error::Compat(format!("checkpoint header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Compat(format!("bad `{k}` in checkpoint header")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::Compat(format!("bad `{k}` in checkpoint header")))
        };
        let modalities = parse_modalities(get("modalities")?).map_err(|e| Error::Compat(e.to_string()))?;
        let mut feature_dims = Vec::new();
        for &m in modalities.iter().filter(|m| m.has_features()) {
            feature_dims.push((m, num(&format!("feature_dim.{}", m.name()))?));
        }
        Ok(Self {
            num_entities: num("num_entities")?,
            num_relations: num("num_relations")?,
            dim: num("dim")?,
            rel_dim: num("rel_dim")?,
            hidden: num("hidden")?,
            experts: num("experts")?,
            modalities,
            feature_dims,
            use_noise: flag("use_noise")?,
            use_relation_temperature: flag("use_relation_temperature")?,
            per_modality_temperature: flag("per_modality_temperature")?,
            use_adaptive_fusion: flag("use_adaptive_fusion")?,
            use_joint_training: flag("use_joint_training")?,
            project_structure: flag("project_structure")?,
            club_normalized: flag("club_normalized")?,
        })
    }

    /// Checks that `data` has the vocabulary sizes and feature widths this
    /// model was built for.
    pub fn check_compatible(&self, data: &Dataset) -> Result<()> {
        let (e, r) = (data.store.num_entities(), data.store.num_relations());
        if e != self.num_entities || r != self.num_relations {
            return Err(Error::Compat(format!(
                "model expects {} entities and {} relations, data has {e} and {r}",
                self.num_entities, self.num_relations
            )));
        }
        for (m, d) in &self.feature_dims {
            match data.features(*m) {
                Some(t) if t.dim == *d => {}
                Some(t) => {
                    return Err(Error::Compat(format!(
                        "model expects {d}-dim {m} features, data has {}",
                        t.dim
                    )))
                }
                None => return Err(Error::Compat(format!("model expects {m} features, data has none"))),
            }
        }
        Ok(())
    }
}

/// Parameter layout of a model; holds ids into a [`ParamStore`] but no values.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub spec: ModelSpec,
    pub structure: Option<ParamId>,
    pub experts: Vec<ModalityExperts>,
    pub temps: RelationTemps,
    pub fusion: Option<JointFusion>,
    pub scorers: Vec<ModalityScorer>,
}

/// Expert outputs for a set of entity rows.
#[derive(Debug, Clone)]
pub struct EntityViews {
    pub entities: Vec<usize>,
    pub forwards: Vec<ExpertForward>,
}

impl EntityViews {
    /// `K` view matrices of modality slot `slot`, restricted to `rows`.
    pub fn select(&self, slot: usize, rows: &[usize]) -> Vec<Array2<f64>> {
        let f = &self.forwards[slot];
        (0..f.num_experts()).map(|i| f.view(i).select(Axis(0), rows)).collect()
    }
}

/// Relation-specific embeddings of every viewed entity.
#[derive(Debug, Clone)]
pub struct RelationForward {
    pub relation: usize,
    pub temperatures: Vec<f64>,
    /// Expert weights per base modality slot, one row per entity.
    pub weights: Vec<Array2<f64>>,
    pub fused: Vec<Array2<f64>>,
    pub joint: Option<JointForward>,
}

impl RelationForward {
    /// Entity table of channel `c` (base slots first, then joint).
    pub fn table(&self, c: usize) -> &Array2<f64> {
        if c < self.fused.len() {
            &self.fused[c]
        } else {
            &self.joint.as_ref().expect("joint channel").output
        }
    }
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLoss {
    pub channels: Vec<(Modality, f64)>,
    pub club: f64,
}

impl StepLoss {
    pub fn kgc(&self) -> f64 {
        self.channels.iter().map(|(_, l)| l).sum()
    }

    pub fn channel(&self, m: Modality) -> Option<f64> {
        self.channels.iter().find(|(c, _)| *c == m).map(|(_, l)| *l)
    }
}

/// Which terms a loss evaluation includes.
#[derive(Clone, Copy)]
pub struct LossTerms<'a> {
    pub kgc: bool,
    /// Approximators and the CLUB weight.
    pub club: Option<(&'a Disentangler, f64)>,
}

impl Architecture {
    pub fn build(spec: ModelSpec, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        if spec.modalities.is_empty() || spec.experts == 0 || spec.dim == 0 {
            return Err(Error::Config(
                "model needs a modality, an expert and a positive dim".into(),
            ));
        }
        let structure = spec.modalities.contains(&Modality::Structure).then(|| {
            store.add(
                "structure.embedding",
                &[spec.num_entities, spec.dim],
                Init::Normal(0.02),
                rng,
            )
        });
        let mut experts = Vec::new();
        for &m in &spec.modalities {
            let input = match m {
                Modality::Structure => spec.dim,
                _ => spec
                    .feature_dim(m)
                    .ok_or_else(|| Error::Config(format!("no feature dim for {m}")))?,
            };
            experts.push(ModalityExperts::new(
                store,
                m,
                input,
                spec.hidden,
                spec.dim,
                spec.experts,
                rng,
            ));
        }
        let rows = if spec.use_relation_temperature {
            spec.num_relations
        } else {
            1
        };
        let cols = if spec.per_modality_temperature {
            spec.modalities.len()
        } else {
            1
        };
        let temps = RelationTemps::new(store, rows, cols, rng);
        let fusion = spec.joint_enabled().then(|| {
            JointFusion::new(
                store,
                &spec.modalities,
                spec.dim,
                spec.hidden,
                spec.use_adaptive_fusion,
                spec.project_structure,
                rng,
            )
        });
        let scorers = spec
            .channels()
            .into_iter()
            .map(|c| ModalityScorer::new(store, c, spec.num_relations, spec.dim, spec.rel_dim, rng))
            .collect();
        Ok(Self {
            spec,
            structure,
            experts,
            temps,
            fusion,
            scorers,
        })
    }

    /// Raw input rows of modality slot `slot` for `entities`.
    pub fn raw_input(
        &self,
        values: &Values,
        features: &[FeatureTable],
        slot: usize,
        entities: &[usize],
    ) -> Result<Array2<f64>> {
        let m = self.spec.modalities[slot];
        let (dim, source): (usize, Box<dyn Fn(usize) -> Vec<f64>>) = match m {
            Modality::Structure => {
                let table = values.get(self.structure.expect("structure table"));
                let d = self.spec.dim;
                (
                    d,
                    Box::new(move |e| table[e * d..(e + 1) * d].iter().map(|&v| v as f64).collect()),
                )
            }
            _ => {
                let t = features
                    .iter()
                    .find(|t| t.modality == m)
                    .ok_or_else(|| Error::Compat(format!("model needs {m} features")))?;
                if Some(t.dim) != self.spec.feature_dim(m) || t.num_entities() != self.spec.num_entities {
                    return Err(Error::Compat(format!("{m} features do not match the model")));
                }
                (t.dim, Box::new(move |e| t.row(e).iter().map(|&v| v as f64).collect()))
            }
        };
        let mut out = Array2::zeros((entities.len(), dim));
        for (mut row, &e) in out.rows_mut().into_iter().zip(entities) {
            row.assign(&Array1::from(source(e)));
        }
        Ok(out)
    }

    /// Standard-normal gating perturbations for `rows` entities per slot, or
    /// `None` when noise is disabled.
    pub fn draw_noise(&self, rows: usize, rng: &mut Rng) -> Option<Vec<NoiseDraws>> {
        self.spec.use_noise.then(|| {
            self.experts
                .iter()
                .map(|e| Array2::from_shape_simple_fn((rows, e.num_experts()), || rng.normal()))
                .collect()
        })
    }

    pub fn views(
        &self,
        values: &Values,
        features: &[FeatureTable],
        entities: &[usize],
        noise: Option<&[NoiseDraws]>,
    ) -> Result<EntityViews> {
        let mut forwards = Vec::with_capacity(self.experts.len());
        for (slot, experts) in self.experts.iter().enumerate() {
            let input = self.raw_input(values, features, slot, entities)?;
            forwards.push(experts.forward(values, &input, noise.map(|n| &n[slot])));
        }
        Ok(EntityViews {
            entities: entities.to_vec(),
            forwards,
        })
    }

    pub fn relation_forward(&self, values: &Values, views: &EntityViews, relation: usize) -> Result<RelationForward> {
        let mut temperatures = Vec::new();
        let mut weights = Vec::new();
        let mut fused = Vec::new();
        for (slot, fwd) in views.forwards.iter().enumerate() {
            let tau = self.temps.temperature(values, relation, slot);
            let w = gate_distribution(&fwd.logits, tau);
            let vs: Vec<&Array2<f64>> = (0..fwd.num_experts()).map(|i| fwd.view(i)).collect();
            fused.push(fuse_views(&vs, &w));
            temperatures.push(tau);
            weights.push(w);
        }
        let joint = match &self.fusion {
            Some(f) => {
                let refs: Vec<&Array2<f64>> = fused.iter().collect();
                Some(f.forward(values, &refs)?)
            }
            None => None,
        };
        Ok(RelationForward {
            relation,
            temperatures,
            weights,
            fused,
            joint,
        })
    }

    /// All views of every entity; the loss requires the full candidate set.
    pub fn all_views(
        &self,
        values: &Values,
        features: &[FeatureTable],
        noise: Option<&[NoiseDraws]>,
    ) -> Result<EntityViews> {
        let all: Vec<usize> = (0..self.spec.num_entities).collect();
        self.views(values, features, &all, noise)
    }

    /// Batch-entity views in the layout the approximators consume.
    pub fn batch_views(&self, views: &EntityViews, batch: &TripleBatch) -> BatchViews {
        self.spec
            .modalities
            .iter()
            .enumerate()
            .map(|(slot, &m)| (m, views.select(slot, &batch.entities)))
            .collect()
    }

    /// Evaluates the selected loss terms on `batch` from precomputed views of
    /// all entities, accumulating gradients into `grads` when given.
    pub fn loss_with_views(
        &self,
        values: &Values,
        mut grads: Option<&mut Grads>,
        views: &EntityViews,
        batch: &TripleBatch,
        terms: LossTerms<'_>,
    ) -> Result<StepLoss> {
        let n = self.spec.num_entities;
        if views.entities.len() != n {
            return Err(Error::Contract("loss needs views of every entity".into()));
        }
        let want_grad = grads.is_some();
        let channels = self.spec.channels();
        let slots = self.experts.len();
        let mut channel_loss = vec![0.0; channels.len()];
        let mut d_views: Vec<Vec<Array2<f64>>> = views
            .forwards
            .iter()
            .map(|f| {
                (0..f.num_experts())
                    .map(|i| Array2::zeros(f.view(i).raw_dim()))
                    .collect()
            })
            .collect();
        let mut d_logits: Vec<Array2<f64>> = views
            .forwards
            .iter()
            .map(|f| Array2::zeros(f.logits.raw_dim()))
            .collect();

        if terms.kgc {
            let mut by_relation: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
            for t in &batch.triples {
                by_relation.entry(t.relation).or_default().push((t.head, t.tail));
            }
            for (&r, pairs) in &by_relation {
                let rf = self.relation_forward(values, views, r)?;
                let mut d_fused: Vec<Array2<f64>> = rf.fused.iter().map(|f| Array2::zeros(f.raw_dim())).collect();
                let mut d_joint = None;
                for (c, scorer) in self.scorers.iter().enumerate() {
                    let m = scorer.relation_matrix(values, r);
                    let ce = pair_cross_entropy(rf.table(c), &m, pairs, want_grad);
                    channel_loss[c] += ce.loss;
                    if let Some(g) = grads.as_deref_mut() {
                        scorer.relation_matrix_backward(values, r, ce.d_matrix.as_ref().expect("grad"), g);
                        let dt = ce.d_table.expect("grad");
                        if c < slots {
                            d_fused[c] += &dt;
                        } else {
                            d_joint = Some(dt);
                        }
                    }
                }
                let Some(g) = grads.as_deref_mut() else { continue };
                if let (Some(dj), Some(fusion), Some(jf)) = (d_joint, &self.fusion, &rf.joint) {
                    for (slot, d) in fusion.backward(values, jf, &dj, g).into_iter().enumerate() {
                        d_fused[slot] += &d;
                    }
                }
                for slot in 0..slots {
                    let fwd = &views.forwards[slot];
                    let vs: Vec<&Array2<f64>> = (0..fwd.num_experts()).map(|i| fwd.view(i)).collect();
                    let tau = rf.temperatures[slot];
                    let gf = gate_fuse_backward(&vs, &fwd.logits, &rf.weights[slot], tau, &d_fused[slot]);
                    for (acc, d) in d_views[slot].iter_mut().zip(&gf.d_views) {
                        *acc += d;
                    }
                    d_logits[slot] += &gf.d_logits;
                    let idx = self.temps.index(r, slot);
                    g.get_mut(self.temps.eps)[idx] += gf.d_temperature * tau * (1.0 - tau);
                }
            }
        }

        let mut club = 0.0;
        if let Some((dis, lambda)) = terms.club {
            if batch.entities.len() >= 2 && self.spec.experts >= 2 {
                let bv = self.batch_views(views, batch);
                let (value, d) = dis.club_loss(&bv)?;
                club = value;
                if want_grad {
                    for (slot, per_view) in d.into_iter().enumerate() {
                        for (i, dv) in per_view.into_iter().enumerate() {
                            for (row, &e) in dv.rows().into_iter().zip(&batch.entities) {
                                d_views[slot][i].row_mut(e).scaled_add(lambda, &row);
                            }
                        }
                    }
                }
            }
        }

        if let Some(g) = grads {
            for (slot, experts) in self.experts.iter().enumerate() {
                let d_input = experts.backward(
                    values,
                    &views.forwards[slot],
                    std::mem::take(&mut d_views[slot]),
                    &d_logits[slot],
                    g,
                );
                if experts.modality == Modality::Structure {
                    g.add_mat(self.structure.expect("structure table"), &d_input);
                }
            }
        }

        let loss = StepLoss {
            channels: channels.into_iter().zip(channel_loss).collect(),
            club,
        };
        for (m, l) in &loss.channels {
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite L_{}", m.name())));
            }
        }
        if !loss.club.is_finite() {
            return Err(Error::Numeric("non-finite L_club".into()));
        }
        Ok(loss)
    }
}

/// A model: its layout plus parameter values.
#[derive(Debug, Clone)]
pub struct Momok {
    pub arch: Architecture,
    pub store: ParamStore,
}

impl Momok {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = Rng::for_stream(seed, Stream::Init);
        let arch = Architecture::build(spec, &mut store, &mut rng)?;
        Ok(Self { arch, store })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.arch.spec
    }

    pub fn values(&self) -> &Values {
        self.store.values()
    }

    /// Loss of one channel on `batch` in eval mode.
    pub fn modality_loss(&self, features: &[FeatureTable], batch: &TripleBatch, channel: Modality) -> Result<f64> {
        let loss = self.eval_loss(features, batch)?;
        loss.channel(channel)
            .ok_or_else(|| Error::Contract(format!("channel {channel} is not scored by this model")))
    }

    /// Summed loss over every scored channel, eval mode.
    pub fn kgc_loss(&self, features: &[FeatureTable], batch: &TripleBatch) -> Result<f64> {
        Ok(self.eval_loss(features, batch)?.kgc())
    }

    fn eval_loss(&self, features: &[FeatureTable], batch: &TripleBatch) -> Result<StepLoss> {
        let views = self.arch.all_views(self.values(), features, None)?;
        self.arch
            .loss_with_views(self.values(), None, &views, batch, LossTerms { kgc: true, club: None })
    }

    pub fn scorer<'a>(&'a self, features: &[FeatureTable]) -> Result<Scorer<'a>> {
        Ok(Scorer {
            model: self,
            views: self.arch.all_views(self.values(), features, None)?,
        })
    }

    /// Ensemble score summed over every channel, eval mode.
    pub fn inference_score(&self, features: &[FeatureTable], head: usize, relation: usize, tail: usize) -> Result<f64> {
        let entities = if head == tail {
            vec![head]
        } else {
            vec![head.min(tail), head.max(tail)]
        };
        let views = self.arch.views(self.values(), features, &entities, None)?;
        let rf = self.arch.relation_forward(self.values(), &views, relation)?;
        let row = |e: usize| entities.iter().position(|x| *x == e).expect("viewed");
        let mut total = 0.0;
        for (c, scorer) in self.arch.scorers.iter().enumerate() {
            let m = scorer.relation_matrix(self.values(), relation);
            let table = rf.table(c);
            total += table.row(row(head)).dot(&m.dot(&table.row(row(tail))));
        }
        Ok(total)
    }

    pub fn to_checkpoint(&self, dis: Option<&Disentangler>) -> Checkpoint {
        let mut ckpt = Checkpoint {
            header: self.spec().to_header(),
            groups: Vec::new(),
        };
        ckpt.header.insert("approximators".into(), dis.is_some().to_string());
        ckpt.push_store("model.", &self.store);
        if let Some(d) = dis {
            ckpt.push_store("q.", &d.store);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Option<Disentangler>)> {
        let spec = ModelSpec::from_header(&ckpt.header)?;
        let mut model = Momok::new(spec, 0)?;
        ckpt.restore_store("model.", &mut model.store)?;
        let dis = if ckpt.header.get("approximators").map(String::as_str) == Some("true") {
            let s = model.spec();
            let mut d = Disentangler::new(&s.modalities, s.dim, s.hidden, s.club_normalized, &mut Rng::new(0));
            ckpt.restore_store("q.", &mut d.store)?;
            Some(d)
        } else {
            None
        };
        Ok((model, dis))
    }
}

/// Eval-mode scoring with the expert views of every entity computed once.
pub struct Scorer<'a> {
    pub model: &'a Momok,
    pub views: EntityViews,
}

impl Scorer<'_> {
    pub fn relation(&self, relation: usize) -> Result<RelationScorer> {
        let values = self.model.values();
        let forward = self.model.arch.relation_forward(values, &self.views, relation)?;
        let matrices = self
            .model
            .arch
            .scorers
            .iter()
            .map(|s| s.relation_matrix(values, relation))
            .collect();
        Ok(RelationScorer {
            channels: self.model.spec().channels(),
            forward,
            matrices,
        })
    }
}

/// Candidate scoring under one relation.
pub struct RelationScorer {
    pub channels: Vec<Modality>,
    pub forward: RelationForward,
    pub matrices: Vec<Array2<f64>>,
}

impl RelationScorer {
    fn channel_range(&self, channel: Option<usize>) -> std::ops::Range<usize> {
        match channel {
            Some(c) => c..c + 1,
            None => 0..self.channels.len(),
        }
    }

    /// Scores of `(head, r, e)` for every entity `e`; `channel` selects one
    /// channel, `None` sums all of them.
    pub fn tail_scores(&self, head: usize, channel: Option<usize>) -> Array1<f64> {
        let mut out = Array1::zeros(self.forward.table(0).nrows());
        for c in self.channel_range(channel) {
            let table = self.forward.table(c);
            let q = table.row(head).dot(&self.matrices[c]);
            out += &table.dot(&q);
        }
        out
    }

    /// Scores of `(e, r, tail)` for every entity `e`.
    pub fn head_scores(&self, tail: usize, channel: Option<usize>) -> Array1<f64> {
        let mut out = Array1::zeros(self.forward.table(0).nrows());
        for c in self.channel_range(channel) {
            let table = self.forward.table(c);
            let q = self.matrices[c].dot(&table.row(tail));
            out += &table.dot(&q);
        }
        out
    }

    /// Score of one triple under `channel` (or the sum).
    pub fn score(&self, head: usize, tail: usize, channel: Option<usize>) -> f64 {
        self.channel_range(channel)
            .map(|c| {
                let table = self.forward.table(c);
                table.row(head).dot(&self.matrices[c].dot(&table.row(tail)))
            })
            .sum()
    }
}

/// Sigmoid temperature values of every relation for slot `slot`.
pub fn temperatures(arch: &Architecture, values: &Values, slot: usize) -> Vec<f64> {
    (0..arch.spec.num_relations)
        .map(|r| sigmoid(values.get(arch.temps.eps)[arch.temps.index(r, slot)] as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::toy5;
    use crate::data::FeatureOptions;

    fn toy(cfg: &Config) -> (Dataset, Momok) {
        let data = toy5().build(&FeatureOptions::default()).unwrap();
        let spec = ModelSpec::from_config(cfg, &data).unwrap();
        let model = Momok::new(spec, cfg.seed).unwrap();
        (data, model)
    }

    fn small() -> Config {
        Config {
            dim: 6,
            hidden: Some(5),
            rel_dim: Some(4),
            ..Config::default()
        }
    }

    #[test]
    fn channels_follow_flags() {
        let cfg = small();
        let (_, m) = toy(&cfg);
        assert_eq!(
            m.spec().channels(),
            vec![Modality::Structure, Modality::Image, Modality::Text, Modality::Joint]
        );
        let cfg = Config {
            use_joint_training: false,
            ..small()
        };
        let (_, m) = toy(&cfg);
        assert_eq!(m.spec().channels().len(), 3);
        let cfg = Config {
            modalities: vec![Modality::Image],
            ..small()
        };
        let (_, m) = toy(&cfg);
        assert_eq!(m.spec().channels(), vec![Modality::Image]);
        assert!(m.arch.structure.is_none());
    }

    #[test]
    fn inference_score_is_channel_sum_and_deterministic() {
        let (data, model) = toy(&small());
        let scorer = model.scorer(&data.features).unwrap();
        let rs = scorer.relation(1).unwrap();
        let parts: f64 = (0..rs.channels.len()).map(|c| rs.score(2, 4, Some(c))).sum();
        let a = model.inference_score(&data.features, 2, 1, 4).unwrap();
        let b = model.inference_score(&data.features, 2, 1, 4).unwrap();
        assert_eq!(a, b);
        assert!((a - parts).abs() < 1e-12);
        assert!((rs.tail_scores(2, None)[4] - a).abs() < 1e-12);
        assert!((rs.head_scores(4, None)[2] - a).abs() < 1e-12);
    }

    #[test]
    fn zeroed_cores_leave_only_structure() {
        let (data, mut model) = toy(&small());
        for s in model.arch.scorers.clone() {
            if s.channel != Modality::Structure {
                model
                    .store
                    .values_mut()
                    .get_mut(s.core)
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        let rs = model.scorer(&data.features).unwrap().relation(0).unwrap();
        assert!((model.inference_score(&data.features, 0, 0, 3).unwrap() - rs.score(0, 3, Some(0))).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_restores_scores() {
        let (data, model) = toy(&small());
        let dis = Disentangler::new(&model.spec().modalities, 6, 5, true, &mut Rng::new(3));
        let bytes = model.to_checkpoint(Some(&dis)).to_bytes();
        let (back, q) = Momok::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint(q.as_ref()).to_bytes(), bytes);
        assert_eq!(
            back.inference_score(&data.features, 1, 0, 2).unwrap(),
            model.inference_score(&data.features, 1, 0, 2).unwrap()
        );
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let (_, model) = toy(&small());
        let other = crate::data::synthetic::latent_mmkg(&Default::default())
            .build(&FeatureOptions::default())
            .unwrap();
        assert!(matches!(model.spec().check_compatible(&other), Err(Error::Compat(_))));
    }
}
