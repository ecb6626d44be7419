//! Training loop, evaluation protocol, fusion ablation and learning-rate
//! sweep.
//!
//! Every episode is drawn from its own generator
//! (`SeededRng::for_episode(seed, stream, counter)`), so episodes can be
//! built and differentiated on worker threads while results are reduced in
//! counter order. Two runs with the same config and seed are bit-identical
//! regardless of thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    init_toy_params, Encoder, EncoderContract, PrecomputedProvider, ToyEncoder, ToyGrads,
    DEFAULT_BUCKETS, DEFAULT_TOY_DIM,
};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, EmbeddingStore};
use crate::model::{add_assign, Episode, Linear, RelationInfo};
use crate::optim::{AdamParams, Optimizer, OptimizerKind};
use crate::protonet::{
    episode_forward, episode_loss_and_grads, EpisodeOutput, FusionKind, FusionStrategy,
    RelationGradient,
};
use crate::sampler::{materialize_episode, sample_episode_spec, EpisodeSpec, SeededRng, Stream};

/// Mixed into the run seed for fusion-layer initialization.
const FUSION_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// An `N-w-K-s` evaluation setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Setting {
    pub n_way: usize,
    pub k_shot: usize,
}

impl Setting {
    pub const fn new(n_way: usize, k_shot: usize) -> Self {
        Setting { n_way, k_shot }
    }

    /// The four settings of the standard FewRel leaderboard.
    pub const STANDARD: [Setting; 4] = [
        Setting::new(5, 1),
        Setting::new(5, 5),
        Setting::new(10, 1),
        Setting::new(10, 5),
    ];
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-w-{}-s", self.n_way, self.k_shot)
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("setting `{s}` is not of the form N-w-K-s"));
        let parts: Vec<&str> = s.trim().split('-').collect();
        match parts.as_slice() {
            [n, "w", k, "s"] => {
                let n_way = n.parse().map_err(|_| bad())?;
                let k_shot = k.parse().map_err(|_| bad())?;
                if n_way == 0 || k_shot == 0 {
                    return Err(bad());
                }
                Ok(Setting { n_way, k_shot })
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for Setting {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Toy,
    Precomputed,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub batch_episodes: usize,
    pub train_iters: usize,
    pub eval_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub fusion: FusionKind,
    pub encoder: EncoderKind,
    /// Embedding dimension `d`; for the precomputed encoder it must match the store.
    pub dim: usize,
    pub buckets: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub relation_grad: RelationGradient,
    /// Settings evaluated after training; empty means `n_way-w-k_shot-s` only.
    pub eval_settings: Vec<Setting>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamParams::default();
        TrainConfig {
            n_way: 5,
            k_shot: 1,
            q_query: 1,
            batch_episodes: 4,
            train_iters: 2000,
            eval_iters: 500,
            learning_rate: 1e-2,
            seed: 42,
            fusion: FusionKind::DirectAdd,
            encoder: EncoderKind::Toy,
            dim: DEFAULT_TOY_DIM,
            buckets: DEFAULT_BUCKETS,
            optimizer: OptimizerKind::Adam,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            relation_grad: RelationGradient::Through,
            eval_settings: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("q_query", self.q_query),
            ("batch_episodes", self.batch_episodes),
            ("eval_iters", self.eval_iters),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || self.adam_eps <= 0.0
        {
            return Err(Error::Config(
                "adam betas must lie in [0, 1) and eps be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn setting(&self) -> Setting {
        Setting::new(self.n_way, self.k_shot)
    }

    pub fn eval_settings(&self) -> Vec<Setting> {
        if self.eval_settings.is_empty() {
            vec![self.setting()]
        } else {
            self.eval_settings.clone()
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// A dataset together with the relation descriptions of its classes.
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub data: &'a Dataset,
    pub relations: &'a BTreeMap<String, RelationInfo>,
}

impl<'a> Task<'a> {
    pub fn new(data: &'a Dataset, relations: &'a BTreeMap<String, RelationInfo>) -> Self {
        Task { data, relations }
    }
}

/// Encoder plus fusion rule: everything a checkpoint stores.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub fusion: FusionStrategy,
}

impl Model {
    /// Fresh parameters for `cfg`. The precomputed encoder needs `store`.
    pub fn init(cfg: &TrainConfig, store: Option<&EmbeddingStore>) -> Result<Self> {
        cfg.validate()?;
        let encoder = match cfg.encoder {
            EncoderKind::Toy => Encoder::Toy(ToyEncoder::new(init_toy_params(
                cfg.seed,
                cfg.buckets,
                cfg.dim,
            )?)),
            EncoderKind::Precomputed => {
                let store = store.ok_or_else(|| {
                    Error::Config("precomputed encoder needs an embedding store".into())
                })?;
                Encoder::Precomputed(PrecomputedProvider::new(store.clone(), Some(cfg.dim))?)
            }
        };
        let fusion = cfg.fusion.init(encoder.dim(), cfg.seed ^ FUSION_SEED_SALT);
        Ok(Model { encoder, fusion })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn is_trainable(&self) -> bool {
        self.encoder.is_trainable() || self.fusion.linear().is_some()
    }

    /// Trainable blocks: encoder table, `W_c`, `b_c`, fusion `W`, fusion `b`.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = Vec::new();
        if let Some(toy) = self.encoder.as_toy_mut() {
            blocks.push(&mut toy.params.table);
            blocks.push(&mut toy.params.cls_map.weight);
            blocks.push(&mut toy.params.cls_map.bias);
        }
        if let Some(l) = self.fusion.linear_mut() {
            blocks.push(&mut l.weight);
            blocks.push(&mut l.bias);
        }
        blocks
    }

    pub fn episode(&self, task: Task<'_>, spec: &EpisodeSpec) -> Result<Episode> {
        materialize_episode(spec, task.data, &self.encoder, task.relations)
    }

    /// Mean query loss of one episode and the gradient of every trainable
    /// parameter, chained through the encoder when it is trainable.
    pub fn episode_grads(
        &self,
        task: Task<'_>,
        spec: &EpisodeSpec,
        relation_grad: RelationGradient,
    ) -> Result<(f64, ModelGrads)> {
        let ep = self.episode(task, spec)?;
        let (loss, g) = episode_loss_and_grads(&ep, &self.fusion, relation_grad)?;
        let mut grads = ModelGrads {
            encoder: None,
            fusion: g.fusion,
        };
        if let Some(toy) = self.encoder.as_toy() {
            let mut acc = ToyGrads::zeros(&toy.params);
            let mut queries = g.query.iter();
            for (class, draw) in spec.classes.iter().enumerate() {
                let instances = task
                    .data
                    .instances(&draw.relation_id)
                    .ok_or_else(|| Error::UnknownRelation(draw.relation_id.clone()))?;
                for (shot, &i) in draw.support.iter().enumerate() {
                    toy.backward_instance(&instances[i], &g.support[class][shot], &mut acc);
                }
                for &i in &draw.query {
                    let gq = queries.next().ok_or(Error::EmptyQuery)?;
                    toy.backward_instance(&instances[i], gq, &mut acc);
                }
                let info = &task.relations[&draw.relation_id];
                toy.backward_relation(info, &g.relations[class], &mut acc)?;
            }
            grads.encoder = Some(acc);
        }
        Ok((loss, grads))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: Option<ToyGrads>,
    pub fusion: Option<Linear>,
}

impl ModelGrads {
    fn add(&mut self, other: &ModelGrads) {
        if let (Some(a), Some(b)) = (self.encoder.as_mut(), other.encoder.as_ref()) {
            a.add(b);
        }
        if let (Some(a), Some(b)) = (self.fusion.as_mut(), other.fusion.as_ref()) {
            add_assign(&mut a.weight, &b.weight);
            add_assign(&mut a.bias, &b.bias);
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = Vec::new();
        if let Some(e) = self.encoder.as_mut() {
            blocks.push(&mut e.table);
            blocks.push(&mut e.cls_map.weight);
            blocks.push(&mut e.cls_map.bias);
        }
        if let Some(l) = self.fusion.as_mut() {
            blocks.push(&mut l.weight);
            blocks.push(&mut l.bias);
        }
        blocks
    }

    fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

fn stream_digest(fingerprints: &[u64]) -> u64 {
    let bytes: Vec<u8> = fingerprints.iter().flat_map(|f| f.to_le_bytes()).collect();
    crate::encoder::fnv1a64(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per iteration.
    pub loss_curve: Vec<f64>,
    /// Digest of every sampled episode, in order.
    pub stream_fingerprint: u64,
    pub wall_time_secs: f64,
}

/// Runs `cfg.train_iters` optimizer steps, each on the mean gradient of
/// `cfg.batch_episodes` freshly sampled episodes.
pub fn train(cfg: &TrainConfig, task: Task<'_>, model: &mut Model) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    if cfg.train_iters > 0 && !model.is_trainable() {
        log::warn!(
            "nothing to train: {} encoder with `{}` fusion has no parameters",
            if model.encoder.is_trainable() {
                "trainable"
            } else {
                "frozen"
            },
            cfg.fusion
        );
        return Ok(TrainReport {
            loss_curve: Vec::new(),
            stream_fingerprint: stream_digest(&[]),
            wall_time_secs: start.elapsed().as_secs_f64(),
        });
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.adam());
    let mut loss_curve = Vec::with_capacity(cfg.train_iters);
    let mut fingerprints = Vec::with_capacity(cfg.train_iters * cfg.batch_episodes);
    for iter in 0..cfg.train_iters {
        let base = (iter * cfg.batch_episodes) as u64;
        let results: Vec<(u64, f64, ModelGrads)> = (0..cfg.batch_episodes as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = SeededRng::for_episode(cfg.seed, Stream::Train, base + b);
                let spec =
                    sample_episode_spec(&mut rng, task.data, cfg.n_way, cfg.k_shot, cfg.q_query)?;
                let (loss, grads) = model.episode_grads(task, &spec, cfg.relation_grad)?;
                Ok((spec.fingerprint(), loss, grads))
            })
            .collect::<Result<_>>()?;
        let mut results = results.into_iter();
        let Some((fp, mut loss, mut total)) = results.next() else {
            break;
        };
        fingerprints.push(fp);
        for (fp, l, g) in results {
            fingerprints.push(fp);
            loss += l;
            total.add(&g);
        }
        let inv = 1.0 / cfg.batch_episodes as f64;
        total.scale(inv);
        loss_curve.push(loss * inv);
        let grads: Vec<&[f64]> = total.blocks_mut().into_iter().map(|b| &*b).collect();
        optimizer.step(model.param_blocks_mut(), grads);
        if (iter + 1) % 500 == 0 {
            log::info!("iter {}: batch loss {:.4}", iter + 1, loss * inv);
        }
    }
    Ok(TrainReport {
        loss_curve,
        stream_fingerprint: stream_digest(&fingerprints),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Accuracy over a batch of evaluated episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub label: String,
    pub setting: Setting,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Binomial standard error `√(acc(1−acc)/total)`.
    pub stderr: f64,
    pub mean_loss: f64,
    pub loss_curve: Vec<f64>,
    pub stream_fingerprint: u64,
    pub config: Option<TrainConfig>,
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn from_outputs(
        label: impl Into<String>,
        setting: Setting,
        outputs: &[EpisodeOutput],
    ) -> Self {
        let correct = outputs.iter().map(EpisodeOutput::correct).sum();
        let total = outputs.iter().map(|o| o.labels.len()).sum();
        let mean_loss = if outputs.is_empty() {
            0.0
        } else {
            outputs.iter().map(|o| o.loss).sum::<f64>() / outputs.len() as f64
        };
        let (accuracy, stderr) = binomial(correct, total);
        RunResult {
            label: label.into(),
            setting,
            correct,
            total,
            accuracy,
            stderr,
            mean_loss,
            loss_curve: Vec::new(),
            stream_fingerprint: 0,
            config: None,
            wall_time_secs: 0.0,
        }
    }

    /// Same outcome, ignoring wall time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        RunResult {
            wall_time_secs: 0.0,
            ..self.clone()
        } == RunResult {
            wall_time_secs: 0.0,
            ..other.clone()
        }
    }
}

/// `(acc, √(acc(1−acc)/total))`; zero total gives `(0, 0)`.
pub fn binomial(correct: usize, total: usize) -> (f64, f64) {
    if total == 0 {
        return (0.0, 0.0);
    }
    let acc = correct as f64 / total as f64;
    (acc, (acc * (1.0 - acc) / total as f64).sqrt())
}

/// Evaluates `iters` episodes built by `make`, each from
/// `SeededRng::for_episode(seed, Stream::Eval, i)`. `make` returns the
/// episode and a fingerprint of its draw.
pub fn evaluate_with<F>(
    label: impl Into<String>,
    setting: Setting,
    strategy: &FusionStrategy,
    iters: usize,
    seed: u64,
    make: F,
) -> Result<RunResult>
where
    F: Fn(&mut SeededRng) -> Result<(Episode, u64)> + Sync,
{
    let start = Instant::now();
    let outputs: Vec<(u64, EpisodeOutput)> = (0..iters as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::for_episode(seed, Stream::Eval, i);
            let (ep, fp) = make(&mut rng)?;
            Ok((fp, episode_forward(&ep, strategy)?))
        })
        .collect::<Result<_>>()?;
    let (fps, outputs): (Vec<u64>, Vec<EpisodeOutput>) = outputs.into_iter().unzip();
    let mut result = RunResult::from_outputs(label, setting, &outputs);
    result.stream_fingerprint = stream_digest(&fps);
    result.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Accuracy of `model` on `iters` episodes sampled from `task`.
pub fn evaluate(
    model: &Model,
    task: Task<'_>,
    setting: Setting,
    q_query: usize,
    iters: usize,
    seed: u64,
) -> Result<RunResult> {
    if task.data.num_relations() < setting.n_way {
        return Err(Error::InsufficientClasses {
            needed: setting.n_way,
            available: task.data.num_relations(),
        });
    }
    evaluate_with(
        model.fusion.kind().label(),
        setting,
        &model.fusion,
        iters,
        seed,
        |rng| {
            let spec = sample_episode_spec(rng, task.data, setting.n_way, setting.k_shot, q_query)?;
            Ok((model.episode(task, &spec)?, spec.fingerprint()))
        },
    )
}

/// Trains a fresh model for `cfg` and evaluates it on every eval setting.
pub fn train_and_evaluate(
    cfg: &TrainConfig,
    train_task: Task<'_>,
    eval_task: Task<'_>,
    store: Option<&EmbeddingStore>,
) -> Result<(Model, TrainReport, Vec<RunResult>)> {
    let mut model = Model::init(cfg, store)?;
    let report = train(cfg, train_task, &mut model)?;
    let results = cfg
        .eval_settings()
        .into_iter()
        .map(|setting| {
            let mut r = evaluate(
                &model,
                eval_task,
                setting,
                cfg.q_query,
                cfg.eval_iters,
                cfg.seed,
            )?;
            r.loss_curve = report.loss_curve.clone();
            r.config = Some(cfg.clone());
            r.wall_time_secs += report.wall_time_secs;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok((model, report, results))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fusion: FusionKind,
    pub train_fingerprint: u64,
    pub results: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// One train+evaluate run per fusion rule, all from the same seed, in
/// ablation table order.
pub fn ablation_run(
    base: &TrainConfig,
    train_task: Task<'_>,
    eval_task: Task<'_>,
    store: Option<&EmbeddingStore>,
) -> Result<AblationTable> {
    let rows = FusionKind::ABLATION_ORDER
        .into_iter()
        .map(|fusion| {
            let cfg = TrainConfig {
                fusion,
                ..base.clone()
            };
            let (_, report, results) = train_and_evaluate(&cfg, train_task, eval_task, store)?;
            Ok(AblationRow {
                fusion,
                train_fingerprint: report.stream_fingerprint,
                results,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rates: Vec<f64>,
    pub settings: Vec<Setting>,
    /// `cells[rate][setting]`.
    pub cells: Vec<Vec<RunResult>>,
}

impl SweepTable {
    /// Mean accuracy over settings, per rate.
    pub fn averages(&self) -> Vec<f64> {
        self.cells
            .iter()
            .map(|row| row.iter().map(|r| r.accuracy).sum::<f64>() / row.len().max(1) as f64)
            .collect()
    }
}

/// Independent runs per learning rate, sharing the seed.
pub fn lr_sweep(
    cfg: &TrainConfig,
    rates: &[f64],
    train_task: Task<'_>,
    eval_task: Task<'_>,
    store: Option<&EmbeddingStore>,
) -> Result<SweepTable> {
    if rates.is_empty() {
        return Err(Error::Config(
            "learning-rate sweep needs at least one rate".into(),
        ));
    }
    let cells = rates
        .iter()
        .map(|&learning_rate| {
            let run_cfg = TrainConfig {
                learning_rate,
                ..cfg.clone()
            };
            let (_, _, mut results) = train_and_evaluate(&run_cfg, train_task, eval_task, store)?;
            for r in &mut results {
                r.label = format!("lr={learning_rate:e}");
            }
            Ok(results)
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        rates: rates.to_vec(),
        settings: cfg.eval_settings(),
        cells,
    })
}
