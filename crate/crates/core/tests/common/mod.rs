//! Test-only oracles: an independent scalar loss and central finite
//! differences over every parameter the analytic backward pass touches.
#![allow(dead_code)]

use std::collections::BTreeMap;

use protofuse::experiments::{Model, Task};
use protofuse::ingest::Dataset;
use protofuse::model::{Episode, InstanceEmbedding, Linear, RelationEmbedding, RelationInfo, View};
use protofuse::protonet::{episode_loss_and_grads, FusionStrategy, RelationGradient};
use protofuse::sampler::EpisodeSpec;
use protofuse::synthetic::{token_task, TokenTaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-5;

pub fn rel_err(analytic: f64, estimate: f64) -> f64 {
    (analytic - estimate).abs() / estimate.abs().max(1.0)
}

fn matvec(l: &Linear, x: &[f64]) -> Vec<f64> {
    (0..l.rows)
        .map(|r| {
            l.bias[r]
                + (0..l.cols)
                    .map(|c| l.weight[r * l.cols + c] * x[c])
                    .sum::<f64>()
        })
        .collect()
}

/// Mean cross-entropy written out directly from the definitions, sharing
/// no code with the library's forward or backward pass.
pub fn oracle_loss(ep: &Episode, strategy: &FusionStrategy) -> f64 {
    let n = ep.class_ids.len();
    let protos: Vec<Vec<f64>> = ep
        .support
        .iter()
        .map(|shots| {
            let k = shots.len() as f64;
            let mut p = vec![0.0; 2 * shots[0].head.len()];
            for s in shots {
                for (i, v) in s.head.iter().chain(&s.tail).enumerate() {
                    p[i] += v / k;
                }
            }
            p
        })
        .collect();
    let fused: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = &ep.relations[i];
            let rfinal: Vec<f64> = r.cls.iter().chain(&r.mean).copied().collect();
            match strategy {
                FusionStrategy::None => protos[i].clone(),
                FusionStrategy::DirectAdd => {
                    protos[i].iter().zip(&rfinal).map(|(a, b)| a + b).collect()
                }
                FusionStrategy::ConcatProject(l) => {
                    let x: Vec<f64> = rfinal.iter().chain(&protos[i]).copied().collect();
                    matvec(l, &x)
                }
                FusionStrategy::ViewLinear { view, linear } => {
                    let v = match view {
                        View::Cls => &r.cls,
                        View::Mean => &r.mean,
                    };
                    protos[i]
                        .iter()
                        .zip(matvec(linear, v))
                        .map(|(a, b)| a + b)
                        .collect()
                }
            }
        })
        .collect();
    let mut total = 0.0;
    for (q, y) in &ep.query {
        let qc: Vec<f64> = q.head.iter().chain(&q.tail).copied().collect();
        let scores: Vec<f64> = fused
            .iter()
            .map(|f| f.iter().zip(&qc).map(|(a, b)| a * b).sum())
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        total += lse - scores[*y];
    }
    total / ep.query.len() as f64
}

fn central_difference<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Worst relative error between analytic gradients of the episode loss and
/// central differences, over support, query and relation embeddings and
/// the fusion parameters.
pub fn check_episode_gradients(ep: &Episode, strategy: &FusionStrategy) -> (f64, usize) {
    let (_, grads) = episode_loss_and_grads(ep, strategy, RelationGradient::Through).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut record = |a: f64, e: f64| {
        worst = worst.max(rel_err(a, e));
        checked += 1;
    };

    for i in 0..ep.support.len() {
        for k in 0..ep.support[i].len() {
            for half in 0..2 {
                for j in 0..ep.dim() {
                    let mut probe = ep.clone();
                    let x = component(&ep.support[i][k], half, j);
                    let fd = central_difference(x, |v| {
                        *component_mut(&mut probe.support[i][k], half, j) = v;
                        oracle_loss(&probe, strategy)
                    });
                    record(component(&grads.support[i][k], half, j), fd);
                }
            }
        }
    }
    for m in 0..ep.query.len() {
        for half in 0..2 {
            for j in 0..ep.dim() {
                let mut probe = ep.clone();
                let x = component(&ep.query[m].0, half, j);
                let fd = central_difference(x, |v| {
                    *component_mut(&mut probe.query[m].0, half, j) = v;
                    oracle_loss(&probe, strategy)
                });
                record(component(&grads.query[m], half, j), fd);
            }
        }
    }
    for i in 0..ep.relations.len() {
        for half in 0..2 {
            for j in 0..ep.dim() {
                let mut probe = ep.clone();
                let x = rel_component(&ep.relations[i], half, j);
                let fd = central_difference(x, |v| {
                    *rel_component_mut(&mut probe.relations[i], half, j) = v;
                    oracle_loss(&probe, strategy)
                });
                record(rel_component(&grads.relations[i], half, j), fd);
            }
        }
    }
    if let (Some(lin), Some(g)) = (strategy.linear(), grads.fusion.as_ref()) {
        for idx in 0..lin.weight.len() {
            let mut probe = strategy.clone();
            let fd = central_difference(lin.weight[idx], |v| {
                probe.linear_mut().unwrap().weight[idx] = v;
                oracle_loss(ep, &probe)
            });
            record(g.weight[idx], fd);
        }
        for idx in 0..lin.bias.len() {
            let mut probe = strategy.clone();
            let fd = central_difference(lin.bias[idx], |v| {
                probe.linear_mut().unwrap().bias[idx] = v;
                oracle_loss(ep, &probe)
            });
            record(g.bias[idx], fd);
        }
    }
    (worst, checked)
}

fn component(e: &InstanceEmbedding, half: usize, j: usize) -> f64 {
    if half == 0 {
        e.head[j]
    } else {
        e.tail[j]
    }
}

fn component_mut(e: &mut InstanceEmbedding, half: usize, j: usize) -> &mut f64 {
    if half == 0 {
        &mut e.head[j]
    } else {
        &mut e.tail[j]
    }
}

fn rel_component(r: &RelationEmbedding, half: usize, j: usize) -> f64 {
    if half == 0 {
        r.cls[j]
    } else {
        r.mean[j]
    }
}

fn rel_component_mut(r: &mut RelationEmbedding, half: usize, j: usize) -> &mut f64 {
    if half == 0 {
        &mut r.cls[j]
    } else {
        &mut r.mean[j]
    }
}

/// Worst relative error over every trainable model parameter (toy table,
/// `W_c`, `b_c`, fusion `W`, `b`) for the loss of one sampled episode.
pub fn check_model_gradients(model: &Model, task: Task<'_>, spec: &EpisodeSpec) -> (f64, usize) {
    let (_, grads) = model
        .episode_grads(task, spec, RelationGradient::Through)
        .unwrap();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    if let Some(e) = &grads.encoder {
        analytic.push(e.table.clone());
        analytic.push(e.cls_map.weight.clone());
        analytic.push(e.cls_map.bias.clone());
    }
    if let Some(l) = &grads.fusion {
        analytic.push(l.weight.clone());
        analytic.push(l.bias.clone());
    }
    let loss_of = |m: &Model| oracle_loss(&m.episode(task, spec).unwrap(), &m.fusion);

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (b, block) in analytic.iter().enumerate() {
        for (idx, &analytic) in block.iter().enumerate() {
            let x = probe.param_blocks_mut()[b][idx];
            probe.param_blocks_mut()[b][idx] = x + FD_STEP;
            let up = loss_of(&probe);
            probe.param_blocks_mut()[b][idx] = x - FD_STEP;
            let down = loss_of(&probe);
            probe.param_blocks_mut()[b][idx] = x;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic, fd));
            checked += 1;
        }
    }
    (worst, checked)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random episode with arbitrary embeddings.
pub fn random_episode(seed: u64, d: usize, n: usize, k: usize, q: usize) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = |rng: &mut ChaCha8Rng| {
        InstanceEmbedding::new(gaussian_vec(rng, d), gaussian_vec(rng, d)).unwrap()
    };
    let support = (0..n)
        .map(|_| (0..k).map(|_| inst(&mut rng)).collect())
        .collect();
    let query = (0..n)
        .flat_map(|label| (0..q).map(move |_| label))
        .map(|label| (inst(&mut rng), label))
        .collect();
    let relations = (0..n)
        .map(|_| {
            RelationEmbedding::new(gaussian_vec(&mut rng, d), gaussian_vec(&mut rng, d)).unwrap()
        })
        .collect();
    Episode::new(
        (0..n).map(|i| format!("C{i}")).collect(),
        support,
        query,
        relations,
    )
    .unwrap()
}

/// Small token task used by gradient checks.
pub fn small_token_task(seed: u64) -> (Dataset, BTreeMap<String, RelationInfo>) {
    token_task(
        seed,
        TokenTaskSpec {
            relations: 6,
            instances_per_relation: 8,
            vocab_per_relation: 4,
            sentence_len: 6,
        },
    )
    .unwrap()
}
