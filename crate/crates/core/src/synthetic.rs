//! Synthetic tasks for desk-scale experiments.
//!
//! [`GaussianTask`] produces embeddings directly: each class has a
//! unit-norm mean `μ`, instances draw head and tail as `μ + σ·ε`, and the
//! relation embedding is `(μ, μ)`, so its fused form is the true class
//! centre in `2d`.
//!
//! [`token_task`] produces a tokenized dataset for the toy encoder. Every
//! relation owns a private vocabulary; entity tokens come from it, filler
//! tokens are shared, and the relation description lists the vocabulary.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{
    Episode, InstanceEmbedding, RelationEmbedding, RelationInfo, Span, TokenizedInstance,
};
use crate::sampler::SeededRng;

#[derive(Debug, Clone)]
pub struct GaussianTask {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl GaussianTask {
    pub fn new(seed: u64, classes: usize, dim: usize, sigma: f64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::Invalid(
                "gaussian task needs classes and dim >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Ok(GaussianTask { means, sigma })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn relation(&self, class: usize) -> RelationEmbedding {
        RelationEmbedding {
            cls: self.means[class].clone(),
            mean: self.means[class].clone(),
        }
    }

    fn draw_instance(&self, rng: &mut ChaCha8Rng, class: usize) -> InstanceEmbedding {
        let mut noisy = || -> Vec<f64> {
            self.means[class]
                .iter()
                .map(|m| m + self.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let head = noisy();
        let tail = noisy();
        InstanceEmbedding { head, tail }
    }

    /// Fresh N-way K-shot episode with Q queries per class.
    pub fn episode(&self, rng: &mut SeededRng, n: usize, k: usize, q: usize) -> Result<Episode> {
        if n > self.means.len() {
            return Err(Error::InsufficientClasses {
                needed: n,
                available: self.means.len(),
            });
        }
        let rng = rng.rng();
        let classes = rand::seq::index::sample(rng, self.means.len(), n).into_vec();
        let mut support = Vec::with_capacity(n);
        let mut query = Vec::with_capacity(n * q);
        for (label, &c) in classes.iter().enumerate() {
            support.push((0..k).map(|_| self.draw_instance(rng, c)).collect());
            for _ in 0..q {
                query.push((self.draw_instance(rng, c), label));
            }
        }
        let relations = classes.iter().map(|&c| self.relation(c)).collect();
        let ids = classes.iter().map(|c| format!("G{c:02}")).collect();
        Episode::new(ids, support, query, relations)
    }
}

/// Shape of a [`token_task`] dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenTaskSpec {
    pub relations: usize,
    pub instances_per_relation: usize,
    pub vocab_per_relation: usize,
    pub sentence_len: usize,
}

impl Default for TokenTaskSpec {
    fn default() -> Self {
        TokenTaskSpec {
            relations: 20,
            instances_per_relation: 40,
            vocab_per_relation: 6,
            sentence_len: 8,
        }
    }
}

const FILLER: [&str; 12] = [
    "the", "of", "a", "in", "was", "is", "and", "to", "by", "at", "on", "for",
];

/// Tokenized dataset plus relation info for the toy encoder.
pub fn token_task(
    seed: u64,
    spec: TokenTaskSpec,
) -> Result<(Dataset, BTreeMap<String, RelationInfo>)> {
    if spec.sentence_len < 2 || spec.vocab_per_relation == 0 || spec.relations == 0 {
        return Err(Error::Invalid(
            "token task needs sentence_len >= 2 and non-empty vocab".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut relations = BTreeMap::new();
    let mut infos = BTreeMap::new();
    for r in 0..spec.relations {
        let id = format!("S{r:03}");
        let vocab: Vec<String> = (0..spec.vocab_per_relation)
            .map(|j| format!("r{r}w{j}"))
            .collect();
        let mut list = Vec::with_capacity(spec.instances_per_relation);
        for i in 0..spec.instances_per_relation {
            let mut tokens: Vec<String> = (0..spec.sentence_len)
                .map(|_| {
                    FILLER
                        .choose(&mut rng)
                        .copied()
                        .unwrap_or("the")
                        .to_string()
                })
                .collect();
            let head = rng.random_range(0..spec.sentence_len);
            let tail = loop {
                let t = rng.random_range(0..spec.sentence_len);
                if t != head {
                    break t;
                }
            };
            tokens[head] = vocab.choose(&mut rng).cloned().unwrap_or_default();
            tokens[tail] = vocab.choose(&mut rng).cloned().unwrap_or_default();
            list.push(TokenizedInstance::new(
                tokens,
                Span::new(head, head + 1),
                Span::new(tail, tail + 1),
                id.clone(),
                i,
            )?);
        }
        infos.insert(
            id.clone(),
            RelationInfo::new(id.clone(), format!("relation{r}"), vocab.join(" "))?,
        );
        relations.insert(id, list);
    }
    Ok((Dataset::new(relations)?, infos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_means_are_unit_norm() {
        let task = GaussianTask::new(1, 20, 16, 0.5).unwrap();
        for m in &task.means {
            let n: f64 = m.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let ep = task.episode(&mut SeededRng::new(2), 5, 1, 1).unwrap();
        assert_eq!(ep.n_way(), 5);
        assert_eq!(ep.relations[0].fused().len(), 32);
        assert!(task.episode(&mut SeededRng::new(2), 21, 1, 1).is_err());
    }

    #[test]
    fn token_task_is_deterministic() {
        let (a, ia) = token_task(5, TokenTaskSpec::default()).unwrap();
        let (b, ib) = token_task(5, TokenTaskSpec::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ia, ib);
        assert_eq!(a.num_relations(), 20);
        assert_eq!(a.num_instances(), 800);
        let inst = &a.instances("S003").unwrap()[0];
        assert!(inst.tokens[inst.head.start].starts_with("r3w"));
        assert!(inst.tokens[inst.tail.start].starts_with("r3w"));
    }
}
