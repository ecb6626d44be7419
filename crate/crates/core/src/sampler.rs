//! Seeded N-way K-shot episode sampling.
//!
//! Streams are ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `seed_from_u64`. Episode `i` of a run draws from its own generator seeded
//! with `seed ^ i`; training and evaluation use different ChaCha stream ids
//! so they never share draws.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{fnv1a64, EncoderContract};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{Episode, RelationInfo};

/// Generator streams that must never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Train = 0,
    Eval = 1,
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for episode `counter` of `stream`.
    pub fn for_episode(seed: u64, stream: Stream, counter: u64) -> Self {
        let child = seed ^ counter;
        let mut rng = ChaCha8Rng::seed_from_u64(child);
        rng.set_stream(stream as u64);
        SeededRng { seed: child, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassDraw {
    pub relation_id: String,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// Which instances an episode uses; labels follow class order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EpisodeSpec {
    pub classes: Vec<ClassDraw>,
}

impl EpisodeSpec {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.relation_id.clone()).collect()
    }

    /// Checks distinct classes, per-class index distinctness, uniform K and
    /// Q, and index range against `ds`.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let mut ids = HashSet::new();
        let (k, q) = match self.classes.first() {
            Some(c) => (c.support.len(), c.query.len()),
            None => return Err(Error::Invalid("episode spec has no classes".into())),
        };
        for c in &self.classes {
            if !ids.insert(&c.relation_id) {
                return Err(Error::DuplicateKey(c.relation_id.clone()));
            }
            if c.support.len() != k || c.query.len() != q {
                return Err(Error::Invalid(format!(
                    "class `{}` has a ragged draw",
                    c.relation_id
                )));
            }
            let available = ds
                .instances(&c.relation_id)
                .ok_or_else(|| Error::UnknownRelation(c.relation_id.clone()))?
                .len();
            let mut seen = HashSet::new();
            for &i in c.support.iter().chain(&c.query) {
                if i >= available {
                    return Err(Error::Invalid(format!(
                        "index {i} out of range for `{}`",
                        c.relation_id
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Invalid(format!(
                        "index {i} drawn twice for `{}`",
                        c.relation_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable 64-bit digest of the draw, used to compare episode streams.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for c in &self.classes {
            bytes.extend_from_slice(c.relation_id.as_bytes());
            bytes.push(0);
            for &i in c.support.iter().chain(&c.query) {
                bytes.extend_from_slice(&(i as u64).to_le_bytes());
            }
            bytes.push(0xff);
        }
        fnv1a64(&bytes)
    }
}

/// Uniform N classes without replacement (relations in id order), then
/// K+Q instances without replacement per class; the first K are support.
pub fn sample_episode_spec(
    rng: &mut SeededRng,
    ds: &Dataset,
    n: usize,
    k: usize,
    q: usize,
) -> Result<EpisodeSpec> {
    if n == 0 || k == 0 {
        return Err(Error::Invalid("N and K must be >= 1".into()));
    }
    let ids: Vec<&str> = ds.relation_ids().collect();
    if ids.len() < n {
        return Err(Error::InsufficientClasses {
            needed: n,
            available: ids.len(),
        });
    }
    let picked = index::sample(rng.rng(), ids.len(), n);
    let mut classes = Vec::with_capacity(n);
    for ci in picked.iter() {
        let id = ids[ci];
        let available = ds.instances(id).map_or(0, <[_]>::len);
        if available < k + q {
            return Err(Error::InsufficientInstances {
                relation: id.to_string(),
                needed: k + q,
                available,
            });
        }
        let draw = index::sample(rng.rng(), available, k + q).into_vec();
        classes.push(ClassDraw {
            relation_id: id.to_string(),
            support: draw[..k].to_vec(),
            query: draw[k..].to_vec(),
        });
    }
    Ok(EpisodeSpec { classes })
}

pub fn materialize_episode<E: EncoderContract + ?Sized>(
    spec: &EpisodeSpec,
    ds: &Dataset,
    provider: &E,
    rel_info: &BTreeMap<String, RelationInfo>,
) -> Result<Episode> {
    let mut support = Vec::with_capacity(spec.n_way());
    let mut query = Vec::new();
    let mut relations = Vec::with_capacity(spec.n_way());
    for (label, c) in spec.classes.iter().enumerate() {
        let instances = ds
            .instances(&c.relation_id)
            .ok_or_else(|| Error::UnknownRelation(c.relation_id.clone()))?;
        let fetch = |i: usize| {
            instances
                .get(i)
                .ok_or_else(|| {
                    Error::Invalid(format!("index {i} out of range for `{}`", c.relation_id))
                })
                .and_then(|inst| provider.embed_instance(inst))
        };
        support.push(
            c.support
                .iter()
                .map(|&i| fetch(i))
                .collect::<Result<Vec<_>>>()?,
        );
        for &i in &c.query {
            query.push((fetch(i)?, label));
        }
        let info = rel_info
            .get(&c.relation_id)
            .ok_or_else(|| Error::MissingKey(format!("relation info for `{}`", c.relation_id)))?;
        relations.push(provider.embed_relation(info)?);
    }
    Episode::new(spec.class_ids(), support, query, relations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_toy_params, ToyEncoder};
    use crate::model::{Span, TokenizedInstance};

    pub(crate) fn dataset(relations: usize, per: usize) -> Dataset {
        let mut map = BTreeMap::new();
        for r in 0..relations {
            let id = format!("R{r:02}");
            let list = (0..per)
                .map(|i| {
                    TokenizedInstance::new(
                        vec![format!("h{r}_{i}"), "rel".into(), format!("t{r}_{i}")],
                        Span::new(0, 1),
                        Span::new(2, 3),
                        id.clone(),
                        i,
                    )
                    .unwrap()
                })
                .collect();
            map.insert(id, list);
        }
        Dataset::new(map).unwrap()
    }

    #[test]
    fn full_draw_is_a_permutation() {
        let ds = dataset(5, 4);
        let spec = sample_episode_spec(&mut SeededRng::new(3), &ds, 5, 1, 1).unwrap();
        let mut ids = spec.class_ids();
        ids.sort();
        assert_eq!(ids, ds.relation_ids().map(String::from).collect::<Vec<_>>());
        spec.validate(&ds).unwrap();
    }

    #[test]
    fn insufficient_classes_and_instances() {
        let ds = dataset(5, 2);
        assert!(matches!(
            sample_episode_spec(&mut SeededRng::new(0), &ds, 6, 1, 1),
            Err(Error::InsufficientClasses {
                needed: 6,
                available: 5
            })
        ));
        assert!(matches!(
            sample_episode_spec(&mut SeededRng::new(0), &ds, 2, 2, 1),
            Err(Error::InsufficientInstances { .. })
        ));
    }

    #[test]
    fn same_seed_same_spec() {
        let ds = dataset(10, 10);
        let a = sample_episode_spec(&mut SeededRng::new(42), &ds, 5, 2, 3).unwrap();
        let b = sample_episode_spec(&mut SeededRng::new(42), &ds, 5, 2, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn train_and_eval_streams_differ() {
        let ds = dataset(20, 10);
        let mut t = SeededRng::for_episode(1, Stream::Train, 0);
        let mut e = SeededRng::for_episode(1, Stream::Eval, 0);
        let a = sample_episode_spec(&mut t, &ds, 5, 1, 1).unwrap();
        let b = sample_episode_spec(&mut e, &ds, 5, 1, 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn materialized_shapes_and_alignment() {
        let ds = dataset(4, 3);
        let enc = ToyEncoder::new(init_toy_params(0, 64, 3).unwrap());
        let rel_info: BTreeMap<String, RelationInfo> = ds
            .relation_ids()
            .map(|id| {
                (
                    id.to_string(),
                    RelationInfo::new(id, format!("name {id}"), "desc").unwrap(),
                )
            })
            .collect();
        let spec = sample_episode_spec(&mut SeededRng::new(9), &ds, 2, 1, 1).unwrap();
        let ep = materialize_episode(&spec, &ds, &enc, &rel_info).unwrap();
        assert_eq!(ep.support.len(), 2);
        assert_eq!(ep.query.len(), 2);
        assert_eq!(ep.relations.len(), 2);
        for (i, id) in ep.class_ids.iter().enumerate() {
            assert_eq!(ep.relations[i], enc.embed_relation(&rel_info[id]).unwrap());
            let inst = &ds.instances(id).unwrap()[spec.classes[i].support[0]];
            assert_eq!(ep.support[i][0], enc.embed_instance(inst).unwrap());
        }
        assert_eq!(
            ep.query.iter().map(|(_, y)| *y).collect::<Vec<_>>(),
            vec![0, 1]
        );

        let mut missing = rel_info.clone();
        missing.remove(&spec.classes[0].relation_id);
        assert!(matches!(
            materialize_episode(&spec, &ds, &enc, &missing),
            Err(Error::MissingKey(_))
        ));
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let ds = dataset(3, 3);
        let draw = |id: &str, s: Vec<usize>, q: Vec<usize>| ClassDraw {
            relation_id: id.into(),
            support: s,
            query: q,
        };
        let overlap = EpisodeSpec {
            classes: vec![draw("R00", vec![0], vec![0])],
        };
        assert!(overlap.validate(&ds).is_err());
        let dup = EpisodeSpec {
            classes: vec![draw("R00", vec![0], vec![1]), draw("R00", vec![2], vec![1])],
        };
        assert!(dup.validate(&ds).is_err());
        let range = EpisodeSpec {
            classes: vec![draw("R00", vec![7], vec![1])],
        };
        assert!(range.validate(&ds).is_err());
    }
}
