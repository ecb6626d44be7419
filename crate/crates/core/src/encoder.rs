//! Sentence and relation encoders behind one contract.
//!
//! [`PrecomputedProvider`] serves vectors exported offline from a
//! transformer. [`ToyEncoder`] is a hashed embedding table small enough to
//! train end to end with exact gradients: each token maps to a row of `E`
//! via FNV-1a, an instance is represented by the rows at its two entity
//! start tokens, and a relation by the mean of its name+description rows
//! (mean view) and a learned affine map of that mean (cls view). Both
//! embedding kinds read the same table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::EmbeddingStore;
use crate::model::{
    add_assign, axpy, check_finite, InstanceEmbedding, Linear, RelationEmbedding, RelationInfo,
    TokenizedInstance,
};

pub const DEFAULT_BUCKETS: usize = 4096;
pub const DEFAULT_TOY_DIM: usize = 32;
/// Hidden size of the base transformer checkpoints the exporter targets.
pub const TRANSFORMER_DIM: usize = 768;
pub const MIN_BUCKETS: usize = 64;
/// Encoder input cap; relation text beyond it is dropped from the tail.
pub const MAX_TOKENS: usize = 128;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit, over the raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub trait EncoderContract {
    fn dim(&self) -> usize;
    fn embed_instance(&self, instance: &TokenizedInstance) -> Result<InstanceEmbedding>;
    fn embed_relation(&self, relation: &RelationInfo) -> Result<RelationEmbedding>;
    fn is_trainable(&self) -> bool {
        false
    }
}

/// Lookup-only provider over an [`EmbeddingStore`].
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    store: EmbeddingStore,
}

impl PrecomputedProvider {
    /// Fails when `expected_dim` is given and differs from the store's.
    pub fn new(store: EmbeddingStore, expected_dim: Option<usize>) -> Result<Self> {
        if let Some(d) = expected_dim {
            if d != store.dim() {
                return Err(Error::dim(
                    d,
                    store.dim(),
                    "embedding store vs configured dim",
                ));
            }
        }
        Ok(PrecomputedProvider { store })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }
}

impl EncoderContract for PrecomputedProvider {
    fn dim(&self) -> usize {
        self.store.dim()
    }

    fn embed_instance(&self, instance: &TokenizedInstance) -> Result<InstanceEmbedding> {
        let key = instance.key();
        self.store
            .instance(&key)
            .cloned()
            .ok_or(Error::MissingKey(key))
    }

    fn embed_relation(&self, relation: &RelationInfo) -> Result<RelationEmbedding> {
        self.store
            .relation(&relation.relation_id)
            .cloned()
            .ok_or_else(|| Error::MissingKey(relation.relation_id.clone()))
    }
}

/// Hashed table `E` (H×d, row-major) and the cls map `W_c`, `b_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoderParams {
    pub buckets: usize,
    pub dim: usize,
    pub table: Vec<f64>,
    pub cls_map: Linear,
}

impl ToyEncoderParams {
    pub fn new(buckets: usize, dim: usize, table: Vec<f64>, cls_map: Linear) -> Result<Self> {
        if buckets < MIN_BUCKETS {
            return Err(Error::Invalid(format!(
                "need at least {MIN_BUCKETS} buckets, got {buckets}"
            )));
        }
        if dim == 0 {
            return Err(Error::Invalid("toy encoder dim must be >= 1".into()));
        }
        if table.len() != buckets * dim {
            return Err(Error::dim(buckets * dim, table.len(), "embedding table"));
        }
        if cls_map.rows != dim || cls_map.cols != dim {
            return Err(Error::dim(dim, cls_map.rows.max(cls_map.cols), "cls map"));
        }
        check_finite(&table, "table")?;
        Ok(ToyEncoderParams {
            buckets,
            dim,
            table,
            cls_map,
        })
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.table[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.buckets as u64) as usize
    }
}

/// `E` and `W_c` uniform in `[-1/√d, 1/√d]` from a seeded ChaCha8 stream
/// (table first, then `W_c` row-major); `b_c = 0`.
pub fn init_toy_params(seed: u64, buckets: usize, dim: usize) -> Result<ToyEncoderParams> {
    if dim == 0 {
        return Err(Error::Invalid("toy encoder dim must be >= 1".into()));
    }
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw =
        |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
    let table = draw(buckets * dim);
    let weight = draw(dim * dim);
    ToyEncoderParams::new(
        buckets,
        dim,
        table,
        Linear::new(dim, dim, weight, vec![0.0; dim])?,
    )
}

/// Gradient buffers shaped like [`ToyEncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGrads {
    pub table: Vec<f64>,
    pub cls_map: Linear,
}

impl ToyGrads {
    pub fn zeros(params: &ToyEncoderParams) -> Self {
        ToyGrads {
            table: vec![0.0; params.table.len()],
            cls_map: Linear::zeros(params.dim, params.dim),
        }
    }

    pub fn add(&mut self, other: &ToyGrads) {
        add_assign(&mut self.table, &other.table);
        add_assign(&mut self.cls_map.weight, &other.cls_map.weight);
        add_assign(&mut self.cls_map.bias, &other.cls_map.bias);
    }

    pub fn is_zero(&self) -> bool {
        self.table
            .iter()
            .chain(&self.cls_map.weight)
            .chain(&self.cls_map.bias)
            .all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub params: ToyEncoderParams,
}

impl ToyEncoder {
    pub fn new(params: ToyEncoderParams) -> Self {
        ToyEncoder { params }
    }

    /// Whitespace tokens of `name` then `description`, capped at [`MAX_TOKENS`].
    pub fn relation_tokens(relation: &RelationInfo) -> Vec<&str> {
        let mut tokens: Vec<&str> = relation
            .name
            .split_whitespace()
            .chain(relation.description.split_whitespace())
            .collect();
        tokens.truncate(MAX_TOKENS);
        tokens
    }

    fn relation_buckets(&self, relation: &RelationInfo) -> Result<Vec<usize>> {
        let tokens = Self::relation_tokens(relation);
        if tokens.is_empty() {
            return Err(Error::Invalid(format!(
                "relation `{}` has no tokens",
                relation.relation_id
            )));
        }
        Ok(tokens.iter().map(|t| self.params.bucket(t)).collect())
    }

    fn mean_rows(&self, buckets: &[usize]) -> Vec<f64> {
        let mut mean = vec![0.0; self.params.dim];
        for &b in buckets {
            add_assign(&mut mean, self.params.row(b));
        }
        let scale = 1.0 / buckets.len() as f64;
        mean.iter_mut().for_each(|x| *x *= scale);
        mean
    }

    fn entity_buckets(&self, instance: &TokenizedInstance) -> (usize, usize) {
        (
            self.params.bucket(&instance.tokens[instance.head.start]),
            self.params.bucket(&instance.tokens[instance.tail.start]),
        )
    }

    /// Routes the gradient of an instance embedding into the two touched rows.
    pub fn backward_instance(
        &self,
        instance: &TokenizedInstance,
        grad: &InstanceEmbedding,
        acc: &mut ToyGrads,
    ) {
        let d = self.params.dim;
        let (h, t) = self.entity_buckets(instance);
        add_assign(&mut acc.table[h * d..(h + 1) * d], &grad.head);
        add_assign(&mut acc.table[t * d..(t + 1) * d], &grad.tail);
    }

    /// Backward through `cls = W_c·mean + b_c` and the mean pool.
    pub fn backward_relation(
        &self,
        relation: &RelationInfo,
        grad: &RelationEmbedding,
        acc: &mut ToyGrads,
    ) -> Result<()> {
        let buckets = self.relation_buckets(relation)?;
        let mean = self.mean_rows(&buckets);
        acc.cls_map.accumulate_outer(&grad.cls, &mean);
        let mut g_mean = self.params.cls_map.apply_transpose(&grad.cls);
        add_assign(&mut g_mean, &grad.mean);
        let d = self.params.dim;
        let share = 1.0 / buckets.len() as f64;
        for &b in &buckets {
            axpy(&mut acc.table[b * d..(b + 1) * d], share, &g_mean);
        }
        Ok(())
    }
}

impl EncoderContract for ToyEncoder {
    fn dim(&self) -> usize {
        self.params.dim
    }

    fn embed_instance(&self, instance: &TokenizedInstance) -> Result<InstanceEmbedding> {
        let (h, t) = self.entity_buckets(instance);
        Ok(InstanceEmbedding {
            head: self.params.row(h).to_vec(),
            tail: self.params.row(t).to_vec(),
        })
    }

    fn embed_relation(&self, relation: &RelationInfo) -> Result<RelationEmbedding> {
        let buckets = self.relation_buckets(relation)?;
        let mean = self.mean_rows(&buckets);
        let cls = self.params.cls_map.apply(&mean);
        Ok(RelationEmbedding { cls, mean })
    }

    fn is_trainable(&self) -> bool {
        true
    }
}

/// The encoder a model runs with.
#[derive(Debug, Clone)]
pub enum Encoder {
    Precomputed(PrecomputedProvider),
    Toy(ToyEncoder),
}

impl Encoder {
    pub fn as_toy(&self) -> Option<&ToyEncoder> {
        match self {
            Encoder::Toy(t) => Some(t),
            Encoder::Precomputed(_) => None,
        }
    }

    pub fn as_toy_mut(&mut self) -> Option<&mut ToyEncoder> {
        match self {
            Encoder::Toy(t) => Some(t),
            Encoder::Precomputed(_) => None,
        }
    }
}

impl EncoderContract for Encoder {
    fn dim(&self) -> usize {
        match self {
            Encoder::Precomputed(p) => p.dim(),
            Encoder::Toy(t) => t.dim(),
        }
    }

    fn embed_instance(&self, instance: &TokenizedInstance) -> Result<InstanceEmbedding> {
        match self {
            Encoder::Precomputed(p) => p.embed_instance(instance),
            Encoder::Toy(t) => t.embed_instance(instance),
        }
    }

    fn embed_relation(&self, relation: &RelationInfo) -> Result<RelationEmbedding> {
        match self {
            Encoder::Precomputed(p) => p.embed_relation(relation),
            Encoder::Toy(t) => t.embed_relation(relation),
        }
    }

    fn is_trainable(&self) -> bool {
        matches!(self, Encoder::Toy(_))
    }
}
