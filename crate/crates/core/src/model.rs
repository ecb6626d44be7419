//! Value types shared across the pipeline and the handful of vector
//! operations they need.
//!
//! Every vector is `f64`. Constructors validate shape and finiteness once,
//! at the boundary; the arithmetic helpers below assume valid input.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn check_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::Invalid(format!("{what}[{i}] is not finite"))),
        None => Ok(()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn add_assign(acc: &mut [f64], v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}

pub(crate) fn axpy(acc: &mut [f64], alpha: f64, v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, x) in acc.iter_mut().zip(v) {
        *a += alpha * x;
    }
}

pub(crate) fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// A sentence with its head/tail entity spans and relation label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInstance {
    pub tokens: Vec<String>,
    pub head: Span,
    pub tail: Span,
    pub relation_id: String,
    pub instance_index: usize,
}

impl TokenizedInstance {
    pub fn new(
        tokens: Vec<String>,
        head: Span,
        tail: Span,
        relation_id: impl Into<String>,
        instance_index: usize,
    ) -> Result<Self> {
        let relation_id = relation_id.into();
        let context = format!("{relation_id}/{instance_index}");
        if tokens.is_empty() {
            return Err(Error::Invalid(format!("{context}: no tokens")));
        }
        for (name, span) in [("head", head), ("tail", tail)] {
            if span.is_empty() {
                return Err(Error::Invalid(format!(
                    "{context}: empty {name} span {span}"
                )));
            }
            if span.end > tokens.len() {
                return Err(Error::SpanOutOfBounds {
                    start: span.start,
                    end: span.end,
                    len: tokens.len(),
                    context: format!("{context} {name}"),
                });
            }
        }
        if head.overlaps(&tail) {
            log::warn!("{context}: head span {head} overlaps tail span {tail}");
        }
        Ok(TokenizedInstance {
            tokens,
            head,
            tail,
            relation_id,
            instance_index,
        })
    }

    /// Store key, `relation_id/instance_index`.
    pub fn key(&self) -> String {
        instance_key(&self.relation_id, self.instance_index)
    }
}

pub fn instance_key(relation_id: &str, index: usize) -> String {
    format!("{relation_id}/{index}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationInfo {
    pub relation_id: String,
    pub name: String,
    pub description: String,
}

impl RelationInfo {
    pub fn new(
        relation_id: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
    ) -> Result<Self> {
        let info = RelationInfo {
            relation_id: relation_id.into(),
            name: name.into(),
            description: description.into(),
        };
        if info.relation_id.is_empty() {
            return Err(Error::Invalid("relation id is empty".into()));
        }
        if info.name.trim().is_empty() {
            return Err(Error::Invalid(format!(
                "relation `{}` has an empty name",
                info.relation_id
            )));
        }
        Ok(info)
    }
}

/// Entity-start vectors of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEmbedding {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
}

impl InstanceEmbedding {
    pub fn new(head: Vec<f64>, tail: Vec<f64>) -> Result<Self> {
        if head.len() != tail.len() {
            return Err(Error::dim(head.len(), tail.len(), "instance tail vector"));
        }
        if head.is_empty() {
            return Err(Error::Invalid("instance embedding has dimension 0".into()));
        }
        check_finite(&head, "head")?;
        check_finite(&tail, "tail")?;
        Ok(InstanceEmbedding { head, tail })
    }

    #[cfg(test)]
    pub(crate) fn zeros(d: usize) -> Self {
        InstanceEmbedding {
            head: vec![0.0; d],
            tail: vec![0.0; d],
        }
    }

    pub(crate) fn from_combined(v: &[f64]) -> Self {
        let d = v.len() / 2;
        InstanceEmbedding {
            head: v[..d].to_vec(),
            tail: v[d..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.head.len()
    }

    /// `head ⊕ tail`, length `2d`.
    pub fn combined(&self) -> Vec<f64> {
        concat(&self.head, &self.tail)
    }
}

/// Which single view of a relation a `ViewLinear` fusion reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    /// Sequence-summary view.
    Cls,
    /// Mean-of-tokens view.
    Mean,
}

impl View {
    pub fn number(self) -> u8 {
        match self {
            View::Cls => 1,
            View::Mean => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(View::Cls),
            2 => Ok(View::Mean),
            _ => Err(Error::Invalid(format!("view must be 1 or 2, got {n}"))),
        }
    }
}

/// The two views of a relation's name+description encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEmbedding {
    pub cls: Vec<f64>,
    pub mean: Vec<f64>,
}

impl RelationEmbedding {
    pub fn new(cls: Vec<f64>, mean: Vec<f64>) -> Result<Self> {
        if cls.len() != mean.len() {
            return Err(Error::dim(cls.len(), mean.len(), "relation mean view"));
        }
        if cls.is_empty() {
            return Err(Error::Invalid("relation embedding has dimension 0".into()));
        }
        check_finite(&cls, "cls")?;
        check_finite(&mean, "mean")?;
        Ok(RelationEmbedding { cls, mean })
    }

    pub(crate) fn zeros(d: usize) -> Self {
        RelationEmbedding {
            cls: vec![0.0; d],
            mean: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.cls.len()
    }

    /// `cls ⊕ mean`, length `2d`.
    pub fn fused(&self) -> Vec<f64> {
        concat(&self.cls, &self.mean)
    }

    pub fn view(&self, view: View) -> &[f64] {
        match view {
            View::Cls => &self.cls,
            View::Mean => &self.mean,
        }
    }

    pub(crate) fn view_mut(&mut self, view: View) -> &mut [f64] {
        match view {
            View::Cls => &mut self.cls,
            View::Mean => &mut self.mean,
        }
    }
}

/// Mean of a class's combined support vectors, length `2d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype(pub Vec<f64>);

/// A single N-way K-shot task.
///
/// Queries are `(embedding, label)` where the label indexes `class_ids`.
/// Support/query disjointness is guaranteed upstream by
/// [`EpisodeSpec`](crate::sampler::EpisodeSpec); embeddings carry no identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub class_ids: Vec<String>,
    pub support: Vec<Vec<InstanceEmbedding>>,
    pub query: Vec<(InstanceEmbedding, usize)>,
    pub relations: Vec<RelationEmbedding>,
}

impl Episode {
    pub fn new(
        class_ids: Vec<String>,
        support: Vec<Vec<InstanceEmbedding>>,
        query: Vec<(InstanceEmbedding, usize)>,
        relations: Vec<RelationEmbedding>,
    ) -> Result<Self> {
        let n = class_ids.len();
        if n == 0 {
            return Err(Error::Invalid("episode has no classes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &class_ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateKey(id.clone()));
            }
        }
        if support.len() != n {
            return Err(Error::dim(n, support.len(), "support classes"));
        }
        if relations.len() != n {
            return Err(Error::dim(n, relations.len(), "relation embeddings"));
        }
        let k = support[0].len();
        if k == 0 {
            return Err(Error::EmptySupport);
        }
        let d = support[0][0].dim();
        for (i, class) in support.iter().enumerate() {
            if class.len() != k {
                return Err(Error::dim(
                    k,
                    class.len(),
                    format!("support shots of class {i}"),
                ));
            }
            for e in class {
                if e.dim() != d {
                    return Err(Error::dim(d, e.dim(), "support embedding"));
                }
            }
        }
        for (e, label) in &query {
            if *label >= n {
                return Err(Error::Invalid(format!("query label {label} >= N={n}")));
            }
            if e.dim() != d {
                return Err(Error::dim(d, e.dim(), "query embedding"));
            }
        }
        for r in &relations {
            if r.dim() != d {
                return Err(Error::dim(d, r.dim(), "relation embedding"));
            }
        }
        Ok(Episode {
            class_ids,
            support,
            query,
            relations,
        })
    }

    pub fn n_way(&self) -> usize {
        self.class_ids.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.support[0][0].dim()
    }
}

/// Dense row-major affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(rows: usize, cols: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != rows * cols {
            return Err(Error::dim(rows * cols, weight.len(), "linear weight"));
        }
        if bias.len() != rows {
            return Err(Error::dim(rows, bias.len(), "linear bias"));
        }
        check_finite(&weight, "weight")?;
        check_finite(&bias, "bias")?;
        Ok(Linear {
            rows,
            cols,
            weight,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Linear {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Linear::zeros(n, n);
        for i in 0..n {
            l.weight[i * n + i] = 1.0;
        }
        l
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.weight
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    /// `Wᵀ g`.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, gi) in self.weight.chunks_exact(self.cols).zip(g) {
            axpy(&mut out, *gi, row);
        }
        out
    }

    /// `W += g xᵀ`, `b += g`.
    pub(crate) fn accumulate_outer(&mut self, g: &[f64], x: &[f64]) {
        for (row, gi) in self.weight.chunks_exact_mut(self.cols).zip(g) {
            axpy(row, *gi, x);
        }
        add_assign(&mut self.bias, g);
    }
}
