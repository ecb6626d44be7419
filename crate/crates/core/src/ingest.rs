//! Dataset, relation-description and embedding-store file formats.
//!
//! Dataset files follow the public FewRel 1.0 layout:
//!
//! ```json
//! {"P931": [{"tokens": ["Merpati", "flight", ...],
//!            "h": ["tjq", "Q1331049", [[16]]],
//!            "t": ["tanjung pandan", "Q3056359", [[13, 14]]]}, ...]}
//! ```
//!
//! Relation info files map an id to `[name, description]`.
//!
//! The embedding store is line-delimited JSON: a `{"dim": d}` header, then
//! one record per instance (`{"key", "head", "tail"}`) or relation
//! (`{"relation", "cls", "mean"}`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::marker::PhantomData;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InstanceEmbedding, RelationEmbedding, RelationInfo, Span, TokenizedInstance};

/// JSON object read in file order, keeping duplicate keys so they can be
/// reported instead of silently overwritten.
struct OrderedEntries<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for OrderedEntries<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor<V>(PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for EntriesVisitor<V> {
            type Value = OrderedEntries<V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor(PhantomData))
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
}

/// `(surface, kb-id, mention index lists)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEntity(String, String, Vec<Vec<usize>>);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawInstance {
    tokens: Vec<String>,
    h: RawEntity,
    t: RawEntity,
}

/// Converts the first mention's index list into a half-open span.
fn mention_span(entity: &RawEntity, context: &str) -> Result<Span> {
    let mentions = &entity.2;
    let first = mentions.first().filter(|m| !m.is_empty()).ok_or_else(|| {
        Error::Invalid(format!("{context}: entity `{}` has no mention", entity.0))
    })?;
    if mentions.len() > 1 {
        log::debug!(
            "{context}: entity `{}` has {} mentions, using the first",
            entity.0,
            mentions.len()
        );
    }
    if first.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::Invalid(format!(
            "{context}: mention indices {first:?} are not consecutive"
        )));
    }
    Ok(Span::new(first[0], first[first.len() - 1] + 1))
}

fn convert_instance(
    raw: RawInstance,
    relation_id: &str,
    index: usize,
) -> Result<TokenizedInstance> {
    let context = format!("{relation_id}/{index}");
    let head = mention_span(&raw.h, &format!("{context} head"))?;
    let tail = mention_span(&raw.t, &format!("{context} tail"))?;
    TokenizedInstance::new(raw.tokens, head, tail, relation_id, index)
}

/// Relation id → instances in file order. Relations iterate in id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    relations: BTreeMap<String, Vec<TokenizedInstance>>,
}

impl Dataset {
    pub fn new(relations: BTreeMap<String, Vec<TokenizedInstance>>) -> Result<Self> {
        if relations.is_empty() {
            return Err(Error::Invalid("dataset has no relations".into()));
        }
        for (id, instances) in &relations {
            for (i, inst) in instances.iter().enumerate() {
                if &inst.relation_id != id {
                    return Err(Error::Invalid(format!(
                        "instance {i} of `{id}` is labelled `{}`",
                        inst.relation_id
                    )));
                }
                if inst.instance_index != i {
                    return Err(Error::Invalid(format!(
                        "instance {i} of `{id}` carries index {}",
                        inst.instance_index
                    )));
                }
            }
        }
        Ok(Dataset { relations })
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_instances(&self) -> usize {
        self.relations.values().map(Vec::len).sum()
    }

    pub fn instances(&self, relation_id: &str) -> Option<&[TokenizedInstance]> {
        self.relations.get(relation_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[TokenizedInstance])> {
        self.relations
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn into_inner(self) -> BTreeMap<String, Vec<TokenizedInstance>> {
        self.relations
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let raw: OrderedEntries<Vec<RawInstance>> = parse_json(&text, path)?;
    let mut relations = BTreeMap::new();
    for (id, list) in raw.0 {
        if relations.contains_key(&id) {
            return Err(Error::DuplicateKey(id));
        }
        let instances = list
            .into_iter()
            .enumerate()
            .map(|(i, r)| convert_instance(r, &id, i))
            .collect::<Result<Vec<_>>>()?;
        relations.insert(id, instances);
    }
    Dataset::new(relations)
}

/// Writes a dataset back in the FewRel layout. Entity surfaces are rebuilt
/// from the span tokens; kb-ids are not retained and are written empty.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let entity = |inst: &TokenizedInstance, span: Span| {
        RawEntity(
            inst.tokens[span.range()].join(" "),
            String::new(),
            vec![span.range().collect()],
        )
    };
    let doc: BTreeMap<&str, Vec<RawInstance>> = ds
        .iter()
        .map(|(id, list)| {
            let raw = list
                .iter()
                .map(|inst| RawInstance {
                    tokens: inst.tokens.clone(),
                    h: entity(inst, inst.head),
                    t: entity(inst, inst.tail),
                })
                .collect();
            (id, raw)
        })
        .collect();
    let text = serde_json::to_string(&doc).map_err(|e| Error::Malformed(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Lenient pass over a dataset file for the `check` command: every
/// instance-level problem is collected instead of aborting the load.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetCheck {
    pub instance_counts: BTreeMap<String, usize>,
    pub violations: Vec<String>,
}

pub fn check_dataset(path: impl AsRef<Path>) -> Result<DatasetCheck> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let raw: OrderedEntries<Vec<RawInstance>> = parse_json(&text, path)?;
    let mut report = DatasetCheck::default();
    for (id, list) in raw.0 {
        if report.instance_counts.contains_key(&id) {
            report
                .violations
                .push(format!("duplicate relation id `{id}`"));
            continue;
        }
        report.instance_counts.insert(id.clone(), list.len());
        for (i, r) in list.into_iter().enumerate() {
            if let Err(e) = convert_instance(r, &id, i) {
                report.violations.push(e.to_string());
            }
        }
    }
    if report.instance_counts.is_empty() {
        report.violations.push("dataset has no relations".into());
    }
    Ok(report)
}

pub fn load_relation_info(path: impl AsRef<Path>) -> Result<BTreeMap<String, RelationInfo>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let raw: OrderedEntries<(String, String)> = parse_json(&text, path)?;
    let mut out = BTreeMap::new();
    for (id, (name, description)) in raw.0 {
        if out.contains_key(&id) {
            return Err(Error::DuplicateKey(id));
        }
        let info = RelationInfo::new(id.clone(), name, description)?;
        out.insert(id, info);
    }
    Ok(out)
}

pub fn write_relation_info(
    infos: &BTreeMap<String, RelationInfo>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let doc: BTreeMap<&str, (&str, &str)> = infos
        .iter()
        .map(|(k, v)| (k.as_str(), (v.name.as_str(), v.description.as_str())))
        .collect();
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Malformed(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Disjoint train/eval relation sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    train: BTreeSet<String>,
    eval: BTreeSet<String>,
}

impl SplitSpec {
    pub fn new<I, J, S, T>(train: I, eval: J) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        let train: BTreeSet<String> = train.into_iter().map(Into::into).collect();
        let eval: BTreeSet<String> = eval.into_iter().map(Into::into).collect();
        if let Some(shared) = train.intersection(&eval).next() {
            return Err(Error::Invalid(format!(
                "relation `{shared}` is in both train and eval splits"
            )));
        }
        Ok(SplitSpec { train, eval })
    }

    pub fn train(&self) -> &BTreeSet<String> {
        &self.train
    }

    pub fn eval(&self) -> &BTreeSet<String> {
        &self.eval
    }
}

/// Partitions `ds` by relation id. Relations named in neither set are dropped.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let pick = |ids: &BTreeSet<String>| -> Result<Dataset> {
        let mut out = BTreeMap::new();
        for id in ids {
            let instances = ds
                .instances(id)
                .ok_or_else(|| Error::UnknownRelation(id.clone()))?;
            out.insert(id.clone(), instances.to_vec());
        }
        Dataset::new(out)
    };
    Ok((pick(&spec.train)?, pick(&spec.eval)?))
}

/// Precomputed instance and relation embeddings of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    instances: BTreeMap<String, InstanceEmbedding>,
    relations: BTreeMap<String, RelationEmbedding>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            instances: BTreeMap::new(),
            relations: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert_instance(&mut self, key: impl Into<String>, e: InstanceEmbedding) -> Result<()> {
        let key = key.into();
        if e.dim() != self.dim {
            return Err(Error::dim(self.dim, e.dim(), format!("instance `{key}`")));
        }
        if self.instances.contains_key(&key) {
            return Err(Error::DuplicateKey(key));
        }
        self.instances.insert(key, e);
        Ok(())
    }

    pub fn insert_relation(&mut self, id: impl Into<String>, e: RelationEmbedding) -> Result<()> {
        let id = id.into();
        if e.dim() != self.dim {
            return Err(Error::dim(self.dim, e.dim(), format!("relation `{id}`")));
        }
        if self.relations.contains_key(&id) {
            return Err(Error::DuplicateKey(id));
        }
        self.relations.insert(id, e);
        Ok(())
    }

    pub fn instance(&self, key: &str) -> Option<&InstanceEmbedding> {
        self.instances.get(key)
    }

    pub fn relation(&self, id: &str) -> Option<&RelationEmbedding> {
        self.relations.get(id)
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum StoreRecord {
    Instance {
        key: String,
        head: Vec<f64>,
        tail: Vec<f64>,
    },
    Relation {
        relation: String,
        cls: Vec<f64>,
        mean: Vec<f64>,
    },
}

pub fn read_embedding_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    parse_embedding_store(&text, &path.display().to_string())
}

pub(crate) fn parse_embedding_store(text: &str, name: &str) -> Result<EmbeddingStore> {
    let ends_cleanly = text.ends_with('\n');
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let Some(&(_, header_line)) = lines.first() else {
        return Err(Error::Truncated(format!("{name}: missing header")));
    };
    let last = lines.len() - 1;
    let fail = |idx: usize, lineno: usize, e: serde_json::Error| {
        if idx == last && !ends_cleanly && (e.is_eof() || e.is_syntax()) {
            Error::Truncated(format!("{name}: line {}: {e}", lineno + 1))
        } else {
            Error::Malformed(format!("{name}: line {}: {e}", lineno + 1))
        }
    };
    let header: StoreHeader =
        serde_json::from_str(header_line).map_err(|e| fail(0, lines[0].0, e))?;
    if header.dim == 0 {
        return Err(Error::Malformed(format!("{name}: header dim is 0")));
    }
    let mut store = EmbeddingStore::new(header.dim);
    for (idx, &(lineno, line)) in lines.iter().enumerate().skip(1) {
        let record: StoreRecord = serde_json::from_str(line).map_err(|e| fail(idx, lineno, e))?;
        match record {
            StoreRecord::Instance { key, head, tail } => {
                check_row(header.dim, &[&head, &tail], &key)?;
                store.insert_instance(key, InstanceEmbedding::new(head, tail)?)?;
            }
            StoreRecord::Relation {
                relation,
                cls,
                mean,
            } => {
                check_row(header.dim, &[&cls, &mean], &relation)?;
                store.insert_relation(relation, RelationEmbedding::new(cls, mean)?)?;
            }
        }
    }
    Ok(store)
}

fn check_row(dim: usize, vectors: &[&Vec<f64>], key: &str) -> Result<()> {
    for v in vectors {
        if v.len() != dim {
            return Err(Error::dim(dim, v.len(), format!("record `{key}`")));
        }
    }
    Ok(())
}

fn json_line<T: Serialize>(out: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Malformed(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Error::io(path, e))
}

/// Header first, then instances and relations in key order.
pub fn write_embedding_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    json_line(&mut out, &StoreHeader { dim: store.dim }, path)?;
    for (key, e) in &store.instances {
        let record = StoreRecord::Instance {
            key: key.clone(),
            head: e.head.clone(),
            tail: e.tail.clone(),
        };
        json_line(&mut out, &record, path)?;
    }
    for (id, e) in &store.relations {
        let record = StoreRecord::Relation {
            relation: id.clone(),
            cls: e.cls.clone(),
            mean: e.mean.clone(),
        };
        json_line(&mut out, &record, path)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
