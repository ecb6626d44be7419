//! Write a 768-dimensional embedding store, read it back, and evaluate a
//! frozen model on it. Real stores come from an external exporter; this
//! one is filled with class-dependent noise.
//!
//! ```bash
//! cargo run --release --example embedding_store
//! ```

use protofuse::encoder::TRANSFORMER_DIM;
use protofuse::experiments::{evaluate, EncoderKind, Model, Setting, Task, TrainConfig};
use protofuse::ingest::{read_embedding_store, write_embedding_store, EmbeddingStore};
use protofuse::model::{InstanceEmbedding, RelationEmbedding};
use protofuse::synthetic::{token_task, TokenTaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> protofuse::Result<()> {
    let (data, relations) = token_task(
        5,
        TokenTaskSpec {
            relations: 10,
            instances_per_relation: 8,
            ..Default::default()
        },
    )?;
    let d = TRANSFORMER_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = EmbeddingStore::new(d);
    for (id, list) in data.iter() {
        let center: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut noisy = |scale: f64| -> Vec<f64> {
            center
                .iter()
                .map(|c| c + scale * rng.random_range(-1.0..1.0))
                .collect()
        };
        for inst in list {
            store.insert_instance(inst.key(), InstanceEmbedding::new(noisy(2.0), noisy(2.0))?)?;
        }
        store.insert_relation(id, RelationEmbedding::new(noisy(0.5), noisy(0.5))?)?;
    }

    let path = std::env::temp_dir().join("protofuse-example-store.jsonl");
    write_embedding_store(&store, &path)?;
    let loaded = read_embedding_store(&path)?;
    println!(
        "{}: dim {}, {} instances, {} relations",
        path.display(),
        loaded.dim(),
        loaded.num_instances(),
        loaded.num_relations()
    );

    let task = Task::new(&data, &relations);
    for fusion in ["none", "direct_add"] {
        let cfg = TrainConfig {
            encoder: EncoderKind::Precomputed,
            dim: d,
            fusion: fusion.parse()?,
            ..TrainConfig::default()
        };
        let model = Model::init(&cfg, Some(&loaded))?;
        let r = evaluate(&model, task, Setting::new(5, 1), 1, 500, 1)?;
        println!(
            "{:<20} 5-w-1-s {:.2}% ± {:.2}",
            r.label,
            100.0 * r.accuracy,
            100.0 * r.stderr
        );
    }
    Ok(())
}
