//! Score one hand-built 2-way 1-shot episode with and without relation
//! information.
//!
//! ```bash
//! cargo run --example quickstart
//! ```

use protofuse::model::{Episode, InstanceEmbedding, RelationEmbedding};
use protofuse::protonet::{
    compute_prototypes, episode_forward, fuse, score, softmax, FusionStrategy,
};

fn inst(head: [f64; 2], tail: [f64; 2]) -> InstanceEmbedding {
    InstanceEmbedding::new(head.to_vec(), tail.to_vec()).unwrap()
}

fn main() -> protofuse::Result<()> {
    // Support shots for "born_in" and "capital_of".
    let support = vec![
        vec![inst([1.0, 0.0], [0.0, 0.0])],
        vec![inst([0.0, 1.0], [0.0, 0.0])],
    ];
    let relations = vec![
        RelationEmbedding::new(vec![0.0, 0.0], vec![1.0, 0.0])?,
        RelationEmbedding::new(vec![0.0, 0.0], vec![0.0, 1.0])?,
    ];
    // The query's tail matches "capital_of" only through the relation text.
    let query = inst([0.6, 0.4], [0.0, 1.0]);

    let protos = compute_prototypes(&support)?;
    for strategy in [FusionStrategy::None, FusionStrategy::DirectAdd] {
        let fused = fuse(&protos, &relations, &strategy)?;
        let scores = score(&query, &fused)?;
        println!(
            "{:<20} scores {:?} probs {:.3?}",
            strategy.kind().label(),
            scores,
            softmax(&scores)
        );
    }

    let ep = Episode::new(
        vec!["born_in".into(), "capital_of".into()],
        support,
        vec![(query, 1)],
        relations,
    )?;
    let out = episode_forward(&ep, &FusionStrategy::DirectAdd)?;
    println!(
        "prediction {} (label 1), loss {:.4}",
        out.predictions[0], out.loss
    );
    Ok(())
}
