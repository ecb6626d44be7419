//! Save a trained model, load it back, and confirm it scores identically.
//!
//! ```bash
//! cargo run --release --example checkpoint
//! ```

use protofuse::checkpoint::{read_checkpoint, write_checkpoint};
use protofuse::experiments::{evaluate, train_and_evaluate, Task, TrainConfig};
use protofuse::protonet::FusionKind;
use protofuse::synthetic::{token_task, TokenTaskSpec};

fn main() -> protofuse::Result<()> {
    let (data, relations) = token_task(11, TokenTaskSpec::default())?;
    let task = Task::new(&data, &relations);
    let cfg = TrainConfig {
        fusion: FusionKind::ConcatProject,
        train_iters: 200,
        eval_iters: 200,
        ..TrainConfig::default()
    };
    let (model, _, results) = train_and_evaluate(&cfg, task, task, None)?;

    let path = std::env::temp_dir().join("protofuse-example-checkpoint.jsonl");
    write_checkpoint(&model, &cfg, &path)?;
    let (loaded, loaded_cfg) = read_checkpoint(&path, None)?;
    for r in &results {
        let again = evaluate(
            &loaded,
            task,
            r.setting,
            loaded_cfg.q_query,
            loaded_cfg.eval_iters,
            loaded_cfg.seed,
        )?;
        println!(
            "{}: {:.2}% before save, {:.2}% after load",
            r.setting,
            100.0 * r.accuracy,
            100.0 * again.accuracy
        );
    }
    Ok(())
}
