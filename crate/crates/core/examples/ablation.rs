//! Train and evaluate all five fusion rules on identical episode streams.
//! Evaluation uses relations never seen in training.
//!
//! ```bash
//! cargo run --release --example ablation
//! ```

use protofuse::experiments::{ablation_run, Setting, Task, TrainConfig};
use protofuse::ingest::{split_dataset, SplitSpec};
use protofuse::report::render_ablation;
use protofuse::synthetic::{token_task, TokenTaskSpec};

fn main() -> protofuse::Result<()> {
    let (data, relations) = token_task(
        3,
        TokenTaskSpec {
            relations: 30,
            ..Default::default()
        },
    )?;
    let ids: Vec<String> = data.relation_ids().map(String::from).collect();
    let (train, eval) = split_dataset(
        &data,
        &SplitSpec::new(ids[..20].to_vec(), ids[20..].to_vec())?,
    )?;

    let cfg = TrainConfig {
        train_iters: 500,
        eval_iters: 500,
        eval_settings: Setting::STANDARD.to_vec(),
        ..TrainConfig::default()
    };
    let table = ablation_run(
        &cfg,
        Task::new(&train, &relations),
        Task::new(&eval, &relations),
        None,
    )?;
    print!("{}", render_ablation(&table));
    Ok(())
}
