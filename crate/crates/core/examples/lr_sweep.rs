//! Learning-rate sweep over the four standard settings, evaluated on
//! held-out relations.
//!
//! ```bash
//! cargo run --release --example lr_sweep
//! ```

use protofuse::experiments::{lr_sweep, Setting, Task, TrainConfig};
use protofuse::ingest::{split_dataset, SplitSpec};
use protofuse::report::render_sweep;
use protofuse::synthetic::{token_task, TokenTaskSpec};

fn main() -> protofuse::Result<()> {
    let (data, relations) = token_task(
        9,
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
        train_iters: 300,
        eval_iters: 300,
        eval_settings: Setting::STANDARD.to_vec(),
        ..TrainConfig::default()
    };
    let table = lr_sweep(
        &cfg,
        &[1e-4, 1e-3, 1e-2],
        Task::new(&train, &relations),
        Task::new(&eval, &relations),
        None,
    )?;
    print!("{}", render_sweep(&table));
    Ok(())
}
