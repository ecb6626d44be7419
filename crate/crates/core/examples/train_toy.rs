//! Train the hashing toy encoder with direct-addition fusion on a
//! generated token task and compare against the untrained model.
//!
//! ```bash
//! cargo run --release --example train_toy
//! ```

use protofuse::experiments::{evaluate, train, Model, Task, TrainConfig};
use protofuse::synthetic::{token_task, TokenTaskSpec};

fn main() -> protofuse::Result<()> {
    env_logger::init();
    let (data, relations) = token_task(42, TokenTaskSpec::default())?;
    let task = Task::new(&data, &relations);
    let cfg = TrainConfig {
        train_iters: 500,
        eval_iters: 300,
        ..TrainConfig::default()
    };

    let mut model = Model::init(&cfg, None)?;
    let before = evaluate(
        &model,
        task,
        cfg.setting(),
        cfg.q_query,
        cfg.eval_iters,
        cfg.seed,
    )?;
    let report = train(&cfg, task, &mut model)?;
    let after = evaluate(
        &model,
        task,
        cfg.setting(),
        cfg.q_query,
        cfg.eval_iters,
        cfg.seed,
    )?;

    for (i, chunk) in report.loss_curve.chunks(100).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!(
            "iters {:>4}-{:<4} mean loss {mean:.4}",
            i * 100,
            i * 100 + chunk.len()
        );
    }
    println!(
        "{} accuracy: {:.2}% untrained, {:.2}% trained ({:.1}s)",
        cfg.setting(),
        100.0 * before.accuracy,
        100.0 * after.accuracy,
        report.wall_time_secs
    );
    Ok(())
}
