//! Relation information on Gaussian clusters: each relation embedding is
//! the true class mean, so direct addition pulls prototypes toward it.
//!
//! ```bash
//! cargo run --release --example gaussian_efficacy
//! ```

use protofuse::encoder::fnv1a64;
use protofuse::experiments::{evaluate_with, Setting};
use protofuse::protonet::FusionStrategy;
use protofuse::synthetic::GaussianTask;

fn main() -> protofuse::Result<()> {
    let setting = Setting::new(5, 1);
    for sigma in [0.25, 0.5, 1.0] {
        let task = GaussianTask::new(2024, 20, 16, sigma)?;
        let mut line = format!("sigma {sigma:<5}");
        for strategy in [FusionStrategy::None, FusionStrategy::DirectAdd] {
            let r = evaluate_with(
                strategy.kind().label(),
                setting,
                &strategy,
                2000,
                17,
                |rng| {
                    let ep = task.episode(rng, 5, 1, 1)?;
                    let fp = fnv1a64(ep.class_ids.join(",").as_bytes());
                    Ok((ep, fp))
                },
            )?;
            line.push_str(&format!(
                "  {}: {:.2}% ± {:.2}",
                r.label,
                100.0 * r.accuracy,
                100.0 * r.stderr
            ));
        }
        println!("{line}");
    }
    Ok(())
}
