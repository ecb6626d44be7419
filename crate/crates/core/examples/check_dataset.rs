//! Load and validate a FewRel-format file.
//!
//! ```bash
//! cargo run --example check_dataset -- path/to/train_wiki.json
//! ```
//!
//! Without an argument a small generated dataset is written to a temporary
//! directory and checked instead.

use std::path::PathBuf;

use protofuse::ingest::{check_dataset, load_dataset, write_dataset};
use protofuse::synthetic::{token_task, TokenTaskSpec};

fn main() -> protofuse::Result<()> {
    let path = match std::env::args_os().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let dir = std::env::temp_dir().join("protofuse-check-example");
            std::fs::create_dir_all(&dir).expect("temp dir is writable");
            let (ds, _) = token_task(
                1,
                TokenTaskSpec {
                    relations: 4,
                    instances_per_relation: 5,
                    ..Default::default()
                },
            )?;
            let path = dir.join("data.json");
            write_dataset(&ds, &path)?;
            path
        }
    };

    let report = check_dataset(&path)?;
    println!(
        "{}: {} relations",
        path.display(),
        report.instance_counts.len()
    );
    for (id, n) in &report.instance_counts {
        println!("  {id}: {n} instances");
    }
    if report.violations.is_empty() {
        let ds = load_dataset(&path)?;
        let first = ds.iter().next().and_then(|(_, list)| list.first());
        if let Some(inst) = first {
            println!(
                "first instance: head {:?} tail {:?}",
                &inst.tokens[inst.head.start..inst.head.end],
                &inst.tokens[inst.tail.start..inst.tail.end]
            );
        }
    } else {
        for v in &report.violations {
            println!("  violation: {v}");
        }
    }
    Ok(())
}
