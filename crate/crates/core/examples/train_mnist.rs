//! Trains the gated, balanced BasicCNN on MNIST and prints per-epoch
//! accuracy.
//!
//! ```text
//! cargo run --release --example train_mnist -- [seed] [epochs]
//! ```

use bbg::data::{data_root, fetch, load, DatasetId};
use bbg::train::{TrainConfig, TrainOptions, Trainer};

fn main() -> bbg::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(42, |s| s.parse().expect("seed"));
    let epochs = args.next().map_or(10, |s| s.parse().expect("epochs"));

    let root = data_root();
    fetch(DatasetId::Mnist, &root)?;
    let splits = load(DatasetId::Mnist, &root, seed)?;
    let config = TrainConfig {
        seed,
        epochs,
        ..TrainConfig::mnist()
    };
    println!("{}", config.to_json());
    let opts = TrainOptions {
        verbose: true,
        ..TrainOptions::default()
    };
    let (_, report) = Trainer::new(config, &splits)?.run(&opts)?;
    print!("{}", report.table());
    println!(
        "best test accuracy {:.4} at epoch {}, {:.0} s",
        report.final_accuracy.unwrap_or(0.0),
        report.best_epoch.unwrap_or(0),
        report.wall_clock_s
    );
    Ok(())
}
