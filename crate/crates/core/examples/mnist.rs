//! RK4Net on MNIST images read from IDX files.
//!
//!     cargo run --release --example mnist -- <dir> [train_images] [epochs]
//!
//! `<dir>` must hold `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`
//! (for instance from `scripts/build_mnist_subset.py`). The first
//! `train_images` images (default 2000) are split 80/20.

use std::path::PathBuf;

use rknet::cli::{run_experiment, DatasetSpec, ExperimentConfig};
use rknet::training::TrainMetrics;

fn main() -> rknet::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist".into()));
    let limit = args.next().map_or(2000, |a| a.parse().expect("image count"));
    let epochs = args.next().map_or(3, |a| a.parse().expect("epochs"));

    let config = ExperimentConfig {
        dataset: DatasetSpec::Idx {
            images: dir.join("train-images-idx3-ubyte"),
            labels: dir.join("train-labels-idx1-ubyte"),
            limit: Some(limit),
        },
        width: Some(28 * 28 + 4),
        depth: 20,
        epochs,
        train_metrics: TrainMetrics::Running,
        plots: false,
        output_dir: "runs/mnist".into(),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&config)?;
    for m in &report.metrics[0].epochs {
        println!(
            "epoch {:>2}  train acc {:6.2}%  val acc {:6.2}%  ({:.0} s)",
            m.epoch, m.train_acc, m.val_acc, m.seconds
        );
    }
    Ok(())
}
