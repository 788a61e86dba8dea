//! RK4Net on donut_2d with and without one extra feature dimension. Writes
//! trajectory and prediction figures for both runs.
//!
//!     cargo run --release --example augmentation

use rknet::cli::{run_experiment, DatasetSpec, ExperimentConfig};

fn main() -> rknet::Result<()> {
    for width in [2, 3] {
        let config = ExperimentConfig {
            dataset: DatasetSpec::Generated { name: "donut_2d".into(), n: 1500 },
            width: Some(width),
            depth: 100,
            epochs: 30,
            allow_node: true,
            seed: 3,
            output_dir: format!("runs/donut-width{width}").into(),
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&config)?;
        println!(
            "width {width}: val accuracy {:.2}%  (figures in {})",
            report.summary.val_acc.mean,
            report.run_dir.display()
        );
    }
    Ok(())
}
