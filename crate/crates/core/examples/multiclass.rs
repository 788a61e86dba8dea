//! The three architectures on the four-class squares set.
//!
//!     cargo run --release --example multiclass -- [dataset]

use rknet::analysis::confusion;
use rknet::cli::{load_checkpoint, run_experiment, ArchChoice, DatasetSpec, ExperimentConfig};

fn main() -> rknet::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "squares_2d_4c".into());
    let cells = [(ArchChoice::Standard, 5, 150), (ArchChoice::Euler, 50, 40), (ArchChoice::Rk4, 50, 40)];
    for (arch, depth, epochs) in cells {
        let label = format!("{arch:?}").to_lowercase();
        let config = ExperimentConfig {
            dataset: DatasetSpec::Generated { name: name.clone(), n: 1500 },
            architecture: arch,
            width: Some(16),
            depth,
            epochs,
            seed: 7,
            output_dir: format!("runs/{name}-{label}").into(),
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&config)?;
        let model = load_checkpoint(report.run_dir.join("model-rep0.bin"))?;
        let val = config.materialize()?.val;
        println!("{label:<8} L={depth:<3} val accuracy {:.2}%", report.summary.val_acc.mean);
        for (class, row) in confusion(&model, &val)?.iter().enumerate() {
            println!("    true {class}: {row:?}");
        }
    }
    Ok(())
}
