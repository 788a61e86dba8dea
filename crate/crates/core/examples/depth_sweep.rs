//! StandardNet against RK4Net on the spiral as depth grows.
//!
//!     cargo run --release --example depth_sweep -- [epochs_rk] [epochs_standard]
//!
//! Deep plain networks stall near chance while the RK networks keep their
//! accuracy. Runs go to `runs/depth-<arch>-<L>`.

use rknet::cli::{run_experiment, ArchChoice, DatasetSpec, ExperimentConfig};

fn main() -> rknet::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("epochs"));
    let epochs_rk = args.next().unwrap_or(40);
    let epochs_standard = args.next().unwrap_or(150);

    println!("{:>5}  {:>12}  {:>12}", "depth", "StandardNet", "RK4Net");
    for depth in [1, 5, 20, 40] {
        let mut row = Vec::new();
        for (arch, epochs) in [(ArchChoice::Standard, epochs_standard), (ArchChoice::Rk4, epochs_rk)] {
            let tag = if arch == ArchChoice::Standard { "standard" } else { "rk4" };
            let config = ExperimentConfig {
                dataset: DatasetSpec::Generated { name: "spiral".into(), n: 1500 },
                architecture: arch,
                width: Some(16),
                depth,
                epochs,
                seed: 1,
                plots: false,
                output_dir: format!("runs/depth-{tag}-{depth}").into(),
                ..ExperimentConfig::default()
            };
            row.push(run_experiment(&config)?.summary.val_acc.mean);
        }
        println!("{depth:>5}  {:>11.2}%  {:>11.2}%", row[0], row[1]);
    }
    Ok(())
}
