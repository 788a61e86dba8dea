//! Generates every point set, writes it as CSV and draws a scatter plot.
//!
//!     cargo run --example datasets -- [out_dir]

use std::path::PathBuf;

use rknet::analysis::{emit_svg, figure_path, Figure};
use rknet::data::{gen_point_dataset, save_csv, POINT_DATASETS};

fn main() -> rknet::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "datasets".into()));
    std::fs::create_dir_all(&out).map_err(|e| rknet::Error::Io { path: out.clone(), source: e })?;

    for name in POINT_DATASETS {
        let ds = gen_point_dataset(name, 1500, 1)?;
        save_csv(&ds, out.join(format!("{name}.csv")))?;

        let fig = match ds.dim {
            2 => Figure::Scatter2d {
                points: ds.samples.iter().map(|s| [s[0], s[1]]).collect(),
                labels: ds.labels.clone(),
            },
            _ => Figure::Scatter3dProjected {
                points: ds.samples.iter().map(|s| [s[0], s[1], s[2]]).collect(),
                labels: ds.labels.clone(),
            },
        };
        emit_svg(&fig, figure_path(&out, fig.kind(), name))?;
        println!("{name:<14} dim={} classes={} counts={:?}", ds.dim, ds.classes, ds.class_counts());
    }
    println!("wrote CSV files and figures to {}", out.display());
    Ok(())
}
