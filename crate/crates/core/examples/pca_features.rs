//! Trains RK4Net on three nested spherical shells, then looks at the final
//! features through PCA.
//!
//!     cargo run --release --example pca_features

use rknet::analysis::{emit_svg, final_features, pca_fit, pca_project, Figure};
use rknet::data::{gen_point_dataset, split};
use rknet::network::{Activation, Architecture, ModelParams, ModelSpec};
use rknet::numerics::RngState;
use rknet::training::{train, AdamConfig, TrainConfig};

fn main() -> rknet::Result<()> {
    let data = split(&gen_point_dataset("donut_3d_3c", 1500, 5)?, 0.8, 6)?;
    let spec = ModelSpec {
        arch: Architecture::rk4(),
        activation: Activation::Tanh,
        width: 6,
        depth: 20,
        step: 0.1,
        input_dim: 3,
        classes: 3,
    };
    let rng = RngState::new(11);
    let model = ModelParams::init(spec, &mut rng.child(0))?;
    let config = TrainConfig {
        epochs: 30,
        adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let (model, metrics) = train(model, &data, &config, &mut rng.child(1), |m| {
        if m.epoch % 5 == 0 {
            println!("epoch {:>3}  val acc {:6.2}%  val cost {:.4}", m.epoch, m.val_acc, m.val_cost);
        }
    })?;
    println!("final val accuracy {:.2}%", metrics.last().unwrap().val_acc);

    let features = final_features(&model, &data.val.samples)?;
    let pca = pca_fit(&features, 3)?;
    let total: f64 = pca.explained_variance.iter().sum();
    for (i, v) in pca.explained_variance.iter().enumerate() {
        println!("component {i}: variance {v:.4} ({:.1}%)", 100.0 * v / total);
    }
    let points = features
        .iter()
        .map(|f| pca_project(&pca, f).map(|p| [p[0], p[1], p[2]]))
        .collect::<rknet::Result<Vec<_>>>()?;
    let fig = Figure::Scatter3dProjected { points, labels: data.val.labels.clone() };
    emit_svg(&fig, "features-donut_3d_3c.svg")?;
    println!("wrote features-donut_3d_3c.svg");
    Ok(())
}
