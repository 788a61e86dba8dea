//! Butcher tableaus, their symplectic conjugates, and adjoint gradients
//! checked against central finite differences.
//!
//!     cargo run --release --example gradient_check

use rknet::adjoint::{batch_gradients, finite_diff_grads, max_relative_error};
use rknet::network::{Activation, Architecture, ModelParams, ModelSpec};
use rknet::numerics::{Matrix, RngState};
use rknet::tableau::{symplectic_residual, ButcherTableau};

fn main() -> rknet::Result<()> {
    // Heun's method, as a third example next to the built-in ones.
    let heun = ButcherTableau::new(
        Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]])?,
        vec![0.5, 0.5],
        vec![0.0, 1.0],
    )?;
    let tableaus = [("euler", ButcherTableau::euler()), ("heun", heun), ("rk4", ButcherTableau::rk4())];

    for (name, t) in &tableaus {
        let conj = t.conjugate()?;
        println!(
            "{name:<6} s={} symplectic residual {:.1e}",
            t.stages(),
            symplectic_residual(t, &conj)
        );
    }

    let mut rng = RngState::new(2024);
    let inputs = [[0.3, -0.7], [-1.1, 0.4], [0.9, 0.9]];
    let labels = [0, 1, 2];
    for (name, t) in tableaus {
        for activation in [Activation::Tanh, Activation::Sigmoid, Activation::Softplus] {
            let spec = ModelSpec {
                arch: Architecture::RungeKutta { tableau: t.clone() },
                activation,
                width: 5,
                depth: 4,
                step: 0.3,
                input_dim: 2,
                classes: 3,
            };
            let model = ModelParams::init(spec, &mut rng)?;
            let (cost, adjoint) = batch_gradients(&model, &inputs, &labels, 1.0)?;
            let fd = finite_diff_grads(&model, &inputs, &labels, 1e-6)?;
            println!(
                "{name:<6} {:<9} cost {cost:.6}  max rel. error vs finite differences {:.1e}",
                activation.name(),
                max_relative_error(&adjoint, &fd)
            );
        }
    }
    Ok(())
}
