//! Central finite-difference verification of analytic gradients.
//!
//! The loss under check is the engine's own objective: mean squared error of
//! the graph's predictions against a target vector, evaluated in eval mode so
//! the check is deterministic (dropout is the identity).

use super::graph::{Batch, Graph, Mode};
use super::train::{mse_grad, mse_loss};
use super::NnError;

/// Worst observed disagreement between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub n_params: usize,
}

/// Relative error with an absolute floor: `|a-n| / max(1, |a|, |n|)`.
/// The floor keeps near-zero gradients from inflating the ratio past what
/// finite-difference truncation can resolve.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs())
}

fn loss_of(graph: &Graph, batch: &Batch, targets: &[f64]) -> Result<f64, NnError> {
    let pass = graph.forward(batch, Mode::Eval, None)?;
    mse_loss(pass.predictions(), targets)
}

/// Compare backprop gradients against central finite differences over every
/// scalar parameter of `graph`.
pub fn check(
    graph: &mut Graph,
    batch: &Batch,
    targets: &[f64],
    step: f64,
) -> Result<GradCheckReport, NnError> {
    let pass = graph.forward(batch, Mode::Eval, None)?;
    let out_grad = mse_grad(pass.predictions(), targets)?;
    let analytic = graph.backward(&pass, &out_grad)?;

    let mut max_rel = 0.0;
    let mut worst = String::new();
    let mut n_params = 0;

    let names: Vec<(String, usize)> = graph
        .parameters()
        .iter()
        .map(|(n, t)| (n.clone(), t.numel()))
        .collect();
    for (name, numel) in names {
        let a_tensor = analytic.get(&name).expect("gradient for every parameter");
        for idx in 0..numel {
            let original = graph.param(&name).unwrap().data()[idx];
            graph.add_to_param(&name, idx, step)?;
            let plus = loss_of(graph, batch, targets)?;
            graph.add_to_param(&name, idx, -2.0 * step)?;
            let minus = loss_of(graph, batch, targets)?;
            // Restore exactly rather than adding the step back.
            let mut t = graph.param(&name).unwrap().clone();
            t.data_mut()[idx] = original;
            graph.set_param(&name, t)?;

            let numeric = (plus - minus) / (2.0 * step);
            let rel = rel_error(a_tensor.data()[idx], numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{idx}]");
            }
            n_params += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        n_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::GraphBuilder;
    use crate::nn::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_chain_passes_fd_check() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[4]).unwrap();
        let h = b.dense("h", x, 3).unwrap();
        let r = b.relu("r", h).unwrap();
        let o = b.dense("o", r, 1).unwrap();
        let mut g = b.finish(o, 17).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = Batch::new().with("x", Tensor::from_vec(&[2, 4], data).unwrap());
        let report = check(&mut g, &batch, &[0.3, -0.7], 1e-3).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "max rel error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
    }
}
