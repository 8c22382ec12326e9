//! Random instances and the finite-difference gradient check shared by the
//! integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use epigraph_core::graph::{propagation_matrix, Edge, MobilityGraph, PropagationMatrix};
use epigraph_core::panel::{Snapshot, Target};
use epigraph_core::stgnn::{gradients, Model, ModelKind, ParamBlocks, Task};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> PropagationMatrix {
    let ids = (0..n).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.5) {
                edges.push(Edge {
                    source: i,
                    target: j,
                    weight: rng.random_range(0.1..5.0),
                });
            }
        }
    }
    propagation_matrix(&MobilityGraph::new(ids, edges).unwrap()).unwrap()
}

pub fn randomize(model: &mut Model, rng: &mut ChaCha8Rng, scale: f64) {
    for (_, block) in model.blocks_mut() {
        for v in block.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
}

pub fn random_batch(
    n: usize,
    l: usize,
    horizon: usize,
    task: Task,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Snapshot> {
    (0..count)
        .map(|b| Snapshot {
            window: random_matrix(n, l, rng),
            target: match task {
                Task::Regression => Target::Values(random_matrix(n, horizon, rng)),
                Task::Classification => {
                    Target::Labels((0..n).map(|_| rng.random_range(0..2u8)).collect())
                }
            },
            anchor_day: l - 1 + b,
            horizon,
        })
        .collect()
}

fn batch_loss(model: &Model, batch: &[Snapshot], p: &PropagationMatrix) -> f64 {
    gradients(model, batch, p).unwrap().0
}

/// Compares every reverse-mode derivative of a random instance with a
/// central difference of step `1e-5` and returns the largest relative
/// error, or a description of the first entry at or above `tol`.
///
/// Rounding in the loss limits the numeric derivative to about `1e-11`
/// absolute accuracy, so the relative error denominator is floored at
/// `1e-4`.
pub fn check_gradients(kind: ModelKind, task: Task, seed: u64, tol: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6);
    let l = rng.random_range(1..=4);
    let hidden = rng.random_range(1..=5);
    let horizon = rng.random_range(1..=3);
    let mut model = Model::zeros(kind, task, hidden, horizon);
    randomize(&mut model, &mut rng, 0.7);
    let p = random_graph(n, &mut rng);
    let batch = random_batch(n, l, horizon, task, 3, &mut rng);
    let (_, analytic) = gradients(&model, &batch, &p).map_err(|e| e.to_string())?;

    let step = 1e-5;
    let names: Vec<(String, usize)> = model
        .blocks()
        .iter()
        .map(|(n, b)| (n.clone(), b.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.blocks().iter().map(|(_, b)| b.to_vec()).collect();
    let mut worst = 0.0f64;
    for (bi, (name, len)) in names.iter().enumerate() {
        for e in 0..*len {
            let mut plus = model.clone();
            plus.blocks_mut()[bi].1[e] += step;
            let mut minus = model.clone();
            minus.blocks_mut()[bi].1[e] -= step;
            let numeric =
                (batch_loss(&plus, &batch, &p) - batch_loss(&minus, &batch, &p)) / (2.0 * step);
            let a = grads[bi][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            if rel.is_nan() || rel >= tol {
                return Err(format!(
                    "{kind} {task} seed {seed}: {name}[{e}] analytic {a:e} numeric {numeric:e} rel {rel:e}"
                ));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
