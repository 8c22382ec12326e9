use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gclstm::{GclstmCache, GclstmParameters};
use super::gcrn::{GcrnCache, GcrnParameters};
use super::params::{join, ParamBlocks};
use super::{ModelKind, Task};
use crate::error::{Error, Result};
use crate::graph::PropagationMatrix;
use crate::panel::{Label, Snapshot, StandardizationParams, Target};

/// Rows per forward/backward chunk. Chunks are reduced in index order, so
/// results do not depend on the thread count.
const CHUNK_ROWS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum Cell {
    Gcrn(GcrnParameters),
    Gclstm(GclstmParameters),
}

/// Per-node linear read-out shared across nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParameters {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub cell: Cell,
    pub head: HeadParameters,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// `N × F` forecasts in natural units.
    Values(Array2<f64>),
    /// Arg-max class per node, ties to Stable.
    Labels(Vec<Label>),
}

enum StepCache {
    Gcrn(GcrnCache),
    Gclstm(GclstmCache),
}

/// Output columns: one per horizon step, or two class scores.
pub fn head_width(task: Task, horizon: usize) -> usize {
    match task {
        Task::Regression => horizon,
        Task::Classification => 2,
    }
}

impl Model {
    /// Seeded Glorot initialisation for a single-feature input.
    pub fn new(kind: ModelKind, task: Task, hidden: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = match kind {
            ModelKind::Gcrn => Cell::Gcrn(GcrnParameters::glorot(1, hidden, &mut rng)),
            ModelKind::Gclstm => Cell::Gclstm(GclstmParameters::glorot(1, hidden, &mut rng)),
        };
        let out = head_width(task, horizon);
        let limit = (6.0 / (hidden + out) as f64).sqrt();
        let head = HeadParameters {
            weight: Array2::from_shape_simple_fn((hidden, out), || {
                rng.random_range(-limit..=limit)
            }),
            bias: Array1::zeros(out),
        };
        Self { cell, head, task }
    }

    pub fn zeros(kind: ModelKind, task: Task, hidden: usize, horizon: usize) -> Self {
        let cell = match kind {
            ModelKind::Gcrn => Cell::Gcrn(GcrnParameters::zeros(1, hidden)),
            ModelKind::Gclstm => Cell::Gclstm(GclstmParameters::zeros(1, hidden)),
        };
        let out = head_width(task, horizon);
        Self {
            cell,
            head: HeadParameters {
                weight: Array2::zeros((hidden, out)),
                bias: Array1::zeros(out),
            },
            task,
        }
    }

    /// Same layout, all zeros. Used as gradient storage.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, block) in out.blocks_mut() {
            block.fill(0.0);
        }
        out
    }

    pub fn kind(&self) -> ModelKind {
        match self.cell {
            Cell::Gcrn(_) => ModelKind::Gcrn,
            Cell::Gclstm(_) => ModelKind::Gclstm,
        }
    }

    pub fn hidden(&self) -> usize {
        match &self.cell {
            Cell::Gcrn(c) => c.hidden(),
            Cell::Gclstm(c) => c.hidden(),
        }
    }

    fn in_dim(&self) -> usize {
        match &self.cell {
            Cell::Gcrn(c) => c.in_dim(),
            Cell::Gclstm(c) => c.in_dim(),
        }
    }

    /// Forecast steps for regression, 2 for classification.
    pub fn output_width(&self) -> usize {
        self.head.weight.ncols()
    }

    fn check_batch(&self, p: &PropagationMatrix, batch: &[&Snapshot]) -> Result<usize> {
        if self.in_dim() != 1 {
            return Err(Error::shape("model input features", 1, self.in_dim()));
        }
        let first = batch
            .first()
            .ok_or_else(|| Error::EmptyData("empty snapshot batch".into()))?;
        let len = first.window_len();
        if len == 0 {
            return Err(Error::EmptyData("snapshot window has no days".into()));
        }
        for snap in batch {
            if snap.node_count() != p.node_count() {
                return Err(Error::shape(
                    "snapshot nodes",
                    p.node_count(),
                    snap.node_count(),
                ));
            }
            if snap.window_len() != len {
                return Err(Error::shape(
                    "snapshot window length",
                    len,
                    snap.window_len(),
                ));
            }
        }
        Ok(len)
    }

    /// Runs the cell over the window. Returns the final hidden state, and
    /// the per-step caches when `keep` is set.
    fn run(
        &self,
        p: &PropagationMatrix,
        batch: &[&Snapshot],
        keep: bool,
    ) -> Result<(Array2<f64>, Vec<StepCache>)> {
        let steps = self.check_batch(p, batch)?;
        let n = p.node_count();
        let rows = batch.len() * n;
        let hidden = self.hidden();
        let mut h = Array2::zeros((rows, hidden));
        let mut c = Array2::zeros((rows, hidden));
        let mut caches = Vec::with_capacity(if keep { steps } else { 0 });
        for step in 0..steps {
            let mut x = Array2::zeros((rows, 1));
            for (b, snap) in batch.iter().enumerate() {
                x.slice_mut(s![b * n..(b + 1) * n, 0])
                    .assign(&snap.window.column(step));
            }
            match &self.cell {
                Cell::Gcrn(cell) => {
                    let (next, cache) = cell.step_cached(p, &x, &h)?;
                    h = next;
                    if keep {
                        caches.push(StepCache::Gcrn(cache));
                    }
                }
                Cell::Gclstm(cell) => {
                    let (h_next, c_next, cache) = cell.step_cached(p, &x, &h, &c)?;
                    h = h_next;
                    c = c_next;
                    if keep {
                        caches.push(StepCache::Gclstm(cache));
                    }
                }
            }
        }
        Ok((h, caches))
    }

    /// Head output: values for regression, log-probabilities otherwise.
    fn read_out(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut out = h.dot(&self.head.weight);
        out += &self.head.bias;
        if self.task == Task::Classification {
            for mut row in out.axis_iter_mut(Axis(0)) {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.mapv_inplace(|v| v - lse);
            }
        }
        out
    }

    fn forward_chunk(&self, p: &PropagationMatrix, batch: &[&Snapshot]) -> Result<Array2<f64>> {
        let (h, _) = self.run(p, batch, false)?;
        Ok(self.read_out(&h))
    }

    /// Sum of per-snapshot losses over `batch`; accumulates
    /// `scale · ∂(sum)/∂θ` into `grad`.
    fn chunk_loss_grad(
        &self,
        p: &PropagationMatrix,
        batch: &[&Snapshot],
        scale: f64,
        grad: &mut Model,
    ) -> Result<f64> {
        let n = p.node_count();
        let (h, caches) = self.run(p, batch, true)?;
        let out = self.read_out(&h);
        let mut d_out = Array2::zeros(out.dim());
        let mut total = 0.0;
        for (b, snap) in batch.iter().enumerate() {
            let rows = s![b * n..(b + 1) * n, ..];
            let pred = out.slice(rows);
            total += snapshot_loss(&pred.to_owned(), &snap.target, self.task)?;
            let mut d = d_out.slice_mut(rows);
            match &snap.target {
                Target::Values(y) => {
                    let k = 2.0 * scale / y.len() as f64;
                    Zip::from(&mut d)
                        .and(&pred)
                        .and(y)
                        .for_each(|d, &p, &y| *d = k * (p - y));
                }
                Target::Labels(labels) => {
                    let k = scale / labels.len() as f64;
                    for ((mut d, lp), &label) in d
                        .axis_iter_mut(Axis(0))
                        .zip(pred.axis_iter(Axis(0)))
                        .zip(labels)
                    {
                        for (class, (dv, &l)) in d.iter_mut().zip(lp).enumerate() {
                            let onehot = if class == label as usize { 1.0 } else { 0.0 };
                            *dv = k * (l.exp() - onehot);
                        }
                    }
                }
            }
        }

        ndarray::linalg::general_mat_mul(1.0, &h.t(), &d_out, 1.0, &mut grad.head.weight);
        grad.head.bias += &d_out.sum_axis(Axis(0));
        let mut d_h = d_out.dot(&self.head.weight.t());
        let mut d_c = Array2::zeros(d_h.dim());

        for cache in caches.iter().rev() {
            match (&self.cell, &mut grad.cell, cache) {
                (Cell::Gcrn(cell), Cell::Gcrn(g), StepCache::Gcrn(cache)) => {
                    d_h = cell.step_backward(p, cache, &d_h, g)?;
                }
                (Cell::Gclstm(cell), Cell::Gclstm(g), StepCache::Gclstm(cache)) => {
                    let (dh, dc) = cell.step_backward(p, cache, &d_h, &d_c, g)?;
                    d_h = dh;
                    d_c = dc;
                }
                _ => return Err(Error::invalid("gradient storage does not match the model")),
            }
        }
        Ok(total)
    }
}

fn chunks<'a>(
    batch: &'a [&'a Snapshot],
    n: usize,
) -> impl ParallelIterator<Item = &'a [&'a Snapshot]> {
    let per_chunk = (CHUNK_ROWS / n.max(1)).max(1);
    batch.par_chunks(per_chunk)
}

fn snapshot_loss(pred: &Array2<f64>, target: &Target, task: Task) -> Result<f64> {
    match (task, target) {
        (Task::Regression, Target::Values(y)) => {
            if pred.dim() != y.dim() {
                return Err(Error::shape("regression target", pred.dim(), y.dim()));
            }
            let sse: f64 = pred.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum();
            Ok(sse / y.len() as f64)
        }
        (Task::Classification, Target::Labels(labels)) => {
            if pred.dim() != (labels.len(), 2) {
                return Err(Error::shape(
                    "classification target",
                    pred.dim(),
                    (labels.len(), 2),
                ));
            }
            let mut nll = 0.0;
            for (row, &label) in pred.axis_iter(Axis(0)).zip(labels) {
                if label > 1 {
                    return Err(Error::invalid(format!("label {label} outside {{0, 1}}")));
                }
                nll -= row[label as usize];
            }
            Ok(nll / labels.len() as f64)
        }
        (task, _) => Err(Error::invalid(format!(
            "snapshot target does not fit a {task} model"
        ))),
    }
}

/// Model output for one snapshot: `N × F` values or `N × 2` log-probabilities.
pub fn forward(model: &Model, snapshot: &Snapshot, p: &PropagationMatrix) -> Result<Array2<f64>> {
    model.forward_chunk(p, &[snapshot])
}

/// Mean squared error (regression) or mean negative log-likelihood
/// (classification) of one prediction.
pub fn loss(prediction: &Array2<f64>, target: &Target, task: Task) -> Result<f64> {
    snapshot_loss(prediction, target, task)
}

/// Mean batch loss and its exact gradient, laid out like the model.
pub fn gradients(model: &Model, batch: &[Snapshot], p: &PropagationMatrix) -> Result<(f64, Model)> {
    let refs: Vec<&Snapshot> = batch.iter().collect();
    if refs.is_empty() {
        return Err(Error::EmptyData("gradient of an empty batch".into()));
    }
    let scale = 1.0 / refs.len() as f64;
    let parts: Vec<(f64, Model)> = chunks(&refs, p.node_count())
        .map(|chunk| {
            let mut grad = model.zeros_like();
            let total = model.chunk_loss_grad(p, chunk, scale, &mut grad)?;
            Ok((total, grad))
        })
        .collect::<Result<_>>()?;

    let mut parts = parts.into_iter();
    let (mut total, mut grad) = parts.next().expect("non-empty batch");
    for (t, g) in parts {
        total += t;
        for ((_, acc), (_, part)) in grad.blocks_mut().into_iter().zip(g.blocks()) {
            for (a, v) in acc.iter_mut().zip(part) {
                *a += v;
            }
        }
    }
    let mean = total * scale;
    if !mean.is_finite() {
        let block = model
            .first_non_finite()
            .or_else(|| grad.first_non_finite())
            .unwrap_or_else(|| "loss".to_string());
        return Err(Error::NonFinite { block });
    }
    Ok((mean, grad))
}

/// Predictions in natural units. Regression outputs are de-standardised
/// per node; classification takes the per-node arg-max.
pub fn predict_batch(
    model: &Model,
    snapshots: &[Snapshot],
    p: &PropagationMatrix,
    standardization: &StandardizationParams,
) -> Result<Vec<Prediction>> {
    if snapshots.is_empty() {
        return Ok(Vec::new());
    }
    let n = p.node_count();
    if model.task == Task::Regression && standardization.node_count() != n {
        return Err(Error::shape(
            "standardization nodes",
            n,
            standardization.node_count(),
        ));
    }
    let refs: Vec<&Snapshot> = snapshots.iter().collect();
    let outputs: Vec<Array2<f64>> = chunks(&refs, n)
        .map(|chunk| model.forward_chunk(p, chunk))
        .collect::<Result<_>>()?;

    let mut preds = Vec::with_capacity(snapshots.len());
    for out in outputs {
        for block in out.axis_chunks_iter(Axis(0), n) {
            preds.push(match model.task {
                Task::Regression => {
                    let mut values = block.to_owned();
                    for ((mut row, &mu), &sigma) in values
                        .axis_iter_mut(Axis(0))
                        .zip(&standardization.mu)
                        .zip(&standardization.sigma)
                    {
                        row.mapv_inplace(|z| z * sigma + mu);
                    }
                    Prediction::Values(values)
                }
                Task::Classification => Prediction::Labels(
                    block
                        .axis_iter(Axis(0))
                        .map(|lp| if lp[1] > lp[0] { 1 } else { 0 })
                        .collect(),
                ),
            });
        }
    }
    Ok(preds)
}

impl ParamBlocks for HeadParameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(
            join(prefix, "weight"),
            self.weight.as_slice().expect("standard layout"),
        );
        f(
            join(prefix, "bias"),
            self.bias.as_slice().expect("standard layout"),
        );
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64])) {
        f(
            join(prefix, "weight"),
            self.weight.as_slice_mut().expect("standard layout"),
        );
        f(
            join(prefix, "bias"),
            self.bias.as_slice_mut().expect("standard layout"),
        );
    }
}

impl ParamBlocks for Model {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        match &self.cell {
            Cell::Gcrn(c) => c.visit(&join(prefix, "gcrn"), f),
            Cell::Gclstm(c) => c.visit(&join(prefix, "gclstm"), f),
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64])) {
        match &mut self.cell {
            Cell::Gcrn(c) => c.visit_mut(&join(prefix, "gcrn"), f),
            Cell::Gclstm(c) => c.visit_mut(&join(prefix, "gclstm"), f),
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::graph::{propagation_matrix, Edge, MobilityGraph};
    use crate::panel::DayRange;

    fn snapshot(window: Array2<f64>, target: Target) -> Snapshot {
        let l = window.ncols();
        Snapshot {
            window,
            target,
            anchor_day: l - 1,
            horizon: 1,
        }
    }

    fn line_graph(n: usize) -> PropagationMatrix {
        let ids = (0..n).map(|i| i.to_string()).collect();
        let edges = (0..n - 1).map(|i| Edge {
            source: i,
            target: i + 1,
            weight: 1.0 + i as f64,
        });
        propagation_matrix(&MobilityGraph::undirected(ids, edges).unwrap()).unwrap()
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let model = Model::zeros(ModelKind::Gclstm, Task::Classification, 3, 1);
        let snap = snapshot(Array2::ones((4, 5)), Target::Labels(vec![0, 1, 1, 0]));
        let out = forward(&model, &snap, &line_graph(4)).unwrap();
        assert!(out.iter().all(|&v| (v - 0.5f64.ln()).abs() < 1e-15));
        let l = loss(&out, &snap.target, Task::Classification).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_regressor_predicts_zero() {
        let model = Model::zeros(ModelKind::Gcrn, Task::Regression, 3, 2);
        let snap = snapshot(Array2::ones((4, 5)), Target::Values(Array2::zeros((4, 2))));
        let out = forward(&model, &snap, &line_graph(4)).unwrap();
        assert_eq!(out, Array2::<f64>::zeros((4, 2)));
    }

    #[test]
    fn regression_loss_examples() {
        let target = Target::Values(array![[3.0, 4.0]]);
        assert_eq!(
            loss(&array![[0.0, 0.0]], &target, Task::Regression).unwrap(),
            12.5
        );
        assert_eq!(
            loss(&array![[3.0, 4.0]], &target, Task::Regression).unwrap(),
            0.0
        );
        assert!(loss(&array![[3.0]], &target, Task::Regression).is_err());
        assert!(loss(&array![[3.0, 4.0]], &target, Task::Classification).is_err());
    }

    #[test]
    fn log_probs_normalise() {
        for seed in 0..5 {
            let model = Model::new(ModelKind::Gcrn, Task::Classification, 4, 1, seed);
            let window =
                Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * (j as f64 + 1.0));
            let out = forward(
                &model,
                &snapshot(window, Target::Labels(vec![0; 5])),
                &line_graph(5),
            )
            .unwrap();
            for row in out.axis_iter(Axis(0)) {
                let total: f64 = row.iter().map(|v| v.exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_model_has_zero_head_weight_gradient() {
        let model = Model::zeros(ModelKind::Gcrn, Task::Regression, 3, 1);
        let batch = vec![snapshot(
            Array2::from_elem((3, 4), 2.0),
            Target::Values(Array2::from_elem((3, 1), 5.0)),
        )];
        let (l, grad) = gradients(&model, &batch, &line_graph(3)).unwrap();
        assert_eq!(l, 25.0);
        assert!(grad.head.weight.iter().all(|&v| v == 0.0));
        assert_eq!(grad.head.bias[0], -10.0);
    }

    #[test]
    fn classification_head_bias_gradient_is_mean_residual() {
        let model = Model::new(ModelKind::Gclstm, Task::Classification, 3, 1, 9);
        let p = line_graph(3);
        let batch: Vec<_> = (0..2)
            .map(|b| {
                let w = Array2::from_shape_fn((3, 4), |(i, j)| (i + j + b) as f64 * 0.3 - 1.0);
                snapshot(w, Target::Labels(vec![1, 0, b as u8]))
            })
            .collect();
        let (_, grad) = gradients(&model, &batch, &p).unwrap();
        let mut expect = Array1::<f64>::zeros(2);
        for snap in &batch {
            let out = forward(&model, snap, &p).unwrap();
            let Target::Labels(labels) = &snap.target else {
                unreachable!()
            };
            for (row, &label) in out.axis_iter(Axis(0)).zip(labels) {
                for class in 0..2 {
                    let onehot = if class == label as usize { 1.0 } else { 0.0 };
                    expect[class] += (row[class].exp() - onehot) / 6.0;
                }
            }
        }
        for (g, e) in grad.head.bias.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_loss_names_block() {
        let mut model = Model::new(ModelKind::Gcrn, Task::Regression, 2, 1, 1);
        model.head.bias[0] = f64::NAN;
        let batch = vec![snapshot(
            Array2::ones((3, 2)),
            Target::Values(Array2::ones((3, 1))),
        )];
        match gradients(&model, &batch, &line_graph(3)) {
            Err(Error::NonFinite { block }) => assert_eq!(block, "head.bias"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn predict_destandardizes_and_breaks_ties_to_stable() {
        let mut model = Model::zeros(ModelKind::Gcrn, Task::Regression, 2, 1);
        model.head.bias[0] = 1.2247;
        let snaps = vec![snapshot(
            Array2::zeros((2, 3)),
            Target::Values(Array2::zeros((2, 1))),
        )];
        let params = StandardizationParams {
            mu: vec![2.0, 0.0],
            sigma: vec![0.8165, 1.0],
            fit_range: DayRange::new(0, 3),
        };
        let Prediction::Values(v) =
            &predict_batch(&model, &snaps, &line_graph(2), &params).unwrap()[0]
        else {
            unreachable!()
        };
        assert!((v[[0, 0]] - 3.0).abs() < 1e-3);
        assert_eq!(v[[1, 0]], 1.2247);

        let clf = Model::zeros(ModelKind::Gcrn, Task::Classification, 2, 1);
        let snaps = vec![snapshot(Array2::zeros((2, 3)), Target::Labels(vec![1, 1]))];
        let preds = predict_batch(&clf, &snaps, &line_graph(2), &params).unwrap();
        assert_eq!(preds[0], Prediction::Labels(vec![0, 0]));
    }

    #[test]
    fn batch_shape_errors() {
        let model = Model::zeros(ModelKind::Gcrn, Task::Regression, 2, 1);
        let p = line_graph(3);
        let a = snapshot(Array2::zeros((3, 3)), Target::Values(Array2::zeros((3, 1))));
        let b = snapshot(Array2::zeros((3, 4)), Target::Values(Array2::zeros((3, 1))));
        assert!(gradients(&model, &[a.clone(), b], &p).is_err());
        let wrong_nodes = snapshot(Array2::zeros((2, 3)), Target::Values(Array2::zeros((2, 1))));
        assert!(forward(&model, &wrong_nodes, &p).is_err());
        assert!(gradients(&model, &[], &p).is_err());
    }
}
