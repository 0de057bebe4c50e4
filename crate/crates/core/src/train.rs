//! From-scratch training: softmax cross-entropy, analytic backpropagation
//! through the bilinear layers, AdamW with decoupled weight decay, exponential
//! learning-rate decay and latent-noise regularization.
//!
//! Latent noise adds `ratio · std(h) · z`, `z ~ N(0, 1)`, to the raw input, to
//! the embedding output and to every bilinear-layer output, where `std(h)` is
//! the population standard deviation of that sample's vector. The gradient
//! includes the dependence of `std(h)` on `h`, so it is exact for the noised
//! graph given the drawn `z`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{BatchIterator, LabeledDataset};
use crate::linalg::{dot, gemm, Matrix};
use crate::model::BilinearModel;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Mixed into the seed so noise and shuffling use unrelated ChaCha keys.
const NOISE_KEY: u64 = 0x9E37_79B9_7F4A_7C15;
const MAX_CHUNKS: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Latent-noise ratio; 0 disables noise.
    pub latent_noise: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Number of fixed sub-batches whose gradients are reduced in order.
    /// Results are deterministic for a given value.
    pub chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 100,
            learning_rate: 1e-3,
            weight_decay: 0.5,
            latent_noise: 0.33,
            lr_decay: 0.95,
            seed: 0,
            chunks: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.latent_noise >= 0.0 && self.latent_noise.is_finite()) {
            return fail(format!(
                "latent_noise must be nonnegative, got {}",
                self.latent_noise
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        if self.chunks == 0 || self.chunks as u64 > MAX_CHUNKS {
            return fail(format!("chunks must lie in 1..={MAX_CHUNKS}"));
        }
        Ok(())
    }
}

/// Gradients in [`BilinearModel::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &BilinearModel) -> Self {
        Self {
            params: model
                .parameters()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) -> Result<()> {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_scaled(alpha, b)?;
        }
        Ok(())
    }
}

/// What backprop needs from one noise injection.
struct NoiseRecord {
    z: Matrix,
    /// `(h − mean) / std` per row, zero for rows with zero spread.
    standardized: Matrix,
    ratio: f64,
}

/// Adds latent noise in place, one sample per row.
pub fn add_latent_noise<R: Rng + ?Sized>(h: &mut Matrix, ratio: f64, rng: &mut R) {
    inject(h, ratio, rng);
}

fn inject<R: Rng + ?Sized>(h: &mut Matrix, ratio: f64, rng: &mut R) -> NoiseRecord {
    let (rows, cols) = h.shape();
    let mut z = Matrix::zeros(rows, cols);
    let mut standardized = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = h.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
        let std = libm::sqrt(var);
        if std == 0.0 {
            continue;
        }
        let s_row = standardized.row_mut(r);
        for (s, x) in s_row.iter_mut().zip(row) {
            *s = (x - mean) / std;
        }
        let z_row = z.row_mut(r);
        for zi in z_row.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let scale = ratio * std;
        for (x, zi) in h.row_mut(r).iter_mut().zip(z.row(r)) {
            *x += scale * zi;
        }
    }
    NoiseRecord {
        z,
        standardized,
        ratio,
    }
}

/// Maps the gradient w.r.t. the noised vector to the pre-noise vector:
/// `g_i + ratio · (g·z) · (h_i − μ) / (n σ)`.
fn noise_backward(grad: &mut Matrix, rec: &NoiseRecord) {
    let cols = grad.cols() as f64;
    for r in 0..grad.rows() {
        let gz = dot(grad.row(r), rec.z.row(r));
        if gz == 0.0 {
            continue;
        }
        let coef = rec.ratio * gz / cols;
        for (g, s) in grad.row_mut(r).iter_mut().zip(rec.standardized.row(r)) {
            *g += coef * s;
        }
    }
}

struct LayerTape {
    input: Matrix,
    a: Matrix,
    b: Matrix,
    mid: Matrix,
    noise: Option<NoiseRecord>,
}

/// Mean softmax cross-entropy over the batch and its exact gradient.
///
/// With `noise > 0`, latent noise is drawn from `rng` at the input, after the
/// embedding and after every bilinear layer.
pub fn loss_and_gradients<R: Rng + ?Sized>(
    model: &BilinearModel,
    images: &Matrix,
    labels: &[usize],
    noise: f64,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let n = images.rows();
    if n == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            context: "batch labels",
            expected: n,
            found: labels.len(),
        });
    }
    if images.cols() != model.d_input() {
        return Err(Error::LengthMismatch {
            context: "batch input width",
            expected: model.d_input(),
            found: images.cols(),
        });
    }
    let classes = model.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: classes,
        });
    }
    let noisy = noise > 0.0;

    let mut x = images.clone();
    if noisy {
        inject(&mut x, noise, rng);
    }
    let mut h = Matrix::zeros(n, model.d_model());
    gemm(1.0, &x, false, &model.embed, true, 0.0, &mut h);
    let embed_noise = noisy.then(|| inject(&mut h, noise, rng));

    let mut tapes = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let mut a = Matrix::zeros(n, layer.d_hidden());
        let mut b = Matrix::zeros(n, layer.d_hidden());
        gemm(1.0, &h, false, &layer.w, true, 0.0, &mut a);
        gemm(1.0, &h, false, &layer.v, true, 0.0, &mut b);
        let mut mid = a.clone();
        for (m, y) in mid.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *m *= y;
        }
        let mut out = match &layer.proj {
            Some(p) => {
                let mut out = Matrix::zeros(n, p.rows());
                gemm(1.0, &mid, false, p, true, 0.0, &mut out);
                out
            }
            None => mid.clone(),
        };
        let rec = noisy.then(|| inject(&mut out, noise, rng));
        tapes.push(LayerTape {
            input: h,
            a,
            b,
            mid,
            noise: rec,
        });
        h = out;
    }
    let mut logits = Matrix::zeros(n, classes);
    gemm(1.0, &h, false, &model.unembed, true, 0.0, &mut logits);

    // Softmax cross-entropy; `logits` becomes dL/dlogits.
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row_mut(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
        let lse = max + libm::log(sum);
        loss += lse - row[label];
        for v in row.iter_mut() {
            *v = libm::exp(*v - lse) / n as f64;
        }
        row[label] -= 1.0 / n as f64;
    }
    loss /= n as f64;
    let dlogits = logits;

    let mut grads = Gradients::zeros_like(model);
    let last = grads.params.len() - 1;
    gemm(1.0, &dlogits, true, &h, false, 0.0, &mut grads.params[last]);
    let mut dh = Matrix::zeros(n, model.d_model());
    gemm(1.0, &dlogits, false, &model.unembed, false, 0.0, &mut dh);

    // Parameter slots: embed at 0, then W, V, [P] per layer.
    let mut slots = Vec::with_capacity(model.layers.len());
    let mut next = 1;
    for layer in &model.layers {
        slots.push(next);
        next += if layer.proj.is_some() { 3 } else { 2 };
    }

    for ((layer, tape), &slot) in model.layers.iter().zip(&tapes).zip(&slots).rev() {
        if let Some(rec) = &tape.noise {
            noise_backward(&mut dh, rec);
        }
        let dmid = match &layer.proj {
            Some(p) => {
                gemm(
                    1.0,
                    &dh,
                    true,
                    &tape.mid,
                    false,
                    0.0,
                    &mut grads.params[slot + 2],
                );
                let mut dmid = Matrix::zeros(n, layer.d_hidden());
                gemm(1.0, &dh, false, p, false, 0.0, &mut dmid);
                dmid
            }
            None => dh,
        };
        let mut da = dmid.clone();
        for (g, y) in da.as_mut_slice().iter_mut().zip(tape.b.as_slice()) {
            *g *= y;
        }
        let mut db = dmid;
        for (g, y) in db.as_mut_slice().iter_mut().zip(tape.a.as_slice()) {
            *g *= y;
        }
        gemm(
            1.0,
            &da,
            true,
            &tape.input,
            false,
            0.0,
            &mut grads.params[slot],
        );
        gemm(
            1.0,
            &db,
            true,
            &tape.input,
            false,
            0.0,
            &mut grads.params[slot + 1],
        );
        let mut next_dh = Matrix::zeros(n, layer.d_in());
        gemm(1.0, &da, false, &layer.w, false, 0.0, &mut next_dh);
        gemm(1.0, &db, false, &layer.v, false, 1.0, &mut next_dh);
        dh = next_dh;
    }
    if let Some(rec) = &embed_noise {
        noise_backward(&mut dh, rec);
    }
    gemm(1.0, &dh, true, &x, false, 0.0, &mut grads.params[0]);

    Ok((loss, grads))
}

/// First and second Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update (`step` counts from 1). Weight decay is decoupled:
/// `θ ← θ − lr·wd·θ` is applied before the bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    step: u64,
    lr: f64,
    weight_decay: f64,
) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - libm::pow(ADAM_BETA1, step as f64);
    let bc2 = 1.0 - libm::pow(ADAM_BETA2, step as f64);
    let decay = 1.0 - lr * weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *p *= decay;
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
    }
}

/// AdamW state for every parameter of a model.
#[derive(Debug, Clone)]
pub struct AdamW {
    moments: Vec<AdamMoments>,
    step: u64,
}

impl AdamW {
    pub fn new(model: &BilinearModel) -> Self {
        Self {
            moments: model
                .parameters()
                .iter()
                .map(|p| AdamMoments::zeros(p.as_slice().len()))
                .collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(
        &mut self,
        model: &mut BilinearModel,
        grads: &Gradients,
        lr: f64,
        weight_decay: f64,
    ) {
        self.step += 1;
        for ((param, grad), moments) in model
            .parameters_mut()
            .into_iter()
            .zip(&grads.params)
            .zip(&mut self.moments)
        {
            adamw_step(
                param.as_mut_slice(),
                grad.as_slice(),
                moments,
                self.step,
                lr,
                weight_decay,
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Zero-based.
    pub epoch: usize,
    /// Mean of the batch losses.
    pub loss: f64,
    pub batch_losses: Vec<f64>,
    pub val_accuracy: Option<f64>,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Where the final model was written, when the caller persisted it.
    pub checkpoint: Option<String>,
}

/// One sub-batch gradient evaluation with its own noise stream.
#[derive(Debug, Clone)]
pub struct GradientJob {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub noise: f64,
    pub noise_seed: u64,
    pub noise_stream: u64,
}

impl GradientJob {
    pub fn run(&self, model: &BilinearModel) -> Result<(f64, Gradients)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        rng.set_stream(self.noise_stream);
        loss_and_gradients(model, &self.images, &self.labels, self.noise, &mut rng)
    }
}

/// Hooks for the host environment: a clock, a way to evaluate gradient jobs
/// (possibly in parallel) and per-epoch notifications.
///
/// `gradients` must return results in job order; the trainer reduces them
/// in that order.
pub trait TrainRuntime {
    fn now_seconds(&self) -> f64 {
        0.0
    }

    fn gradients(
        &self,
        model: &BilinearModel,
        jobs: &[GradientJob],
    ) -> Result<Vec<(f64, Gradients)>> {
        jobs.iter().map(|job| job.run(model)).collect()
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

/// Single-threaded runtime without a clock.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl TrainRuntime for Sequential {}

pub fn train(
    model: &mut BilinearModel,
    data: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, data, validation, config, &mut Sequential)
}

pub fn train_with(
    model: &mut BilinearModel,
    data: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    config: &TrainConfig,
    runtime: &mut dyn TrainRuntime,
) -> Result<TrainReport> {
    config.validate()?;
    for ds in core::iter::once(data).chain(validation) {
        if ds.classes() != model.n_classes() {
            return Err(Error::LengthMismatch {
                context: "dataset classes",
                expected: model.n_classes(),
                found: ds.classes(),
            });
        }
        if ds.dim() != model.d_input() {
            return Err(Error::LengthMismatch {
                context: "dataset input width",
                expected: model.d_input(),
                found: ds.dim(),
            });
        }
    }

    let mut report = TrainReport::default();
    if config.epochs == 0 {
        return Ok(report);
    }
    if data.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }

    let mut batches = BatchIterator::new(data.len(), config.batch_size, config.seed)?;
    let mut optimizer = AdamW::new(model);
    let noise_seed = config.seed ^ NOISE_KEY;
    let mut lr = config.learning_rate;

    for epoch in 0..config.epochs {
        let start = runtime.now_seconds();
        let mut batch_losses = Vec::with_capacity(batches.batches_per_epoch());
        for batch in batches.next_epoch() {
            let step = optimizer.steps();
            let jobs: Vec<GradientJob> = split_even(&batch, config.chunks)
                .enumerate()
                .map(|(c, idx)| GradientJob {
                    images: data.images().select_rows(idx),
                    labels: idx.iter().map(|&i| data.labels()[i]).collect(),
                    noise: config.latent_noise,
                    noise_seed,
                    noise_stream: step * MAX_CHUNKS + c as u64,
                })
                .collect();
            let results = runtime.gradients(model, &jobs)?;

            let total = batch.len() as f64;
            let mut loss = 0.0;
            let mut grads = Gradients::zeros_like(model);
            for (job, (job_loss, job_grads)) in jobs.iter().zip(&results) {
                let weight = job.labels.len() as f64 / total;
                loss += weight * job_loss;
                grads.add_scaled(weight, job_grads)?;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            optimizer.step(model, &grads, lr, config.weight_decay);
            batch_losses.push(loss);
        }
        let val_accuracy = validation.map(|v| model.accuracy(v)).transpose()?;
        let record = EpochRecord {
            epoch,
            loss: batch_losses.iter().sum::<f64>() / batch_losses.len() as f64,
            batch_losses,
            val_accuracy,
            learning_rate: lr,
            seconds: runtime.now_seconds() - start,
        };
        runtime.on_epoch(&record);
        report.epochs.push(record);
        lr *= config.lr_decay;
    }
    report.steps = optimizer.steps();
    Ok(report)
}

/// Splits `items` into at most `parts` contiguous, nearly equal, nonempty
/// slices.
fn split_even(items: &[usize], parts: usize) -> impl Iterator<Item = &[usize]> {
    let parts = parts.clamp(1, items.len().max(1));
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut start = 0;
    (0..parts).filter_map(move |p| {
        let len = base + usize::from(p < extra);
        let slice = &items[start..start + len];
        start += len;
        (!slice.is_empty()).then_some(slice)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_quadrant_dataset;
    use crate::model::{BilinearLayer, Topology};

    fn softmax_ce(logits: &[f64], label: usize) -> f64 {
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + libm::log(logits.iter().map(|v| libm::exp(v - max)).sum::<f64>());
        lse - logits[label]
    }

    #[test]
    fn single_sample_loss_is_negative_log_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = BilinearModel::init(&Topology::classifier(4, 3, 1, 5), &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.2, 0.9, 0.1, 0.5]]);
        let (loss, _) = loss_and_gradients(&model, &x, &[3], 0.0, &mut rng).unwrap();
        let expected = softmax_ce(&model.forward(x.row(0)).unwrap(), 3);
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let layer = BilinearLayer::new(Matrix::zeros(3, 3), Matrix::zeros(3, 3), None).unwrap();
        let model =
            BilinearModel::new(Matrix::zeros(3, 4), vec![layer], Matrix::zeros(7, 3)).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [1.0, 0.0, 0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, _) = loss_and_gradients(&model, &x, &[0, 6], 0.0, &mut rng).unwrap();
        assert!((loss - libm::log(7.0)).abs() < 1e-14);
    }

    #[test]
    fn constant_vectors_receive_no_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = Matrix::from_rows(&[[0.0; 5], [2.0; 5]]);
        let before = h.clone();
        add_latent_noise(&mut h, 0.5, &mut rng);
        assert_eq!(h, before);
    }

    #[test]
    fn noise_standard_deviation_matches_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let base: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let mean = base.iter().sum::<f64>() / 10.0;
        let std = libm::sqrt(base.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 10.0);
        let ratio = 0.33;
        let rows = 10_000;
        let mut h = Matrix::from_fn(rows, 10, |_, c| base[c]);
        add_latent_noise(&mut h, ratio, &mut rng);
        let mut sum_sq = 0.0;
        for r in 0..rows {
            for (x, b) in h.row(r).iter().zip(&base) {
                sum_sq += (x - b) * (x - b);
            }
        }
        let empirical = libm::sqrt(sum_sq / (rows * 10) as f64);
        let ratio_of_stds = empirical / (ratio * std);
        assert!((ratio_of_stds - 1.0).abs() < 0.02, "{ratio_of_stds}");
    }

    #[test]
    fn adamw_fixed_points() {
        let mut p = vec![1.0, -2.0];
        let mut m = AdamMoments::zeros(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut m, 1, 0.1, 0.0);
        assert_eq!(p, vec![1.0, -2.0]);

        let mut p = vec![1.0, -2.0];
        let mut m = AdamMoments::zeros(2);
        for step in 1..=3 {
            adamw_step(&mut p, &[0.0, 0.0], &mut m, step, 0.1, 0.5);
        }
        let f = 0.95f64.powi(3);
        assert!((p[0] - f).abs() < 1e-15 && (p[1] + 2.0 * f).abs() < 1e-15);
    }

    #[test]
    fn adamw_scalar_recurrence() {
        // Hand-iterated AdamW for θ₀ = 0.5, g = 0.2, lr = 0.01, wd = 0.1.
        let (lr, wd, g) = (0.01, 0.1, 0.2);
        let mut theta = 0.5f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=3 {
            theta -= lr * wd * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= lr * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = vec![0.5];
        let mut mom = AdamMoments::zeros(1);
        for step in 1..=3 {
            adamw_step(&mut p, &[g], &mut mom, step, lr, wd);
        }
        assert!((p[0] - theta).abs() < 1e-15, "{} vs {theta}", p[0]);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let data = synthetic_quadrant_dataset(20, 8, 4, 0.1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = BilinearModel::init(&Topology::classifier(8, 6, 1, 4), &mut rng).unwrap();
        let before = model.clone();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, None, &config).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let data = synthetic_quadrant_dataset(20, 8, 4, 0.1, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = BilinearModel::init(&Topology::classifier(8, 6, 1, 3), &mut rng).unwrap();
        assert!(train(&mut model, &data, None, &TrainConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..ok.clone()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                latent_noise: -0.1,
                ..ok.clone()
            },
            TrainConfig {
                lr_decay: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                lr_decay: 1.5,
                ..ok.clone()
            },
            TrainConfig {
                chunks: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn split_even_partitions() {
        let items: Vec<usize> = (0..10).collect();
        let parts: Vec<&[usize]> = split_even(&items, 3).collect();
        assert_eq!(parts, vec![&items[0..4], &items[4..7], &items[7..10]]);
        assert_eq!(split_even(&items[..2], 5).count(), 2);
    }
}
