//! Truncated spectral models, activation-ranked eigenfeatures and
//! cross-model eigenvector similarity for single-layer classifiers.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::LabeledDataset;
use crate::decompose::{class_spectrum, EigenFeature, Spectrum};
use crate::linalg::{dot, gemm, normalized, Matrix};
use crate::model::{argmax, BilinearModel};
use crate::{Error, Result};

/// Inputs used to fix the display sign of an eigenvector.
pub const SIGN_REFERENCE_INPUTS: usize = 16;
/// Top-activating inputs reported per ranked feature.
pub const TOP_INPUTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedFeature {
    pub eigenvalue: f64,
    /// Unit eigenvector in model (post-embedding) space.
    pub vector: Vec<f64>,
}

/// Per-class top-`k` eigenfeatures by `|λ|`, evaluated as
/// `logit_c = Σ λ (vᵀ E x)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    embed: Matrix,
    classes: Vec<Vec<TruncatedFeature>>,
    k: usize,
}

impl SpectralModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_features(&self, class: usize) -> &[TruncatedFeature] {
        &self.classes[class]
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        spectral_logits(self, x)
    }
}

fn require_single_layer(model: &BilinearModel) -> Result<()> {
    if model.layers().len() != 1 {
        return Err(Error::Unsupported(
            "spectral truncation needs exactly one bilinear layer; use decompile for deeper models",
        ));
    }
    Ok(())
}

/// Keeps, per class, the `k` eigenfeatures of largest `|λ|` (positive and
/// negative counted together).
pub fn truncate(model: &BilinearModel, k: usize) -> Result<SpectralModel> {
    require_single_layer(model)?;
    let mut classes = Vec::with_capacity(model.n_classes());
    for c in 0..model.n_classes() {
        let spectrum = class_spectrum(model, c)?;
        let kept = spectrum
            .magnitude_order()
            .into_iter()
            .take(k)
            .map(|i| TruncatedFeature {
                eigenvalue: spectrum.features[i].eigenvalue,
                vector: spectrum.features[i].vector.clone(),
            })
            .collect();
        classes.push(kept);
    }
    Ok(SpectralModel {
        embed: model.embed().clone(),
        classes,
        k: k.min(model.d_model()),
    })
}

pub fn spectral_logits(sm: &SpectralModel, x: &[f64]) -> Result<Vec<f64>> {
    let xe = sm.embed.matvec(x)?;
    Ok(sm
        .classes
        .iter()
        .map(|features| {
            features
                .iter()
                .map(|f| {
                    let p = dot(&f.vector, &xe);
                    f.eigenvalue * p * p
                })
                .sum()
        })
        .collect())
}

/// Argmax accuracy of the top-`k` truncated model for every `k` in `ks`
/// (values above `d_model` behave like `d_model`). Ties go to the lowest
/// class index.
pub fn accuracy_sweep(
    model: &BilinearModel,
    data: &LabeledDataset,
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    require_single_layer(model)?;
    const CHUNK: usize = 1000;
    let d = model.d_model();
    let classes = model.n_classes();

    // Per class: eigenvalues and eigenvectors (as columns) in |λ| order.
    let mut bases = Vec::with_capacity(classes);
    for c in 0..classes {
        let spectrum = class_spectrum(model, c)?;
        let order = spectrum.magnitude_order();
        let values: Vec<f64> = order
            .iter()
            .map(|&i| spectrum.features[i].eigenvalue)
            .collect();
        let vectors = Matrix::from_fn(d, d, |r, col| spectrum.features[order[col]].vector[r]);
        bases.push((values, vectors));
    }

    let mut correct = vec![0usize; ks.len()];
    let mut start = 0;
    while start < data.len() {
        let end = (start + CHUNK).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = data.images().select_rows(&idx);
        let mut xe = Matrix::zeros(x.rows(), d);
        gemm(1.0, &x, false, model.embed(), true, 0.0, &mut xe);

        // prefix[c][s][j] = Σ_{i<j} λ_i p_i² for sample s.
        let mut prefix: Vec<Matrix> = Vec::with_capacity(classes);
        for (values, vectors) in &bases {
            let mut proj = Matrix::zeros(x.rows(), d);
            gemm(1.0, &xe, false, vectors, false, 0.0, &mut proj);
            let mut pre = Matrix::zeros(x.rows(), d + 1);
            for s in 0..x.rows() {
                let mut acc = 0.0;
                let row = proj.row(s);
                let out = pre.row_mut(s);
                for j in 0..d {
                    acc += values[j] * row[j] * row[j];
                    out[j + 1] = acc;
                }
            }
            prefix.push(pre);
        }
        for (ki, &k) in ks.iter().enumerate() {
            let k = k.min(d);
            for (s, &i) in idx.iter().enumerate() {
                let logits: Vec<f64> = prefix.iter().map(|p| p.get(s, k)).collect();
                if argmax(&logits) == data.labels()[i] {
                    correct[ki] += 1;
                }
            }
        }
        start = end;
    }
    let n = data.len().max(1) as f64;
    Ok(ks
        .iter()
        .zip(correct)
        .map(|(&k, c)| (k, c as f64 / n))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMode {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedFeature {
    /// Index into the spectrum's feature list.
    pub index: usize,
    pub eigenvalue: f64,
    /// Mean of `λ (vᵀ E x)²` over the dataset.
    pub mean_activation: f64,
    /// Rows of the dataset with the largest `|activation|`, strongest first.
    pub top_inputs: Vec<usize>,
}

fn input_feature(f: &EigenFeature) -> Result<&[f64]> {
    f.input_feature.as_deref().ok_or(Error::Unsupported(
        "activation ranking needs first-layer features",
    ))
}

/// Ranks first-layer eigenfeatures of one sign by mean activation over
/// `images` (`N × d_input`): positive features by descending mean, negative
/// ones by ascending (most negative first). Equal means fall back to `|λ|`
/// descending.
pub fn rank_by_mean_activation(
    spectrum: &Spectrum,
    images: &Matrix,
    sign: SignMode,
) -> Result<Vec<RankedFeature>> {
    if images.rows() == 0 {
        return Err(Error::InvalidConfig(
            "activation ranking needs at least one input".into(),
        ));
    }
    let mut ranked = Vec::new();
    for (index, f) in spectrum.features.iter().enumerate() {
        let keep = match sign {
            SignMode::Positive => f.eigenvalue > 0.0,
            SignMode::Negative => f.eigenvalue < 0.0,
        };
        if !keep {
            continue;
        }
        let feature = input_feature(f)?;
        let activations = images.matvec(feature)?;
        let activations: Vec<f64> = activations.iter().map(|p| f.eigenvalue * p * p).collect();
        let mean_activation = activations.iter().sum::<f64>() / activations.len() as f64;
        ranked.push(RankedFeature {
            index,
            eigenvalue: f.eigenvalue,
            mean_activation,
            top_inputs: top_indices_by_magnitude(&activations, TOP_INPUTS),
        });
    }
    ranked.sort_by(|a, b| {
        let by_mean = match sign {
            SignMode::Positive => b.mean_activation.total_cmp(&a.mean_activation),
            SignMode::Negative => a.mean_activation.total_cmp(&b.mean_activation),
        };
        by_mean.then_with(|| b.eigenvalue.abs().total_cmp(&a.eigenvalue.abs()))
    });
    Ok(ranked)
}

fn top_indices_by_magnitude(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    idx.truncate(n);
    idx
}

/// Orients a first-layer feature so that `vᵀ E x` averages to a nonnegative
/// value over its [`SIGN_REFERENCE_INPUTS`] top-activating inputs. The
/// activation itself is sign-invariant, so this is idempotent.
pub fn fix_sign(feature: &mut EigenFeature, images: &Matrix) -> Result<()> {
    let projections = images.matvec(input_feature(feature)?)?;
    let top = top_indices_by_magnitude(&projections, SIGN_REFERENCE_INPUTS);
    let mean: f64 = top.iter().map(|&i| projections[i]).sum::<f64>() / top.len().max(1) as f64;
    if mean < 0.0 {
        feature.vector.iter_mut().for_each(|x| *x = -*x);
        if let Some(f) = &mut feature.input_feature {
            f.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(())
}

/// Unit input-space features `Eᵀv / ‖Eᵀv‖` of the positive-eigenvalue
/// eigenvectors of `class`, by descending eigenvalue.
pub fn positive_input_features(model: &BilinearModel, class: usize) -> Result<Vec<Vec<f64>>> {
    require_single_layer(model)?;
    let spectrum = class_spectrum(model, class)?;
    spectrum
        .features
        .iter()
        .filter(|f| f.eigenvalue > 0.0)
        .map(|f| input_feature(f).map(normalized))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityEntry {
    pub class: usize,
    /// Rank of the feature within model A's class list.
    pub rank: usize,
    /// `max_b |aᵀ b|`, in `[0, 1]` for unit vectors.
    pub similarity: f64,
    /// Index of the best match in model B's class list.
    pub match_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityReport {
    /// Sorted by class, then rank.
    pub entries: Vec<SimilarityEntry>,
}

impl SimilarityReport {
    /// Mean similarity of the first `top` ranks of `class`.
    pub fn class_mean(&self, class: usize, top: usize) -> f64 {
        let sims: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.class == class && e.rank < top)
            .map(|e| e.similarity)
            .collect();
        if sims.is_empty() {
            0.0
        } else {
            sims.iter().sum::<f64>() / sims.len() as f64
        }
    }

    /// Mean similarity over every entry with rank below `top`.
    pub fn mean(&self, top: usize) -> f64 {
        let sims: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.rank < top)
            .map(|e| e.similarity)
            .collect();
        if sims.is_empty() {
            0.0
        } else {
            sims.iter().sum::<f64>() / sims.len() as f64
        }
    }
}

/// Best absolute-cosine match of each of the first `top` features of `a`
/// among all features of `b`, class by class. Inputs are per-class lists of
/// unit vectors.
pub fn best_match_similarity(
    a: &[Vec<Vec<f64>>],
    b: &[Vec<Vec<f64>>],
    top: usize,
) -> SimilarityReport {
    let mut entries = Vec::new();
    for (class, (fa, fb)) in a.iter().zip(b).enumerate() {
        for (rank, va) in fa.iter().take(top).enumerate() {
            let mut best = (0.0f64, 0usize);
            for (j, vb) in fb.iter().enumerate() {
                let s = dot(va, vb).abs().min(1.0);
                if s > best.0 {
                    best = (s, j);
                }
            }
            entries.push(SimilarityEntry {
                class,
                rank,
                similarity: best.0,
                match_index: best.1,
            });
        }
    }
    SimilarityReport { entries }
}

/// Positive-eigenvector similarity of two single-layer models that share an
/// input space (their `d_model` may differ).
pub fn model_similarity(
    a: &BilinearModel,
    b: &BilinearModel,
    top: usize,
) -> Result<SimilarityReport> {
    if a.d_input() != b.d_input() || a.n_classes() != b.n_classes() {
        return Err(Error::ShapeMismatch {
            context: "compared models (classes, inputs)",
            expected: (a.n_classes(), a.d_input()),
            found: (b.n_classes(), b.d_input()),
        });
    }
    let fa = (0..a.n_classes())
        .map(|c| positive_input_features(a, c))
        .collect::<Result<Vec<_>>>()?;
    let fb = (0..b.n_classes())
        .map(|c| positive_input_features(b, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(best_match_similarity(&fa, &fb, top))
}
