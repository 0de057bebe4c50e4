//! Bilinear MLP: `logits = U · g_N(… g_1(E · x))` with
//! `g(h) = P · ((W h) ⊙ (V h))`, and the interaction matrices that make each
//! output direction a quadratic form of the layer input.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::LabeledDataset;
use crate::linalg::{dot, gemm, Matrix};
use crate::{Error, Result};

/// One bilinear layer. Without a projection the hidden width is the output
/// width.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearLayer {
    pub(crate) w: Matrix,
    pub(crate) v: Matrix,
    pub(crate) proj: Option<Matrix>,
}

impl BilinearLayer {
    pub fn new(w: Matrix, v: Matrix, proj: Option<Matrix>) -> Result<Self> {
        if w.shape() != v.shape() {
            return Err(Error::ShapeMismatch {
                context: "bilinear layer V",
                expected: w.shape(),
                found: v.shape(),
            });
        }
        if let Some(p) = &proj {
            if p.cols() != w.rows() {
                return Err(Error::LengthMismatch {
                    context: "projection input width",
                    expected: w.rows(),
                    found: p.cols(),
                });
            }
        }
        Ok(Self { w, v, proj })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn proj(&self) -> Option<&Matrix> {
        self.proj.as_ref()
    }

    pub fn d_in(&self) -> usize {
        self.w.cols()
    }

    pub fn d_hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.proj.as_ref().map_or(self.w.rows(), Matrix::rows)
    }

    /// `P ((W h) ⊙ (V h))`.
    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        let a = self.w.matvec(h)?;
        let b = self.v.matvec(h)?;
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        match &self.proj {
            Some(p) => p.matvec(&mid),
            None => Ok(mid),
        }
    }

    /// Row-wise forward over an `N × d_in` batch.
    pub fn forward_batch(&self, h: &Matrix) -> Matrix {
        let n = h.rows();
        let mut a = Matrix::zeros(n, self.d_hidden());
        let mut b = Matrix::zeros(n, self.d_hidden());
        gemm(1.0, h, false, &self.w, true, 0.0, &mut a);
        gemm(1.0, h, false, &self.v, true, 0.0, &mut b);
        for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *x *= y;
        }
        match &self.proj {
            Some(p) => {
                let mut out = Matrix::zeros(n, p.rows());
                gemm(1.0, &a, false, p, true, 0.0, &mut out);
                out
            }
            None => a,
        }
    }
}

/// Layer widths for freshly initialized models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub d_input: usize,
    pub d_model: usize,
    /// Hidden width of each bilinear layer; must equal `d_model` unless
    /// `projection` is set.
    pub d_hidden: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub projection: bool,
}

impl Topology {
    /// Embed, `n_layers` square bilinear layers, unembed; no projections.
    pub fn classifier(d_input: usize, d_model: usize, n_layers: usize, n_classes: usize) -> Self {
        Self {
            d_input,
            d_model,
            d_hidden: d_model,
            n_layers,
            n_classes,
            projection: false,
        }
    }
}

/// Embedding, a chain of bilinear layers and an unembedding. No biases, no
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearModel {
    pub(crate) embed: Matrix,
    pub(crate) layers: Vec<BilinearLayer>,
    pub(crate) unembed: Matrix,
}

impl BilinearModel {
    pub fn new(embed: Matrix, layers: Vec<BilinearLayer>, unembed: Matrix) -> Result<Self> {
        let mut width = embed.rows();
        for layer in &layers {
            if layer.d_in() != width {
                return Err(Error::LengthMismatch {
                    context: "layer input width",
                    expected: width,
                    found: layer.d_in(),
                });
            }
            width = layer.d_out();
        }
        if unembed.cols() != width {
            return Err(Error::LengthMismatch {
                context: "unembed input width",
                expected: width,
                found: unembed.cols(),
            });
        }
        Ok(Self {
            embed,
            layers,
            unembed,
        })
    }

    /// Random model with i.i.d. Gaussian weights of standard deviation
    /// `1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(topology: &Topology, rng: &mut R) -> Result<Self> {
        let t = topology;
        if !t.projection && t.d_hidden != t.d_model {
            return Err(Error::InvalidConfig(
                "d_hidden must equal d_model without a projection".into(),
            ));
        }
        let mut gaussian = |rows: usize, cols: usize| {
            let scale = 1.0 / libm::sqrt(cols.max(1) as f64);
            Matrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
        };
        let embed = gaussian(t.d_model, t.d_input);
        let mut layers = Vec::with_capacity(t.n_layers);
        for _ in 0..t.n_layers {
            let w = gaussian(t.d_hidden, t.d_model);
            let v = gaussian(t.d_hidden, t.d_model);
            let proj = t.projection.then(|| gaussian(t.d_model, t.d_hidden));
            layers.push(BilinearLayer::new(w, v, proj)?);
        }
        let unembed = gaussian(t.n_classes, t.d_model);
        Self::new(embed, layers, unembed)
    }

    pub fn embed(&self) -> &Matrix {
        &self.embed
    }

    pub fn layers(&self) -> &[BilinearLayer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Result<&BilinearLayer> {
        self.layers.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.layers.len(),
        })
    }

    pub fn unembed(&self) -> &Matrix {
        &self.unembed
    }

    pub fn d_input(&self) -> usize {
        self.embed.cols()
    }

    pub fn d_model(&self) -> usize {
        self.embed.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.unembed.rows()
    }

    /// All weight matrices in a fixed order: embed, per layer `W`, `V`,
    /// optional `P`, then unembed.
    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(2 + 3 * self.layers.len());
        out.push(&self.embed);
        for l in &self.layers {
            out.push(&l.w);
            out.push(&l.v);
            if let Some(p) = &l.proj {
                out.push(p);
            }
        }
        out.push(&self.unembed);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(2 + 3 * self.layers.len());
        out.push(&mut self.embed);
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.v);
            if let Some(p) = &mut l.proj {
                out.push(p);
            }
        }
        out.push(&mut self.unembed);
        out
    }

    /// `E · x`.
    pub fn embed_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.embed.matvec(x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.embed_input(x)?;
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        self.unembed.matvec(&h)
    }

    /// Logits for every row of an `N × d_input` batch.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_input() {
            return Err(Error::LengthMismatch {
                context: "batch input width",
                expected: self.d_input(),
                found: x.cols(),
            });
        }
        let mut h = Matrix::zeros(x.rows(), self.d_model());
        gemm(1.0, x, false, &self.embed, true, 0.0, &mut h);
        for layer in &self.layers {
            h = layer.forward_batch(&h);
        }
        let mut logits = Matrix::zeros(x.rows(), self.n_classes());
        gemm(1.0, &h, false, &self.unembed, true, 0.0, &mut logits);
        Ok(logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Fraction of samples whose argmax logit equals the label.
    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        const CHUNK: usize = 1000;
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        let mut start = 0;
        while start < data.len() {
            let end = (start + CHUNK).min(data.len());
            let idx: Vec<usize> = (start..end).collect();
            let logits = self.forward_batch(&data.images().select_rows(&idx))?;
            for (r, &i) in idx.iter().enumerate() {
                if argmax(logits.row(r)) == data.labels()[i] {
                    correct += 1;
                }
            }
            start = end;
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Symmetric `Q` with `uᵀ g(x) = xᵀ Q x` for the direction `u` it was built
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    q: Matrix,
    direction: Vec<f64>,
}

impl InteractionMatrix {
    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn into_matrix(self) -> Matrix {
        self.q
    }

    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        self.q.quadratic_form(x)
    }
}

/// `[weight | bias]`: applying the result to `[x, 1]` equals `weight·x + bias`.
pub fn fold_bias(weight: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if bias.len() != weight.rows() {
        return Err(Error::LengthMismatch {
            context: "bias",
            expected: weight.rows(),
            found: bias.len(),
        });
    }
    let cols = weight.cols();
    Ok(Matrix::from_fn(weight.rows(), cols + 1, |r, c| {
        if c < cols {
            weight.get(r, c)
        } else {
            bias[r]
        }
    }))
}

/// `½(m + mᵀ)`.
pub fn symmetrize(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        0.5 * (m.get(r, c) + m.get(c, r))
    }))
}

/// Symmetrized outer product `½(w_a v_aᵀ + v_a w_aᵀ)` for hidden neuron `a`.
pub fn interaction_matrix_for_neuron(layer: &BilinearLayer, a: usize) -> Result<InteractionMatrix> {
    if layer.proj.is_some() {
        return Err(Error::Unsupported(
            "neuron interaction matrices need a layer without projection",
        ));
    }
    if a >= layer.d_hidden() {
        return Err(Error::IndexOutOfRange {
            index: a,
            len: layer.d_hidden(),
        });
    }
    let w = layer.w.row(a);
    let v = layer.v.row(a);
    let n = layer.d_in();
    let q = Matrix::from_fn(n, n, |i, j| 0.5 * (w[i] * v[j] + v[i] * w[j]));
    let mut direction = alloc::vec![0.0; layer.d_hidden()];
    direction[a] = 1.0;
    Ok(InteractionMatrix { q, direction })
}

/// Contracts the layer's interaction tensor with an output direction:
/// `Q = sym(Wᵀ diag(Pᵀu) V)`. The third-order tensor is never formed.
pub fn reduce(layer: &BilinearLayer, u: &[f64]) -> Result<InteractionMatrix> {
    if u.len() != layer.d_out() {
        return Err(Error::LengthMismatch {
            context: "output direction",
            expected: layer.d_out(),
            found: u.len(),
        });
    }
    let hidden_u = match &layer.proj {
        Some(p) => p.tr_matvec(u)?,
        None => u.to_vec(),
    };
    let mut scaled_v = layer.v.clone();
    for (a, &weight) in hidden_u.iter().enumerate() {
        scaled_v.row_mut(a).iter_mut().for_each(|x| *x *= weight);
    }
    let n = layer.d_in();
    let mut m = Matrix::zeros(n, n);
    gemm(1.0, &layer.w, true, &scaled_v, false, 0.0, &mut m);
    Ok(InteractionMatrix {
        q: symmetrize(&m)?,
        direction: u.to_vec(),
    })
}

/// Output of the layer along `u`, computed directly: `uᵀ g(h)`.
pub fn directional_output(layer: &BilinearLayer, u: &[f64], h: &[f64]) -> Result<f64> {
    Ok(dot(u, &layer.forward(h)?))
}
