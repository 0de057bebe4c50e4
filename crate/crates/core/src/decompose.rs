//! Weight-based decompositions of bilinear layers.
//!
//! For an output direction `u`, [`reduce`](crate::model::reduce) gives a
//! symmetric interaction matrix `Q`; its eigendecomposition
//! `Q = Σ λ_i v_i v_iᵀ` turns the output into a sum of independent
//! eigenvector activations `λ_i (v_iᵀ h)²`. Applying this recursively from the
//! unembedding backwards decompiles a multi-layer model into a tree.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{dot, eig_symmetric, gemm, pseudo_inverse, svd, Matrix, DEFAULT_RCOND};
use crate::model::{reduce, BilinearLayer, BilinearModel};
use crate::{Error, Result};

/// Default per-node branching for [`decompile`].
pub const DEFAULT_BRANCHING: usize = 8;
/// Default bound on the layer input width accepted by [`hosvd`].
pub const DEFAULT_HOSVD_MAX_D_IN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenFeature {
    pub eigenvalue: f64,
    /// Unit eigenvector in the layer's input space.
    pub vector: Vec<f64>,
    /// `Eᵀ v` for first-layer features; `None` deeper in the model.
    pub input_feature: Option<Vec<f64>>,
    /// Class whose unembedding row produced the spectrum, if any.
    pub class: Option<usize>,
    /// Position in the signed-descending spectrum.
    pub rank: usize,
}

impl EigenFeature {
    /// `λ (vᵀ h)²` for a layer input `h`.
    pub fn activation(&self, h: &[f64]) -> f64 {
        eigenvector_activation(self.eigenvalue, &self.vector, h)
    }
}

/// `λ (vᵀ h)²`; always carries the sign of `λ`.
pub fn eigenvector_activation(eigenvalue: f64, vector: &[f64], h: &[f64]) -> f64 {
    let p = dot(vector, h);
    eigenvalue * p * p
}

/// Full eigenbasis of one interaction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Sorted by signed eigenvalue, descending.
    pub features: Vec<EigenFeature>,
    pub direction: Vec<f64>,
    pub layer: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.eigenvalue).collect()
    }

    /// `Σ λ_i v_i v_iᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.features.first().map_or(0, |f| f.vector.len());
        let mut q = Matrix::zeros(n, n);
        for f in &self.features {
            for r in 0..n {
                let scale = f.eigenvalue * f.vector[r];
                for (c, vc) in f.vector.iter().enumerate() {
                    q.set(r, c, q.get(r, c) + scale * vc);
                }
            }
        }
        q
    }

    /// `Σ λ_i (v_iᵀ h)²` for a layer input `h`.
    pub fn output(&self, h: &[f64]) -> f64 {
        self.features.iter().map(|f| f.activation(h)).sum()
    }

    /// Feature indices ordered by `|λ|` descending (stable on ties).
    pub fn magnitude_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.features.len()).collect();
        idx.sort_by(|&a, &b| {
            self.features[b]
                .eigenvalue
                .abs()
                .total_cmp(&self.features[a].eigenvalue.abs())
        });
        idx
    }
}

/// Eigendecomposition of `reduce(layer, u)` for layer `layer_index`.
pub fn spectrum_for_output(
    model: &BilinearModel,
    layer_index: usize,
    u: &[f64],
) -> Result<Spectrum> {
    let layer = model.layer(layer_index)?;
    let q = reduce(layer, u)?;
    let eig = eig_symmetric(q.q())?;
    let mut features = Vec::with_capacity(eig.eigenvalues.len());
    for (rank, &eigenvalue) in eig.eigenvalues.iter().enumerate() {
        let vector = eig.eigenvector(rank);
        let input_feature = if layer_index == 0 {
            Some(model.embed().tr_matvec(&vector)?)
        } else {
            None
        };
        features.push(EigenFeature {
            eigenvalue,
            vector,
            input_feature,
            class: None,
            rank,
        });
    }
    Ok(Spectrum {
        features,
        direction: u.to_vec(),
        layer: layer_index,
    })
}

/// Spectrum of the last layer along unembedding row `class`.
pub fn class_spectrum(model: &BilinearModel, class: usize) -> Result<Spectrum> {
    if class >= model.n_classes() {
        return Err(Error::IndexOutOfRange {
            index: class,
            len: model.n_classes(),
        });
    }
    if model.layers().is_empty() {
        return Err(Error::Unsupported("model has no bilinear layers"));
    }
    let last = model.layers().len() - 1;
    let mut s = spectrum_for_output(model, last, model.unembed().row(class))?;
    for f in &mut s.features {
        f.class = Some(class);
    }
    Ok(s)
}

/// Node of a decompilation tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Spectrum indices from the last layer down to this node.
    pub path: Vec<usize>,
    /// Zero-based layer whose interaction matrix produced this eigenvector.
    pub layer: usize,
    pub eigenvalue: f64,
    pub eigenvector: Vec<f64>,
    /// `Eᵀ v` on first-layer nodes (the leaves).
    pub input_feature: Option<Vec<f64>>,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    /// `vᵀ h` where `h` is the input of this node's layer, evaluated
    /// recursively from the raw input `x`.
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.input_feature {
            Some(feature) => dot(feature, x),
            None => self
                .children
                .iter()
                .map(|c| {
                    let v = c.value(x);
                    c.eigenvalue * v * v
                })
                .sum(),
        }
    }

    pub fn count(&self) -> usize {
        1 + self.children.iter().map(TreeNode::count).sum::<usize>()
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        if self.children.is_empty() {
            vec![self]
        } else {
            self.children.iter().flat_map(TreeNode::leaves).collect()
        }
    }
}

/// Per-class decompilation of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompileTree {
    pub class: usize,
    pub direction: Vec<f64>,
    pub branching: usize,
    /// Eigenvectors of the last layer.
    pub roots: Vec<TreeNode>,
}

impl DecompileTree {
    pub fn node_count(&self) -> usize {
        self.roots.iter().map(TreeNode::count).sum()
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        self.roots.iter().flat_map(TreeNode::leaves).collect()
    }
}

/// Decompiles every class by repeated single-layer eigendecomposition.
///
/// Each node keeps its `min(branching, d)` largest-`|λ|` children; layer-`k`
/// eigenvectors serve as output directions for layer `k − 1`.
pub fn decompile(model: &BilinearModel, branching: usize) -> Result<Vec<DecompileTree>> {
    (0..model.n_classes())
        .map(|c| decompile_class(model, c, branching))
        .collect()
}

pub fn decompile_class(
    model: &BilinearModel,
    class: usize,
    branching: usize,
) -> Result<DecompileTree> {
    if model.layers().is_empty() {
        return Err(Error::Unsupported("model has no bilinear layers"));
    }
    if class >= model.n_classes() {
        return Err(Error::IndexOutOfRange {
            index: class,
            len: model.n_classes(),
        });
    }
    let direction = model.unembed().row(class).to_vec();
    let last = model.layers().len() - 1;
    let roots = expand(model, last, &direction, &[], branching)?;
    Ok(DecompileTree {
        class,
        direction,
        branching,
        roots,
    })
}

fn expand(
    model: &BilinearModel,
    layer: usize,
    u: &[f64],
    prefix: &[usize],
    branching: usize,
) -> Result<Vec<TreeNode>> {
    let spectrum = spectrum_for_output(model, layer, u)?;
    let keep = branching.min(spectrum.len());
    let mut nodes = Vec::with_capacity(keep);
    for &i in spectrum.magnitude_order().iter().take(keep) {
        let f = &spectrum.features[i];
        let mut path = prefix.to_vec();
        path.push(i);
        let children = if layer == 0 {
            Vec::new()
        } else {
            expand(model, layer - 1, &f.vector, &path, branching)?
        };
        nodes.push(TreeNode {
            path,
            layer,
            eigenvalue: f.eigenvalue,
            eigenvector: f.vector.clone(),
            input_feature: f.input_feature.clone(),
            children,
        });
    }
    Ok(nodes)
}

/// Class logit reproduced from the tree: `Σ_roots λ (value)²`. Exact for
/// full branching, an approximation otherwise.
pub fn evaluate_tree(tree: &DecompileTree, x: &[f64]) -> f64 {
    tree.roots
        .iter()
        .map(|n| {
            let v = n.value(x);
            n.eigenvalue * v * v
        })
        .sum()
}

/// Interaction tensor re-expressed over a set of output directions
/// `B = Σ_k u⁺_k ⊗ Q_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeOfBasis {
    /// `m × d`, row `k` is `u_k`.
    pub directions: Matrix,
    /// `m × d`, row `k` is the dual vector `u⁺_k` (row `k` of the
    /// pseudo-inverse of the `d × m` column matrix).
    pub duals: Matrix,
    /// `Q_k = reduce(layer, u_k)`.
    pub interactions: Vec<Matrix>,
}

impl ChangeOfBasis {
    /// `G_{kk'} = u_k · u⁺_{k'}`; the identity when `m = d`, the orthogonal
    /// projector onto the row space of the direction set when `m > d`.
    pub fn duality_gram(&self) -> Matrix {
        let m = self.directions.rows();
        let mut g = Matrix::zeros(m, m);
        gemm(1.0, &self.directions, false, &self.duals, true, 0.0, &mut g);
        g
    }

    /// `max |u_k · u⁺_{k'} − δ_{kk'}|`.
    pub fn kronecker_residual(&self) -> f64 {
        self.duality_gram().identity_residual()
    }

    /// `max |Σ_k u_k ⊗ u⁺_k − I_d|`, the completeness identity `U U⁺ = I`.
    pub fn completeness_residual(&self) -> f64 {
        let d = self.directions.cols();
        let mut s = Matrix::zeros(d, d);
        gemm(1.0, &self.directions, true, &self.duals, false, 0.0, &mut s);
        s.identity_residual()
    }

    /// Largest deviation between `Q_k` and the reduction of the
    /// reconstructed tensor by `u_k`, `Σ_{k'} (u_k · u⁺_{k'}) Q_{k'}`.
    pub fn recovery_residual(&self) -> f64 {
        let g = self.duality_gram();
        let m = self.directions.rows();
        let mut worst = 0.0f64;
        for k in 0..m {
            let mut rebuilt =
                Matrix::zeros(self.interactions[k].rows(), self.interactions[k].cols());
            for (kp, q) in self.interactions.iter().enumerate() {
                rebuilt
                    .add_scaled(g.get(k, kp), q)
                    .expect("interaction matrices share a shape");
            }
            worst = worst.max(
                rebuilt
                    .sub(&self.interactions[k])
                    .expect("same shape")
                    .max_abs(),
            );
        }
        worst
    }

    /// Slice `a` of the reconstructed tensor, `Σ_k (u⁺_k)_a Q_k`.
    pub fn tensor_slice(&self, a: usize) -> Matrix {
        let d = self.interactions.first().map_or(0, Matrix::rows);
        let mut out = Matrix::zeros(d, d);
        for (k, q) in self.interactions.iter().enumerate() {
            out.add_scaled(self.duals.get(k, a), q).expect("same shape");
        }
        out
    }
}

/// Change of basis over `directions` (`m × d_out`, one direction per row).
///
/// Fails with [`Error::RankDeficient`] when the directions do not span the
/// layer's output space.
pub fn change_of_basis(layer: &BilinearLayer, directions: &Matrix) -> Result<ChangeOfBasis> {
    let d = layer.d_out();
    if directions.cols() != d {
        return Err(Error::ShapeMismatch {
            context: "direction set",
            expected: (directions.rows(), d),
            found: directions.shape(),
        });
    }
    let columns = directions.transpose();
    let rank = svd(&columns)?.numerical_rank(DEFAULT_RCOND);
    if rank < d {
        return Err(Error::RankDeficient { rank, required: d });
    }
    let duals = pseudo_inverse(&columns, DEFAULT_RCOND)?;
    let interactions = (0..directions.rows())
        .map(|k| reduce(layer, directions.row(k)).map(|q| q.into_matrix()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChangeOfBasis {
        directions: directions.clone(),
        duals,
        interactions,
    })
}

/// Flattened higher-order SVD `B = Σ σ_i r⁽ⁱ⁾ ⊗ Q⁽ⁱ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct HosvdResult {
    /// All `min(d_out, d_in²)` singular values, descending.
    pub singular_values: Vec<f64>,
    /// Output directions `r⁽ⁱ⁾` for the numerically nonzero components.
    pub output_directions: Vec<Vec<f64>>,
    /// Symmetric, unit-Frobenius interaction matrices `Q⁽ⁱ⁾`, paired with
    /// `output_directions`.
    pub interactions: Vec<Matrix>,
    /// The `d_out × d_in²` matrix that was decomposed.
    pub flattened: Matrix,
}

impl HosvdResult {
    /// `Σ_{i<r} σ_i r⁽ⁱ⁾ vec(Q⁽ⁱ⁾)ᵀ`.
    pub fn reconstruct(&self, rank: usize) -> Matrix {
        let (rows, cols) = self.flattened.shape();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rank.min(self.interactions.len()) {
            let sigma = self.singular_values[i];
            let r = &self.output_directions[i];
            let q = self.interactions[i].as_slice();
            for (a, &ra) in r.iter().enumerate() {
                let row = out.row_mut(a);
                for (x, &qv) in row.iter_mut().zip(q) {
                    *x += sigma * ra * qv;
                }
            }
        }
        out
    }
}

/// Row `a` of the flattened tensor: `vec(reduce(layer, e_a))`, i.e. the
/// symmetrized interaction matrix of output `a`.
pub fn flatten_interactions(layer: &BilinearLayer) -> Result<Matrix> {
    let d_out = layer.d_out();
    let d_in = layer.d_in();
    let mut flat = Matrix::zeros(d_out, d_in * d_in);
    let mut e = vec![0.0; d_out];
    for a in 0..d_out {
        e[a] = 1.0;
        let q = reduce(layer, &e)?;
        flat.row_mut(a).copy_from_slice(q.q().as_slice());
        e[a] = 0.0;
    }
    Ok(flat)
}

pub fn hosvd(layer: &BilinearLayer) -> Result<HosvdResult> {
    hosvd_with_limit(layer, DEFAULT_HOSVD_MAX_D_IN)
}

pub fn hosvd_with_limit(layer: &BilinearLayer, max_d_in: usize) -> Result<HosvdResult> {
    let d_in = layer.d_in();
    if d_in > max_d_in {
        return Err(Error::TooLarge {
            what: "HOSVD layer input width",
            size: d_in,
            limit: max_d_in,
        });
    }
    let flattened = flatten_interactions(layer)?;
    let s = svd(&flattened)?;
    let rank = s.numerical_rank(DEFAULT_RCOND);
    let mut output_directions = Vec::with_capacity(rank);
    let mut interactions = Vec::with_capacity(rank);
    for i in 0..rank {
        output_directions.push(s.u.column(i));
        let q = Matrix::new(d_in, d_in, s.v.column(i))?;
        // Right singular vectors lie in the symmetric subspace spanned by the
        // rows; re-symmetrizing only removes rounding.
        interactions.push(crate::model::symmetrize(&q)?);
    }
    Ok(HosvdResult {
        singular_values: s.singular_values,
        output_directions,
        interactions,
        flattened,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Topology;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_model(d: usize) -> BilinearModel {
        let i = Matrix::identity(d);
        let layer = BilinearLayer::new(i.clone(), i.clone(), None).unwrap();
        BilinearModel::new(i.clone(), vec![layer], i).unwrap()
    }

    #[test]
    fn identity_layer_basis_direction() {
        let model = identity_model(3);
        let s = spectrum_for_output(&model, 0, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(s.features[0].eigenvalue, 1.0);
        assert_eq!(
            s.features[0]
                .vector
                .iter()
                .map(|x| x.abs())
                .collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0]
        );
        assert!(s.features[1..].iter().all(|f| f.eigenvalue == 0.0));
        let zero = spectrum_for_output(&model, 0, &[0.0; 3]).unwrap();
        assert!(zero.features.iter().all(|f| f.eigenvalue == 0.0));
    }

    #[test]
    fn activation_definition() {
        assert_eq!(eigenvector_activation(2.0, &[1.0, 0.0], &[3.0, 0.0]), 18.0);
        assert_eq!(eigenvector_activation(-2.0, &[0.0, 1.0], &[3.0, 0.0]), 0.0);
        assert_eq!(
            eigenvector_activation(-0.5, &[0.6, 0.8], &[1.0, 2.0]),
            eigenvector_activation(-0.5, &[-0.6, -0.8], &[1.0, 2.0])
        );
    }

    #[test]
    fn one_layer_tree_is_the_class_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = BilinearModel::init(&Topology::classifier(5, 4, 1, 2), &mut rng).unwrap();
        let tree = decompile_class(&model, 1, 4).unwrap();
        let spectrum = class_spectrum(&model, 1).unwrap();
        assert_eq!(tree.roots.len(), 4);
        for root in &tree.roots {
            assert!(root.children.is_empty());
            let f = &spectrum.features[root.path[0]];
            assert_eq!(root.eigenvalue, f.eigenvalue);
            assert_eq!(Some(root.eigenvector.clone()), Some(f.vector.clone()));
        }
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let logit = model.forward(&x).unwrap()[1];
        assert!((evaluate_tree(&tree, &x) - logit).abs() <= 1e-9 * logit.abs().max(1.0));
        assert_eq!(evaluate_tree(&tree, &[0.0; 5]), 0.0);
    }

    #[test]
    fn single_branch_tree_has_one_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = BilinearModel::init(&Topology::classifier(5, 4, 3, 2), &mut rng).unwrap();
        for tree in decompile(&model, 1).unwrap() {
            assert_eq!(tree.node_count(), 3);
            assert_eq!(tree.leaves().len(), 1);
            assert_eq!(tree.leaves()[0].path.len(), 3);
        }
    }

    #[test]
    fn branching_is_clamped_to_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = BilinearModel::init(&Topology::classifier(3, 3, 2, 1), &mut rng).unwrap();
        let tree = decompile_class(&model, 0, 10).unwrap();
        assert_eq!(tree.roots.len(), 3);
        assert!(tree.roots.iter().all(|r| r.children.len() == 3));
    }

    #[test]
    fn change_of_basis_identity_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = BilinearModel::init(&Topology::classifier(3, 4, 1, 2), &mut rng).unwrap();
        let layer = &model.layers()[0];
        let cob = change_of_basis(layer, &Matrix::identity(4)).unwrap();
        assert!(cob.duals.identity_residual() <= 1e-12);
        for a in 0..4 {
            let neuron = crate::model::interaction_matrix_for_neuron(layer, a).unwrap();
            assert!(cob.interactions[a].sub(neuron.q()).unwrap().max_abs() <= 1e-15);
        }

        let (c, s) = (0.6, 0.8);
        let rot = Matrix::from_rows(&[
            [c, -s, 0.0, 0.0],
            [s, c, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
        ]);
        let cob = change_of_basis(layer, &rot).unwrap();
        // Duals are the rows of (Rᵀ)⁺ = R, i.e. the directions themselves.
        assert!(cob.duals.sub(&rot).unwrap().max_abs() <= 1e-12);
        assert!(cob.kronecker_residual() <= 1e-12);
    }

    #[test]
    fn change_of_basis_rank_deficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = BilinearModel::init(&Topology::classifier(3, 4, 1, 2), &mut rng).unwrap();
        let dirs = Matrix::from_fn(5, 4, |r, c| if c < 2 { (r + c) as f64 } else { 0.0 });
        match change_of_basis(&model.layers()[0], &dirs) {
            Err(Error::RankDeficient { rank, required }) => {
                assert_eq!((rank, required), (2, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hosvd_identity_layer() {
        let i = Matrix::identity(2);
        let layer = BilinearLayer::new(i.clone(), i, None).unwrap();
        let h = hosvd(&layer).unwrap();
        assert_eq!(h.singular_values.len(), 2);
        for s in &h.singular_values {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hosvd_rank_one_layer() {
        let w = Matrix::from_fn(3, 4, |r, c| (r as f64 + 1.0) * (c as f64 - 1.5));
        let v = Matrix::from_fn(3, 4, |r, c| (2.0 - r as f64) * (c as f64 * 0.5 + 1.0));
        let h = hosvd(&BilinearLayer::new(w, v, None).unwrap()).unwrap();
        assert!(h.singular_values[0] > 1.0);
        assert!(h.singular_values[1..]
            .iter()
            .all(|&s| s <= 1e-12 * h.singular_values[0]));
        assert_eq!(h.interactions.len(), 1);
        assert!((h.interactions[0].frobenius_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hosvd_size_guard() {
        let layer = BilinearLayer::new(Matrix::zeros(2, 9), Matrix::zeros(2, 9), None).unwrap();
        assert!(matches!(
            hosvd_with_limit(&layer, 8),
            Err(Error::TooLarge {
                size: 9,
                limit: 8,
                ..
            })
        ));
    }
}
