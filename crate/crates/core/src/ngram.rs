//! Bigram and skip-trigram tables read directly from token embeddings,
//! unembeddings, a bilinear layer and attention OV matrices.

use alloc::vec::Vec;

use crate::linalg::{gemm, Matrix};
use crate::model::{reduce, BilinearLayer};
use crate::{Error, Result};

pub const DEFAULT_MAX_VOCAB: usize = 8192;

/// Weights of a one-layer token model. `embed` is `d_model × n_vocab`
/// (columns are token embeddings), `unembed` is `n_vocab × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenWeights {
    embed: Matrix,
    unembed: Matrix,
    layer: BilinearLayer,
}

impl TokenWeights {
    pub fn new(embed: Matrix, unembed: Matrix, layer: BilinearLayer) -> Result<Self> {
        Self::with_vocab_limit(embed, unembed, layer, DEFAULT_MAX_VOCAB)
    }

    pub fn with_vocab_limit(
        embed: Matrix,
        unembed: Matrix,
        layer: BilinearLayer,
        max_vocab: usize,
    ) -> Result<Self> {
        let (d, vocab) = embed.shape();
        if vocab > max_vocab {
            return Err(Error::TooLarge {
                what: "vocabulary",
                size: vocab,
                limit: max_vocab,
            });
        }
        if unembed.shape() != (vocab, d) {
            return Err(Error::ShapeMismatch {
                context: "unembedding",
                expected: (vocab, d),
                found: unembed.shape(),
            });
        }
        if layer.d_in() != d || layer.d_out() != d {
            return Err(Error::ShapeMismatch {
                context: "bilinear layer (d_in, d_out)",
                expected: (d, d),
                found: (layer.d_in(), layer.d_out()),
            });
        }
        Ok(Self {
            embed,
            unembed,
            layer,
        })
    }

    pub fn embed(&self) -> &Matrix {
        &self.embed
    }

    pub fn unembed(&self) -> &Matrix {
        &self.unembed
    }

    pub fn layer(&self) -> &BilinearLayer {
        &self.layer
    }

    pub fn vocab(&self) -> usize {
        self.embed.cols()
    }

    pub fn d_model(&self) -> usize {
        self.embed.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramEntry {
    /// One token for bigrams; `[virtual, direct]` for skip-trigrams.
    pub context: Vec<usize>,
    pub output: usize,
    pub score: f64,
}

/// Entries sorted by descending score; ties broken by context then output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NgramTable {
    pub entries: Vec<NgramEntry>,
}

impl NgramTable {
    fn from_entries(mut entries: Vec<NgramEntry>, top_n: usize) -> Self {
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.context.cmp(&b.context))
                .then_with(|| a.output.cmp(&b.output))
        });
        entries.truncate(top_n);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BigramSource {
    Residual,
    MlpDiagonal,
    Combined,
}

/// Direct-path scores `U E`, indexed `[output, context]`.
pub fn residual_scores(tw: &TokenWeights) -> Matrix {
    let v = tw.vocab();
    let mut s = Matrix::zeros(v, v);
    gemm(1.0, &tw.unembed, false, &tw.embed, false, 0.0, &mut s);
    s
}

/// Token self-interaction through the layer, `eₜᵀ Q_c eₜ`, indexed
/// `[output, context]`. Evaluated as `(U P) ((W E) ⊙ (V E))`, which equals
/// the diagonal of every reduced interaction matrix without forming them.
pub fn mlp_diagonal_scores(tw: &TokenWeights) -> Matrix {
    let layer = &tw.layer;
    let vocab = tw.vocab();
    let hidden = layer.d_hidden();
    let mut we = Matrix::zeros(hidden, vocab);
    gemm(1.0, layer.w(), false, &tw.embed, false, 0.0, &mut we);
    let mut ve = Matrix::zeros(hidden, vocab);
    gemm(1.0, layer.v(), false, &tw.embed, false, 0.0, &mut ve);
    for (a, b) in we.as_mut_slice().iter_mut().zip(ve.as_slice()) {
        *a *= b;
    }
    let up = match layer.proj() {
        Some(p) => {
            let mut up = Matrix::zeros(vocab, hidden);
            gemm(1.0, &tw.unembed, false, p, false, 0.0, &mut up);
            up
        }
        None => tw.unembed.clone(),
    };
    let mut s = Matrix::zeros(vocab, vocab);
    gemm(1.0, &up, false, &we, false, 0.0, &mut s);
    s
}

pub fn bigram_scores(tw: &TokenWeights, source: BigramSource) -> Matrix {
    match source {
        BigramSource::Residual => residual_scores(tw),
        BigramSource::MlpDiagonal => mlp_diagonal_scores(tw),
        BigramSource::Combined => {
            let mut s = residual_scores(tw);
            s.add_scaled(1.0, &mlp_diagonal_scores(tw))
                .expect("score matrices share a shape");
            s
        }
    }
}

/// Top `top_n` (context, output) pairs of a `[output, context]` score matrix.
pub fn bigram_table(scores: &Matrix, top_n: usize) -> NgramTable {
    let mut entries = Vec::with_capacity(scores.rows() * scores.cols());
    for c in 0..scores.rows() {
        for (t, &score) in scores.row(c).iter().enumerate() {
            entries.push(NgramEntry {
                context: alloc::vec![t],
                output: c,
                score,
            });
        }
    }
    NgramTable::from_entries(entries, top_n)
}

pub fn residual_bigrams(tw: &TokenWeights, top_n: usize) -> NgramTable {
    bigram_table(&residual_scores(tw), top_n)
}

pub fn mlp_diagonal_bigrams(tw: &TokenWeights, top_n: usize) -> NgramTable {
    bigram_table(&mlp_diagonal_scores(tw), top_n)
}

pub fn combined_bigrams(tw: &TokenWeights, top_n: usize) -> NgramTable {
    bigram_table(&bigram_scores(tw, BigramSource::Combined), top_n)
}

/// Most likely continuations of `context`.
pub fn following_tokens(scores: &Matrix, context: usize, top_n: usize) -> Result<NgramTable> {
    if context >= scores.cols() {
        return Err(Error::IndexOutOfRange {
            index: context,
            len: scores.cols(),
        });
    }
    let entries = (0..scores.rows())
        .map(|c| NgramEntry {
            context: alloc::vec![context],
            output: c,
            score: scores.get(c, context),
        })
        .collect();
    Ok(NgramTable::from_entries(entries, top_n))
}

/// Most likely predecessors of `output`: the transposed read of the same
/// score matrix.
pub fn preceding_tokens(scores: &Matrix, output: usize, top_n: usize) -> Result<NgramTable> {
    if output >= scores.rows() {
        return Err(Error::IndexOutOfRange {
            index: output,
            len: scores.rows(),
        });
    }
    let entries = scores
        .row(output)
        .iter()
        .enumerate()
        .map(|(t, &score)| NgramEntry {
            context: alloc::vec![t],
            output,
            score,
        })
        .collect();
    Ok(NgramTable::from_entries(entries, top_n))
}

/// Cross-term scores `2 (OV e_A)ᵀ Q_c e_B` for output token `c`, indexed
/// `[A, B]` with `A` the token routed through the head and `B` the direct one.
pub fn skip_trigram_matrix(tw: &TokenWeights, head_ov: &Matrix, output: usize) -> Result<Matrix> {
    let d = tw.d_model();
    if head_ov.shape() != (d, d) {
        return Err(Error::ShapeMismatch {
            context: "OV matrix",
            expected: (d, d),
            found: head_ov.shape(),
        });
    }
    if output >= tw.vocab() {
        return Err(Error::IndexOutOfRange {
            index: output,
            len: tw.vocab(),
        });
    }
    let q = reduce(&tw.layer, tw.unembed.row(output))?.into_matrix();
    let vocab = tw.vocab();
    let mut a = Matrix::zeros(d, vocab);
    gemm(1.0, head_ov, false, &tw.embed, false, 0.0, &mut a);
    let mut qe = Matrix::zeros(d, vocab);
    gemm(1.0, &q, false, &tw.embed, false, 0.0, &mut qe);
    let mut s = Matrix::zeros(vocab, vocab);
    gemm(2.0, &a, true, &qe, false, 0.0, &mut s);
    Ok(s)
}

pub fn skip_trigram_scores(
    tw: &TokenWeights,
    head_ov: &Matrix,
    output: usize,
    top_n: usize,
) -> Result<NgramTable> {
    let s = skip_trigram_matrix(tw, head_ov, output)?;
    let mut entries = Vec::with_capacity(s.rows() * s.cols());
    for a in 0..s.rows() {
        for (b, &score) in s.row(a).iter().enumerate() {
            entries.push(NgramEntry {
                context: alloc::vec![a, b],
                output,
                score,
            });
        }
    }
    Ok(NgramTable::from_entries(entries, top_n))
}
