//! Argument definitions and subcommand implementations.

use std::io::Write;
use std::path::PathBuf;

use bilinear_core::decompose::{
    class_spectrum, decompile, decompile_class, EigenFeature, Spectrum, DEFAULT_BRANCHING,
};
use bilinear_core::model::{BilinearLayer, BilinearModel, Topology};
use bilinear_core::ngram::{
    bigram_scores, bigram_table, following_tokens, preceding_tokens, skip_trigram_scores,
    BigramSource, TokenWeights,
};
use bilinear_core::spectral::{
    accuracy_sweep, fix_sign, model_similarity, rank_by_mean_activation, SignMode,
};
use bilinear_core::train::{train_with, TrainConfig};
use bilinear_core::Matrix;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::{load_model, save_model, Container};
use crate::data::{load_idx_split, DataSource, SyntheticSpec};
use crate::render::render_feature;
use crate::runtime::ThreadedRuntime;
use crate::tables::{bigram_csv, similarity_csv, skip_trigram_csv, sweep_csv};
use crate::tree::save_trees;
use crate::{write_file, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "bilinear",
    version,
    about = "Train bilinear MLPs and decompose their weights"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and write a BLNR checkpoint.
    Train(TrainArgs),
    /// Print validation accuracy of a checkpoint.
    Eval(EvalArgs),
    /// Eigendecompose one class's interaction matrix.
    Decompose(DecomposeArgs),
    /// Accuracy of top-k truncated spectral models.
    TruncateSweep(SweepArgs),
    /// Export the eigenvector tree of every class.
    Decompile(DecompileArgs),
    /// Render one eigenvector of a stored spectrum as a PPM image.
    Render(RenderArgs),
    /// Best-match eigenvector similarity between two models.
    Similarity(SimilarityArgs),
    /// Bigram or skip-trigram tables from token weights.
    Ngram(NgramArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Mnist,
    Fmnist,
    Synthetic,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    pub dataset: DatasetKind,
    /// Directory with train-/t10k- IDX files (raw or .gz).
    #[arg(long, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Synthetic dataset: training samples.
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    /// Synthetic dataset: input width.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Synthetic dataset: class count.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Synthetic dataset: pixel noise std.
    #[arg(long, default_value_t = 0.1)]
    pub pixel_noise: f64,
    /// Synthetic dataset: generator seed.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

impl DataArgs {
    pub fn source(&self) -> DataSource {
        match self.dataset {
            DatasetKind::Mnist | DatasetKind::Fmnist => DataSource::Idx(self.data_dir.clone()),
            DatasetKind::Synthetic => DataSource::Synthetic(SyntheticSpec {
                samples: self.samples,
                dim: self.dim,
                classes: self.classes,
                noise: self.pixel_noise,
                seed: self.data_seed,
            }),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 300)]
    pub d_model: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub layers: u8,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.33)]
    pub latent_noise: f64,
    #[arg(long, default_value_t = 0.95)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on the first N training samples only.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Worker threads; results are reduced in a fixed order.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub class: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20"
    )]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecompileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BRANCHING)]
    pub branch: usize,
    /// Only this class (default: all classes).
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    Pos,
    Neg,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub spectrum: PathBuf,
    /// Rank among eigenvectors of the chosen sign, strongest first.
    #[arg(long, default_value_t = 0)]
    pub rank: usize,
    #[arg(long, value_enum, default_value = "pos")]
    pub sign: SignArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 28)]
    pub width: usize,
    #[arg(long, default_value_t = 28)]
    pub height: usize,
    /// IDX directory; when given, ranks by mean activation over its
    /// validation split and orients each eigenvector by its top inputs.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NgramMode {
    Residual,
    MlpDiag,
    Combined,
    SkipTrigram,
}

#[derive(Debug, Args)]
pub struct NgramArgs {
    /// BLNR container with `embed`, `unembed`, `w`, `v` and optionally `p`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum)]
    pub mode: NgramMode,
    /// BLNR container with an `ov` tensor (skip-trigram mode).
    #[arg(long)]
    pub ov: Option<PathBuf>,
    /// Output token: required for skip-trigrams; for bigrams, lists its
    /// most likely preceding tokens.
    #[arg(long)]
    pub class: Option<usize>,
    /// Bigram modes: list the most likely tokens following this one.
    #[arg(long, conflicts_with = "class")]
    pub context: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Decompose(a) => cmd_decompose(a),
        Command::TruncateSweep(a) => cmd_sweep(a),
        Command::Decompile(a) => cmd_decompile(a),
        Command::Render(a) => cmd_render(a),
        Command::Similarity(a) => cmd_similarity(a, stdout),
        Command::Ngram(a) => cmd_ngram(a),
    }
}

fn say(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(a: TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let splits = a.data.source().load()?;
    let train_set = match a.limit {
        Some(n) => splits.train.head(n),
        None => splits.train,
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        latent_noise: a.latent_noise,
        lr_decay: a.lr_decay,
        seed: a.seed,
        chunks: a.threads.max(1),
    };
    config.validate()?;
    let topology = Topology::classifier(
        train_set.dim(),
        a.d_model,
        a.layers as usize,
        train_set.classes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut model = BilinearModel::init(&topology, &mut rng)?;
    let mut runtime = ThreadedRuntime::new(a.threads, Some(&mut *stdout));
    let report = train_with(
        &mut model,
        &train_set,
        Some(&splits.validation),
        &config,
        &mut runtime,
    )?;
    save_model(&a.out, &model, Some(&config))?;
    let acc = match report.epochs.last().and_then(|e| e.val_accuracy) {
        Some(acc) => acc,
        None => model.accuracy(&splits.validation)?,
    };
    say(stdout, &format!("val_acc={acc:.6}"))?;
    say(stdout, &format!("checkpoint={}", a.out.display()))
}

fn cmd_eval(a: EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let validation = a.data.source().load_validation()?;
    say(
        stdout,
        &format!("val_acc={:.6}", model.accuracy(&validation)?),
    )
}

pub fn spectrum_to_container(s: &Spectrum, class: usize) -> Container {
    let d = s.features.len();
    let mut c = Container::new("spectrum");
    c.attributes.insert("class".into(), class.into());
    c.attributes.insert("layer".into(), s.layer.into());
    c.push(
        "eigenvalues",
        Matrix::new(1, d, s.eigenvalues()).expect("finite"),
    );
    c.push(
        "direction",
        Matrix::new(1, s.direction.len(), s.direction.clone()).expect("finite"),
    );
    let rows = |f: &dyn Fn(&EigenFeature) -> &[f64]| {
        let width = s.features.first().map_or(0, |x| f(x).len());
        Matrix::new(
            d,
            width,
            s.features.iter().flat_map(|x| f(x).to_vec()).collect(),
        )
        .expect("finite")
    };
    c.push("eigenvectors", rows(&|f| &f.vector));
    if s.features.iter().all(|f| f.input_feature.is_some()) && d > 0 {
        c.push(
            "input_features",
            rows(&|f| f.input_feature.as_deref().unwrap()),
        );
    }
    c
}

pub fn spectrum_from_container(c: &Container) -> Result<Spectrum> {
    c.expect_kind("spectrum")?;
    let class = c.attribute_usize("class")?;
    let layer = c.attribute_usize("layer")?;
    let values = c.tensor("eigenvalues")?;
    let vectors = c.tensor("eigenvectors")?;
    let inputs = c
        .has_tensor("input_features")
        .then(|| c.tensor("input_features"))
        .transpose()?;
    let d = values.cols();
    if vectors.rows() != d || inputs.is_some_and(|m| m.rows() != d) {
        return Err(Error::Shape(format!(
            "spectrum with {d} eigenvalues has mismatched vector tables"
        )));
    }
    Ok(Spectrum {
        features: (0..d)
            .map(|i| EigenFeature {
                eigenvalue: values.get(0, i),
                vector: vectors.row(i).to_vec(),
                input_feature: inputs.map(|m| m.row(i).to_vec()),
                class: Some(class),
                rank: i,
            })
            .collect(),
        direction: c.tensor("direction")?.row(0).to_vec(),
        layer,
    })
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let s = class_spectrum(&model, a.class)?;
    spectrum_to_container(&s, a.class).save(&a.out)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let validation = a.data.source().load_validation()?;
    let rows = accuracy_sweep(&model, &validation, &a.ks)?;
    write_file(&a.out, sweep_csv(&rows).as_bytes())
}

fn cmd_decompile(a: DecompileArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let trees = match a.class {
        Some(c) => vec![decompile_class(&model, c, a.branch)?],
        None => decompile(&model, a.branch)?,
    };
    save_trees(&trees, &a.out)
}

/// Index into `spectrum.features` of the `rank`-th feature of `sign`,
/// together with the feature, oriented when `images` are supplied.
pub fn select_feature(
    spectrum: &Spectrum,
    sign: SignMode,
    rank: usize,
    images: Option<&Matrix>,
) -> Result<EigenFeature> {
    let index = match images {
        Some(x) => rank_by_mean_activation(spectrum, x, sign)?
            .get(rank)
            .map(|r| r.index),
        None => {
            let mut idx: Vec<usize> = (0..spectrum.len())
                .filter(|&i| match sign {
                    SignMode::Positive => spectrum.features[i].eigenvalue > 0.0,
                    SignMode::Negative => spectrum.features[i].eigenvalue < 0.0,
                })
                .collect();
            idx.sort_by(|&i, &j| {
                spectrum.features[j]
                    .eigenvalue
                    .abs()
                    .total_cmp(&spectrum.features[i].eigenvalue.abs())
            });
            idx.get(rank).copied()
        }
    };
    let index = index.ok_or_else(|| {
        Error::Usage(format!(
            "no eigenvector of rank {rank} with the requested sign"
        ))
    })?;
    let mut feature = spectrum.features[index].clone();
    if let Some(x) = images {
        fix_sign(&mut feature, x)?;
    }
    Ok(feature)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let spectrum = spectrum_from_container(&Container::load(&a.spectrum)?)?;
    let validation = a
        .data_dir
        .as_deref()
        .map(|d| load_idx_split(d, "t10k", 10))
        .transpose()?;
    let sign = match a.sign {
        SignArg::Pos => SignMode::Positive,
        SignArg::Neg => SignMode::Negative,
    };
    let feature = select_feature(
        &spectrum,
        sign,
        a.rank,
        validation.as_ref().map(|v| v.images()),
    )?;
    let values = feature
        .input_feature
        .ok_or_else(|| Error::Usage("spectrum has no input-space features to render".into()))?;
    render_feature(&values, a.width, a.height, &a.out)
}

fn cmd_similarity(a: SimilarityArgs, stdout: &mut dyn Write) -> Result<()> {
    let ma = load_model(&a.model_a)?;
    let mb = load_model(&a.model_b)?;
    let report = model_similarity(&ma, &mb, a.top)?;
    write_file(&a.out, similarity_csv(&report).as_bytes())?;
    say(
        stdout,
        &format!("mean_similarity={:.6}", report.mean(a.top)),
    )
}

pub fn token_weights_from_container(c: &Container) -> Result<TokenWeights> {
    let p = c
        .has_tensor("p")
        .then(|| c.tensor("p").cloned())
        .transpose()?;
    let layer = BilinearLayer::new(c.tensor("w")?.clone(), c.tensor("v")?.clone(), p)
        .map_err(|e| Error::Shape(e.to_string()))?;
    TokenWeights::new(
        c.tensor("embed")?.clone(),
        c.tensor("unembed")?.clone(),
        layer,
    )
    .map_err(|e| match e {
        bilinear_core::Error::TooLarge { .. } => e.into(),
        other => Error::Shape(other.to_string()),
    })
}

pub fn token_weights_to_container(tw: &TokenWeights) -> Container {
    let mut c = Container::new("token-weights");
    c.push("embed", tw.embed().clone());
    c.push("unembed", tw.unembed().clone());
    c.push("w", tw.layer().w().clone());
    c.push("v", tw.layer().v().clone());
    if let Some(p) = tw.layer().proj() {
        c.push("p", p.clone());
    }
    c
}

fn cmd_ngram(a: NgramArgs) -> Result<()> {
    let tw = token_weights_from_container(&Container::load(&a.weights)?)?;
    let csv = match a.mode {
        NgramMode::SkipTrigram => {
            let ov_path =
                a.ov.as_deref()
                    .ok_or_else(|| Error::Usage("--mode skip-trigram requires --ov".into()))?;
            let output = a
                .class
                .ok_or_else(|| Error::Usage("--mode skip-trigram requires --class".into()))?;
            let ov = Container::load(ov_path)?;
            skip_trigram_csv(&skip_trigram_scores(&tw, ov.tensor("ov")?, output, a.top)?)
        }
        mode => {
            if a.ov.is_some() {
                return Err(Error::Usage(
                    "--ov only applies to --mode skip-trigram".into(),
                ));
            }
            let source = match mode {
                NgramMode::Residual => BigramSource::Residual,
                NgramMode::MlpDiag => BigramSource::MlpDiagonal,
                _ => BigramSource::Combined,
            };
            let scores = bigram_scores(&tw, source);
            let table = match (a.class, a.context) {
                (Some(c), _) => preceding_tokens(&scores, c, a.top)?,
                (None, Some(t)) => following_tokens(&scores, t, a.top)?,
                (None, None) => bigram_table(&scores, a.top),
            };
            bigram_csv(&table)
        }
    };
    write_file(&a.out, csv.as_bytes())
}

/// Exit status for an error: 2 for usage problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) => 2,
        _ => 1,
    }
}
