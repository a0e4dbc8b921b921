use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ortholens::lens::PreNorm;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "ortholens",
    version,
    about = "Text-manifold geometry and hallucination diagnostics for vision-language embeddings"
)]
pub struct Cli {
    /// Worker threads; ORTHOLENS_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit mean + top-K principal basis of the caption embeddings.
    FitManifold(FitManifoldArgs),
    /// Remove the top-k text components from vision embeddings.
    Debias(DebiasArgs),
    /// Layer-wise alignment of vision tokens with the text basis.
    Align(AlignArgs),
    /// Pairwise subspace similarity between fitted bases.
    SubspaceSim(SubspaceSimArgs),
    /// Ridge probes on (debiased) vision tokens, scored by mAP.
    Probe(ProbeArgs),
    /// Decode patch hidden states through the unembedding matrix.
    Lens(LensArgs),
    /// CHAIR hallucination metrics for generated captions.
    Chair(ChairArgs),
    /// Co-occurrence hallucination frequencies for probe objects.
    Cooccur(CooccurArgs),
    /// Evaluate a metric over every (k, layer) pair.
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FitManifold(_) => "fit-manifold",
            Command::Debias(_) => "debias",
            Command::Align(_) => "align",
            Command::SubspaceSim(_) => "subspace-sim",
            Command::Probe(_) => "probe",
            Command::Lens(_) => "lens",
            Command::Chair(_) => "chair",
            Command::Cooccur(_) => "cooccur",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitManifoldArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Basis size K.
    #[arg(long, default_value_t = ortholens::manifold::DEFAULT_BASIS_SIZE)]
    pub k: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit one manifold per `text_layer_<l>` entry instead of `text_embeddings`.
    #[arg(long)]
    pub per_layer: bool,
    #[arg(long, default_value_t = ortholens::manifold::DEFAULT_CHUNK_ROWS)]
    pub chunk_rows: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DumpKind {
    /// `vision_layer_<l>`
    Vision,
    /// `hidden_states_layer_<l>`
    Hidden,
}

#[derive(Debug, Args, Serialize)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["manifest", "input"]))]
pub struct DebiasArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Raw `.emb` tensor to debias instead of a manifest layer.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub manifold: PathBuf,
    #[arg(long, default_value_t = ortholens::debias::DEFAULT_REMOVED_COMPONENTS)]
    pub k: usize,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, value_enum, default_value_t = DumpKind::Vision)]
    pub kind: DumpKind,
    /// Output `.emb`; a JSON sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub manifold: PathBuf,
    /// Leading components to drop before scoring.
    #[arg(long, default_value_t = 0)]
    pub drop_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SubspaceSimArgs {
    /// Manifold directories.
    #[arg(long, num_args = 1.., required = true)]
    pub bases: Vec<PathBuf>,
    /// Compare only the leading `top` directions of every basis.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON object mapping image id to category names.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub manifold: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,2")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = ortholens::probe::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Layer selection: `a..b`, `a..=b` or `a,b,c`. Defaults to every layer.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    None,
    Rms,
    Layer,
}

impl From<NormArg> for PreNorm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::None => PreNorm::None,
            NormArg::Rms => PreNorm::Rms,
            NormArg::Layer => PreNorm::Layer,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LensArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub layer: usize,
    /// Patch indices; all patches when omitted.
    #[arg(long, value_delimiter = ',')]
    pub patches: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
    /// Image id; the first image when omitted.
    #[arg(long)]
    pub image: Option<String>,
    #[arg(long)]
    pub debias_manifold: Option<PathBuf>,
    #[arg(long, default_value_t = ortholens::debias::DEFAULT_REMOVED_COMPONENTS)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = NormArg::None)]
    pub pre_norm: NormArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ChairArgs {
    /// JSON lines of `{image_id, caption}`.
    #[arg(long)]
    pub captions: PathBuf,
    /// JSON object mapping image id to ground-truth objects.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Synonym lexicon; a built-in one when omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CooccurArgs {
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Object present in every qualifying image.
    #[arg(long)]
    pub base: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub probes: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Alignment,
    ProbeMap,
    Chair,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    /// `a..b`, `a..=b` or `a,b,c`.
    #[arg(long)]
    pub layers: String,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub manifold: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = ortholens::probe::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Caption file template with `{k}` and `{layer}` placeholders.
    #[arg(long)]
    pub captions: Option<String>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
