//! `dnorm`: score, evaluate and generate cross-modal embedding sets.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or format
//! error, 4 non-finite numeric result.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dnorm_core::eval::{
    caption_correlation, classify_topk, preference_accuracy, rank_agreement, recall_at_k, Direction, RefMode,
    TauVariant,
};
use dnorm_core::meanest::{estimate_mean, sample_indices, AblationTask, GENERATOR};
use dnorm_core::report::to_canonical_json;
use dnorm_core::similarity::ScoringContext;
use dnorm_core::storeio::{self, Manifest, ManifestRow, StoreError};
use dnorm_core::synth::{class_id, NOISE_GAIN};
use dnorm_core::{
    ablate_sample_counts, generate, l2_normalize, score_matrix, EmbeddingSet, Error, Measure, MeanVector,
    PairedCorpus, SimilarityConfig, SynthConfig,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "dnorm", version, about = "Distribution-normalized scoring for cross-modal embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every image/text pair and write the score matrix.
    Score(ScoreArgs),
    /// Recall@k from a score file and the two manifests.
    Retrieve(RetrieveArgs),
    /// Zero-shot Acc@k of images against class prompts.
    Classify(ClassifyArgs),
    /// Kendall correlation of metric scores with human caption ratings.
    CaptionEval(CaptionArgs),
    /// Pairwise caption preference accuracy per category.
    Pascal(PascalArgs),
    /// Metric sensitivity to the number of samples behind each mean.
    Ablate(AblateArgs),
    /// Generate a synthetic paired corpus.
    Synth(SynthArgs),
    /// Rank agreement between DN and the full-expectation oracle.
    OracleCompare(OracleArgs),
}

#[derive(Args, Clone)]
struct MeasureArgs {
    /// S0, DN, DN_STAR, FIRST_ORDER_EXP, GEOMETRIC or FULL.
    #[arg(long, default_value = "DN", value_parser = parse_measure)]
    measure: Measure,
    #[arg(long, default_value_t = SimilarityConfig::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = SimilarityConfig::DEFAULT_MEAN_FACTOR)]
    mean_factor: f64,
    /// Estimate each mean from this many rows instead of the full set.
    #[arg(long, requires = "mean_seed")]
    mean_n: Option<usize>,
    #[arg(long, requires = "mean_n")]
    mean_seed: Option<u64>,
    /// FULL only: negatives per side (default: every row).
    #[arg(long)]
    neg_n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    neg_seed: u64,
    /// Score rows as stored instead of L2-normalizing them on load.
    #[arg(long)]
    no_normalize: bool,
}

impl MeasureArgs {
    fn config(&self) -> SimilarityConfig {
        SimilarityConfig {
            measure: self.measure,
            tau: self.tau,
            mean_factor: self.mean_factor,
            normalize_on_load: !self.no_normalize,
        }
    }

    fn sample(&self) -> Option<(usize, u64)> {
        self.mean_n.zip(self.mean_seed)
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    texts: PathBuf,
    #[command(flatten)]
    measure: MeasureArgs,
    /// Query side of the matrix.
    #[arg(long, value_enum, default_value_t = Dir::I2t)]
    direction: Dir,
    /// Output EMB1 file; the JSON sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Image manifest then text manifest.
    #[arg(long, num_args = 2, value_names = ["IMAGES", "TEXTS"])]
    manifests: Vec<PathBuf>,
    #[arg(long, value_enum)]
    direction: Dir,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    images: PathBuf,
    /// Class prompt embeddings; manifest labels tie images to prompts.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    k: Vec<usize>,
    #[command(flatten)]
    measure: MeasureArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    texts: PathBuf,
    #[arg(long)]
    ratings: PathBuf,
    #[command(flatten)]
    measure: MeasureArgs,
    #[arg(long, value_enum, default_value_t = Ref::None)]
    ref_mode: Ref,
    #[arg(long, value_enum, default_value_t = Coef::TauB)]
    coef: Coef,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PascalArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    texts: PathBuf,
    #[arg(long)]
    preferences: PathBuf,
    #[command(flatten)]
    measure: MeasureArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    task: Task,
    #[arg(long)]
    images: PathBuf,
    /// Texts for retrieval, class prompts for classification.
    #[arg(long)]
    texts: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    counts: Vec<usize>,
    /// Number of seeds; seeds 0..N are used.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Dir::I2t)]
    direction: Dir,
    #[arg(long, default_value = "DN", value_parser = parse_measure)]
    measure: Measure,
    #[arg(long, default_value_t = SimilarityConfig::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = SimilarityConfig::DEFAULT_MEAN_FACTOR)]
    mean_factor: f64,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Cluster latents around this many classes and emit class prompts.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    class_spread: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    texts: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, default_value_t = 100)]
    neg_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SimilarityConfig::DEFAULT_MEAN_FACTOR)]
    mean_factor: f64,
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    I2t,
    T2i,
}

impl From<Dir> for Direction {
    fn from(d: Dir) -> Self {
        match d {
            Dir::I2t => Direction::ImageToText,
            Dir::T2i => Direction::TextToImage,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Ref {
    None,
    Clip,
    Dn,
    DnStar,
}

impl From<Ref> for RefMode {
    fn from(r: Ref) -> Self {
        match r {
            Ref::None => RefMode::None,
            Ref::Clip => RefMode::Clip,
            Ref::Dn => RefMode::Dn,
            Ref::DnStar => RefMode::DnStar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Coef {
    #[value(name = "tau_b")]
    TauB,
    #[value(name = "tau_c")]
    TauC,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Retrieval,
    Classify,
}

fn parse_measure(s: &str) -> Result<Measure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Config(format!("{e:?}: {e}")),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Invalid(inner) => inner.into(),
            other => Failure::Io(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

fn load(path: &Path, normalize: bool) -> Outcome<(EmbeddingSet, Manifest)> {
    let (set, manifest) = storeio::read_embeddings_with_manifest(path)?;
    let set = if normalize { l2_normalize(&set)? } else { set };
    Ok((set, manifest))
}

fn load_pair(images: &Path, texts: &Path, normalize: bool) -> Outcome<(PairedCorpus, Manifest, Manifest)> {
    let (i, im) = load(images, normalize)?;
    let (t, tm) = load(texts, normalize)?;
    let links = storeio::links_from_manifests(&im, &tm)?;
    Ok((PairedCorpus::new(i, t, links)?, im, tm))
}

fn mean_record(m: &MeanVector, sample: Option<(usize, u64)>) -> Value {
    match sample {
        Some((n, seed)) => json!({"n": n, "seed": seed, "generator": GENERATOR, "modality": m.modality()}),
        None => json!({"n": m.count(), "exact": true, "modality": m.modality()}),
    }
}

/// Means and negatives for `args`, plus their provenance.
struct Inputs {
    mu_x: MeanVector,
    mu_y: MeanVector,
    negatives: Option<(EmbeddingSet, EmbeddingSet)>,
    provenance: Value,
}

impl Inputs {
    fn ctx(&self) -> ScoringContext<'_> {
        let ctx = ScoringContext::with_means(&self.mu_x, &self.mu_y);
        match &self.negatives {
            Some((ni, nt)) => ctx.with_negatives(ni, nt),
            None => ctx,
        }
    }
}

fn inputs(images: &EmbeddingSet, texts: &EmbeddingSet, args: &MeasureArgs) -> Outcome<Inputs> {
    let sample = args.sample();
    let mu_x = estimate_mean(images, sample)?;
    let mu_y = estimate_mean(texts, sample)?;
    let mut provenance = json!({
        "mean_x": mean_record(&mu_x, sample),
        "mean_y": mean_record(&mu_y, sample),
    });
    let negatives = if args.measure.needs_negatives() {
        let (ni, nt) = match args.neg_n {
            Some(n) => (
                images.select(&sample_indices(images, n, args.neg_seed)?)?,
                texts.select(&sample_indices(texts, n, args.neg_seed)?)?,
            ),
            None => (images.clone(), texts.clone()),
        };
        provenance["negatives"] = json!({
            "n_images": ni.len(),
            "n_texts": nt.len(),
            "seed": args.neg_n.map(|_| args.neg_seed),
            "generator": GENERATOR,
        });
        Some((ni, nt))
    } else {
        None
    };
    Ok(Inputs {
        mu_x,
        mu_y,
        negatives,
        provenance,
    })
}

fn emit(value: &impl serde::Serialize, out: Option<&Path>) -> Outcome<()> {
    let text = to_canonical_json(value)?;
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_ks(ks: &[usize]) -> Outcome<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Failure::Config("--k values must be ≥ 1".into()));
    }
    Ok(())
}

fn run_score(a: ScoreArgs) -> Outcome<()> {
    let cfg = a.measure.config();
    cfg.validate()?;
    let (images, _) = load(&a.images, cfg.normalize_on_load)?;
    let (texts, _) = load(&a.texts, cfg.normalize_on_load)?;
    let inp = inputs(&images, &texts, &a.measure)?;
    let scores = match a.direction {
        Dir::I2t => score_matrix(&images, &texts, &cfg, inp.ctx())?,
        Dir::T2i => score_matrix(&texts, &images, &cfg, inp.ctx())?,
    };
    let mut provenance = inp.provenance;
    provenance["images"] = json!(a.images.display().to_string());
    provenance["texts"] = json!(a.texts.display().to_string());
    storeio::write_scores(&a.out, &scores, provenance)?;
    eprintln!("wrote {}×{} scores to {}", scores.n_queries(), scores.n_candidates(), a.out.display());
    Ok(())
}

fn run_retrieve(a: RetrieveArgs) -> Outcome<()> {
    check_ks(&a.k)?;
    let scores = storeio::read_scores(&a.scores)?;
    let im = storeio::read_manifest(&a.manifests[0])?;
    let tm = storeio::read_manifest(&a.manifests[1])?;
    let dir = Direction::from(a.direction);
    if scores.query_modality() != dir.query_modality() {
        return Err(Failure::Config(format!(
            "score file has {} queries but --direction expects {}",
            scores.query_modality().as_str(),
            dir.query_modality().as_str()
        )));
    }
    let links = storeio::links_from_manifests(&im, &tm)?;
    let links = match dir {
        Direction::ImageToText => links,
        Direction::TextToImage => {
            let mut inv: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for (i, ts) in &links {
                for t in ts {
                    inv.entry(t.clone()).or_default().insert(i.clone());
                }
            }
            inv
        }
    };
    let report = recall_at_k(&scores, &links, &a.k)?;
    emit(&report, a.out.as_deref())
}

fn run_classify(a: ClassifyArgs) -> Outcome<()> {
    check_ks(&a.k)?;
    let cfg = a.measure.config();
    cfg.validate()?;
    let (images, im) = load(&a.images, cfg.normalize_on_load)?;
    let (prompts, pm) = load(&a.prompts, cfg.normalize_on_load)?;
    let labels = storeio::labels_from_manifests(&im, &pm)?;
    // the prompt mean is always exact; only the image mean is subsampled
    let mu_x = estimate_mean(&images, a.measure.sample())?;
    let mu_y = estimate_mean(&prompts, None)?;
    let report = classify_topk(&images, &prompts, &labels, &a.k, &cfg, ScoringContext::with_means(&mu_x, &mu_y))?;
    emit(
        &json!({
            "report": report,
            "config": cfg,
            "mean_x": mean_record(&mu_x, a.measure.sample()),
            "mean_y": mean_record(&mu_y, None),
        }),
        a.out.as_deref(),
    )
}

fn run_caption(a: CaptionArgs) -> Outcome<()> {
    let cfg = a.measure.config();
    cfg.validate()?;
    let (corpus, ..) = load_pair(&a.images, &a.texts, cfg.normalize_on_load)?;
    let corpus = corpus.with_ratings(storeio::read_ratings(&a.ratings)?)?;
    let inp = inputs(&corpus.image_set, &corpus.text_set, &a.measure)?;
    let variant = match a.coef {
        Coef::TauB => TauVariant::TauB,
        Coef::TauC => TauVariant::TauC,
    };
    let ref_mode = RefMode::from(a.ref_mode);
    let report = caption_correlation(&corpus, &cfg, inp.ctx(), ref_mode, variant)?;
    emit(
        &json!({"report": report, "config": cfg, "ref_mode": ref_mode, "inputs": inp.provenance}),
        a.out.as_deref(),
    )
}

fn run_pascal(a: PascalArgs) -> Outcome<()> {
    let cfg = a.measure.config();
    cfg.validate()?;
    let (corpus, ..) = load_pair(&a.images, &a.texts, cfg.normalize_on_load)?;
    let corpus = corpus.with_preferences(storeio::read_preferences(&a.preferences)?)?;
    let inp = inputs(&corpus.image_set, &corpus.text_set, &a.measure)?;
    let report = preference_accuracy(&corpus, &cfg, inp.ctx())?;
    emit(
        &json!({"report": report, "config": cfg, "inputs": inp.provenance}),
        a.out.as_deref(),
    )
}

fn run_ablate(a: AblateArgs) -> Outcome<()> {
    check_ks(&a.k)?;
    let cfg = SimilarityConfig {
        measure: a.measure,
        tau: a.tau,
        mean_factor: a.mean_factor,
        normalize_on_load: !a.no_normalize,
    };
    cfg.validate()?;
    if a.seeds == 0 {
        return Err(Failure::Config("--seeds must be ≥ 1".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let (images, im) = load(&a.images, cfg.normalize_on_load)?;
    let (texts, tm) = load(&a.texts, cfg.normalize_on_load)?;
    let (corpus, task) = match a.task {
        Task::Retrieval => {
            let links = storeio::links_from_manifests(&im, &tm)?;
            (
                PairedCorpus::new(images, texts, links)?,
                AblationTask::Retrieval {
                    direction: a.direction.into(),
                    ks: a.k.clone(),
                },
            )
        }
        Task::Classify => {
            let labels = storeio::labels_from_manifests(&im, &tm)?;
            let corpus = PairedCorpus::new(images, texts.clone(), BTreeMap::new())?.with_classes(texts, labels)?;
            (corpus, AblationTask::Classification { ks: a.k.clone() })
        }
    };
    for (i, &n) in a.counts.iter().enumerate() {
        eprintln!("[{}/{}] count {n} × {} seeds", i + 1, a.counts.len(), seeds.len());
    }
    let report = ablate_sample_counts(&corpus, &a.counts, &seeds, &task, &cfg)?;
    emit(&report, a.out.as_deref())
}

fn manifest_rows(set: &EmbeddingSet, pairs: impl Fn(&str) -> Vec<String>, label: impl Fn(&str) -> Option<String>) -> Manifest {
    Manifest {
        modality: set.modality(),
        rows: set
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| ManifestRow {
                row: i as u32,
                id: id.clone(),
                modality: set.modality(),
                pairs: pairs(id),
                label: label(id),
            })
            .collect(),
    }
}

fn run_synth(a: SynthArgs) -> Outcome<()> {
    let cfg = SynthConfig {
        dim: a.dim,
        n_pairs: a.n,
        noise_sigma: a.sigma,
        offset_rho: a.rho,
        n_classes: a.classes,
        class_spread: a.class_spread,
        seed: a.seed,
    };
    let sc = generate(&cfg)?;
    let c = &sc.corpus;
    fs::create_dir_all(&a.out).map_err(|e| Failure::Io(format!("{}: {e}", a.out.display())))?;
    let labels = c.labels.clone().unwrap_or_default();
    let im = manifest_rows(
        &c.image_set,
        |id| c.links.get(id).map(|s| s.iter().cloned().collect()).unwrap_or_default(),
        |id| labels.get(id).cloned(),
    );
    let tm = manifest_rows(&c.text_set, |_| Vec::new(), |_| None);
    storeio::write_embeddings_with_manifest(&c.image_set, &im, &a.out.join("images.emb"))?;
    storeio::write_embeddings_with_manifest(&c.text_set, &tm, &a.out.join("texts.emb"))?;
    if let Some(prompts) = &c.class_prompts {
        let pm = manifest_rows(prompts, |_| Vec::new(), |id| Some(id.to_string()));
        storeio::write_embeddings_with_manifest(prompts, &pm, &a.out.join("prompts.emb"))?;
    }
    let meta = json!({
        "config": cfg,
        "generator": dnorm_core::synth::GENERATOR,
        "noise_gain": NOISE_GAIN,
        "image_offset": sc.image_offset,
        "text_offset": sc.text_offset,
        "files": {
            "images": "images.emb",
            "texts": "texts.emb",
            "prompts": c.class_prompts.as_ref().map(|_| "prompts.emb"),
        },
        "classes": c.class_prompts.as_ref().map(|p| (0..p.len()).map(class_id).collect::<Vec<_>>()),
    });
    emit(&meta, Some(&a.out.join("synth.json")))?;
    eprintln!("wrote {} pairs to {}", cfg.n_pairs, a.out.display());
    Ok(())
}

fn run_oracle(a: OracleArgs) -> Outcome<()> {
    let normalize = !a.no_normalize;
    let (images, _) = load(&a.images, normalize)?;
    let (texts, _) = load(&a.texts, normalize)?;
    let ni = images.select(&sample_indices(&images, a.neg_n, a.seed)?)?;
    let nt = texts.select(&sample_indices(&texts, a.neg_n, a.seed)?)?;
    // S1 sees the same unlabeled sample as FULL, through its mean
    let mu_x = estimate_mean(&ni, None)?;
    let mu_y = estimate_mean(&nt, None)?;
    let base = SimilarityConfig {
        measure: Measure::Dn,
        tau: a.tau,
        mean_factor: a.mean_factor,
        normalize_on_load: normalize,
    };
    let full = SimilarityConfig {
        measure: Measure::Full,
        ..base
    };
    base.validate()?;
    let dn = score_matrix(&images, &texts, &base, ScoringContext::with_means(&mu_x, &mu_y))?;
    let fs_ = score_matrix(&images, &texts, &full, ScoringContext::default().with_negatives(&ni, &nt))?;
    let report = rank_agreement(&dn, &fs_)?;
    emit(
        &json!({
            "agreement": report,
            "tau": a.tau,
            "neg_n": a.neg_n,
            "seed": a.seed,
            "generator": GENERATOR,
            "n_pairs_scored": dn.as_slice().len(),
        }),
        a.out.as_deref(),
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => run_score(a),
        Command::Retrieve(a) => run_retrieve(a),
        Command::Classify(a) => run_classify(a),
        Command::CaptionEval(a) => run_caption(a),
        Command::Pascal(a) => run_pascal(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Synth(a) => run_synth(a),
        Command::OracleCompare(a) => run_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dnorm: {f}");
            ExitCode::from(f.code())
        }
    }
}
