//! `kgcep`: generate, split, train, evaluate and sweep from the shell.
//!
//! Machine-readable results go to stdout, progress and diagnostics to stderr.
//! Exit codes: 0 ok, 1 usage, 2 data or validation error, 3 numerical failure.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kgcep::cep::{evaluate_cep, CepError, ClusterConfig, KMeansInit};
use kgcep::datagen::{generate, Shape, ShapeSpec};
use kgcep::kg::{
    derive_labels, parse_triples, read_dataset, split_dataset, write_dataset, DictionaryMode, KnowledgeGraph,
    Split, SplitManifest, DEFAULT_SPLIT_RATIOS,
};
use kgcep::lp::{evaluate_lp, CandidateScope, FilterMode, LpConfig, Sides};
use kgcep::model::{EmbeddingModel, ModelKind};
use kgcep::sweep::{correlation_csv, run_sweep, SweepSpec, SweepTable};
use kgcep::train::{load_model, save_model, train, ModelSidecar, TrainConfig, TrainingLog};

#[derive(Debug, Parser)]
#[command(name = "kgcep", version, about = "Knowledge-graph embeddings scored by link prediction and clustering")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Seed for generation, splitting, training or clustering
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory or file, depending on the subcommand
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only log warnings and errors
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, env = "KGCEP_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory
    Gen(GenArgs),
    /// Split a triple file into LRN/VLD/TUN/TST
    Split(SplitArgs),
    /// Train an embedding model
    Train(TrainArgs),
    /// Link-prediction metrics as JSON
    EvalLp(EvalLpArgs),
    /// Clustering accuracy as JSON
    EvalCep(EvalCepArgs),
    /// Correlation table of a finished sweep
    Correlate(CorrelateArgs),
    /// Run or resume a hyperparameter sweep
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value = "ontology")]
    shape: Shape,
    /// Chance that a label or partner ignores the hierarchy [default: shape default]
    #[arg(long)]
    noise_rate: Option<f64>,
    /// Mean many-to-many partners per subject [default: shape default]
    #[arg(long)]
    density: Option<f64>,
    /// Number of subjects [default: shape default]
    #[arg(long)]
    subjects: Option<usize>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Triple file (`head:Type<TAB>relation<TAB>tail:Type`)
    #[arg(long)]
    input: PathBuf,
    /// LRN,VLD,TUN,TST fractions
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SPLIT_RATIOS)]
    ratios: Vec<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    kg: PathBuf,
    #[arg(long, default_value = "transe")]
    model: ModelKind,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Margin
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
    /// Corrupt with any entity instead of same-type entities
    #[arg(long)]
    untyped: bool,
    /// Epochs between TUN evaluations
    #[arg(long, default_value_t = 25)]
    eval_every: usize,
}

#[derive(Debug, Args)]
struct EvalLpArgs {
    /// Model file written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory the model was trained on
    #[arg(long)]
    kg: PathBuf,
    #[arg(long, default_value = "TST")]
    split: Split,
    /// Candidate scope [default: typed iff the model was trained typed]
    #[arg(long)]
    scope: Option<CandidateScope>,
    #[arg(long, default_value = "raw")]
    filter: FilterMode,
    #[arg(long, default_value = "both")]
    sides: Sides,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize])]
    hits: Vec<usize>,
}

#[derive(Debug, Args)]
struct EvalCepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    /// Many-to-one relation whose tails label the clustered entities
    #[arg(long)]
    relation: String,
    /// Clusters per label (1, 2 or 4)
    #[arg(long, default_value_t = 4)]
    multiplier: usize,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
    #[arg(long, default_value = "kmeans++")]
    init: KMeansInit,
    /// Also write the per-cluster label histogram as CSV
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// `reports/sweep.json` of a finished sweep
    #[arg(long)]
    table: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sweep spec (TOML)
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Display) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn data(message: impl Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn numerical(message: impl Display) -> Failure {
    Failure {
        code: 3,
        message: message.to_string(),
    }
}

fn train_failure(e: kgcep::train::TrainError) -> Failure {
    if e.is_numerical() {
        numerical(e)
    } else {
        data(e)
    }
}

fn cep_failure(e: CepError) -> Failure {
    match e {
        CepError::NonFinitePoints | CepError::WMeanFormsDisagree { .. } => numerical(e),
        e => data(e),
    }
}

type Outcome = Result<(), Failure>;

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
            }
            fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| data(format!("stdout: {e}")))
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialises") + "\n"
}

fn load_kg(dir: &Path) -> Result<KnowledgeGraph, Failure> {
    read_dataset(dir).map(|(kg, _)| kg).map_err(data)
}

fn load_checked(model: &Path, kg: &KnowledgeGraph) -> Result<EmbeddingModel, Failure> {
    let (model, sidecar) = load_model(model).map_err(train_failure)?;
    match sidecar {
        Some(s) => s.check(kg).map_err(data)?,
        None => log::warn!("no sidecar next to the model; dictionary compatibility unchecked"),
    }
    Ok(model)
}

fn gen(g: &Global, a: GenArgs) -> Outcome {
    let out = g.out.as_deref().ok_or_else(|| usage("gen needs --out <DIR>"))?;
    let mut spec = ShapeSpec::for_shape(a.shape);
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    if let Some(n) = a.noise_rate {
        spec.noise_rate = n;
    }
    if let Some(d) = a.density {
        spec.density = d;
    }
    if let Some(s) = a.subjects {
        spec.subjects = s;
    }
    let ds = generate(&spec).map_err(data)?;
    ds.write(out).map_err(data)?;
    log::info!(
        "wrote {} triples over {} entities to {}",
        ds.kg.num_triples(),
        ds.kg.dictionary().num_entities(),
        out.display()
    );
    Ok(())
}

fn split(g: &Global, a: SplitArgs) -> Outcome {
    let out = g.out.as_deref().ok_or_else(|| usage("split needs --out <DIR>"))?;
    let ratios: [f64; 4] = a.ratios.try_into().map_err(|_| usage("--ratios takes four values"))?;
    let seed = g.seed.unwrap_or(0);
    let text = fs::read_to_string(&a.input).map_err(|e| data(format!("{}: {e}", a.input.display())))?;
    let (dict, triples) = parse_triples(&text, DictionaryMode::Build).map_err(data)?;
    let kg = split_dataset(dict, &triples, ratios, seed)
        .and_then(|kg| kg.canonicalize())
        .map_err(data)?;
    write_dataset(out, &kg, &SplitManifest::for_graph(&kg, seed, ratios)).map_err(data)?;
    let counts = Split::ALL.map(|s| format!("{s} {}", kg.split(s).len()));
    log::info!("{}", counts.join(", "));
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a Path,
    sidecar: &'a ModelSidecar,
    log: &'a TrainingLog,
}

fn train_cmd(g: &Global, a: TrainArgs) -> Outcome {
    let out = g.out.as_deref().ok_or_else(|| usage("train needs --out <MODEL FILE>"))?;
    let kg = load_kg(&a.kg)?;
    let config = TrainConfig {
        model: a.model,
        dim: a.dim,
        gamma: a.gamma,
        learning_rate: a.lr,
        max_epochs: a.epochs,
        replicas: a.replicas,
        seed: g.seed.unwrap_or(0),
        typed: !a.untyped,
        eval_every: a.eval_every,
        ..TrainConfig::default()
    };
    let (model, log) = train(&kg, &config).map_err(train_failure)?;
    let sidecar = ModelSidecar::new(&kg, &config, &log);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    save_model(out, &model, &sidecar).map_err(train_failure)?;
    log::info!(
        "replica {} selected, TUN MRR {:.4}",
        log.selected,
        log.selected_log().final_tuning_mrr
    );
    emit(
        None,
        &json(&TrainSummary {
            model: out,
            sidecar: &sidecar,
            log: &log,
        }),
    )
}

fn eval_lp(g: &Global, a: EvalLpArgs) -> Outcome {
    let kg = load_kg(&a.kg)?;
    let model = load_checked(&a.model, &kg)?;
    let mut config = LpConfig::for_model(&model);
    if let Some(scope) = a.scope {
        config.scope = scope;
    }
    config.filter = a.filter;
    config.sides = a.sides;
    config.hits_at = a.hits;
    config.validate().map_err(usage)?;
    let report = evaluate_lp(&model, &kg, a.split, &config).map_err(data)?;
    log::info!("{} MRR {:.4} MRank {:.2}", a.split, report.mrr, report.mrank);
    emit(g.out.as_deref(), &json(&report))
}

fn eval_cep(g: &Global, a: EvalCepArgs) -> Outcome {
    let kg = load_kg(&a.kg)?;
    let model = load_checked(&a.model, &kg)?;
    let rel = kg
        .dictionary()
        .relation_id(&a.relation)
        .ok_or_else(|| data(format!("unknown relation `{}`", a.relation)))?;
    let labels = derive_labels(&kg, rel).map_err(data)?;
    let config = ClusterConfig {
        multiplier: a.multiplier,
        max_iterations: a.max_iterations,
        seed: g.seed.unwrap_or(0),
        init: a.init,
    };
    config.validate().map_err(usage)?;
    let report = evaluate_cep(&model, &labels, &config).map_err(cep_failure)?;
    log::info!("K {} aMean {:.4} wMean {:.4}", report.k, report.a_mean, report.w_mean);
    if let Some(path) = &a.histogram {
        emit(Some(path), &report.histogram_csv())?;
    }
    emit(g.out.as_deref(), &json(&report))
}

fn correlate_cmd(g: &Global, a: CorrelateArgs) -> Outcome {
    let text = fs::read_to_string(&a.table).map_err(|e| data(format!("{}: {e}", a.table.display())))?;
    let table: SweepTable =
        serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", a.table.display())))?;
    let csv = correlation_csv(&table).map_err(data)?;
    emit(g.out.as_deref(), &csv)
}

fn sweep_cmd(g: &Global, a: SweepArgs) -> Outcome {
    let mut spec = SweepSpec::load(&a.spec).map_err(data)?;
    if let Some(out) = &g.out {
        spec.out = out.clone();
    }
    if g.seed.is_some() {
        log::warn!("--seed is ignored by sweep; seeds come from the spec grid");
    }
    let table = run_sweep(&spec).map_err(data)?;
    let failed = table.rows.iter().filter(|r| !r.is_ok()).count();
    log::info!(
        "{} rows ({failed} failed); reports under {}",
        table.rows.len(),
        spec.out.display()
    );
    let csv = fs::read_to_string(spec.out.join("correlations.csv"))
        .map_err(|e| data(format!("correlations.csv: {e}")))?;
    emit(None, &csv)
}

fn run(cli: Cli) -> Outcome {
    let g = cli.global;
    rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Gen(a) => gen(&g, a),
        Command::Split(a) => split(&g, a),
        Command::Train(a) => train_cmd(&g, a),
        Command::EvalLp(a) => eval_lp(&g, a),
        Command::EvalCep(a) => eval_cep(&g, a),
        Command::Correlate(a) => correlate_cmd(&g, a),
        Command::Sweep(a) => sweep_cmd(&g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
