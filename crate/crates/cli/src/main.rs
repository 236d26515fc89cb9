//! `clay`: file-based front end for clay-core.
//!
//! A data directory holds `images.emb`, `manifest.json` and one
//! `prompts/<condition>.emb` per condition. Results go to stdout as JSON (or
//! to `--output`); progress and warnings go to stderr. Usage errors exit
//! with 2, runtime errors with 1.

mod data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use clay_core::evaluation::{grouped_map, mean_ap, split_query_database, MetricsReport};
use clay_core::index::{bench_condition_switch, prepare_condition, query_topk};
use clay_core::storage::{read_subspace, write_embeddings, write_subspace};
use clay_core::subspace::{explained_energy, ConditionSubspace, SubspaceKind};
use clay_core::synthbench::{generate_world, AttributeConfig, WorldConfig};
use clay_core::{EmbeddingMatrix, ModulatorConfig, RawView, DEFAULT_K};
use serde::Serialize;
use serde_json::json;

use data::Dataset;

#[derive(Parser)]
#[command(name = "clay", version, about = "Text-conditioned image retrieval over fixed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and write it as a data directory.
    GenWorld(GenWorldArgs),
    /// Build a condition subspace from prompt embeddings.
    BuildSubspace(BuildArgs),
    /// Modulate the whole database under one condition and report the cost.
    Prepare(ConditionArgs),
    /// Top-k retrieval for one database item under a condition.
    Retrieve(RetrieveArgs),
    /// mAP and Recall@k on a seeded query/database split.
    Evaluate(EvaluateArgs),
    /// mAP for the three rotation/manifold configurations.
    Ablate(AblateArgs),
    /// Condition-switch timing.
    Bench(BenchArgs),
    /// Write modulated database features as an embedding file.
    ExportProjected(ExportArgs),
}

#[derive(Args)]
struct Output {
    /// Write JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GenWorldArgs {
    /// Directory to create.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full world configuration as JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n_items: Option<usize>,
    /// Angle between image and text means, radians.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    prompts_per_value: Option<usize>,
    /// Comma list of attributes as name or name:values.
    #[arg(long)]
    attributes: Option<String>,
}

#[derive(Args)]
struct Modulator {
    /// Skip the mean-alignment rotation.
    #[arg(long)]
    no_rotation: bool,
    /// Project raw features onto a subspace of raw prompt rows (requires --no-rotation).
    #[arg(long)]
    euclidean: bool,
}

impl Modulator {
    fn config(&self) -> ModulatorConfig {
        ModulatorConfig {
            use_rotation: !self.no_rotation,
            use_manifold: !self.euclidean,
            ..ModulatorConfig::default()
        }
    }
}

#[derive(Args)]
struct Conditions {
    /// A single condition.
    #[arg(long, conflicts_with = "conditions")]
    condition: Option<String>,
    /// Comma list of conditions merged into one subspace.
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
}

impl Conditions {
    fn list(&self) -> Vec<String> {
        match &self.condition {
            Some(c) => vec![c.clone()],
            None => self.conditions.clone(),
        }
    }
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    conditions: Conditions,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Decompose raw prompt rows instead of log-mapped ones.
    #[arg(long)]
    euclidean: bool,
    /// Subspace file to write.
    #[arg(long)]
    subspace: PathBuf,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ConditionArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    conditions: Conditions,
    /// Load this subspace file instead of building from prompts.
    #[arg(long, conflicts_with_all = ["condition", "conditions"])]
    subspace: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[command(flatten)]
    modulator: Modulator,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    target: ConditionArgs,
    /// Id of the query item.
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 10)]
    topk: usize,
}

#[derive(Args)]
struct Split {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = clay_core::evaluation::DEFAULT_QUERY_FRACTION)]
    split_fraction: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    target: ConditionArgs,
    #[command(flatten)]
    split: Split,
    /// Rank with plain cosine instead of a conditioned view.
    #[arg(long, conflicts_with_all = ["subspace", "no_rotation", "euclidean"])]
    raw: bool,
    /// Relevance attribute(s), `a+b` for joint labels. Defaults to the conditions.
    #[arg(long)]
    relevance: Option<String>,
    /// Evaluate within each group of this attribute and average the groups.
    #[arg(long)]
    group_by: Option<String>,
    /// Also write per-query AP as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    conditions: Conditions,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[command(flatten)]
    split: Split,
    #[arg(long)]
    relevance: Option<String>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// At least two conditions, prepared in this order.
    #[arg(long, value_delimiter = ',', required = true)]
    conditions: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Number of database items used as queries.
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[command(flatten)]
    modulator: Modulator,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    target: ConditionArgs,
    /// Embedding file to write.
    #[arg(long)]
    features: PathBuf,
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

/// Checks flag combinations; runs before any file is touched.
fn validate(cli: &Cli) -> std::result::Result<(), String> {
    let check_modulator = |m: &Modulator| {
        if m.euclidean && !m.no_rotation {
            return Err("--euclidean requires --no-rotation".to_string());
        }
        Ok(())
    };
    let check_k = |k: usize| if k == 0 { Err("--k must be at least 1".to_string()) } else { Ok(()) };
    let check_target = |t: &ConditionArgs| {
        check_modulator(&t.modulator)?;
        check_k(t.k)?;
        if t.subspace.is_none() && t.conditions.list().is_empty() {
            return Err("give --condition, --conditions or --subspace".into());
        }
        Ok(())
    };
    let check_split = |s: &Split| {
        if !(s.split_fraction > 0.0 && s.split_fraction < 1.0) {
            return Err("--split-fraction must be in (0, 1)".to_string());
        }
        Ok(())
    };
    match &cli.command {
        Command::GenWorld(_) => Ok(()),
        Command::BuildSubspace(a) => {
            check_k(a.k)?;
            if a.conditions.list().is_empty() {
                return Err("give --condition or --conditions".into());
            }
            Ok(())
        }
        Command::Prepare(t) => check_target(t),
        Command::Retrieve(a) => {
            check_target(&a.target)?;
            if a.topk == 0 {
                return Err("--topk must be at least 1".into());
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            check_split(&a.split)?;
            if a.raw {
                if a.relevance.is_none() && a.target.conditions.list().is_empty() {
                    return Err("--raw needs --relevance or a condition".into());
                }
                check_k(a.target.k)
            } else {
                check_target(&a.target)
            }
        }
        Command::Ablate(a) => {
            check_k(a.k)?;
            check_split(&a.split)?;
            if a.conditions.list().is_empty() {
                return Err("give --condition or --conditions".into());
            }
            Ok(())
        }
        Command::Bench(a) => {
            check_modulator(&a.modulator)?;
            check_k(a.k)?;
            if a.conditions.len() < 2 {
                return Err("--conditions needs at least two entries".into());
            }
            if a.topk == 0 || a.queries == 0 {
                return Err("--topk and --queries must be at least 1".into());
            }
            Ok(())
        }
        Command::ExportProjected(a) => check_target(&a.target),
    }
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("CLAY_THREADS") {
        let n: usize = value.parse().with_context(|| format!("CLAY_THREADS={value} is not a count"))?;
        if n == 0 {
            bail!("CLAY_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = validate(&cli) {
        return usage(&msg);
    }
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
            eprintln!("{}", json!({ "error": chain[0], "causes": &chain[1..] }));
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld(a) => gen_world(a),
        Command::BuildSubspace(a) => build(a),
        Command::Prepare(a) => prepare(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Bench(a) => bench(a),
        Command::ExportProjected(a) => export(a),
    }
}

fn gen_world(a: GenWorldArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => WorldConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(d) = a.d {
        cfg.d = d;
    }
    if let Some(n) = a.n_items {
        cfg.n_items = n;
    }
    if let Some(g) = a.gap {
        cfg.modality_gap_angle = g;
    }
    if let Some(s) = a.noise_scale {
        cfg.noise_scale = s;
    }
    if let Some(p) = a.prompts_per_value {
        cfg.prompts_per_value = p;
    }
    if let Some(spec) = &a.attributes {
        cfg.attributes = spec
            .split(',')
            .map(|item| match item.split_once(':') {
                Some((name, n)) => Ok(AttributeConfig::new(name, n.parse().context("attribute value count")?, 1.0)),
                None => Ok(AttributeConfig::new(item, 5, 1.0)),
            })
            .collect::<Result<_>>()?;
    }
    let world = generate_world(&cfg)?;
    world.write_to(&a.output)?;
    eprintln!(
        "wrote {} items (d = {}) and {} prompt files to {}",
        world.ids.len(),
        cfg.d,
        world.prompts.len(),
        a.output.display()
    );
    emit(&json!({ "output": a.output, "config": cfg }), None)
}

#[derive(Serialize)]
struct SubspaceMeta {
    condition_names: Vec<String>,
    kind: &'static str,
    dim: usize,
    prompts: usize,
    requested_k: usize,
    k: usize,
    clamped: bool,
    explained_energy: f64,
    singular_values: Vec<f64>,
}

fn subspace_meta(s: &ConditionSubspace, prompts: usize, requested_k: usize) -> SubspaceMeta {
    SubspaceMeta {
        condition_names: s.condition_names().to_vec(),
        kind: s.kind().as_str(),
        dim: s.dim(),
        prompts,
        requested_k,
        k: s.k(),
        clamped: s.k() < requested_k,
        explained_energy: explained_energy(s, s.k()).unwrap_or(1.0),
        singular_values: s.singular_values().to_vec(),
    }
}

fn warn_if_clamped(meta: &SubspaceMeta) {
    if meta.clamped {
        eprintln!(
            "warning: k = {} exceeds the rank of the prompt matrix; using k = {}",
            meta.requested_k, meta.k
        );
    }
}

fn build(a: BuildArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let names = a.conditions.list();
    let (s, prompts) = ds.subspace(&names, a.k, a.euclidean)?;
    let meta = subspace_meta(&s, prompts, a.k);
    warn_if_clamped(&meta);
    write_subspace(&a.subspace, &s)?;
    eprintln!("wrote {} ({} x {})", a.subspace.display(), s.dim(), s.k());
    emit(&meta, a.out.output.as_deref())
}

/// Loads or builds the subspace a command targets.
fn target_subspace(ds: &Dataset, t: &ConditionArgs, cfg: &ModulatorConfig) -> Result<Arc<ConditionSubspace>> {
    let s = match &t.subspace {
        Some(path) => read_subspace(path)?,
        None => {
            let (s, prompts) = ds.subspace(&t.conditions.list(), t.k, !cfg.use_manifold)?;
            warn_if_clamped(&subspace_meta(&s, prompts, t.k));
            s
        }
    };
    let wanted = if cfg.use_manifold { SubspaceKind::Tangent } else { SubspaceKind::Euclidean };
    if s.kind() != wanted {
        bail!("subspace is {} but the flags ask for {}", s.kind().as_str(), wanted.as_str());
    }
    Ok(Arc::new(s))
}

fn prepare(a: ConditionArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let cfg = a.modulator.config();
    let db = Arc::new(ds.database()?);
    let s = target_subspace(&ds, &a, &cfg)?;
    let started = Instant::now();
    let view = prepare_condition(&db, &s, cfg)?;
    let prepare_ms = started.elapsed().as_secs_f64() * 1e3;
    eprintln!("prepared {} rows under {} in {prepare_ms:.1} ms", db.len(), s.name());
    emit(
        &json!({
            "condition": s.name(),
            "config": cfg,
            "k": s.k(),
            "prepare_ms": prepare_ms,
            "stats": view.stats(),
            "encoder_calls": db.encoder_calls(),
        }),
        a.out.output.as_deref(),
    )
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let t = &a.target;
    let ds = Dataset::open(&t.data)?;
    let cfg = t.modulator.config();
    let db = Arc::new(ds.database()?);
    let qi = db.index_of(&a.query).with_context(|| format!("unknown query id `{}`", a.query))?;
    let s = target_subspace(&ds, t, &cfg)?;
    let view = prepare_condition(&db, &s, cfg)?;
    let hits = query_topk(&view, &db.vector(qi), a.topk.min(db.len()))?;
    emit(
        &json!({ "query": a.query, "condition": s.name(), "hits": hits }),
        t.out.output.as_deref(),
    )
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let t = &a.target;
    let ds = Dataset::open(&t.data)?;
    let cfg = t.modulator.config();
    let all = ds.database()?;
    let split = split_query_database(all.ids(), a.split.seed, a.split.split_fraction)?;
    let (queries, db) = split.apply(&all)?;
    let relevance = match &a.relevance {
        Some(r) => r.clone(),
        None if t.subspace.is_some() => bail!("--relevance is required with --subspace"),
        None => t.conditions.list().join("+"),
    };

    let report: MetricsReport = if a.raw {
        match &a.group_by {
            Some(g) => grouped_map(&queries, &db, g, &relevance, |d| Ok(RawView::new(d)))?,
            None => mean_ap(&queries, &RawView::new(Arc::new(db)), &relevance)?,
        }
    } else {
        let s = target_subspace(&ds, t, &cfg)?;
        match &a.group_by {
            Some(g) => grouped_map(&queries, &db, g, &relevance, |d| prepare_condition(&d, &s, cfg))?,
            None => mean_ap(&queries, &prepare_condition(&Arc::new(db), &s, cfg)?, &relevance)?,
        }
    };
    if report.no_relevant_queries > 0 {
        eprintln!("warning: {} queries had no relevant database item (scored 0)", report.no_relevant_queries);
    }
    eprintln!(
        "{} [{}] relevance {}: mAP {:.4} over {} queries",
        report.method, report.condition, report.relevance, report.map, report.n_queries
    );
    if let Some(path) = &a.csv {
        report.write_csv(path)?;
    }
    emit(&report, t.out.output.as_deref())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let names = a.conditions.list();
    let relevance = a.relevance.clone().unwrap_or_else(|| names.join("+"));
    let all = ds.database()?;
    let split = split_query_database(all.ids(), a.split.seed, a.split.split_fraction)?;
    let (queries, db) = split.apply(&all)?;
    let db = Arc::new(db);
    let mut rows = Vec::new();
    for (use_rotation, use_manifold) in clay_core::synthbench::ABLATION_CONFIGS {
        let cfg = ModulatorConfig {
            use_rotation,
            use_manifold,
            ..ModulatorConfig::default()
        };
        let (s, _) = ds.subspace(&names, a.k, !use_manifold)?;
        let view = prepare_condition(&db, &Arc::new(s), cfg)?;
        let map = mean_ap(&queries, &view, &relevance)?.map;
        eprintln!("rotation {use_rotation:<5} manifold {use_manifold:<5} mAP {map:.4}");
        rows.push(json!({ "use_rotation": use_rotation, "use_manifold": use_manifold, "map": map }));
    }
    emit(
        &json!({ "conditions": names, "relevance": relevance, "seed": a.split.seed, "rows": rows }),
        a.out.output.as_deref(),
    )
}

fn bench(a: BenchArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let cfg = a.modulator.config();
    let db = Arc::new(ds.database()?);
    let subspaces = a
        .conditions
        .iter()
        .map(|c| ds.subspace(std::slice::from_ref(c), a.k, !cfg.use_manifold).map(|(s, _)| Arc::new(s)))
        .collect::<Result<Vec<_>>>()?;
    let n = a.queries.min(db.len());
    let step = db.len() / n;
    let queries: Vec<_> = (0..n).map(|i| db.vector(i * step)).collect();
    let report = bench_condition_switch(&db, &subspaces, &queries, a.topk.min(db.len()), cfg)?;
    for c in &report.conditions {
        eprintln!(
            "{:<12} prepare {:8.2} ms  query mean {:7.3} ms  p95 {:7.3} ms  encoder calls {}",
            c.condition_name, c.prepare_ms, c.query_ms_mean, c.query_ms_p95, c.encoder_calls
        );
    }
    emit(&report, a.out.output.as_deref())
}

fn export(a: ExportArgs) -> Result<()> {
    let t = &a.target;
    let ds = Dataset::open(&t.data)?;
    let cfg = t.modulator.config();
    let db = Arc::new(ds.database()?);
    let s = target_subspace(&ds, t, &cfg)?;
    let view = prepare_condition(&db, &s, cfg)?;
    if view.stats().zero_rows > 0 {
        bail!("{} rows project to zero and cannot be written as unit rows", view.stats().zero_rows);
    }
    let rows: Vec<Vec<f64>> = (0..db.len())
        .map(|i| view.cached_row(i).iter().map(|&x| f64::from(x)).collect())
        .collect();
    write_embeddings(&a.features, &EmbeddingMatrix::from_rows(db.dim(), &rows)?)?;
    eprintln!("wrote {} normalized modulated rows to {}", rows.len(), a.features.display());
    emit(
        &json!({ "condition": s.name(), "rows": rows.len(), "dim": db.dim(), "features": a.features }),
        t.out.output.as_deref(),
    )
}
