use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use quill::config::ServiceConfig;
use quill::engine::{self, Engine, LlmMode};
use quill::errors::{one_line, Classified};
use quill::service::{self, IntroRequest, SuggestRequest};
use quill_core::corpus::{
    filter_works, work_to_record_line, works_from_bibtex, Corpus, FilterPolicy, IngestReport,
    TrigramDetector,
};
use quill_core::evalharness::{
    build_cases, build_eval_set, parse_source_papers, run_intro_eval, run_retrieval_eval,
    DistractorSource, EvalRanker, EvalSetOptions, IntroEvalOptions, IntroPair, OracleRanker,
    PairwiseRanker, RandomRanker, RunOptions, ScoreRanker, SourcePaper, Strategy,
};
use quill_core::introgen::IntroEnv;
use quill_core::recommend::{Library, Ranker};
use quill_core::synthetic::{generate, SyntheticConfig};
use quill_core::vectorindex::{read_info, save_index, Backend, Metric};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "quill", version, about = "Citation suggestion and introduction drafting")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Language model backend.
    #[arg(long, global = true, value_enum, default_value_t = LlmArg::Http)]
    llm: LlmArg,
    /// Seed for every random choice; echoed in outputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmArg {
    /// The endpoint at PROVIDER_URL.
    Http,
    /// A deterministic word-overlap model, for trying things out.
    Offline,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and store work records.
    Ingest(IngestArgs),
    /// Embed a record store and write a vector index.
    Index(IndexArgs),
    /// Print an index file's header as JSON.
    IndexInfo { path: PathBuf },
    /// Suggest citations for the insertion point in a document.
    Suggest(SuggestArgs),
    /// Draft an introduction from a manuscript and its bibliography.
    Intro(IntroArgs),
    /// Citation retrieval against distractors.
    EvalRetrieval(EvalRetrievalArgs),
    /// ROUGE-1 and claim entailment of generated introductions.
    EvalIntro(EvalIntroArgs),
    /// Write a synthetic corpus and source papers.
    Synth(SynthArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Record files (JSON lines, optionally gzipped).
    #[arg(long = "input", required_unless_present = "bibtex")]
    inputs: Vec<PathBuf>,
    /// BibTeX files to add to the records.
    #[arg(long)]
    bibtex: Vec<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
    /// Date the recency rule is measured from; today when absent.
    #[arg(long)]
    as_of: Option<NaiveDate>,
    #[arg(long, default_value_t = 1)]
    min_citations: u64,
    /// Keep works below the citation floor when at most this many months old.
    #[arg(long, default_value_t = 18)]
    recent_months: u32,
    #[arg(long)]
    no_recent_rescue: bool,
    #[arg(long)]
    any_language: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Exact,
    Hnsw,
}

#[derive(Args)]
struct IndexArgs {
    /// Record stores; defaults to the configured corpus.
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// Index file; defaults to the configured index path.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "cosine")]
    metric: Metric,
    #[arg(long, value_enum, default_value_t = BackendArg::Exact)]
    backend: BackendArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuggestRanker {
    Score,
    Pairwise,
}

#[derive(Args)]
struct SuggestArgs {
    /// Document text file, or - for stdin.
    #[arg(long)]
    document: PathBuf,
    /// Char offset of the insertion point; end of document when absent.
    #[arg(long)]
    cursor: Option<usize>,
    #[arg(long)]
    bibtex: Option<PathBuf>,
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_suggestions: Option<usize>,
    #[arg(long, value_enum, default_value_t = SuggestRanker::Score)]
    ranker: SuggestRanker,
    /// Print the full response as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct IntroArgs {
    #[arg(long)]
    manuscript: PathBuf,
    #[arg(long)]
    bibtex: Option<PathBuf>,
    #[arg(long, conflicts_with = "abstract_file")]
    r#abstract: Option<String>,
    #[arg(long)]
    abstract_file: Option<PathBuf>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    as_of: Option<NaiveDate>,
    #[arg(long)]
    y_years: Option<u32>,
    #[arg(long)]
    keep_fraction: Option<f64>,
    #[arg(long)]
    instructions: Option<String>,
    /// Where the full chain trace is written as JSON.
    #[arg(long, default_value = "intro-trace.json")]
    trace: PathBuf,
    /// Complete bibliography entries from these record stores.
    #[arg(long)]
    corpus: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalRankerArg {
    Score,
    Pairwise,
    Oracle,
    Random,
}

#[derive(Args)]
struct EvalRetrievalArgs {
    /// Source papers as JSON lines. Without it a synthetic corpus is used.
    #[arg(long)]
    papers: Option<PathBuf>,
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Strategies to run; all when absent.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    /// Candidate counts (ground truth plus distractors).
    #[arg(long, value_delimiter = ',', default_values_t = [3, 5, 10])]
    n: Vec<usize>,
    #[arg(long, value_enum, default_value_t = EvalRankerArg::Score)]
    ranker: EvalRankerArg,
    /// Fill thin reference lists with nearest neighbours.
    #[arg(long)]
    backfill: bool,
    #[arg(long, default_value_t = 5)]
    per_paper: usize,
    #[arg(long, default_value_t = 10)]
    min_sentences: usize,
    #[arg(long, default_value_t = 1000)]
    synthetic_works: usize,
    #[arg(long, default_value_t = 40)]
    synthetic_papers: usize,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalIntroArgs {
    /// Pairs of generated and original introductions as JSON lines.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 5)]
    num_claims: usize,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    works: usize,
    #[arg(long, default_value_t = 40)]
    papers: usize,
    #[arg(long, short)]
    out: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        write!(std::io::stdout(), $($arg)*)?
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout(), $($arg)*)?
    }};
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    outln!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

struct Ctx {
    config: ServiceConfig,
    mode: LlmMode,
}

impl Ctx {
    fn corpus_paths(&self, flag: &[PathBuf]) -> Result<Vec<PathBuf>> {
        if flag.is_empty() {
            Ok(self.config.corpus_paths()?.to_vec())
        } else {
            Ok(flag.to_vec())
        }
    }

    fn index_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf> {
        match flag {
            Some(p) => Ok(p.clone()),
            None => Ok(self.config.index_path()?.to_path_buf()),
        }
    }
}

fn ingest(args: IngestArgs) -> Result<()> {
    let (mut works, mut skipped) = engine::read_works(&args.inputs)?;
    for p in &args.bibtex {
        let (bib, diags) = works_from_bibtex(&read_text(p)?);
        for d in &diags {
            tracing::warn!(path = %p.display(), line = d.line, "{}", d.message);
        }
        skipped += diags.len();
        works.extend(bib);
    }
    let policy = FilterPolicy {
        require_english: !args.any_language,
        min_citations: args.min_citations,
        recent_uncited_months: (!args.no_recent_rescue).then_some(args.recent_months),
    };
    let as_of = args.as_of.unwrap_or_else(|| chrono::Local::now().date_naive());
    let detector = TrigramDetector::default();
    let kept = filter_works(&works, &policy, as_of, Some(&detector));
    let mut out = BufWriter::new(
        File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?,
    );
    for w in &kept {
        writeln!(out, "{}", work_to_record_line(w))?;
    }
    out.flush()?;
    let report = IngestReport {
        parsed: works.len(),
        skipped,
        filtered: works.len() - kept.len(),
        retained: kept.len(),
    };
    print_json(&serde_json::json!({
        "report": report,
        "as_of": as_of,
        "policy": policy,
        "output": args.output,
    }))
}

fn index(ctx: &Ctx, args: IndexArgs) -> Result<()> {
    let paths = ctx.corpus_paths(&args.corpus)?;
    let output = match (&args.output, &ctx.config.index) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => anyhow::bail!(Classified::new("config_unset", "no --output and no index in the config")),
    };
    let embedder = engine::embedder(&ctx.config)?;
    let corpus = engine::load_corpus(&paths)?;
    let backend = match args.backend {
        BackendArg::Exact => Backend::Exact,
        BackendArg::Hnsw => Backend::approximate(),
    };
    let library = Library::build(corpus, &*embedder, args.metric, backend, ctx.config.parallelism)?;
    save_index(library.index(), &output).with_context(|| format!("writing {}", output.display()))?;
    print_json(&serde_json::json!({"output": output, "info": library.index().info()}))
}

fn index_info(path: &Path) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    print_json(&read_info(&bytes)?)
}

fn suggest(mut ctx: Ctx, seed: Option<u64>, args: SuggestArgs) -> Result<()> {
    let document = read_text(&args.document)?;
    let bibtex = match &args.bibtex {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    ctx.config.corpus = ctx.corpus_paths(&args.corpus)?;
    ctx.config.index = Some(ctx.index_path(&args.index)?);
    let engine = Engine::from_config(ctx.config, ctx.mode)?;
    let req = SuggestRequest {
        cursor: args.cursor.unwrap_or_else(|| document.chars().count()),
        document,
        bibtex,
        max_suggestions: args.max_suggestions,
        k: args.k,
        ranker: Some(match args.ranker {
            SuggestRanker::Score => Ranker::Score,
            SuggestRanker::Pairwise => Ranker::Pairwise,
        }),
        seed,
    };
    let resp = service::suggest(&engine, &req)?;
    if args.json {
        return print_json(&resp);
    }
    outln!("# seed: {}  ranker: {:?}", resp.seed, resp.ranker);
    for s in &resp.suggestions {
        outln!(
            "{:>2}. [{}] {:<8.3} {} ({}) {}",
            s.rank,
            s.key,
            s.score,
            s.title,
            s.year.map(|y| y.to_string()).unwrap_or_else(|| "n.d.".into()),
            s.work_id
        );
    }
    if resp.suggestions.is_empty() {
        outln!("no candidates");
    }
    Ok(())
}

fn intro(ctx: Ctx, args: IntroArgs) -> Result<()> {
    let llm = engine::language_model(&ctx.config, ctx.mode)?;
    let embedder = engine::embedder(&ctx.config)?;
    let templates = engine::templates(&ctx.config)?;
    let corpus_paths = if args.corpus.is_empty() { ctx.config.corpus.clone() } else { args.corpus.clone() };
    let corpus: Option<Corpus> = if corpus_paths.is_empty() {
        None
    } else {
        Some(engine::load_corpus(&corpus_paths)?)
    };
    let abstract_text = match (&args.r#abstract, &args.abstract_file) {
        (Some(a), _) => Some(a.clone()),
        (None, Some(p)) => Some(read_text(p)?),
        (None, None) => None,
    };
    let req = IntroRequest {
        manuscript: read_text(&args.manuscript)?,
        bibtex: match &args.bibtex {
            Some(p) => read_text(p)?,
            None => String::new(),
        },
        r#abstract: abstract_text,
        title: args.title,
        y_years: args.y_years,
        keep_fraction: args.keep_fraction,
        reference_date: args.as_of,
        instructions: args.instructions,
    };
    let env = IntroEnv { llm: &*llm, embedder: &*embedder, templates: &templates };
    match service::intro(corpus.as_ref(), &env, &ctx.config, &req) {
        Ok(resp) => {
            fs::write(&args.trace, serde_json::to_string_pretty(&resp.trace)?)
                .with_context(|| format!("writing {}", args.trace.display()))?;
            outln!("{}", resp.intro_text);
            Ok(())
        }
        Err(service::IntroFailure::Chain(e)) => {
            fs::write(&args.trace, serde_json::to_string_pretty(&*e.partial)?)
                .with_context(|| format!("writing {}", args.trace.display()))?;
            Err(e.into())
        }
        Err(e @ service::IntroFailure::Input(_)) => Err(Classified::new("invalid_input", e.to_string()).into()),
    }
}

fn read_papers(path: &Path) -> Result<Vec<SourcePaper>> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_source_papers(BufReader::new(f))?)
}

fn eval_retrieval(ctx: Ctx, seed: u64, args: EvalRetrievalArgs) -> Result<()> {
    let (library, papers, data) = match &args.papers {
        Some(p) => {
            let papers = read_papers(p)?;
            let embedder = engine::embedder(&ctx.config)?;
            let library = engine::load_library(&ctx.corpus_paths(&args.corpus)?, &ctx.index_path(&args.index)?, &*embedder)?;
            (library, papers, p.display().to_string())
        }
        None => {
            let world = generate(&SyntheticConfig {
                works: args.synthetic_works,
                papers: args.synthetic_papers,
                seed,
                ..SyntheticConfig::default()
            });
            let embedder = engine::embedder(&ServiceConfig { embed: None, ..ctx.config.clone() })?;
            let library = Library::build(Corpus::new(world.works)?, &*embedder, Metric::Cosine, Backend::Exact, args.parallelism)?;
            let data = format!("synthetic ({} works, {} papers)", args.synthetic_works, args.synthetic_papers);
            (library, world.papers, data)
        }
    };
    let needs_llm = matches!(args.ranker, EvalRankerArg::Score | EvalRankerArg::Pairwise);
    let llm = if needs_llm { Some(engine::language_model(&ctx.config, ctx.mode)?) } else { None };
    let templates = engine::templates(&ctx.config)?;
    let ranker: Box<dyn EvalRanker + '_> = match (args.ranker, &llm) {
        (EvalRankerArg::Oracle, _) => Box::new(OracleRanker),
        (EvalRankerArg::Random, _) => Box::new(RandomRanker),
        (EvalRankerArg::Score, Some(l)) => Box::new(ScoreRanker { llm: &**l, templates: &templates }),
        (EvalRankerArg::Pairwise, Some(l)) => Box::new(PairwiseRanker { llm: &**l, templates: &templates, parallelism: args.parallelism }),
        _ => unreachable!("model checked above"),
    };
    let strategies = if args.strategy.is_empty() { Strategy::ALL.to_vec() } else { args.strategy.clone() };
    let corpus = library.corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let set = build_eval_set(
        corpus,
        &papers,
        &EvalSetOptions { per_paper: args.per_paper, min_sentences: args.min_sentences },
        &mut rng,
    );
    let pool: Vec<String> = corpus.works().iter().map(|w| w.id.clone()).collect();
    let source = DistractorSource { corpus, index: library.index(), pool: &pool };
    let plan = build_cases(&set.items, &papers, &strategies, &args.n, &source, args.backfill, seed);
    let report = run_retrieval_eval(
        &plan.cases,
        &plan.skipped,
        corpus,
        &*ranker,
        &RunOptions { seed, parallelism: args.parallelism },
    )?;
    if args.json {
        return print_json(&serde_json::json!({
            "data": data,
            "papers_included": set.papers_included,
            "papers_excluded": set.papers_excluded,
            "report": report,
        }));
    }
    outln!("# data: {data}; {} eval sentences from {} papers", set.items.len(), set.papers_included);
    out!("{}", report.to_table());
    Ok(())
}

fn eval_intro(ctx: Ctx, args: EvalIntroArgs) -> Result<()> {
    let f = File::open(&args.pairs).with_context(|| format!("reading {}", args.pairs.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: IntroPair = serde_json::from_str(&line)
            .map_err(|e| Classified::new("invalid_input", format!("{} line {}: {e}", args.pairs.display(), i + 1)))?;
        pairs.push(pair);
    }
    let llm = engine::language_model(&ctx.config, ctx.mode)?;
    let templates = engine::templates(&ctx.config)?;
    let report = run_intro_eval(
        &pairs,
        &*llm,
        &templates,
        &IntroEvalOptions { num_claims: args.num_claims, parallelism: args.parallelism },
    )?;
    if args.json {
        return print_json(&report);
    }
    out!("{}", report.to_table());
    Ok(())
}

fn synth(seed: u64, args: SynthArgs) -> Result<()> {
    let world = generate(&SyntheticConfig { works: args.works, papers: args.papers, seed, ..SyntheticConfig::default() });
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut works = BufWriter::new(File::create(args.out.join("works.jsonl"))?);
    for w in &world.works {
        writeln!(works, "{}", work_to_record_line(w))?;
    }
    works.flush()?;
    let mut papers = BufWriter::new(File::create(args.out.join("papers.jsonl"))?);
    for p in &world.papers {
        writeln!(papers, "{}", serde_json::to_string(p)?)?;
    }
    papers.flush()?;
    print_json(&serde_json::json!({"works": world.works.len(), "papers": world.papers.len(), "seed": seed, "out": args.out}))
}

fn serve(ctx: Ctx, listen: Option<std::net::SocketAddr>) -> Result<()> {
    let addr = listen.unwrap_or(ctx.config.listen);
    let engine = Arc::new(Engine::from_config(ctx.config, ctx.mode)?);
    tracing::info!(
        works = engine.library.corpus().len(),
        indexed = engine.library.index().len(),
        %addr,
        "serving"
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        quill::server::serve(engine, listener).await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = ServiceConfig::load(cli.config.as_deref(), |k| std::env::var(k).ok())?;
    let seed = cli.seed.unwrap_or(config.seed);
    let ctx = Ctx {
        config,
        mode: match cli.llm {
            LlmArg::Http => LlmMode::Http,
            LlmArg::Offline => LlmMode::Offline,
        },
    };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Index(a) => index(&ctx, a),
        Command::IndexInfo { path } => index_info(&path),
        Command::Suggest(a) => suggest(ctx, Some(seed), a),
        Command::Intro(a) => intro(ctx, a),
        Command::EvalRetrieval(a) => eval_retrieval(ctx, seed, a),
        Command::EvalIntro(a) => eval_intro(ctx, a),
        Command::Synth(a) => synth(seed, a),
        Command::Serve { listen } => serve(ctx, listen),
    }
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,quill=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("{}", one_line(&e));
        std::process::exit(1);
    }
}
