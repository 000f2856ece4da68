use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tracing_subscriber::EnvFilter;

use scimind_core::agent::{build_provider, Backend, CompletionProvider, MockProvider};
use scimind_core::demo;
use scimind_core::knowledge::{
    self, augment_query, retrieve_top_k, EmbeddingVector, KnowledgeBase, KnowledgeEntry, Provenance,
    DEFAULT_TAU, MANIFEST_FILE,
};
use scimind_core::pipeline::{
    evaluate_batch, solve_problem, BatchMode, EngineConfig, ProblemBundle, Resources,
};
use scimind_core::{Error, Result};

const FIXTURES_IN_BUNDLE: &str = "fixtures.json";

#[derive(Parser)]
#[command(name = "scimind", version, about = "Retrieval-grounded debate and verified execution for modeling problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one problem end to end.
    Solve(SolveArgs),
    /// Run every problem under a directory and report code executability.
    Eval(EvalArgs),
    /// Inspect or edit a knowledge base directory.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Write a self-contained mock problem, fixtures and config.
    Demo {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_backend)]
    backend: Option<Backend>,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Do not distill or admit successful runs.
    #[arg(long)]
    no_evolve: bool,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    problems: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run problems concurrently and admit afterwards in input order.
    #[arg(long)]
    deferred: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum KbCommand {
    /// Create an empty knowledge base.
    Init {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value_t = knowledge::DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Add a curated entry, subject to the novelty gate.
    Add {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        paradigm: PathBuf,
        #[arg(long, default_value = knowledge::DEFAULT_DOMAIN)]
        domain: String,
        /// Comma-separated embedding values.
        #[arg(long, conflicts_with = "text")]
        embedding: Option<String>,
        /// Problem text to embed with the configured provider.
        #[arg(long)]
        text: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Top-k entries for a problem statement.
    Query {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value = knowledge::DEFAULT_DOMAIN)]
        domain: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    Stats {
        #[arg(long)]
        kb: PathBuf,
    },
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>, common: Option<&Common>) -> Result<EngineConfig> {
    let mut cfg = match path {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(c) = common {
        if let Some(b) = c.backend {
            cfg.provider.backend = b;
        }
        if let Some(f) = &c.fixtures {
            cfg.provider.fixture_path = Some(f.clone());
        }
        if c.no_evolve {
            cfg.knowledge.self_evolve = false;
        }
    }
    cfg.validate()?;
    cfg.provider.validate()?;
    Ok(cfg)
}

/// Loads the base at `dir`, or starts an empty one if it has no manifest yet.
fn open_kb(dir: &Path, cfg: &EngineConfig) -> Result<KnowledgeBase> {
    let mut kb = if dir.join(MANIFEST_FILE).is_file() {
        knowledge::load_dir(dir)?
    } else {
        KnowledgeBase::new(cfg.provider.dim, cfg.knowledge.tau.unwrap_or(DEFAULT_TAU))?
    };
    if kb.dim() != cfg.provider.dim {
        return Err(Error::InvalidConfig(format!(
            "knowledge base dimension {} differs from provider dimension {}",
            kb.dim(),
            cfg.provider.dim
        )));
    }
    if let Some(tau) = cfg.knowledge.tau {
        kb.set_tau(tau)?;
    }
    Ok(kb)
}

fn print(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
}

fn solve(args: SolveArgs) -> Result<bool> {
    let cfg = load_config(args.common.config.as_deref(), Some(&args.common))?;
    let bundle = ProblemBundle::load(&args.problem)?;
    let mut kb = open_kb(&args.common.kb, &cfg)?;
    let agents = build_provider(&cfg.provider)?;
    let sandbox = cfg.sandbox.build()?;
    let report = solve_problem(&bundle, &mut kb, &cfg, &*agents, &*sandbox, &args.out);
    knowledge::save_dir(&kb, &args.common.kb)?;
    print(json!({
        "problem_id": report.problem_id,
        "executed": report.executed,
        "admitted": report.admitted(),
        "rounds": report.transcript.as_ref().map(|t| t.rounds.len()),
        "attempts": report.execution.as_ref().map(|e| e.reports.len()),
        "error": report.error,
        "report": args.out.join(scimind_core::pipeline::REPORT_FILE),
    }));
    match &report.error {
        None => Ok(true),
        Some(e) if is_user_kind(&e.kind) => Err(Error::invalid(e.message.clone())),
        Some(_) => Ok(false),
    }
}

fn is_user_kind(kind: &str) -> bool {
    matches!(kind, "invalid-input" | "invalid-rubric" | "invalid-config" | "degenerate-vector")
}

fn eval(args: EvalArgs) -> Result<bool> {
    let cfg = load_config(args.common.config.as_deref(), Some(&args.common))?;
    let bundles = ProblemBundle::load_all(&args.problems)?;
    let mut kb = open_kb(&args.common.kb, &cfg)?;
    // Mock runs use a bundle's own fixtures when it has them.
    let resources = |b: &ProblemBundle| -> Result<Resources> {
        let own = b.root.join(FIXTURES_IN_BUNDLE);
        let agents: Box<dyn CompletionProvider> = if cfg.provider.backend == Backend::Mock && own.is_file() {
            Box::new(MockProvider::from_file(&own)?.with_dim(cfg.provider.dim))
        } else {
            build_provider(&cfg.provider)?
        };
        Ok((agents, cfg.sandbox.build()?))
    };
    let mode = if args.deferred { BatchMode::Deferred } else { BatchMode::Sequential };
    let report = evaluate_batch(&bundles, &mut kb, &cfg, &resources, &args.out, mode)?;
    knowledge::save_dir(&kb, &args.common.kb)?;
    let path = args.out.join("batch.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    print(serde_json::to_value(&report)?);
    Ok(true)
}

fn parse_embedding(s: &str) -> Result<EmbeddingVector> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::invalid(format!("embedding value {t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingVector::new(values)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn kb_command(cmd: KbCommand) -> Result<bool> {
    match cmd {
        KbCommand::Init { kb, dim, tau } => {
            if kb.join(MANIFEST_FILE).exists() {
                return Err(Error::invalid(format!("{} already holds a knowledge base", kb.display())));
            }
            knowledge::save_dir(&KnowledgeBase::new(dim, tau)?, &kb)?;
            print(json!({"kb": kb, "dim": dim, "tau": tau}));
        }
        KbCommand::Add { kb, id, code, paradigm, domain, embedding, text, config, force } => {
            let cfg = load_config(config.as_deref(), None)?;
            let mut base = open_kb(&kb, &cfg)?;
            let embedding = match (embedding, text) {
                (Some(e), _) => parse_embedding(&e)?,
                (None, Some(t)) => build_provider(&cfg.provider)?.embed(&augment_query(&t, &domain)?.rendered())?,
                (None, None) => return Err(Error::invalid("one of --embedding or --text is required")),
            };
            let entry = KnowledgeEntry::new(
                id,
                embedding,
                read(&code)?,
                read(&paradigm)?,
                domain,
                Provenance { source: "curated".into(), run_id: None, timestamp: None },
            )?;
            let (admitted, delta) = if force {
                let delta = knowledge::novelty_delta(&base, &entry.embedding)?;
                base.insert(entry)?;
                (true, delta)
            } else {
                let a = knowledge::admit_entry(&mut base, entry)?;
                (a.admitted, a.delta)
            };
            knowledge::save_dir(&base, &kb)?;
            print(json!({"admitted": admitted, "delta": delta, "size": base.len()}));
        }
        KbCommand::Query { kb, text, domain, k, config } => {
            let cfg = load_config(config.as_deref(), None)?;
            let base = open_kb(&kb, &cfg)?;
            let q = augment_query(&text, &domain)?;
            let vec = build_provider(&cfg.provider)?.embed(&q.rendered())?;
            let k = k.unwrap_or(cfg.retrieval.k);
            let hits = if base.is_empty() { Vec::new() } else { retrieve_top_k(&base, &vec, k)? };
            print(json!({
                "query": q.rendered(),
                "hits": hits.iter().map(|(e, s)| json!({"id": e.id, "score": s, "domain_tag": e.domain_tag})).collect::<Vec<_>>(),
            }));
        }
        KbCommand::Stats { kb } => {
            let base = knowledge::load_dir(&kb)?;
            let mut domains = std::collections::BTreeMap::<&str, usize>::new();
            for e in base.entries() {
                *domains.entry(e.domain_tag.as_str()).or_default() += 1;
            }
            print(json!({"size": base.len(), "dim": base.dim(), "tau": base.tau(), "domains": domains}));
        }
    }
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve(a) => solve(a),
        Command::Eval(a) => eval(a),
        Command::Kb { command } => kb_command(command),
        Command::Demo { dir } => {
            let cfg = demo::write_all(&dir)?;
            print(json!({"config": cfg, "problem": dir.join("problem"), "fixtures": dir.join(demo::FIXTURES_FILE)}));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("SCIMIND_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
