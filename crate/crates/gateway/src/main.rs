use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use retta_core::classify::{
    classify_candidates, compile_rules, load_labeled, load_rules, Candidate, TwoStageModel,
    DEFAULT_GAMMA,
};
use retta_core::corpus::{corpus_stats, load_jsonl};
use retta_core::pipeline::{
    DataConfig, FileStore, MemoryStore, ProjectConfig, ProjectState, ProjectStore, STORE_ENV,
};
use retta_core::preprocess::{build_vocabulary, stem, Preprocessor, StopWords};
use retta_core::registry::ServiceId;
use retta_core::rules::{mine_rules, MiningParams, Transaction};
use retta_core::topics::{fit_lda, pool, LdaParams, PoolingStrategy};
use retta_gateway::{router, AppState, TOKEN_ENV};

#[derive(Parser)]
#[command(
    name = "retta",
    version,
    about = "Requirements elicitation from crowd text"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and print its statistics.
    Ingest { corpus: PathBuf },
    /// Print the tokens of every document.
    Preprocess {
        corpus: PathBuf,
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Fit a topic model and print each topic's top terms.
    Topics {
        corpus: PathBuf,
        #[arg(long, default_value_t = 5)]
        topics: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        top_terms: usize,
        /// by_hashtag, by_query_term, single_pool, auto, or a window width in minutes.
        #[arg(long, default_value = "auto")]
        pooling: String,
    },
    /// Train on a labeled file and classify every document of a corpus.
    Classify {
        corpus: PathBuf,
        #[arg(long)]
        training: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value = "TST")]
        service: String,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
    },
    /// Mine association rules over the documents' term sets.
    Rules {
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        min_support: f64,
        #[arg(long, default_value_t = 0.6)]
        min_confidence: f64,
        #[arg(long, default_value_t = 4)]
        max_itemset_size: usize,
    },
    /// Run a whole project from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving result.json and model.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep the project in this store instead of in memory.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Start the HTTP API.
    Serve {
        /// Data config: connectors, training file, boost rules, run settings.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Project store root; defaults to $RETTA_STORE, then ./retta-store.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Catalog file; overrides the data config and $RETTA_CATALOG.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        cors_origin: Option<String>,
    },
    /// Show the stems of words, and which boost rules match them.
    StemPreview {
        /// Words to stem; read from standard input when none are given.
        words: Vec<String>,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
}

/// A failure to report on standard error; exits with status 1.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn emit(out: &mut impl Write, value: serde_json::Value) -> io::Result<()> {
    writeln!(out, "{value}")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let outcome = match cli.command {
        Command::Ingest { corpus } => ingest(&mut out, &corpus),
        Command::Preprocess { corpus, stopwords } => {
            preprocess(&mut out, &corpus, stopwords.as_deref())
        }
        Command::Topics {
            corpus,
            topics,
            iterations,
            seed,
            top_terms,
            pooling,
        } => {
            let params = LdaParams {
                topics,
                alpha: 50.0 / topics.max(1) as f64,
                beta: 0.01,
                iterations,
                seed,
            };
            parse_pooling(&pooling)
                .and_then(|p| fit_topics(&mut out, &corpus, params, p, top_terms))
        }
        Command::Classify {
            corpus,
            training,
            rules,
            service,
            smoothing,
        } => classify(
            &mut out,
            &corpus,
            &training,
            rules.as_deref(),
            &service,
            smoothing,
        ),
        Command::Rules {
            corpus,
            min_support,
            min_confidence,
            max_itemset_size,
        } => mine(
            &mut out,
            &corpus,
            MiningParams {
                min_support,
                min_confidence,
                max_itemset_size,
            },
        ),
        Command::Run {
            config,
            seed,
            out: dir,
            store,
        } => run(&mut out, &config, seed, dir.as_deref(), store.as_deref()),
        Command::Serve {
            config,
            port,
            store,
            catalog,
            cors_origin,
        } => serve(&config, port, store, catalog, cors_origin),
        Command::StemPreview { words, rules } => stem_preview(&mut out, words, rules.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn ingest(out: &mut impl Write, path: &Path) -> Outcome {
    let corpus = load_jsonl(path)?;
    let stats = corpus_stats(&corpus);
    emit(out, json!({ "documents": corpus.len(), "stats": stats }))?;
    Ok(())
}

fn preprocessor(stopwords: Option<&Path>) -> Result<Preprocessor, Failure> {
    let words = match stopwords {
        Some(path) => {
            StopWords::load(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?
        }
        None => StopWords::default(),
    };
    Ok(Preprocessor::new(words))
}

fn preprocess(out: &mut impl Write, path: &Path, stopwords: Option<&Path>) -> Outcome {
    let corpus = load_jsonl(path)?;
    for doc in preprocessor(stopwords)?.documents(corpus.documents()) {
        emit(out, serde_json::to_value(&doc)?)?;
    }
    Ok(())
}

fn parse_pooling(text: &str) -> Result<PoolingStrategy, Failure> {
    if let Ok(width_minutes) = text.parse::<u32>() {
        return Ok(PoolingStrategy::ByTimeWindow { width_minutes });
    }
    serde_json::from_value(json!(text))
        .map_err(|_| Failure(format!("unknown pooling strategy `{text}`")))
}

fn fit_topics(
    out: &mut impl Write,
    path: &Path,
    params: LdaParams,
    strategy: PoolingStrategy,
    top_terms: usize,
) -> Outcome {
    let corpus = load_jsonl(path)?;
    let docs = Preprocessor::default().documents(corpus.documents());
    let vocabulary = build_vocabulary(&docs, 1);
    let pools = pool(&docs, &corpus, &vocabulary, strategy)?;
    let model = fit_lda(&pools, &vocabulary, params)?;
    for k in 0..model.topics() {
        let terms: Vec<_> = model
            .top_terms(k, top_terms)?
            .into_iter()
            .map(|(term, p)| json!({ "term": term, "probability": p }))
            .collect();
        emit(out, json!({ "topic": k, "top_terms": terms }))?;
    }
    Ok(())
}

fn classify(
    out: &mut impl Write,
    path: &Path,
    training: &Path,
    rules: Option<&Path>,
    service: &str,
    smoothing: f64,
) -> Outcome {
    let service: ServiceId = service.parse()?;
    let corpus = load_jsonl(path)?;
    let labeled = load_labeled(training)?;
    let pre = Preprocessor::default();
    let labeled_tokens = pre.documents(labeled.iter().map(|l| &l.document));
    let model = TwoStageModel::train(&labeled, &labeled_tokens, smoothing)?;
    let rules = match rules {
        Some(path) => compile_rules(&load_rules(path)?, DEFAULT_GAMMA)?,
        None => Vec::new(),
    };
    let tokens = pre.documents(corpus.documents());
    let candidates: Vec<Candidate<'_>> = corpus
        .documents()
        .iter()
        .zip(&tokens)
        .map(|(raw, tokens)| Candidate {
            raw,
            tokens,
            topic: None,
        })
        .collect();
    let result = classify_candidates(
        &candidates,
        &model.fr_nfr,
        &model.categories,
        &rules,
        service,
    )?;
    for requirement in &result.requirements {
        emit(out, serde_json::to_value(requirement)?)?;
    }
    for rejected in &result.rejected {
        eprintln!("rejected {}: {}", rejected.doc_id, rejected.reason);
    }
    Ok(())
}

fn mine(out: &mut impl Write, path: &Path, params: MiningParams) -> Outcome {
    let corpus = load_jsonl(path)?;
    let transactions: Vec<Transaction> = Preprocessor::default()
        .documents(corpus.documents())
        .iter()
        .map(Transaction::from_document)
        .collect();
    for rule in mine_rules(&transactions, &params)? {
        writeln!(out, "{}", rule.export_line())?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    std::fs::write(path, contents).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn run(
    out: &mut impl Write,
    config: &Path,
    seed: Option<u64>,
    dir: Option<&Path>,
    store: Option<&Path>,
) -> Outcome {
    let config = ProjectConfig::load(config)?;
    let store: Arc<dyn ProjectStore> = match store {
        Some(root) => Arc::new(FileStore::open(root)?),
        None => Arc::new(MemoryStore::new()),
    };
    let project = config.run(store.clone(), seed)?;
    if project.state != ProjectState::Complete {
        let reason = project.failure_reason.unwrap_or_default();
        return Err(Failure(format!("run failed: {reason}")));
    }
    let result = project
        .result
        .as_ref()
        .expect("complete projects carry a result");
    for timing in &result.timings {
        eprintln!("{:>10} {:>10.1} ms", timing.stage, timing.millis);
    }
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
        let mut text = serde_json::to_string_pretty(result)?;
        text.push('\n');
        write_file(&dir.join("result.json"), &text)?;
        write_file(
            &dir.join("model.json"),
            &store.load_model(&project.id)?.to_json(),
        )?;
    }
    let nfr = result.non_functional().count();
    emit(
        out,
        json!({
            "project_id": project.id,
            "state": project.state,
            "documents": result.corpus_doc_ids.len(),
            "requirements": result.requirements.len(),
            "functional": result.requirements.len() - nfr,
            "non_functional": nfr,
            "rejected": result.rejected.len(),
            "rules": result.rules.len(),
        }),
    )?;
    Ok(())
}

fn serve(
    config: &Path,
    port: u16,
    store: Option<PathBuf>,
    catalog: Option<PathBuf>,
    cors_origin: Option<String>,
) -> Outcome {
    let mut data = DataConfig::load(config)?;
    if catalog.is_some() {
        data.catalog = catalog;
    }
    let root = store
        .or_else(|| std::env::var_os(STORE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("retta-store"));
    let store = Arc::new(FileStore::open(&root)?);
    let engine = Arc::new(data.engine(store)?);
    let state =
        AppState::new(engine, data.run_config.clone()).with_token(std::env::var(TOKEN_ENV).ok());
    let app = router(state, cors_origin.as_deref()).map_err(Failure)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        eprintln!(
            "listening on {} (store {})",
            listener.local_addr()?,
            root.display()
        );
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

fn stem_preview(out: &mut impl Write, words: Vec<String>, rules: Option<&Path>) -> Outcome {
    let rules = match rules {
        Some(path) => compile_rules(&load_rules(path)?, DEFAULT_GAMMA)?,
        None => Vec::new(),
    };
    let words = if words.is_empty() {
        let mut read = Vec::new();
        for line in io::stdin().lock().lines() {
            read.extend(line?.split_whitespace().map(str::to_lowercase));
        }
        read
    } else {
        words.iter().map(|w| w.to_lowercase()).collect()
    };
    for word in words {
        let stemmed = stem(&word);
        let matching: Vec<&str> = rules
            .iter()
            .filter(|r| r.matches(&stemmed))
            .map(|r| r.rule.id.as_str())
            .collect();
        emit(
            out,
            json!({ "word": word, "stem": stemmed, "rules": matching }),
        )?;
    }
    Ok(())
}
