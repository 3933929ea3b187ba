use std::collections::HashMap;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use abintent_core::abuse::SourceSpec;
use abintent_core::annotation::{self, build_pool, default_qualifiers, AnnotationService, PoolItem};
use abintent_core::config::{load_config, RunConfig};
use abintent_core::corpus::Segment;
use abintent_core::io::read_jsonl;
use abintent_core::pipeline::{self, files, AbuseScore, BootstrapPaths, StageStatus};
use abintent_core::seed::DesireVerbs;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "abintent", version, about = "Bootstrapped abusive-intent detection")]
struct Cli {
    /// Run configuration (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true, env = "ABINTENT_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean and segment a corpus.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Grow the desire-verb set with the embedding cone around the seeds.
    ExpandVerbs {
        #[arg(long)]
        embeddings: PathBuf,
        /// Seed verbs, one per line; defaults to the configured seeds.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        multiplier: Option<f64>,
        /// Restrict candidates to verbs attested in these parses.
        #[arg(long)]
        parses: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label segments with the intent templates.
    SeedLabel {
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        parses: PathBuf,
        /// Desire verbs, one per line; defaults to the configured seeds.
        #[arg(long)]
        verbs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score n-grams in an index against labels and write label proposals.
    NgramScore {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Highest-rate grams to print.
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Template-label the segments and co-train both learners.
    Bootstrap {
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        parses: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        /// Desire verbs, one per line; defaults to the configured seeds.
        #[arg(long)]
        verbs: Option<PathBuf>,
        /// Label store; the index, round reports and model go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the abuse model on the sources listed in `<data>/sources.toml`.
    TrainAbuse {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Segment store whose documents must stay out of training.
        #[arg(long)]
        exclude_segments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score segments with a trained abuse model.
    ScoreAbuse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        /// Overrides the embedding table recorded in the model.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse abuse and intent into segment and document scores.
    Score {
        #[arg(long)]
        abuse_model: PathBuf,
        #[arg(long)]
        intent_labels: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Serve the annotation API.
    ServeAnnotation {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        /// Abuse scores from `score-abuse`, shown alongside intent in the report.
        #[arg(long)]
        abuse_scores: Option<PathBuf>,
        #[arg(long)]
        pool: Option<usize>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Event log; an existing log is replayed instead of drawing a new pool.
        #[arg(long, default_value = "annotation_events.jsonl")]
        log: PathBuf,
    },
    /// Replay an annotation event log and write the agreement report.
    AgreementReport {
        #[arg(long, default_value = "annotation_events.jsonl")]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from the config, reusing up-to-date artifacts.
    RunAll {
        /// Stop after this stage.
        #[arg(long)]
        until: Option<String>,
    },
    /// Write a config file holding every default.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn config(path: Option<&Path>) -> Result<RunConfig> {
    let mut c = match path {
        Some(p) => {
            let mut c = load_config(p)?;
            c.resolve_paths(p.parent().unwrap_or(Path::new(".")));
            c
        }
        None => RunConfig::default(),
    };
    c.apply_path_overrides(|k| std::env::var(k).ok());
    c.validate()?;
    Ok(c)
}

fn print(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn desire(verbs: Option<&Path>, c: &RunConfig) -> Result<DesireVerbs> {
    Ok(match verbs {
        Some(p) => DesireVerbs::from_words(pipeline::read_word_list(p)?),
        None => DesireVerbs::from_words(c.cone.seeds.iter().cloned()),
    })
}

fn parent(p: &Path) -> &Path {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DataManifest {
    sources: Vec<SourceSpec>,
    #[serde(default)]
    shuffle_seed: Option<u64>,
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut c = config(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess { input, out, report } => {
            print(&pipeline::preprocess_file(&input, &out, &report)?)?;
        }
        Command::ExpandVerbs {
            embeddings,
            seeds,
            multiplier,
            parses,
            out,
        } => {
            if let Some(s) = seeds {
                c.cone.seeds = pipeline::read_word_list(&s)?;
            }
            if let Some(m) = multiplier {
                c.cone.multiplier = m;
            }
            c.validate()?;
            let verbs = pipeline::expand_verbs_file(&embeddings, parses.as_deref(), &c.cone.cone(), &out)?;
            print(&serde_json::json!({ "verbs": verbs.len(), "out": out }))?;
        }
        Command::SeedLabel {
            segments,
            parses,
            verbs,
            out,
        } => {
            let d = desire(verbs.as_deref(), &c)?;
            let (_, dist) = pipeline::seed_label_file(&segments, &parses, &d, &c.dep_labels, &out)?;
            print(&dist)?;
        }
        Command::NgramScore {
            index,
            labels,
            percentile,
            out,
            top,
        } => {
            if let Some(p) = percentile {
                c.ngram.percentile = p;
            }
            c.validate()?;
            let (summary, best) = pipeline::ngram_score_file(&index, &labels, &c.ngram.learner(), &out, top)?;
            print(&serde_json::json!({ "summary": summary, "top": best }))?;
        }
        Command::Bootstrap {
            segments,
            parses,
            embeddings,
            rounds,
            verbs,
            out,
        } => {
            if let Some(r) = rounds {
                c.bootstrap.rounds = r;
            }
            c.validate()?;
            let dir = parent(&out).to_path_buf();
            std::fs::create_dir_all(&dir)?;
            let seed_out = dir.join(files::SEED_LABELS);
            let d = desire(verbs.as_deref(), &c)?;
            let (initial, dist) = pipeline::seed_label_file(&segments, &parses, &d, &c.dep_labels, &seed_out)?;
            log::info!("initial labels: {dist}");
            let paths = BootstrapPaths {
                labels: out.clone(),
                ..BootstrapPaths::in_dir(&dir)
            };
            print(&pipeline::bootstrap_files(&segments, &initial, &embeddings, &c, &paths)?)?;
        }
        Command::TrainAbuse {
            data,
            embeddings,
            exclude_segments,
            out,
        } => {
            let manifest_path = data.join("sources.toml");
            let text = std::fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
            let m: DataManifest = toml::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
            c.abuse.sources = m.sources;
            for s in &mut c.abuse.sources {
                if s.path.is_relative() {
                    s.path = data.join(&s.path);
                }
            }
            if let Some(seed) = m.shuffle_seed {
                c.abuse.shuffle_seed = seed;
            }
            let Some(emb) = embeddings.or(c.paths.embeddings.clone()) else {
                bail!("no embedding table: pass --embeddings or set paths.embeddings");
            };
            let dataset_out = parent(&out).join(files::ABUSE_DATASET);
            print(&pipeline::train_abuse_files(
                &c.abuse,
                &emb,
                exclude_segments.as_deref(),
                &out,
                &dataset_out,
            )?)?;
        }
        Command::ScoreAbuse {
            model,
            segments,
            embeddings,
            out,
        } => {
            print(&pipeline::score_abuse_file(&model, embeddings.as_deref(), &segments, &out)?)?;
        }
        Command::Score {
            abuse_model,
            intent_labels,
            segments,
            embeddings,
            out,
            top,
            window,
        } => {
            if let Some(t) = top {
                c.score.top = t;
            }
            if let Some(w) = window {
                c.score.window = w;
            }
            c.validate()?;
            print(&pipeline::score_files(
                &segments,
                &intent_labels,
                &abuse_model,
                embeddings.as_deref(),
                &c.score,
                &out,
            )?)?;
        }
        Command::ServeAnnotation {
            labels,
            segments,
            abuse_scores,
            pool,
            host,
            port,
            log,
        } => {
            if let Some(p) = pool {
                c.annotation.pool_size = p;
            }
            c.validate()?;
            let cfg = c.annotation.clone();
            let service = AnnotationService::open(cfg.clone(), &log, || {
                let segs: Vec<Segment> = read_jsonl(&segments)?;
                let intent = pipeline::read_intent(&labels, &segs)?;
                let abuse: HashMap<String, f64> = match &abuse_scores {
                    Some(p) => read_jsonl::<AbuseScore>(p)?.into_iter().map(|a| (a.segment_id, a.abuse)).collect(),
                    None => HashMap::new(),
                };
                let items: Vec<PoolItem> = segs
                    .into_iter()
                    .zip(intent)
                    .map(|(s, i)| PoolItem {
                        abuse: abuse.get(&s.segment_id).copied(),
                        segment_id: s.segment_id,
                        text: s.text,
                        intent: i,
                    })
                    .collect();
                Ok((
                    build_pool(&items, cfg.pool_size, cfg.band_low, cfg.band_high, cfg.seed),
                    default_qualifiers(),
                ))
            })?;
            log::info!("pool of {} segments, events in {}", service.pool_size(), log.display());
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("bad address {host}:{port}"))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                println!("listening on http://{}", listener.local_addr()?);
                std::io::stdout().flush()?;
                annotation::serve(Arc::new(Mutex::new(service)), listener).await?;
                anyhow::Ok(())
            })?;
        }
        Command::AgreementReport { log, out } => {
            let service = AnnotationService::replay(c.annotation.clone(), &log)?;
            let report = service.report();
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            std::fs::write(&out, text)?;
            print(&report)?;
        }
        Command::RunAll { until } => {
            if cli.config.is_none() && c.paths.corpus.is_none() {
                bail!("run-all needs --config or ABINTENT_CORPUS and friends");
            }
            let m = pipeline::run_pipeline_until(&c, until.as_deref())?;
            for s in &m.stages {
                let status = serde_json::to_value(s.status)?;
                match &s.error {
                    Some(e) => eprintln!("{:<14} {}: {e}", s.name, status.as_str().unwrap_or("")),
                    None => eprintln!("{:<14} {}", s.name, status.as_str().unwrap_or("")),
                }
            }
            println!("{}", c.paths.output.join(pipeline::MANIFEST_FILE).display());
            if m.stages.iter().any(|s| s.status == StageStatus::Failed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::InitConfig { out } => {
            RunConfig::default().save(&out)?;
            println!("{}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
