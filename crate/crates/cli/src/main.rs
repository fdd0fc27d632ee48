use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgprompt_core::backend::{AnswerBackend, BenchmarkScript, HttpChatBackend, PathScriptBackend, ScriptedBackend};
use kgprompt_core::bench::{
    ablation_csv, evaluate, generate, hop_ablation, require_all_hops, sweep_csv, sweep_incompleteness, EvalRecord,
    EvalSetup, SyntheticSpec, VocabularyStyle,
};
use kgprompt_core::config::PipelineConfig;
use kgprompt_core::dataset::{load_records, QuestionRecord};
use kgprompt_core::embed::EmbeddingProvider;
use kgprompt_core::extract::extract;
use kgprompt_core::kg::KnowledgeGraph;
use kgprompt_core::orchestrator::Reasoner;
use kgprompt_core::selector::{score_candidates, train, verbalize, HeadSelector, Selector};
use kgprompt_tensor::ParameterStore;

mod full_run;

#[derive(Parser)]
#[command(name = "kgprompt", version, about = "Subgraph-guided soft-prompt reasoning over knowledge graphs")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed the command uses (training, generation, perturbation).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit nonzero when a metric misses its acceptance band.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a triple file and report its size.
    Ingest { graph: PathBuf },
    /// Print the question-relevant subgraph around a topic entity as JSON.
    Extract {
        #[command(flatten)]
        query: Query,
        #[arg(long)]
        hops: Option<usize>,
    },
    /// Train the encoder and head on a question file.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Training report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        hops: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score candidate entities for one question.
    Select {
        #[command(flatten)]
        query: Query,
        #[command(flatten)]
        model: ModelSource,
        /// Write per-layer attention rows here as JSON.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Run the iterative select/answer loop for one question.
    Reason {
        #[command(flatten)]
        query: Query,
        #[command(flatten)]
        model: ModelSource,
        #[command(flatten)]
        backend: BackendArgs,
        /// Write the trace as JSON lines, one iteration per line.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generate a synthetic benchmark directory.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        entities: usize,
        /// Questions at depth 1, 2 and 3.
        #[arg(long, value_delimiter = ',', default_values_t = [0, 300, 0])]
        questions: Vec<usize>,
        #[arg(long, default_value_t = 3.0)]
        density: f64,
        #[arg(long, default_value_t = 0.0)]
        missing_edge_fraction: f64,
        #[arg(long, value_enum, default_value_t = Vocabulary::Syllabic)]
        vocabulary: Vocabulary,
    },
    /// Evaluate Hits@1 on a benchmark directory.
    Eval {
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        model: ModelSource,
        #[arg(long)]
        hops: Option<usize>,
        /// Hits@1 band checked under --strict.
        #[arg(long, default_value_t = 0.90)]
        min_hits: f64,
    },
    /// Hits@1 as growing fractions of topic-entity edges are removed.
    Sweep {
        #[command(flatten)]
        bench: BenchArgs,
        #[command(flatten)]
        model: ModelSource,
        #[arg(long)]
        hops: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.10, 0.15, 0.20, 0.25])]
        ratios: Vec<f64>,
    },
    /// Compare hop settings, each with its own checkpoint.
    Ablate {
        #[command(flatten)]
        bench: BenchArgs,
        /// `HOPS=PATH`, repeated once per hop setting.
        #[arg(long = "checkpoint", value_parser = parse_hop_checkpoint)]
        checkpoints: Vec<(usize, PathBuf)>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        hops: Vec<usize>,
    },
    /// Generate, train, evaluate, sweep and ablate end to end.
    Bench(full_run::FullRunArgs),
}

#[derive(Args)]
struct Query {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    question: String,
    /// Topic entity label.
    #[arg(long)]
    topic: String,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ModelSource {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run with freshly initialized parameters.
    #[arg(long)]
    untrained: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// Chat-completions endpoint from the environment.
    Chat,
    /// Rule table file.
    Scripted,
    /// Benchmark path script file.
    PathScript,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Chat)]
    backend: BackendKind,
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory holding graph.tsv, questions.jsonl and script.json.
    #[arg(long)]
    dir: PathBuf,
    /// Where metric files go.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate only the test split.
    #[arg(long)]
    test_only: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Vocabulary {
    Syllabic,
    Pooled,
    Indexed,
}

impl From<Vocabulary> for VocabularyStyle {
    fn from(v: Vocabulary) -> Self {
        match v {
            Vocabulary::Syllabic => VocabularyStyle::Syllabic,
            Vocabulary::Pooled => VocabularyStyle::Pooled,
            Vocabulary::Indexed => VocabularyStyle::Indexed,
        }
    }
}

fn parse_hop_checkpoint(s: &str) -> std::result::Result<(usize, PathBuf), String> {
    let (h, p) = s.split_once('=').ok_or_else(|| format!("expected HOPS=PATH, got `{s}`"))?;
    let hops = h.parse().map_err(|_| format!("bad hop count `{h}`"))?;
    Ok((hops, PathBuf::from(p)))
}

struct Session {
    config: PipelineConfig,
    seed: Option<u64>,
}

impl Session {
    fn load(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = cli.seed {
            config.training.seed = s;
        }
        Ok(Self { config, seed: cli.seed })
    }

    /// Sets both the extraction depth and the encoder depth.
    fn with_hops(&self, hops: Option<usize>) -> PipelineConfig {
        let mut c = self.config.clone();
        if let Some(h) = hops {
            c.extraction.hops = h;
            c.model.encoder.layers = h;
        }
        c
    }
}

fn load_params(config: &PipelineConfig, model: &ModelSource) -> Result<ParameterStore> {
    match &model.checkpoint {
        Some(p) => ParameterStore::load(p).with_context(|| format!("loading checkpoint {}", p.display())),
        None => Ok(config.model.init_params(config.training.seed)?),
    }
}

fn head_selector(config: &PipelineConfig, params: ParameterStore, provider: &Arc<dyn EmbeddingProvider>) -> Result<HeadSelector> {
    HeadSelector::new(config.model, params, Arc::clone(provider)).context("checkpoint does not match the model configuration")
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::ingest(path).with_context(|| format!("reading {}", path.display()))
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

struct Bench {
    graph: KnowledgeGraph,
    records: Vec<QuestionRecord>,
    script: BenchmarkScript,
}

fn load_bench(args: &BenchArgs) -> Result<Bench> {
    let graph = load_graph(&args.dir.join("graph.tsv"))?;
    let mut records = load_records(args.dir.join("questions.jsonl"))?;
    if args.test_only {
        records.retain(QuestionRecord::is_test);
    }
    let script = BenchmarkScript::load(args.dir.join("script.json"))?;
    fs::create_dir_all(&args.out)?;
    Ok(Bench { graph, records, script })
}

fn backend(args: &BackendArgs) -> Result<Box<dyn AnswerBackend>> {
    let script = || args.script.as_ref().context("--script is required for this backend");
    Ok(match args.backend {
        BackendKind::Chat => Box::new(HttpChatBackend::from_env()?),
        BackendKind::Scripted => Box::new(ScriptedBackend::load(script()?)?),
        BackendKind::PathScript => Box::new(PathScriptBackend::new(BenchmarkScript::load(script()?)?)),
    })
}

pub(crate) fn eval_csv(records: &[EvalRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "question_id", "depth", "hit", "predicted", "gold", "iterations", "select_calls", "answer_calls", "wall_ms",
        "terminal",
    ])?;
    for r in records {
        w.write_record([
            r.question_id.to_string(),
            r.depth.map_or(String::new(), |d| d.to_string()),
            r.hit.to_string(),
            r.predicted.clone().unwrap_or_default(),
            r.gold.join("|"),
            r.iterations.to_string(),
            r.select_calls.to_string(),
            r.answer_calls.to_string(),
            format!("{:.3}", r.wall_ms),
            serde_json::to_value(&r.terminal)?["kind"].as_str().unwrap_or_default().to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn run(cli: Cli) -> Result<bool> {
    let ctx = Session::load(&cli)?;
    match cli.command {
        Command::Ingest { graph } => {
            let g = load_graph(&graph)?;
            let report = serde_json::json!({
                "entities": g.num_entities(),
                "relations": g.num_relations(),
                "triples": g.num_triples(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Extract { query, hops } => {
            let config = ctx.with_hops(hops);
            let g = load_graph(&query.graph)?;
            let provider = config.provider.build()?;
            let topic = g.require_entity(&query.topic)?;
            let sg = extract(&g, provider.as_ref(), &query.question, topic, &config.extraction)?;
            println!("{}", serde_json::to_string_pretty(&sg)?);
        }
        Command::Train { graph, questions, out, report, hops, epochs } => {
            let mut config = ctx.with_hops(hops);
            if let Some(e) = epochs {
                config.training.epochs = e;
            }
            config.validate()?;
            let g = load_graph(&graph)?;
            let records = load_records(&questions)?;
            let provider = config.provider.build()?;
            let mut params = config.model.init_params(config.training.seed)?;
            let rep = train(&g, provider.as_ref(), &records, &config.extraction, &config.model, &mut params, &config.training)?;
            params.save(&out)?;
            for e in &rep.epochs {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  train top-1 {:.3}  held-out top-1 {:.3}",
                    e.epoch, e.mean_loss, e.train_hit, e.heldout_hit
                );
            }
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Select { query, model, dump_attention } => {
            let config = ctx.config.clone();
            let g = load_graph(&query.graph)?;
            let provider = config.provider.build()?;
            let params = load_params(&config, &model)?;
            config.model.check_params(&params)?;
            let topic = g.require_entity(&query.topic)?;
            let q = provider.embed(&query.question)?;
            let sg = extract(&g, provider.as_ref(), &query.question, topic, &config.extraction)?;
            let (selection, _, attention) = score_candidates(&sg, &query.question, &q, provider.as_ref(), &params, &config.model)?;
            if let Some(p) = dump_attention {
                let layers: Vec<serde_json::Value> = attention
                    .iter()
                    .map(|a| {
                        let rows: BTreeMap<&str, &[f64]> =
                            sg.nodes.iter().enumerate().map(|(i, n)| (n.label.as_str(), a.row(i))).collect();
                        serde_json::json!(rows)
                    })
                    .collect();
                let labels: Vec<&str> = sg.nodes.iter().map(|n| n.label.as_str()).collect();
                write_json(&p, &serde_json::json!({ "columns": labels, "layers": layers }))?;
            }
            let out = serde_json::json!({
                "selected": selection.selected,
                "evidence": verbalize(&selection, &sg),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Reason { query, model, backend: b, trace } => {
            let config = ctx.config.clone();
            let g = load_graph(&query.graph)?;
            let provider = config.provider.build()?;
            let selector = head_selector(&config, load_params(&config, &model)?, &provider)?;
            let backend = backend(&b)?;
            let reasoner = Reasoner {
                graph: &g,
                provider: provider.as_ref(),
                selector: &selector,
                backend: backend.as_ref(),
                extraction: config.extraction,
                config: config.reasoning,
            };
            let out = reasoner.reason(&query.question, g.require_entity(&query.topic)?)?;
            if let Some(p) = trace {
                let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                out.trace.write_jsonl(std::io::BufWriter::new(f))?;
            }
            let summary = serde_json::json!({
                "answer": out.answer,
                "terminal": out.trace.terminal,
                "topics": out.trace.iterations.iter().map(|i| &i.topic_label).collect::<Vec<_>>(),
                "select_calls": out.trace.select_calls,
                "answer_calls": out.trace.answer_calls,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Gen { out, entities, questions, density, missing_edge_fraction, vocabulary } => {
            let per_depth: [usize; 3] = questions
                .as_slice()
                .try_into()
                .map_err(|_| anyhow::anyhow!("--questions takes three counts (depth 1, 2, 3)"))?;
            let spec = SyntheticSpec {
                num_entities: entities,
                questions_per_depth: per_depth,
                distractor_density: density,
                missing_edge_fraction,
                vocabulary: vocabulary.into(),
                seed: ctx.seed.unwrap_or(SyntheticSpec::default().seed),
                ..Default::default()
            };
            let bench = generate(&spec)?;
            bench.write_to(&out)?;
            write_json(&out.join("spec.json"), &spec)?;
            println!(
                "{} questions, {} entities, {} triples in {}",
                bench.records.len(),
                bench.graph.num_entities(),
                bench.graph.num_triples(),
                out.display()
            );
        }
        Command::Eval { bench, model, hops, min_hits } => {
            let config = ctx.with_hops(hops);
            let b = load_bench(&bench)?;
            let provider = config.provider.build()?;
            let selector = head_selector(&config, load_params(&config, &model)?, &provider)?;
            let backend = PathScriptBackend::new(b.script.clone());
            let setup = eval_setup(&config, provider.as_ref(), &selector, &backend);
            let (metrics, records) = evaluate(&b.records, &b.graph, &setup)?;
            write_json(&bench.out.join("metrics.json"), &metrics)?;
            fs::write(bench.out.join("eval.csv"), eval_csv(&records)?)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            let ok = metrics.hits_at_1 >= min_hits;
            eprintln!("Hits@1 {:.3} (band >= {min_hits}): {}", metrics.hits_at_1, if ok { "ok" } else { "miss" });
            return Ok(ok || !cli.strict);
        }
        Command::Sweep { bench, model, hops, ratios } => {
            if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                bail!("ratios must lie in [0, 1]");
            }
            let config = ctx.with_hops(hops);
            let b = load_bench(&bench)?;
            let provider = config.provider.build()?;
            let selector = head_selector(&config, load_params(&config, &model)?, &provider)?;
            let backend = PathScriptBackend::new(b.script.clone());
            let setup = eval_setup(&config, provider.as_ref(), &selector, &backend);
            let points = sweep_incompleteness(&b.records, &b.graph, &setup, &ratios, ctx.seed.unwrap_or(1))?;
            let csv = sweep_csv(&points);
            fs::write(bench.out.join("sweep.csv"), &csv)?;
            write_json(&bench.out.join("sweep.json"), &points)?;
            print!("{csv}");
        }
        Command::Ablate { bench, checkpoints, hops } => {
            let available: BTreeMap<usize, PathBuf> = checkpoints.into_iter().collect();
            require_all_hops(&available, &hops)?;
            let b = load_bench(&bench)?;
            let provider = ctx.config.provider.build()?;
            let mut selectors = Vec::new();
            for &h in &hops {
                let config = ctx.with_hops(Some(h));
                let params = ParameterStore::load(&available[&h])?;
                selectors.push((h, head_selector(&config, params, &provider)?));
            }
            let settings: Vec<(usize, &dyn Selector)> = selectors.iter().map(|(h, s)| (*h, s as &dyn Selector)).collect();
            let backend = PathScriptBackend::new(b.script.clone());
            let base = eval_setup(&ctx.config, provider.as_ref(), &selectors[0].1, &backend);
            let rows = hop_ablation(&b.records, &b.graph, &settings, &base)?;
            let csv = ablation_csv(&rows);
            fs::write(bench.out.join("ablation.csv"), &csv)?;
            write_json(&bench.out.join("ablation.json"), &rows)?;
            print!("{csv}");
        }
        Command::Bench(args) => return full_run::run(&ctx.config, ctx.seed, &args).map(|ok| ok || !cli.strict),
    }
    Ok(true)
}

pub(crate) fn eval_setup<'a>(
    config: &PipelineConfig,
    provider: &'a dyn EmbeddingProvider,
    selector: &'a dyn Selector,
    backend: &'a dyn AnswerBackend,
) -> EvalSetup<'a> {
    EvalSetup {
        provider,
        selector,
        backend,
        extraction: config.extraction,
        reasoning: config.reasoning,
        match_mode: config.match_mode,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("acceptance band missed (--strict)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
