//! `dhge`: train, update, evaluate and serve dynamic heterogeneous graph
//! embeddings from the command line. JSON lines go to stdout, logs to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dhge_core::pipeline::{
    cmd_evaluate, cmd_retrieve, cmd_simulate_stream, cmd_train, cmd_update, gen_fixture, FixtureSpec, PipelineConfig,
};
use dhge_core::{Error, NodeRef, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dhge", about = "Dynamic heterogeneous graph embedding pipeline")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    snapshot_dir: Option<PathBuf>,
    /// Snapshot version to read (default: newest).
    #[arg(long, global = true)]
    version: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full static training; publishes a static snapshot.
    Train,
    /// Applies one increment batch on top of a snapshot.
    Update {
        #[arg(long)]
        edges: PathBuf,
        /// Feature rows for new nodes. Defaults to `<edges stem>_features.tsv` when present.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Ranks held-out interactions and prints an evaluation report.
    Evaluate {
        /// Defaults to `paths.test`.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Also write per-user ranks as CSV.
        #[arg(long)]
        ranks: Option<PathBuf>,
    },
    /// Prints the top-K items for one user as `type<TAB>id<TAB>score`.
    Retrieve {
        /// `node_type:intra_id`
        #[arg(long, value_parser = parse_node)]
        user: NodeRef,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Feeds increment batches in order, evaluating after each.
    SimulateStream {
        /// Increment edge files in order. Defaults to `paths.increments`.
        #[arg(long = "increment")]
        increments: Vec<PathBuf>,
        /// One test file, or one per evaluation (base first). Defaults to `paths.test`.
        #[arg(long = "test")]
        tests: Vec<PathBuf>,
    },
    /// Writes a synthetic fixture plus a ready-to-run `dhge.toml`.
    GenFixture {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        /// TOML with the generator parameters; defaults per kind otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    PlantedBipartite,
    SwissRoll,
    DriftStream,
}

fn parse_node(s: &str) -> std::result::Result<NodeRef, String> {
    let (t, i) = s.split_once(':').ok_or("expected node_type:intra_id")?;
    let t = t.parse().map_err(|e| format!("node type: {e}"))?;
    let i = i.parse().map_err(|e| format!("intra id: {e}"))?;
    Ok(NodeRef::new(t, i))
}

fn emit(v: serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{v}").map_err(|e| Error::io("<stdout>", e))
}

fn to_json<T: serde::Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("report serializes")
}

/// `increment_3.tsv` pairs with `increment_3_features.tsv`.
fn sibling_features(edges: &Path) -> Option<PathBuf> {
    let stem = edges.file_stem()?.to_string_lossy();
    let p = edges.with_file_name(format!("{stem}_features.tsv"));
    p.exists().then_some(p)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(d) = &cli.snapshot_dir {
        cfg.paths.snapshot_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fixture_config(files: &dhge_core::pipeline::FixtureFiles) -> String {
    let mut s = String::from("rng_seed = 0\n\n[paths]\n");
    let q = |p: &Path| format!("{:?}", p.to_string_lossy());
    if let Some(e) = &files.edges {
        s += &format!("edges = {}\n", q(e));
    }
    s += &format!("features = {}\n", q(&files.features));
    if let Some(sc) = &files.schema {
        s += &format!("schema = {}\n", q(sc));
    }
    if let Some(t) = &files.test {
        s += &format!("test = {}\n", q(t));
    }
    if !files.increments.is_empty() {
        let list: Vec<String> = files.increments.iter().map(|(e, _)| q(e)).collect();
        s += &format!("increments = [{}]\n", list.join(", "));
    }
    s + "snapshot_dir = \"snapshots\"\n"
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Train => {
            let cfg = load_config(&cli)?;
            let out = cmd_train(&cfg)?;
            for e in &out.epochs {
                emit(json!({"event": "epoch", "metrics": to_json(e)}))?;
            }
            emit(json!({"event": "snapshot", "manifest": to_json(&out.manifest), "wall_ms": out.wall_ms}))
        }
        Cmd::Update { edges, features } => {
            let cfg = load_config(&cli)?;
            let features = features.clone().or_else(|| sibling_features(edges));
            let out = cmd_update(&cfg, edges, features.as_deref(), cli.version)?;
            if out.report.n_cold_isolated > 0 {
                log::warn!("{} new nodes had no neighbors and used the model forward", out.report.n_cold_isolated);
            }
            emit(json!({"event": "update", "manifest": to_json(&out.manifest), "report": to_json(&out.report)}))
        }
        Cmd::Evaluate { test, ranks } => {
            let cfg = load_config(&cli)?;
            let test = test.clone().or(cfg.paths.test.clone()).ok_or_else(|| Error::Config("no test file: pass --test or set paths.test".into()))?;
            let report = cmd_evaluate(&cfg, cli.version, &test)?;
            if let Some(p) = ranks {
                dhge_core::fsutil::atomic_write(p, report.ranks_csv().as_bytes())?;
            }
            emit(json!({"event": "evaluate", "report": to_json(&report)}))
        }
        Cmd::Retrieve { user, k } => {
            let cfg = load_config(&cli)?;
            let hits = cmd_retrieve(&cfg, cli.version, *user, *k)?;
            let mut out = std::io::stdout().lock();
            for (n, s) in hits {
                writeln!(out, "{}\t{}\t{s}", n.node_type, n.intra_id).map_err(|e| Error::io("<stdout>", e))?;
            }
            Ok(())
        }
        Cmd::SimulateStream { increments, tests } => {
            let cfg = load_config(&cli)?;
            let incs = if increments.is_empty() { cfg.paths.increments.clone() } else { increments.clone() };
            let incs: Vec<(PathBuf, Option<PathBuf>)> = incs.into_iter().map(|e| { let f = sibling_features(&e); (e, f) }).collect();
            let tests = if tests.is_empty() { cfg.paths.test.iter().cloned().collect() } else { tests.clone() };
            let out = cmd_simulate_stream(&cfg, &incs, &tests)?;
            for s in &out.steps {
                emit(json!({"event": "step", "step": to_json(s)}))?;
            }
            emit(json!({"event": "freshness", "series": to_json(&out.freshness)}))
        }
        Cmd::GenFixture { kind, out, spec } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    toml::from_str::<FixtureSpec>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => match kind {
                    Kind::PlantedBipartite => FixtureSpec::planted_default(),
                    Kind::SwissRoll => FixtureSpec::swiss_roll_default(),
                    Kind::DriftStream => FixtureSpec::drift_default(),
                },
            };
            let files = gen_fixture(&spec, out, cli.seed.unwrap_or(0))?;
            if files.edges.is_some() {
                dhge_core::fsutil::atomic_write(&out.join("dhge.toml"), fixture_config(&files).as_bytes())?;
            }
            emit(json!({"event": "fixture", "dir": out, "files": to_json(&files)}))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).target(env_logger::Target::Stderr).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
