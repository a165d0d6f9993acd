use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use navsim::citygraph::{CityGraph, NodeId};
use navsim::dataset::Dataset;
use navsim::engine::{replay, run_episode, EpisodeConfig, Registry, TrajectoryLog};
use navsim::eval::{load_logs, summarize, EpisodeResult};
use navsim::landmarks::{select_exact, select_greedy, HashScorer, ObjectiveWeights};
use navsim::routegen::{cluster_nodes, sample_endpoints, shortest_route, Route};
use navsim::service::{port_from_env, serve, AppState};
use navsim::synthworld::{build_dataset, generate_world, WorldSpec};
use navsim::util::derive_seed;

#[derive(Parser)]
#[command(name = "navsim", version, about = "Instruction-following navigation on city road graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample endpoint pairs from distinct clusters and write shortest routes.
    Routegen {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine intermediate landmarks on a route.
    Landmarks {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        route: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        w1: f64,
        #[arg(long, default_value_t = 1.0)]
        w2: f64,
        #[arg(long, default_value_t = 3.0)]
        w3: f64,
        #[arg(long, default_value_t = 15.0)]
        sigma: f64,
        #[arg(long, default_value_t = 3)]
        l: usize,
        /// Enumerate all subsets instead of greedy selection.
        #[arg(long)]
        exact: bool,
        /// Salt of the hash-based describability scorer.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the route with the selected landmarks here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic grid city dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(long, default_value_t = 100.0)]
        spacing: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Episodes per difficulty level 1 to 4.
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Run a policy over every route of a dataset and write trajectory logs.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "oracle")]
        policy: String,
        #[arg(long, default_value = "oracle")]
        matcher: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate trajectory logs into a metrics report.
    Eval {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that a trajectory log replays through the engine.
    Replay {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Serve the session API.
    Serve {
        #[arg(long)]
        data: PathBuf,
        /// Defaults to NAVSIM_PORT, then 8080.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Write finished session logs here.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Routegen { graph, k, seed, count, out } => {
            let g = CityGraph::load(&graph)?;
            let clusters = cluster_nodes(&g, k, seed)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for i in 0..count {
                let (s, d) = sample_endpoints(&clusters, derive_seed(seed, i as u64))?;
                let route = shortest_route(&g, s, d)?;
                let path = out.join(format!("route-{i:04}.json"));
                route.save(&path)?;
                println!("{}\t{} -> {}\t{:.1} m", path.display(), s, d, route.total_length());
            }
        }
        Command::Landmarks { graph, route, w1, w2, w3, sigma, l, exact, seed, out } => {
            let g = CityGraph::load(&graph)?;
            let mut r = Route::load(&g, &route)?;
            let weights = ObjectiveWeights { w1, w2, w3, sigma, l };
            let scorer = HashScorer { salt: seed };
            let intersections = g.intersections();
            let sel = if exact {
                select_exact(&r, &weights, &scorer, &intersections)?
            } else {
                select_greedy(&r, &weights, &scorer, &intersections)?
            };
            println!(
                "{}",
                serde_json::json!({
                    "node_ids": sel.node_ids,
                    "objective_value": sel.objective_value,
                })
            );
            if let Some(out) = out {
                let mut lm: Vec<NodeId> = vec![r.source()];
                lm.extend(&sel.node_ids);
                lm.push(r.destination());
                r.set_landmarks(lm)?;
                r.save(out)?;
            }
        }
        Command::Synth { out, rows, cols, spacing, seed, episodes } => {
            let spec = WorldSpec { seed, rows, cols, spacing_m: spacing, ..Default::default() };
            let sw = generate_world(&spec)?;
            let id = out.file_name().and_then(|s| s.to_str()).unwrap_or("synth").to_string();
            let ds = build_dataset(&sw, &id, [episodes; 4], seed)?;
            ds.save(&out)?;
            println!("wrote {} episodes to {}", ds.episodes.len(), out.display());
        }
        Command::Run { data, policy, matcher, seed, out } => {
            let ds = Dataset::load(&data)?;
            let registry = Registry::default();
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut results = Vec::new();
            for (i, (id, spec)) in ds.episodes.iter().enumerate() {
                let ep_seed = derive_seed(seed, i as u64);
                let mut bundle = registry.bundle(&policy, &matcher, ep_seed)?;
                let log = run_episode(Arc::clone(&ds.world), id, spec, &mut bundle, EpisodeConfig::default(), ep_seed)?;
                log.save(out.join(format!("{id}.jsonl")))?;
                results.push(EpisodeResult::from_summary(&log.summary));
            }
            if results.is_empty() {
                bail!("dataset {} has no routes", data.display());
            }
            println!("{}", serde_json::to_string_pretty(&summarize(&results)?)?);
        }
        Command::Eval { logs, out } => {
            let logs = load_logs(&logs)?;
            let results: Vec<EpisodeResult> = logs.iter().map(|l| EpisodeResult::from_summary(&l.summary)).collect();
            let report = serde_json::to_string_pretty(&summarize(&results)?)?;
            match out {
                Some(path) => std::fs::write(&path, report + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => println!("{report}"),
            }
        }
        Command::Replay { data, log } => {
            let ds = Dataset::load(&data)?;
            let log = TrajectoryLog::load(&log)?;
            let spec = ds
                .episodes
                .get(&log.summary.route_id)
                .with_context(|| format!("route {} not in dataset", log.summary.route_id))?;
            replay(Arc::clone(&ds.world), spec, &log, &Registry::default())?;
            println!("ok: {} steps, {}", log.steps.len(), log.summary.outcome);
        }
        Command::Serve { data, port, host, log_dir } => {
            let datasets = Dataset::discover(&data)?;
            if datasets.is_empty() {
                bail!("no datasets under {}", data.display());
            }
            let mut state = AppState::new(datasets);
            if let Some(dir) = log_dir {
                state = state.with_log_dir(dir);
            }
            let addr = SocketAddr::new(host, port.unwrap_or_else(port_from_env));
            tokio::runtime::Runtime::new()?.block_on(serve(addr, Arc::new(state)))?;
        }
    }
    Ok(())
}
