//! The `obge` command line.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use obge::attack::{
    audit_trace, build_sp_trees, length_classes, path_length, query_recovery, read_token_log, segment_trace,
    uniform_guess, CandidateSet, Pair,
};
use obge::graph::load_graph;
use obge::oram::{PadMode, PathStore};
use obge::protocol::{setup, ClientKeys, Mode, SetupParams};
use obge::trace::{read_trace_csv, TRACE_HEADER};
use obge::{Error, Graph, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::bench::{parse_lengths, run_bench, summarize, write_csv, BenchParams};
use crate::client::{RemoteEnhanced, RemoteTrivial, TcpTransport};
use crate::config::{ServerConfig, DEFAULT_LISTEN};
use crate::deploy::{split, write_deployment, CLIENT_STATE_FILE, CONFIG_FILE};
use crate::files::ClientFile;
use crate::server::serve_until_signal;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PROTOCOL: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "obge", version, about = "Oblivious shortest-path queries over an encrypted graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Treat edges as undirected.
    #[arg(long)]
    undirected: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encrypt a graph and write client and server files.
    Setup {
        graph: PathBuf,
        #[arg(long, default_value = "trivial")]
        mode: Mode,
        #[arg(long = "Z", default_value_t = 5)]
        z: usize,
        #[arg(long, default_value = "none")]
        pad: PadMode,
        #[arg(long)]
        out: PathBuf,
        /// Controller memory budget in bytes (enhanced mode).
        #[arg(long)]
        budget: Option<usize>,
        /// Position entries per recursive block.
        #[arg(long, default_value_t = obge::recursive::DEFAULT_CHI)]
        chi: usize,
        #[arg(long, default_value_t = obge::oram::DEFAULT_STASH_MAX)]
        stash_max: usize,
        #[arg(long, default_value_t = 128)]
        lambda: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: String,
        #[command(flatten)]
        graph_args: GraphArgs,
    },
    /// Run the storage server until SIGTERM or SIGINT.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Query a shortest path and print it.
    Query {
        u: u32,
        v: u32,
        #[arg(long)]
        keys: PathBuf,
        /// Trivial-mode client state; defaults to the file next to the keys.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Server address; defaults to the one in the server.conf next to the keys.
        #[arg(long)]
        server: Option<String>,
    },
    /// Time queries by path length and print CSV.
    Bench {
        #[arg(long, default_value = "1..10")]
        lengths: String,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value = "trivial")]
        mode: Mode,
        #[arg(long = "Z", default_value_t = 5)]
        z: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an access trace for leakage beyond path lengths.
    Audit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, requires = "queries")]
        graph: Option<PathBuf>,
        /// Ground-truth queries, one `u v` per line, in trace order.
        #[arg(long, requires = "graph")]
        queries: Option<PathBuf>,
        #[arg(long)]
        depth: Option<u32>,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        graph_args: GraphArgs,
    },
    /// Run query recovery on a GKT token log or an OBGE access trace.
    Attack {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Ground-truth queries for scoring, one `u v` per line.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        graph_args: GraphArgs,
    },
    /// Run queries against the GKT baseline and write its token log.
    GktTrace {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        graph_args: GraphArgs,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Capacity(_) | Error::StashOverflow { .. } => EXIT_CAPACITY,
        Error::Parse { .. }
        | Error::SelfLoop { .. }
        | Error::InvalidWeight { .. }
        | Error::VertexOutOfRange { .. }
        | Error::UnsupportedLambda(_)
        | Error::Config(_)
        | Error::Io(_) => EXIT_USAGE,
        _ => EXIT_PROTOCOL,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn read_graph(path: &Path, args: &GraphArgs) -> Result<Graph> {
    load_graph(BufReader::new(File::open(path)?), !args.undirected)
}

fn read_queries(path: &Path) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse { line: i + 1, detail: format!("expected `u v`, got {line:?}") };
        let mut it = line.split_whitespace().map(|t| t.parse::<u32>().map_err(|_| bad()));
        let (Some(u), Some(v), None) = (it.next(), it.next(), it.next()) else { return Err(bad()) };
        out.push((u?, v?));
    }
    Ok(out)
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Setup { graph, mode, z, pad, out, budget, chi, stash_max, lambda, seed, listen, graph_args } => {
            let g = read_graph(&graph, &graph_args)?;
            let params = SetupParams { lambda, z, pad, stash_max, mode, budget, chi, seed };
            let parts = split(setup(&g, &params)?);
            let mut cfg = ServerConfig::new(mode, "");
            cfg.listen_addr = listen;
            cfg.budget_bytes = budget;
            cfg.z = z as u32;
            cfg.stash_max = stash_max;
            write_deployment(&out, &parts, cfg)?;
            let h = parts.server.trees[0].header();
            println!(
                "{} vertices, {} edges, mode {mode}: data tree depth {} with {} buckets, {} position levels",
                g.vertex_count(),
                g.edge_count(),
                h.depth,
                h.bucket_count(),
                parts.server.trees.len() - 1
            );
            println!("wrote {}", out.join(CONFIG_FILE).display());
            Ok(EXIT_OK)
        }
        Command::Serve { config } => {
            let cfg = ServerConfig::load(&config)?;
            serve_until_signal(cfg, |addr| {
                println!("listening on {addr}");
                let _ = std::io::stdout().flush();
            })?;
            Ok(EXIT_OK)
        }
        Command::Query { u, v, keys, state, server } => {
            let key_file = ClientKeys::from_bytes(&std::fs::read(&keys)?)?;
            for x in [u, v] {
                if x >= key_file.vertex_count {
                    return Err(Error::VertexOutOfRange { vertex: x as u64, vertex_count: key_file.vertex_count as usize });
                }
            }
            let dir = keys.parent().unwrap_or(Path::new(".")).to_path_buf();
            let addr = match server {
                Some(s) => s,
                None => match ServerConfig::load(&dir.join(CONFIG_FILE)) {
                    Ok(c) => c.listen_addr,
                    Err(_) => DEFAULT_LISTEN.to_string(),
                },
            };
            let transport = TcpTransport::connect(addr.as_str())?;
            let path = match key_file.mode {
                Mode::Trivial => {
                    let state_path = state.unwrap_or_else(|| dir.join(CLIENT_STATE_FILE));
                    let file = ClientFile::load(&state_path)?;
                    let mut client = RemoteTrivial::new(key_file, file, transport, None)?;
                    let path = client.query(u, v)?;
                    client.into_file().1.save(&state_path)?;
                    path
                }
                Mode::Enhanced => RemoteEnhanced::new(&key_file, transport, None)?.query(u, v)?,
            };
            match path {
                Some(p) => println!("{}", p.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")),
                None => println!("none"),
            }
            Ok(EXIT_OK)
        }
        Command::Bench { lengths, reps, mode, z, seed, out } => {
            let params = BenchParams { lengths: parse_lengths(&lengths)?, reps, mode, z, seed, ..Default::default() };
            let rows = run_bench(&params)?;
            match out {
                Some(p) => write_csv(&rows, std::io::BufWriter::new(File::create(p)?))?,
                None => write_csv(&rows, std::io::stdout().lock())?,
            }
            let s = summarize(&rows)?;
            for (len, mean) in &s.means {
                eprintln!("length {len:>3}: mean {mean:>10.1} us");
            }
            eprintln!(
                "slope {:.2} us/hop (p = {:.2e}), means strictly increasing: {}",
                s.fit.slope, s.fit.p_positive, s.strictly_increasing
            );
            Ok(EXIT_OK)
        }
        Command::Audit { trace, graph, queries, depth, alpha, csv, seed, graph_args } => {
            let records = read_trace_csv(BufReader::new(File::open(&trace)?))?;
            let report = match (graph, queries) {
                (Some(g), Some(q)) => {
                    let g = read_graph(&g, &graph_args)?;
                    let q = read_queries(&q)?;
                    audit_trace(&records, Some((&g, q.as_slice())), depth, seed)?
                }
                _ => audit_trace::<f64>(&records, None, depth, seed)?,
            };
            print!("{}", report.summary(alpha));
            if let Some(p) = csv {
                std::fs::write(p, report.to_csv())?;
            }
            Ok(if report.passes(alpha) { EXIT_OK } else { EXIT_PROTOCOL })
        }
        Command::Attack { graph, trace, truth, seed, graph_args } => {
            let g = read_graph(&graph, &graph_args)?;
            let truth = truth.map(|p| read_queries(&p)).transpose()?;
            let mut reader = BufReader::new(File::open(&trace)?);
            let mut first = String::new();
            reader.read_line(&mut first)?;
            let body = std::io::Cursor::new(first.clone()).chain(reader);
            let sets = if first.trim() == TRACE_HEADER {
                println!("# OBGE access trace: the attacker sees round counts only");
                let records = read_trace_csv(body)?;
                let trees = build_sp_trees(&g);
                let lengths: Option<Vec<usize>> =
                    truth.as_ref().map(|t| t.iter().map(|&(u, v)| path_length(&trees, u, v)).collect());
                let segments = segment_trace(&records, lengths.as_deref())?;
                let observed: Vec<usize> = segments.iter().map(|s| s.rounds.saturating_sub(1)).collect();
                let classes = length_classes(&trees);
                observed
                    .iter()
                    .map(|&length| CandidateSet { length, candidates: classes.get(&length).cloned().unwrap_or_default() })
                    .collect::<Vec<_>>()
            } else {
                println!("# GKT token log: the attacker sees token chains");
                query_recovery(&g, &read_token_log(body)?)?
            };
            println!("obs,length,candidates");
            for (i, s) in sets.iter().enumerate() {
                println!("{i},{},{}", s.length, s.len());
            }
            let mean = sets.iter().map(|s| s.len() as f64).sum::<f64>() / sets.len().max(1) as f64;
            let unique = sets.iter().filter(|s| s.len() == 1).count();
            eprintln!("{} observations, mean candidate set {mean:.2}, {unique} pinned to one query", sets.len());
            if let Some(t) = truth {
                let sound = sets.iter().zip(&t).all(|(s, &q)| s.contains(q));
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let o = uniform_guess(&sets, &t, &mut rng);
                eprintln!(
                    "accuracy {:.4} (uniform baseline {:.4}), true query always a candidate: {sound}",
                    o.accuracy, o.baseline
                );
            }
            Ok(EXIT_OK)
        }
        Command::GktTrace { graph, queries, out, seed, graph_args } => {
            let g = read_graph(&graph, &graph_args)?;
            let mut rng = obge::oram::seeded_rng(seed);
            let mut gkt = obge::attack::gkt_setup(&g, &mut rng)?;
            for (u, v) in read_queries(&queries)? {
                gkt.query(u, v)?;
            }
            obge::attack::write_token_log(gkt.log(), std::io::BufWriter::new(File::create(out)?))?;
            Ok(EXIT_OK)
        }
    }
}
