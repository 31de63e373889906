//! `dagbft`: run simulations, check traces, export DOT, print censuses.
//!
//! Exit codes: 0 success, 1 check violations, 2 usage or config or parse
//! error, 3 I/O error.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dagbft_core::simnet::census::message_census;
use dagbft_core::simnet::check::{self, Property};
use dagbft_core::simnet::trace::{Trace, TraceError, TraceEvent};
use dagbft_core::simnet::{self, Scenario, SimOutput};
use dagbft_core::ServerId;

#[derive(Parser)]
#[command(name = "dagbft", version, about = "Block DAG BFT simulator and trace checker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace as JSON lines.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Trace file; with --sweep, a directory for one trace per seed.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Steps at which to snapshot every correct server's dag, e.g. 5,10.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<u64>>,
        /// Run this many consecutive seeds on parallel threads.
        #[arg(long)]
        sweep: Option<u64>,
    },
    /// Run property checkers over a trace.
    Check {
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated subset of ppl, brb, conv, digest, refs, net.
        #[arg(long, value_delimiter = ',')]
        props: Option<Vec<String>>,
    },
    /// Render the final dags in a trace as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only this server's dag.
        #[arg(long)]
        server: Option<u32>,
    },
    /// Count wire envelopes against materialized protocol messages.
    Census {
        #[arg(long)]
        trace: PathBuf,
    },
}

enum Failure {
    Violations,
    Usage(String),
    Io(PathBuf, io::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Violations => 1,
            Failure::Usage(_) => 2,
            Failure::Io(..) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(path.to_path_buf(), e)
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_trace(path: &Path) -> Result<Trace, Failure> {
    let file = File::open(path).map_err(io_err(path))?;
    Trace::read_jsonl(BufReader::new(file)).map_err(|e| match e {
        TraceError::Io(e) => Failure::Io(path.to_path_buf(), e),
        parse => Failure::Usage(format!("{}: {parse}", path.display())),
    })
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn simulate(sc: &Scenario) -> Result<SimOutput, Failure> {
    simnet::run(sc).map_err(|e| Failure::Usage(format!("scenario: {e}")))
}

/// `trace.jsonl` becomes `trace.s1.step10.dot` or `trace.s1.final.dot`.
fn snapshot_path(out: &Path, server: ServerId, step: u64, is_final: bool) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let which = if is_final { "final".to_string() } else { format!("step{step}") };
    out.with_file_name(format!("{stem}.{server}.{which}.dot"))
}

fn summary(out: &SimOutput) -> String {
    let c = message_census(&out.trace);
    let delivered: usize = out.delivered.values().map(Vec::len).sum();
    format!(
        "blocks {} | envelopes {} (BLOCK {}, FWD {}) | indications {} | steps {}{}",
        c.correct_blocks,
        c.wire_envelopes(),
        c.block_envelopes,
        c.fwd_envelopes,
        delivered,
        out.steps,
        if out.drained { "" } else { " | drain incomplete" }
    )
}

fn cmd_run(
    scenario: &Path,
    out: &Path,
    seed: Option<u64>,
    snapshots: Option<Vec<u64>>,
    sweep: Option<u64>,
) -> Result<(), Failure> {
    let mut sc = read_scenario(scenario)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    if let Some(steps) = snapshots {
        sc.snapshot_steps = steps;
    }
    sc.validate().map_err(|e| Failure::Usage(format!("scenario: {e}")))?;

    if let Some(count) = sweep {
        fs::create_dir_all(out).map_err(io_err(out))?;
        let scenarios: Vec<Scenario> =
            (0..count).map(|i| Scenario { seed: sc.seed.wrapping_add(i), ..sc.clone() }).collect();
        let outputs: Vec<SimOutput> = std::thread::scope(|s| {
            let handles: Vec<_> = scenarios.iter().map(|sc| s.spawn(move || simulate(sc))).collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread")).collect::<Result<_, _>>()
        })?;
        for (sc, o) in scenarios.iter().zip(&outputs) {
            let path = out.join(format!("seed-{}.jsonl", sc.seed));
            write_file(&path, |w| o.trace.write_jsonl(w))?;
            println!("seed {}: {}", sc.seed, summary(o));
        }
        return Ok(());
    }

    let o = simulate(&sc)?;
    write_file(out, |w| o.trace.write_jsonl(w))?;
    if !sc.snapshot_steps.is_empty() {
        for e in &o.trace.events {
            if let TraceEvent::Snapshot { step, server, is_final, blocks } = e {
                let nodes: Vec<_> = blocks.iter().map(|b| b.dot_node()).collect();
                let path = snapshot_path(out, *server, *step, *is_final);
                write_file(&path, |w| w.write_all(dagbft_core::dot::render(&nodes).as_bytes()))?;
            }
        }
    }
    println!("{}", summary(&o));
    Ok(())
}

fn cmd_check(trace: &Path, props: Option<Vec<String>>) -> Result<(), Failure> {
    let props = match props {
        None => Property::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| Property::parse(n.trim()).ok_or_else(|| Failure::Usage(format!("unknown property {n:?}"))))
            .collect::<Result<_, _>>()?,
    };
    let t = read_trace(trace)?;
    if t.is_empty() {
        println!("empty trace: every property holds vacuously");
        return Ok(());
    }
    let mut dirty = false;
    for p in props {
        let r = check::check(&t, p);
        dirty |= !r.is_clean();
        println!("{r}");
    }
    if dirty {
        Err(Failure::Violations)
    } else {
        Ok(())
    }
}

fn cmd_export_dot(trace: &Path, out: &Path, server: Option<u32>) -> Result<(), Failure> {
    let t = read_trace(trace)?;
    let dot = t
        .to_dot(server.map(ServerId))
        .ok_or_else(|| Failure::Usage(format!("{}: no blocks to render", trace.display())))?;
    write_file(out, |w| w.write_all(dot.as_bytes()))
}

fn cmd_census(trace: &Path) -> Result<(), Failure> {
    println!("{}", message_census(&read_trace(trace)?));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, seed, snapshots, sweep } => cmd_run(&scenario, &out, seed, snapshots, sweep),
        Command::Check { trace, props } => cmd_check(&trace, props),
        Command::ExportDot { trace, out, server } => cmd_export_dot(&trace, &out, server),
        Command::Census { trace } => cmd_census(&trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Violations => {}
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Io(path, e) => eprintln!("error: {}: {e}", path.display()),
            }
            ExitCode::from(f.code())
        }
    }
}
