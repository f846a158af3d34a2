use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use hetsim::dwe::Requant;
use hetsim::harness::bench::{self, checks_report, hci_duty_table, run_suites, worker_cap, Suite};
use hetsim::harness::scenario::hex;
use hetsim::harness::{run_oracle, run_scenario, MetricsReport, OracleKernel, OracleOpts, Scenario};
use hetsim::workloads::Tensor;
use hetsim::SimError;

const EXIT_VALIDATION: u8 = 1;
const EXIT_TIMEOUT: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "hetsim", version, about = "Cycle-stepped heterogeneous cluster simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Lines,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenario files (independent files run on parallel workers).
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Write the final L1 image (single scenario only).
        #[arg(long)]
        l1_out: Option<PathBuf>,
        /// Write the final L2 image (single scenario only).
        #[arg(long)]
        l2_out: Option<PathBuf>,
    },
    /// Run a benchmark suite, or `all`.
    Bench {
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "lines")]
        format: Format,
        /// MobileNetV2 input resolution (the suite default is 128).
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Compute golden outputs from tensor files.
    Oracle {
        kernel: String,
        #[arg(required = true)]
        tensors: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        shift: u8,
        #[arg(long)]
        relu: bool,
        #[arg(long, default_value_t = 0)]
        pad: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Pretty-print a saved metrics report.
    Report {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn render(r: &MetricsReport, f: Format) -> String {
    match f {
        Format::Table => r.render_table(),
        Format::Lines => r.render_lines(),
    }
}

fn fail(e: SimError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        SimError::Timeout(_) => ExitCode::from(EXIT_TIMEOUT),
        _ => ExitCode::from(EXIT_VALIDATION),
    }
}

fn cmd_run(files: &[PathBuf], format: Format, l1: Option<PathBuf>, l2: Option<PathBuf>) -> Result<ExitCode, SimError> {
    if files.len() > 1 && (l1.is_some() || l2.is_some()) {
        return Err(SimError::Validation("memory image output needs a single scenario".into()));
    }
    let scenarios = files.iter().map(|f| Scenario::load(f)).collect::<Result<Vec<_>, _>>()?;
    let workers = worker_cap().min(scenarios.len());
    let mut outcomes: Vec<Option<Result<_, SimError>>> = (0..scenarios.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        for (chunk, outs) in scenarios.chunks(scenarios.len().div_ceil(workers)).zip(outcomes.chunks_mut(scenarios.len().div_ceil(workers))) {
            s.spawn(move || {
                for (sc, o) in chunk.iter().zip(outs) {
                    *o = Some(run_scenario(sc));
                }
            });
        }
    });
    let mut timed_out = false;
    let mut stdout = std::io::stdout().lock();
    for o in outcomes {
        let o = o.expect("scenario ran")?;
        timed_out |= o.timed_out;
        let _ = stdout.write_all(render(&o.report, format).as_bytes());
        if let Some(p) = &l1 {
            std::fs::write(p, &o.l1)?;
        }
        if let Some(p) = &l2 {
            std::fs::write(p, &o.l2)?;
        }
    }
    if timed_out {
        eprintln!("error: scenario exceeded max_cycles (partial report above)");
        return Ok(ExitCode::from(EXIT_TIMEOUT));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(suite: &str, seed: u64, format: Format, resolution: Option<usize>) -> Result<ExitCode, SimError> {
    let suites: Vec<Suite> = if suite == "all" { Suite::ALL.to_vec() } else { vec![suite.parse()?] };
    let results: Vec<(Suite, Result<Vec<bench::Check>, SimError>)> = match resolution {
        Some(res) if suites == [Suite::MobileNet] => vec![(Suite::MobileNet, bench::bench_mobilenet_at(seed, res))],
        Some(_) => return Err(SimError::Validation("--resolution applies to the mobilenet suite only".into())),
        None => run_suites(&suites, seed, worker_cap()),
    };
    let mut failed = false;
    let mut stdout = std::io::stdout().lock();
    for (s, r) in results {
        let checks = r?;
        failed |= checks.iter().any(|c| !c.pass());
        let mut report = checks_report(s, &checks);
        if s == Suite::Hci {
            report.records.extend(hci_duty_table(22)?);
        }
        let _ = stdout.write_all(render(&report, format).as_bytes());
    }
    Ok(if failed { ExitCode::from(EXIT_ACCEPTANCE) } else { ExitCode::SUCCESS })
}

fn cmd_oracle(kernel: &str, tensors: &[PathBuf], opts: OracleOpts, out: Option<PathBuf>) -> Result<ExitCode, SimError> {
    let kernel: OracleKernel = kernel.parse()?;
    let inputs = tensors.iter().map(|p| Tensor::read_file(p)).collect::<Result<Vec<_>, _>>()?;
    let t = run_oracle(kernel, &inputs, &opts)?;
    let bytes = t.to_file_bytes();
    if let Some(p) = &out {
        std::fs::write(p, &bytes)?;
    }
    let dims: Vec<String> = t.spec.dims.iter().map(|d| d.to_string()).collect();
    println!("oracle kernel={kernel} dims={} format={} sha256={}", dims.join("x"), t.spec.format, hex(&Sha256::digest(&bytes)));
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(file: &PathBuf, format: Format) -> Result<ExitCode, SimError> {
    let text = std::fs::read_to_string(file)?;
    let r = MetricsReport::parse(&text)?;
    print!("{}", render(&r, format));
    if let Err(e) = r.check_conservation() {
        eprintln!("warning: {e}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run { files, format, l1_out, l2_out } => cmd_run(&files, format, l1_out, l2_out),
        Cmd::Bench { suite, seed, format, resolution } => cmd_bench(&suite, seed, format, resolution),
        Cmd::Oracle { kernel, tensors, shift, relu, pad, out } => cmd_oracle(&kernel, &tensors, OracleOpts { requant: Requant { shift, relu }, pad }, out),
        Cmd::Report { file, format } => cmd_report(&file, format),
    };
    r.unwrap_or_else(fail)
}
