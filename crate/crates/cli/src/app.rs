use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rowtag::harness::{fuzz_noninterference, Template};
use rowtag::workload::Workload;
use rowtag::{trace, Controller, TagPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SECURITY: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_COUNTEREXAMPLE: i32 = 4;

/// How many mismatching words `run` lists before summarising.
const MISMATCH_LINES: usize = 20;

#[derive(Parser, Debug)]
#[command(name = "rowtag", version, about = "Row-tagged systolic accelerator simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run a workload file and report its statistics.
    Run {
        file: PathBuf,
        /// Write a per-cycle trace of the array to this file.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Print every counter, not just the cycle count.
        #[arg(long)]
        stats: bool,
    },
    /// Fuzz non-interference over random instances of a workload template.
    Verify {
        #[arg(long)]
        template: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, value_enum, hide = true)]
        mutant: Option<Mutant>,
    },
    /// Run a workload file and write its per-cycle trace.
    Trace {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mutant {
    /// Every tag join returns public.
    TagJoinZero,
}

/// Parse `args` (program name first), execute, and return the exit code.
/// Everything except trace files goes to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Cmd::Run { file, trace_out, stats } => run_file(&file, trace_out.as_deref(), stats, out),
        Cmd::Trace { file, out: path } => run_file(&file, Some(&path), false, out),
        Cmd::Verify {
            template,
            seed,
            trials,
            jobs,
            mutant,
        } => verify(&template, seed, trials, jobs, mutant, out),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(out, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn run_file(path: &Path, trace_out: Option<&Path>, full_stats: bool, out: &mut dyn Write) -> Result<i32, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let workload = Workload::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut mem = workload.build_memory().map_err(|e| e.to_string())?;
    let mut ctl = Controller::new(workload.config);
    if trace_out.is_some() {
        ctl.enable_recording();
    }
    let exec = ctl.run(&workload.commands, &mut mem);
    if let Some(p) = trace_out {
        std::fs::write(p, trace::render(&ctl.take_records())).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| e.to_string());
    if full_stats {
        w(out, exec.stats.to_string())?;
    } else {
        w(out, format!("total_cycles: {}", exec.stats.total_cycles))?;
    }
    if let Some(f) = &exec.fault {
        w(out, format!("fault: {f}"))?;
        return Ok(if f.kind.is_security() {
            EXIT_SECURITY
        } else {
            EXIT_USAGE
        });
    }
    let mismatches = workload.check_expected(&mem);
    if mismatches.is_empty() {
        if workload.expected.is_some() {
            w(out, "expected: match".into())?;
        }
        return Ok(EXIT_OK);
    }
    for m in mismatches.iter().take(MISMATCH_LINES) {
        w(
            out,
            format!(
                "mismatch at {}: expected {:#018x} tag {}, got {:#018x} tag {}",
                m.addr, m.expected.data, m.expected.tag, m.actual.data, m.actual.tag
            ),
        )?;
    }
    w(out, format!("expected: {} mismatching words", mismatches.len()))?;
    Ok(EXIT_MISMATCH)
}

fn verify(
    template: &str,
    seed: u64,
    trials: u64,
    jobs: usize,
    mutant: Option<Mutant>,
    out: &mut dyn Write,
) -> Result<i32, String> {
    let template: Template = template
        .parse()
        .map_err(|e| format!("{e}; known templates: {}", Template::NAMES.join(", ")))?;
    let policy = match mutant {
        None => TagPolicy::Enforce,
        Some(Mutant::TagJoinZero) => TagPolicy::StubPublic,
    };
    let report = fuzz_noninterference(template, seed, trials, jobs, policy).map_err(|e| e.to_string())?;
    write!(out, "{report}").map_err(|e| e.to_string())?;
    Ok(if report.is_clean() {
        EXIT_OK
    } else {
        EXIT_COUNTEREXAMPLE
    })
}
