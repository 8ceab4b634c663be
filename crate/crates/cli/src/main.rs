use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use upb_locc::analysis::{plot_script, sweep, to_csv, Parity, SweepConfig};
use upb_locc::catalog::Theorem;
use upb_locc::engine::{expected_epr_consumption, EprAccounting};
use upb_locc::format::{read_upb, report_json, write_upb};
use upb_locc::upb::cardinality;
use upb_locc::{build_upb, run_protocol, ProtocolReport, RunOptions, UPBSet};

#[derive(Parser)]
#[command(name = "upb-locc", version, about = "Entanglement-assisted LOCC discrimination of layered UPBs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the UPB of dimension d as a text state file.
    Build {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check cardinality, orthogonality and rank; optionally run the seesaw probe.
    Verify {
        #[arg(long)]
        d: usize,
        /// Verify a state file instead of a fresh construction.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Run the seesaw product-state probe with this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a protocol and write its report.
    Run(RunArgs),
    /// Print the step-by-step branch trace of a protocol.
    Trace(RunArgs),
    /// Tabulate ebit costs over a range of d.
    Sweep {
        #[arg(long)]
        d_min: usize,
        #[arg(long)]
        d_max: usize,
        #[arg(long, value_enum, default_value = "both")]
        parity: ParityArg,
        /// Repeatable; defaults to all six.
        #[arg(long = "theorem")]
        theorems: Vec<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also emit a gnuplot script for the CSV.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        cutoff: usize,
    },
}

#[derive(Args, Serialize)]
struct RunArgs {
    #[arg(long)]
    theorem: String,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParityArg {
    Even,
    Odd,
    Both,
}

impl From<ParityArg> for Parity {
    fn from(p: ParityArg) -> Self {
        match p {
            ParityArg::Even => Parity::Even,
            ParityArg::Odd => Parity::Odd,
            ParityArg::Both => Parity::Both,
        }
    }
}

enum Failure {
    Usage(String),
    Check(String),
    Io(String),
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<upb_locc::Error> for Failure {
    fn from(e: upb_locc::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Build { d, out } => cmd_build(d, out.as_deref()),
        Command::Verify { d, input, seed, out } => cmd_verify(d, input.as_deref(), seed, out.as_deref()),
        Command::Run(args) => cmd_run(&args, false),
        Command::Trace(args) => cmd_run(&args, true),
        Command::Sweep {
            d_min,
            d_max,
            parity,
            theorems,
            csv,
            plot,
            cutoff,
        } => cmd_sweep(d_min, d_max, parity.into(), &theorems, csv.as_deref(), plot.as_deref(), cutoff),
    }
}

fn check_d(d: usize) -> Result<(), Failure> {
    if d < 3 {
        return Err(Failure::Usage("d must be ≥ 3".into()));
    }
    Ok(())
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_build(d: usize, out: Option<&Path>) -> Result<(), Failure> {
    check_d(d)?;
    emit(out, &write_upb(&build_upb(d)?))
}

#[derive(Serialize)]
struct VerifyConfig<'a> {
    d: usize,
    input: Option<String>,
    seed: Option<u64>,
    seesaw_restarts: usize,
    seesaw_iterations: usize,
    source: &'a str,
}

#[derive(Serialize)]
struct Check {
    name: String,
    pass: bool,
    detail: String,
}

const SEESAW_RESTARTS: usize = 100;
const SEESAW_ITERATIONS: usize = 200;
const RANK_LIMIT: usize = 8;

fn cmd_verify(d: usize, input: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    check_d(d)?;
    let reference = build_upb(d)?;
    let set: UPBSet = match input {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
            read_upb(&text).map_err(|e| Failure::Check(format!("{}: {e}", p.display())))?
        }
        None => reference.clone(),
    };
    let mut checks = Vec::new();
    checks.push(Check {
        name: "dimension".into(),
        pass: set.d == d,
        detail: format!("file d = {}, requested d = {d}", set.d),
    });
    let expected = cardinality(d);
    checks.push(Check {
        name: "cardinality".into(),
        pass: set.len() == expected,
        detail: format!("{} states, expected {expected}", set.len()),
    });
    let orth = set.verify_orthogonality();
    checks.push(Check {
        name: "orthogonality".into(),
        pass: orth.pass,
        detail: match orth.worst_pair {
            Some((i, j)) => format!(
                "max normalized overlap {:.3e} between {} and {}",
                orth.max_overlap, set.states[i].label, set.states[j].label
            ),
            None => format!("max normalized overlap {:.3e}", orth.max_overlap),
        },
    });
    if set.d <= RANK_LIMIT && set.d == d {
        let rank = set.span_rank();
        checks.push(Check {
            name: "rank".into(),
            pass: rank == set.len(),
            detail: format!("span rank {rank} for {} states", set.len()),
        });
    }
    if input.is_some() {
        let mismatch = first_mismatch(&set, &reference);
        checks.push(Check {
            name: "construction".into(),
            pass: mismatch.is_none(),
            detail: mismatch.unwrap_or_else(|| "matches build_upb state for state".into()),
        });
    }
    if let (Some(seed), true) = (seed, set.d == d) {
        let best = set.seesaw_unextendibility_probe(SEESAW_RESTARTS, SEESAW_ITERATIONS, seed);
        checks.push(Check {
            name: "seesaw (diagnostic)".into(),
            pass: best < 1.0 - 1e-6,
            detail: format!("best product overlap with the complement {best:.12}"),
        });
    }
    let cfg = VerifyConfig {
        d,
        input: input.map(|p| p.display().to_string()),
        seed,
        seesaw_restarts: SEESAW_RESTARTS,
        seesaw_iterations: SEESAW_ITERATIONS,
        source: if input.is_some() { "file" } else { "construction" },
    };
    emit(out, &report_json("verify", &cfg, &checks)?)?;
    match checks.iter().find(|c| !c.pass) {
        Some(c) => Err(Failure::Check(format!("{}: {}", c.name, c.detail))),
        None => Ok(()),
    }
}

fn first_mismatch(set: &UPBSet, reference: &UPBSet) -> Option<String> {
    for (i, r) in reference.states.iter().enumerate() {
        let Some(s) = set.states.get(i) else {
            return Some(format!("state {} missing", r.label));
        };
        if s.label != r.label {
            return Some(format!("state {i} is {} instead of {}", s.label, r.label));
        }
        let x = upb_locc::tensor::inner_product(&r.state, &s.state).ok()?;
        let fidelity = x.norm_sqr() / (r.state.norm_sqr() * s.state.norm_sqr());
        if (1.0 - fidelity).abs() > upb_locc::TOLERANCE {
            return Some(format!("state {} differs from the construction", r.label));
        }
    }
    None
}

#[derive(Serialize)]
struct RunSummary<'a> {
    passed: bool,
    stages_pass: bool,
    orthogonality_pass: bool,
    labels_pass: bool,
    probabilities_pass: bool,
    unresolved_leaves: usize,
    notes: Vec<&'static str>,
    resource_configuration: &'a str,
    expected_ebits: f64,
    expected_epr_branch_weighted: f64,
    expected_epr_stopper_worst_case: f64,
    report: &'a ProtocolReport,
}

fn cmd_run(args: &RunArgs, trace_only: bool) -> Result<(), Failure> {
    check_d(args.d)?;
    let theorem: Theorem = args.theorem.parse().map_err(|e: upb_locc::Error| Failure::Usage(e.to_string()))?;
    if !theorem.supports(args.d) {
        return Err(Failure::Usage(format!("{theorem} requires d = 3")));
    }
    let protocol = theorem.build(args.d)?;
    let upb = build_upb(args.d)?;
    let trace = args.trace || trace_only;
    let report = run_protocol(&protocol, &upb, RunOptions { finisher: true, trace })?;
    let unresolved = report.unresolved_leaves().len();
    let passed = report.passed() && unresolved == 0;
    if trace_only {
        let mut text = report.trace.join("\n");
        text.push('\n');
        emit(args.out.as_deref(), &text)?;
    } else {
        let summary = RunSummary {
            passed,
            stages_pass: report.stages_pass(),
            orthogonality_pass: report.orthogonality_pass(),
            labels_pass: report.labels_pass(),
            probabilities_pass: report.probabilities_pass(),
            unresolved_leaves: unresolved,
            notes: theorem.notes(),
            resource_configuration: &report.ledger.configuration,
            expected_ebits: report.ledger.expected_ebits,
            expected_epr_branch_weighted: expected_epr_consumption(&report, EprAccounting::BranchWeighted),
            expected_epr_stopper_worst_case: expected_epr_consumption(&report, EprAccounting::StopperWorstCase),
            report: &report,
        };
        let json = report_json("run", args, &summary)?;
        match &args.out {
            Some(p) => {
                emit(Some(p), &json)?;
                println!(
                    "{theorem} d={}: {} ledger {} = {:.6} ebits",
                    args.d,
                    if passed { "pass" } else { "FAIL" },
                    report.ledger.configuration,
                    report.ledger.expected_ebits
                );
            }
            None => emit(None, &json)?,
        }
    }
    if passed {
        Ok(())
    } else {
        let first = report
            .stage_checks
            .iter()
            .find(|s| !s.pass())
            .map(|s| s.to_string())
            .or_else(|| report.orthogonality_violations.first().map(|v| format!("{v:?}")))
            .or_else(|| report.label_violations.first().map(|v| format!("{v:?}")))
            .or_else(|| report.probability_violations.first().cloned())
            .or_else(|| report.unresolved_leaves().first().map(|l| format!("unresolved leaf at {}", l.path)))
            .unwrap_or_default();
        Err(Failure::Check(format!("{theorem} d={}: {first}", args.d)))
    }
}

fn cmd_sweep(
    d_min: usize,
    d_max: usize,
    parity: Parity,
    theorems: &[String],
    csv: Option<&Path>,
    plot: Option<&Path>,
    cutoff: usize,
) -> Result<(), Failure> {
    check_d(d_min)?;
    if d_min > d_max {
        return Err(Failure::Usage(format!("empty range [{d_min}, {d_max}]")));
    }
    let theorems: Vec<Theorem> = if theorems.is_empty() {
        Theorem::ALL.to_vec()
    } else {
        theorems
            .iter()
            .map(|t| t.parse())
            .collect::<Result<_, upb_locc::Error>>()
            .map_err(|e| Failure::Usage(e.to_string()))?
    };
    let cfg = SweepConfig {
        d_min,
        d_max,
        parity,
        theorems,
        cutoff,
    };
    let rows = sweep(&cfg)?;
    if rows.is_empty() {
        return Err(Failure::Usage("range contains no admissible d".into()));
    }
    emit(csv, &to_csv(&rows))?;
    if let Some(p) = plot {
        let name = csv
            .and_then(|c| c.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sweep.csv".into());
        emit(Some(p), &plot_script(&name, &rows))?;
    }
    Ok(())
}
