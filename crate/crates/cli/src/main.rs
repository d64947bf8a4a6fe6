//! `aris-opt`: run the aerial-RIS co-design from the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aris_core::channel::{slot_channels, FadingRealization, LinkModel};
use aris_core::optimizer::{
    alternating_optimize, run_scheme_comparison, sweep_scenarios, AoState, Scheme, SchemeConfig, SweepVariable,
};
use aris_core::validator::{run_invariant_suites, Fault, ValidateOptions};
use aris_core::{Error, Scenario};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "aris-opt", version, about = "Scheduling, RIS phase and 3D trajectory co-design for an aerial-RIS relay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scheme and write trajectory, schedule, phases and convergence CSVs.
    Optimize {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = SchemeArg::Plc)]
        scheme: SchemeArg,
    },
    /// Sweep mission duration (T, seconds) or surface size (M, elements) across schemes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        sweep: SweepArg,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        /// Schemes to run (default: all).
        #[arg(long, value_enum, value_delimiter = ',')]
        scheme: Vec<SchemeArg>,
    },
    /// Run the invariant suites and the toy-instance oracle.
    Validate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo samples per slot.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Random slots in the rate checks.
        #[arg(long, default_value_t = 100)]
        slots: usize,
        /// Skip the exhaustive toy oracle.
        #[arg(long)]
        skip_toy: bool,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML file (default: built-in desk scenario).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario's fading seed; also seeds randomized phase draws.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long = "max-iters", default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Plc,
    Plcfa,
    Dlc,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Plc => Scheme::Plc,
            SchemeArg::Plcfa => Scheme::Plcfa,
            SchemeArg::Dlc => Scheme::Dlc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    #[value(name = "T")]
    T,
    #[value(name = "M")]
    M,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    TaylorSign,
}

enum Failure {
    Config(String),
    Solver(String),
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Invalid { .. } | Error::Unreachable { .. } | Error::Dimension { .. } => {
                Failure::Config(e.to_string())
            }
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut s = match path {
        Some(p) => Scenario::load(p)?,
        None => Scenario::desk(),
    };
    if let Some(seed) = seed {
        s.fading_seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn config(run: &RunArgs, scheme: Scheme) -> Result<SchemeConfig, Failure> {
    let cfg = SchemeConfig {
        epsilon: run.epsilon,
        max_iterations: run.max_iters,
        seed: run.seed.unwrap_or(0),
        ..SchemeConfig::new(scheme)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| io_failure(&path, e))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_optimize_outputs(dir: &Path, s: &Scenario, scheme: Scheme, st: &AoState) -> Result<(), Failure> {
    let fading = FadingRealization::for_scenario(s);
    let chans = slot_channels(s, &st.trajectory, &fading, LinkModel::Probabilistic)?;

    let mut t = String::from("slot,x_m,y_m,h_m,psi1_deg,psi2_deg,plos1,plos2\n");
    for (n, c) in chans.iter().enumerate() {
        let q = st.trajectory.horizontal[n];
        let [a, b] = &c.links;
        writeln!(
            t,
            "{n},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            q.x, q.y, st.trajectory.vertical[n], a.elevation_deg, b.elevation_deg, a.p_los, b.p_los
        )
        .unwrap();
    }
    write_file(dir, "trajectory.csv", &t)?;

    let mut sc = String::from("slot,alpha1,alpha2\n");
    for (n, a) in st.schedule.alpha.iter().enumerate() {
        writeln!(sc, "{n},{:?},{:?}", a[0], a[1]).unwrap();
    }
    write_file(dir, "schedule.csv", &sc)?;

    let cols = s.ris.cols;
    let mut ph = String::from("slot,element_row,element_col,theta_rad\n");
    for (n, v) in st.phases.slots.iter().enumerate() {
        for (m, c) in v.iter().enumerate() {
            let theta = c.arg().rem_euclid(std::f64::consts::TAU);
            writeln!(ph, "{n},{},{},{:?}", m / cols, m % cols, theta).unwrap();
        }
    }
    write_file(dir, "phases.csv", &ph)?;

    let mut cv = String::from("iteration,eta_bpshz\n");
    for (i, e) in st.eta_history.iter().enumerate() {
        writeln!(cv, "{i},{e:?}").unwrap();
    }
    write_file(dir, "convergence.csv", &cv)?;

    let summary = format!(
        "scheme,eta_final,iterations,converged\n{},{:?},{},{}\n",
        scheme, st.eta_final, st.iteration, st.converged
    );
    write_file(dir, "summary.csv", &summary)
}

fn cmd_optimize(run: &RunArgs, scheme: Scheme) -> Result<(), Failure> {
    let s = load_scenario(run.scenario.as_deref(), run.seed)?;
    let cfg = config(run, scheme)?;
    prepare_out(&run.out)?;
    let st = alternating_optimize(&s, &cfg)?;
    write_optimize_outputs(&run.out, &s, scheme, &st)?;
    println!(
        "{scheme}: eta = {:.6} bps/Hz after {} iterations (converged: {}), outputs in {}",
        st.eta_final,
        st.iteration,
        st.converged,
        run.out.display()
    );
    Ok(())
}

fn cmd_sweep(run: &RunArgs, sweep: SweepArg, values: &[f64], schemes: &[SchemeArg]) -> Result<(), Failure> {
    let s = load_scenario(run.scenario.as_deref(), run.seed)?;
    let variable = match sweep {
        SweepArg::T => SweepVariable::Duration,
        SweepArg::M => SweepVariable::Elements,
    };
    let schemes: Vec<Scheme> = if schemes.is_empty() {
        Scheme::ALL.to_vec()
    } else {
        schemes.iter().map(|&k| k.into()).collect()
    };
    let template = config(run, Scheme::Plc)?;
    let points: Vec<(f64, Scenario)> = values.iter().copied().zip(sweep_scenarios(&s, variable, values)?).collect();
    prepare_out(&run.out)?;
    let rows = run_scheme_comparison(&points, &schemes, &template)?;
    let mut out = String::from("sweep_value,scheme,eta_bpshz\n");
    for r in &rows {
        writeln!(out, "{:?},{},{:?}", r.sweep_value, r.scheme, r.eta).unwrap();
        println!("{:>8} {:<6} {:.6}", r.sweep_value, r.scheme, r.eta);
    }
    write_file(&run.out, "sweep.csv", &out)
}

fn cmd_validate(scenario: Option<&Path>, opts: &ValidateOptions) -> Result<(), Failure> {
    let s = load_scenario(scenario, None)?;
    let report = run_invariant_suites(&s, opts)?;
    let mc = &report.monte_carlo;
    if !mc.is_empty() {
        let worst = mc.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
        let mean_se = mc.iter().map(|r| r.std_error).sum::<f64>() / mc.len() as f64;
        println!("monte carlo: {} slots x {} samples, mean std error {mean_se:.3e}, max |z| {worst:.2}", mc.len(), opts.n_samples);
        for (i, r) in mc.iter().take(5).enumerate() {
            println!(
                "  slot {i}: empirical {:.6} closed form {:.6} se {:.2e} z {:+.2}{}",
                r.empirical_mean,
                r.closed_form,
                r.std_error,
                r.z_score,
                r.warning.as_deref().map(|w| format!(" ({w})")).unwrap_or_default()
            );
        }
    }
    if let Some((oracle, ao)) = &report.toy {
        println!("toy oracle: grid optimum {:.6} at waypoints {:?}, altitudes {:?}", oracle.eta, oracle.waypoints.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>(), oracle.altitudes);
        println!("toy oracle: alternating optimization {ao:.6}");
    }
    for c in &report.checks {
        println!("{:<28} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("failed invariants: {}", failed.join(", "))))
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("ARIS_OPT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("ARIS_OPT_THREADS: expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(format!("ARIS_OPT_THREADS: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Optimize { run, scheme } => cmd_optimize(run, (*scheme).into()),
        Command::Sweep {
            run,
            sweep,
            values,
            scheme,
        } => cmd_sweep(run, *sweep, values, scheme),
        Command::Validate {
            scenario,
            seed,
            samples,
            slots,
            skip_toy,
            inject_fault,
        } => cmd_validate(
            scenario.as_deref(),
            &ValidateOptions {
                n_samples: *samples,
                slots: *slots,
                seed: *seed,
                fault: inject_fault.map(|FaultArg::TaylorSign| Fault::TaylorSign),
                run_toy_oracle: !skip_toy,
            },
        ),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("validation failed: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
