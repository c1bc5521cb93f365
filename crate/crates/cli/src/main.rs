use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use euler_align::analysis::VerdictRecord;
use euler_align::dynamics::Trajectory;
use euler_align::pipeline::{convergence_table, Analysis};
use euler_align::report;
use euler_align::scenario::Scenario;

#[derive(Parser)]
#[command(name = "euler-align", version, about = "Cluster prediction and verification for 1D pressureless Euler alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Σ₊/Σ₀/Σ₋ decomposition of the initial flux.
    Classify(Opts),
    /// Classification plus the cluster prediction.
    Predict(Opts),
    /// Particle trajectories and event logs for each N.
    Simulate(Opts),
    /// Simulate and check every prediction against the trajectories.
    Verify(Opts),
    /// Simulate and tabulate W₁ between consecutive N.
    Converge(Opts),
    /// Everything above.
    All(Opts),
    /// List the bundled scenarios.
    List,
}

#[derive(Args)]
struct Opts {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Name of a bundled scenario instead of a file.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the N schedule by a single particle count.
    #[arg(long)]
    n: Option<usize>,
    /// Seed for the random label pairs.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Classify,
    Predict,
    Simulate,
    Verify,
    Converge,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, opts) = match cli.command {
        Command::List => {
            for name in Scenario::bundled_names() {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Classify(o) => (Stage::Classify, o),
        Command::Predict(o) => (Stage::Predict, o),
        Command::Simulate(o) => (Stage::Simulate, o),
        Command::Verify(o) => (Stage::Verify, o),
        Command::Converge(o) => (Stage::Converge, o),
        Command::All(o) => (Stage::All, o),
    };
    match run(stage, &opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(opts: &Opts) -> Result<Scenario> {
    let mut sc = match (&opts.config, &opts.scenario) {
        (Some(path), _) => Scenario::load(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(name)) => Scenario::bundled(name)?,
        (None, None) => bail!("one of --config or --scenario is required"),
    };
    if let Some(n) = opts.n {
        if n == 0 {
            bail!("--n must be positive");
        }
        sc.run.n = vec![n];
    }
    if let Some(seed) = opts.seed {
        sc.run.seed = seed;
    }
    Ok(sc)
}

/// Ok(false) when some verdict failed.
fn run(stage: Stage, opts: &Opts) -> Result<bool> {
    let sc = load(opts)?;
    let out = &opts.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let a = Analysis::new(sc)?;
    write_manifest(out, &a)?;

    report::write_regions(out, &a.regions)?;
    print_regions(&a);
    if stage == Stage::Classify {
        return Ok(true);
    }

    let pred = match &a.prediction {
        Ok(p) => p,
        Err(msg) => bail!("prediction refused: {msg}"),
    };
    report::write_prediction(out, pred)?;
    for r in &pred.records {
        println!("{:<8} {:<22} labels {}{:.6}, {:.6}{}", r.branch.tag(), r.verdict.kind(), if r.closed { "[" } else { "(" }, r.lo, r.hi, if r.closed { "]" } else { ")" });
    }
    if stage == Stage::Predict {
        return Ok(true);
    }

    let trajs = a.simulate_all(&a.scenario.run.n)?;
    for t in &trajs {
        report::write_trajectory(out, t)?;
        report::write_events(out, t)?;
        println!("N={:<5} events={:<5} groups at t={}: {}", t.len(), t.events.len(), t.t_end, t.last().groups.len());
    }
    let mut ok = true;
    if matches!(stage, Stage::Verify | Stage::All) {
        ok = verify(out, &a, &trajs)?;
    }
    if matches!(stage, Stage::Converge | Stage::All) {
        converge(out, &a, &trajs)?;
    }
    Ok(ok)
}

fn verify(out: &Path, a: &Analysis, trajs: &[Trajectory]) -> Result<bool> {
    let v: Vec<VerdictRecord> = a.verify(trajs, a.scenario.run.seed)?;
    report::write_verdicts(out, &v)?;
    let failed: Vec<&VerdictRecord> = v.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        println!("FAIL {} [{}] N={} t={} empirical={} bound={}", r.id, r.theorem, r.n, r.t, r.empirical, r.bound);
    }
    println!("verdicts: {} checked, {} failed", v.len(), failed.len());
    Ok(failed.is_empty())
}

fn converge(out: &Path, a: &Analysis, trajs: &[Trajectory]) -> Result<()> {
    let r = &a.scenario.run;
    let times = if r.converge_times.is_empty() {
        vec![0.25 * r.horizon, 0.5 * r.horizon, r.horizon]
    } else {
        r.converge_times.clone()
    };
    let rows = convergence_table(trajs, &times)?;
    report::write_wasserstein(out, &rows)?;
    for row in &rows {
        println!("W1(t={}, N={} vs {}) = {:.3e}", row.t, row.n, row.n2, row.w1);
    }
    Ok(())
}

fn write_manifest(out: &Path, a: &Analysis) -> Result<()> {
    let sc = &a.scenario;
    let list = |v: &[usize]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ");
    let entries = [
        ("scenario", sc.name.clone()),
        ("branch", sc.branch.clone().unwrap_or_default()),
        ("kernel", sc.protocol.kind.clone()),
        ("model", sc.run.model.clone()),
        ("n", list(&sc.run.n)),
        ("horizon", report::num(sc.run.horizon)),
        ("seed", sc.run.seed.to_string()),
        ("pairs", sc.run.pairs.to_string()),
        ("rtol", report::num(sc.tolerances.rtol)),
        ("merge_eps", report::num(sc.tolerances.merge_eps)),
        ("gap_floor", report::num(sc.tolerances.gap_floor)),
        ("core_fraction", report::num(sc.tolerances.core_fraction)),
        ("a4", a.a4.holds.to_string()),
        ("version", env!("CARGO_PKG_VERSION").to_string()),
    ];
    report::write_manifest(out, &entries)?;
    Ok(())
}

fn print_regions(a: &Analysis) {
    let r = &a.regions;
    let show = |v: &[(f64, f64)], open_left: &str, close: &str| {
        v.iter().map(|(x, y)| format!("{open_left}{x}, {y}{close}")).collect::<Vec<_>>().join(" ∪ ")
    };
    println!("scenario {}", a.scenario.name);
    println!("Σ₊ = {}", show(&r.sigma_plus, "(", "]"));
    println!("Σ₀ = {}", show(&r.sigma_zero, "(", "]"));
    println!("Σ₋ = {}", show(&r.sigma_minus, "(", ")"));
    if !a.a4.holds {
        println!("(A4) fails near labels {:?}", a.a4.witnesses);
    }
}
