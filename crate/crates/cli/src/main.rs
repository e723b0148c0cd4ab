use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pseudomarket::demand::{from_units, student_demand};
use pseudomarket::engine::{assign_budgets, tie_break_rank, EngineConfig};
use pseudomarket::experiment::{
    load_prices, run_experiment, run_mechanism, save_prices, sweep, ExperimentPlan, InstanceSource, Mechanism,
    SweepAxis,
};
use pseudomarket::instance::{
    load_allocation, load_instance, load_reserves, save_allocation, save_instance, save_reserves, Allocation,
    AllocationFile, Instance, PriorityMode,
};
use pseudomarket::mechanisms::optimal_reserves_fixed;
use pseudomarket::metrics::{
    check_priority_efficiency, check_stability, compare, envy_profile, over_enrollment_histogram,
    price_statistics_at, priority_violations, priority_violations_fractional, Comparison, EfficiencyVerdict,
};
use pseudomarket::reserves::{adjust_reserves, infeasible_courses};
use pseudomarket::synthgen::GeneratorConfig;

#[derive(Parser)]
#[command(name = "pmp", version, about = "Course allocation with priority-specific prices")]
struct Cli {
    /// TOML config: generator settings for `gen`, an experiment plan for
    /// `run all` and `sweep`, engine settings for single runs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory for multi-file commands.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance.
    Gen(GenArgs),
    /// Run one mechanism on an instance, or `all` for an experiment plan.
    Run(RunArgs),
    /// Repeat an experiment over values of one generator parameter.
    Sweep(SweepArgs),
    /// Evaluate an allocation.
    Metrics(MetricsArgs),
    /// Reserve feasibility, adjustment and estimation.
    #[command(subcommand)]
    Reserves(ReservesCommand),
    /// Demand queries.
    #[command(subcommand)]
    Demand(DemandCommand),
}

#[derive(Args)]
struct GenArgs {
    /// Population ratio relative to the full university.
    #[arg(long)]
    scale: Option<f64>,
    /// Courses in each student's choice set.
    #[arg(long)]
    choice_set: Option<usize>,
    /// Standard deviation of the idiosyncratic utility term.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    priority_mode: Option<ModeArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hybrid,
    DepartmentFirst,
    Flat,
}

impl From<ModeArg> for PriorityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Hybrid => PriorityMode::Hybrid,
            ModeArg::DepartmentFirst => PriorityMode::DepartmentFirst,
            ModeArg::Flat => PriorityMode::Flat,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Mechanism name, or `all` to run the experiment plan.
    mechanism: String,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    bbar: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    out_alloc: Option<PathBuf>,
    #[arg(long)]
    out_prices: Option<PathBuf>,
    /// Reserve file for `rsd-optimal` (estimated from the instance if absent).
    #[arg(long)]
    reserves: Option<PathBuf>,
    /// Environments used to estimate optimal reserves.
    #[arg(long)]
    envs: Option<usize>,
    /// Number of seeds for `run all`, starting at `--seed`.
    #[arg(long)]
    seeds: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    seeds: Option<u64>,
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    s.parse().map_err(|e: pseudomarket::Error| e.to_string())
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Stability,
    Efficiency,
    Envy,
    Violations,
    Prices,
    Compare,
    All,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, value_enum)]
    report: Report,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    alloc: PathBuf,
    /// Second allocation for `compare`.
    #[arg(long)]
    against: Option<PathBuf>,
    /// Price table for `prices`.
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    bbar: Option<f64>,
    /// Output file (a directory for `all`); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReservesCommand {
    /// List courses whose reserves cannot seat their holders.
    Check {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        alloc: PathBuf,
    },
    /// Lower reserves until every course is feasible and log the changes.
    Adjust {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        alloc: PathBuf,
        /// Change-log CSV; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Adjusted reserve file.
        #[arg(long)]
        out_reserves: Option<PathBuf>,
    },
    /// Estimate reserves from simulated acceptance runs.
    Optimal {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 100)]
        envs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DemandCommand {
    /// Print one student's optimal schedule at given prices.
    Eval {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        student: String,
        /// Budget; drawn from the seeded ranking if absent.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        bbar: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Ok(false) when a run finished but did not certify.
fn dispatch(cli: Cli) -> Result<bool> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Gen(args) => gen(&cli, args).map(|()| true),
        Command::Run(args) if args.mechanism == "all" => run_all(&cli, args),
        Command::Run(args) => run_one(&cli, args),
        Command::Sweep(args) => run_sweep(&cli, args),
        Command::Metrics(args) => metrics(&cli, args).map(|()| true),
        Command::Reserves(cmd) => reserves(&cli, cmd),
        Command::Demand(cmd) => demand(&cli, cmd).map(|()| true),
    }
}

fn read_config(cli: &Cli) -> Result<Option<String>> {
    cli.config
        .as_ref()
        .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn gen(cli: &Cli, args: &GenArgs) -> Result<()> {
    let mut cfg = match read_config(cli)? {
        Some(text) => GeneratorConfig::from_toml(&text)?,
        None => GeneratorConfig::default(),
    };
    if let Some(x) = args.scale {
        cfg.scale = x;
    }
    if let Some(x) = args.choice_set {
        cfg.model.choice_set_size = x;
    }
    if let Some(x) = args.sigma {
        cfg.model.sigma = x;
    }
    if let Some(m) = args.priority_mode {
        cfg.population.priority_mode = m.into();
    }
    let instance = cfg.instance(cli.seed.unwrap_or(0))?;
    save_instance(&instance, &args.out)?;
    eprintln!(
        "{} students, {} courses, {} reserve specs -> {}",
        instance.num_students(),
        instance.num_courses(),
        instance.reserves().len(),
        args.out.display()
    );
    Ok(())
}

fn engine_config(cli: &Cli, beta: Option<f64>, bbar: Option<f64>, max_rounds: Option<usize>) -> Result<EngineConfig> {
    let mut cfg: EngineConfig = match read_config(cli)? {
        Some(text) => toml::from_str(&text).context("parsing engine config")?,
        None => EngineConfig::default(),
    };
    if let Some(x) = beta {
        cfg.beta = x;
    }
    if let Some(x) = bbar {
        cfg.bbar = x;
    }
    if let Some(x) = max_rounds {
        cfg.max_rounds = x;
    }
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    Ok(cfg)
}

fn run_one(cli: &Cli, args: &RunArgs) -> Result<bool> {
    let mechanism: Mechanism = args.mechanism.parse()?;
    let path = args.instance.as_ref().context("--instance is required")?;
    let instance = load_instance(path)?;
    let config = engine_config(cli, args.beta, args.bbar, args.max_rounds)?;
    let seed = config.seed;
    let optimal = if mechanism == Mechanism::RsdOptimal {
        Some(match &args.reserves {
            Some(p) => load_reserves(&instance, p)?,
            None => optimal_reserves_fixed(&instance, args.envs.unwrap_or(100), seed)?,
        })
    } else {
        None
    };
    let run = run_mechanism(mechanism, &instance, &config, seed, optimal.as_deref())?;
    match &args.out_alloc {
        Some(p) => save_allocation(&instance, &run.outcome, p)?,
        None => write_outcome(&instance, &run.outcome, io::stdout().lock())?,
    }
    if let Some(eq) = &run.equilibrium {
        if let Some(p) = &args.out_prices {
            save_prices(&instance, eq, p)?;
        }
        eprintln!(
            "{mechanism}: error {:.4} (bound {:.4}), {} restarts, {}",
            eq.error,
            eq.bound,
            eq.trace.restarts,
            if eq.certified { "certified" } else { "NOT certified" }
        );
    } else if args.out_prices.is_some() {
        bail!("{mechanism} has no prices");
    }
    Ok(run.completed())
}

fn write_outcome(instance: &Instance, outcome: &AllocationFile, out: impl Write) -> Result<()> {
    let rows: Vec<(usize, usize, f64)> = match outcome {
        AllocationFile::Deterministic(a) => (0..a.num_students())
            .flat_map(|s| a.schedule(s).iter().map(move |&c| (s, c, 1.0)))
            .collect(),
        AllocationFile::Fractional(f) => f
            .shares
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().map(move |&(c, x)| (s, c, x)))
            .collect(),
    };
    pseudomarket::instance::write_allocation(instance, rows, out)?;
    Ok(())
}

fn load_plan(cli: &Cli) -> Result<ExperimentPlan> {
    Ok(match read_config(cli)? {
        Some(text) => ExperimentPlan::from_toml(&text)?,
        None => ExperimentPlan::default(),
    })
}

fn apply_seeds(cli: &Cli, plan: &mut ExperimentPlan, count: Option<u64>) {
    let first = cli.seed.unwrap_or_else(|| plan.seeds.first().copied().unwrap_or(0));
    if cli.seed.is_some() || count.is_some() {
        let n = count.unwrap_or(plan.seeds.len() as u64);
        plan.seeds = (first..first + n).collect();
    }
}

fn run_all(cli: &Cli, args: &RunArgs) -> Result<bool> {
    let mut plan = load_plan(cli)?;
    if let Some(p) = &args.instance {
        plan.source = InstanceSource::File(p.clone());
    }
    if let Some(x) = args.beta {
        plan.engine.beta = x;
    }
    if let Some(x) = args.bbar {
        plan.engine.bbar = x;
    }
    if let Some(x) = args.max_rounds {
        plan.engine.max_rounds = x;
    }
    if let Some(x) = args.envs {
        plan.optimal_envs = x;
    }
    apply_seeds(cli, &mut plan, args.seeds);
    let summary = run_experiment(&plan, &cli.out_dir)?;
    eprintln!(
        "plan {}: {} runs, {} failed seeds -> {}",
        summary.plan_hash,
        summary.metrics.len(),
        summary.failures.len(),
        cli.out_dir.display()
    );
    Ok(summary.all_completed)
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> Result<bool> {
    let mut plan = load_plan(cli)?;
    apply_seeds(cli, &mut plan, args.seeds);
    let points = sweep(&plan, args.axis, &args.values, &cli.out_dir)?;
    Ok(points.iter().all(|p| p.summary.all_completed))
}

fn csv_out(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn deterministic<'a>(outcome: &'a AllocationFile, report: &str) -> Result<&'a Allocation> {
    match outcome {
        AllocationFile::Deterministic(a) => Ok(a),
        AllocationFile::Fractional(_) => bail!("the {report} report needs a deterministic allocation"),
    }
}

fn metrics(cli: &Cli, args: &MetricsArgs) -> Result<()> {
    let instance = load_instance(&args.instance)?;
    let outcome = load_allocation(&instance, &args.alloc)?;
    if args.report == Report::All {
        let dir = args.out.clone().unwrap_or_else(|| cli.out_dir.clone());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for report in [Report::Stability, Report::Efficiency, Report::Envy, Report::Violations] {
            let name = report.to_possible_value().expect("named").get_name().to_string();
            write_report(cli, args, report, &instance, &outcome, Some(&dir.join(format!("{name}.csv"))))?;
        }
        if args.prices.is_some() {
            write_report(cli, args, Report::Prices, &instance, &outcome, Some(&dir.join("prices.csv")))?;
        }
        if args.against.is_some() {
            write_report(cli, args, Report::Compare, &instance, &outcome, Some(&dir.join("compare.csv")))?;
        }
        return Ok(());
    }
    write_report(cli, args, args.report, &instance, &outcome, args.out.as_deref())
}

fn ids(instance: &Instance, courses: &[usize]) -> String {
    courses
        .iter()
        .map(|&c| instance.course(c).id.as_str())
        .collect::<Vec<_>>()
        .join(";")
}

fn write_report(
    cli: &Cli,
    args: &MetricsArgs,
    report: Report,
    instance: &Instance,
    outcome: &AllocationFile,
    out: Option<&Path>,
) -> Result<()> {
    let mut w = csv_out(out)?;
    match report {
        Report::Stability => {
            let st = check_stability(instance, deterministic(outcome, "stability")?);
            w.write_record(["kind", "student_id", "course_ids", "gain"])?;
            for &c in &st.oversized {
                w.write_record(["oversized", "", &instance.course(c).id, ""])?;
            }
            for &(s, c) in &st.irrational {
                w.write_record(["irrational", &instance.student(s).id, &instance.course(c).id, ""])?;
            }
            for b in &st.blocks {
                w.write_record([
                    "block",
                    &instance.student(b.student).id,
                    &ids(instance, &b.schedule),
                    &b.gain.to_string(),
                ])?;
            }
        }
        Report::Efficiency => {
            let verdict = check_priority_efficiency(instance, deterministic(outcome, "efficiency")?);
            w.write_record(["verdict", "detail"])?;
            match verdict {
                EfficiencyVerdict::Efficient => w.write_record(["efficient", ""])?,
                EfficiencyVerdict::Skipped { candidates } => {
                    w.write_record(["skipped", &format!("{candidates} candidates")])?
                }
                EfficiencyVerdict::Dominated(better) => {
                    w.write_record(["dominated", ""])?;
                    for s in 0..better.num_students() {
                        w.write_record(["student", &format!("{}:{}", instance.student(s).id, ids(instance, better.schedule(s)))])?;
                    }
                }
            }
        }
        Report::Envy => {
            let profile = envy_profile(instance, deterministic(outcome, "envy")?);
            let total = profile.histogram.iter().sum::<usize>().max(1) as f64;
            w.write_record(["depth", "students", "share"])?;
            for (d, &n) in profile.histogram.iter().enumerate() {
                w.write_record([d.to_string(), n.to_string(), (n as f64 / total).to_string()])?;
            }
        }
        Report::Violations => {
            let (v, counts) = match outcome {
                AllocationFile::Deterministic(a) => {
                    (priority_violations(instance, a), a.enrollment(instance.num_courses()))
                }
                AllocationFile::Fractional(f) => (
                    priority_violations_fractional(instance, f),
                    f.column_sums(instance.num_courses()).iter().map(|x| x.round() as u32).collect(),
                ),
            };
            w.write_record(["statistic", "value"])?;
            w.write_record(["violation_share".to_string(), v.share.to_string()])?;
            for (j, share) in over_enrollment_histogram(instance, &counts).iter().enumerate() {
                w.write_record([format!("over_enrolled_ge_{}", j + 1), share.to_string()])?;
            }
            for &s in &v.students {
                w.write_record(["violated_student", &instance.student(s).id])?;
            }
        }
        Report::Prices => {
            let alloc = deterministic(outcome, "prices")?;
            let path = args.prices.as_ref().context("--prices is required for the prices report")?;
            let config = engine_config(cli, None, args.bbar, None)?;
            let schedule = config.price_schedule(instance);
            let t = load_prices(instance, schedule, path)?;
            let stats = price_statistics_at(instance, alloc, schedule, &t);
            w.write_record(["table", "year", "level", "value"])?;
            for (r, &n) in stats.cutoff_histogram.iter().enumerate() {
                w.write_record(["courses_at_cutoff", "", &(r + 1).to_string(), &n.to_string()])?;
            }
            for (r, p) in stats.mean_cutoff_price.iter().enumerate() {
                if let Some(p) = p {
                    w.write_record(["mean_cutoff_price", "", &(r + 1).to_string(), &p.to_string()])?;
                }
            }
            for (y, row) in stats.paid_by_year.iter().enumerate() {
                for (n, &count) in row.iter().enumerate() {
                    w.write_record(["students_paying_for", &(y + 1).to_string(), &n.to_string(), &count.to_string()])?;
                }
            }
        }
        Report::Compare => {
            let path = args.against.as_ref().context("--against is required for the compare report")?;
            let other = load_allocation(instance, path)?;
            let cmp = compare_files(instance, outcome, &other);
            w.write_record([
                "year",
                "students",
                "prefer_a",
                "prefer_b",
                "indifferent",
                "mean_relative_gain",
                "sd_a",
                "sd_b",
                "sd_change_pct",
            ])?;
            let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            for y in std::iter::once(&cmp.overall).chain(&cmp.by_year) {
                w.write_record([
                    if y.year == 0 { "all".to_string() } else { y.year.to_string() },
                    y.students.to_string(),
                    y.prefer_a.to_string(),
                    y.prefer_b.to_string(),
                    y.indifferent.to_string(),
                    opt(y.mean_relative_gain),
                    y.sd_a.to_string(),
                    y.sd_b.to_string(),
                    opt(y.sd_change_pct),
                ])?;
            }
        }
        Report::All => unreachable!("expanded by the caller"),
    }
    w.flush()?;
    Ok(())
}

fn compare_files(instance: &Instance, a: &AllocationFile, b: &AllocationFile) -> Comparison {
    use AllocationFile::{Deterministic as D, Fractional as F};
    match (a, b) {
        (D(x), D(y)) => compare(instance, x, y),
        (D(x), F(y)) => compare(instance, x, y),
        (F(x), D(y)) => compare(instance, x, y),
        (F(x), F(y)) => compare(instance, x, y),
    }
}

fn reserves(cli: &Cli, cmd: &ReservesCommand) -> Result<bool> {
    match cmd {
        ReservesCommand::Check { instance, alloc } => {
            let instance = load_instance(instance)?;
            let outcome = load_allocation(&instance, alloc)?;
            let bad = infeasible_courses(&instance, deterministic(&outcome, "reserve check")?);
            let mut out = io::stdout().lock();
            writeln!(out, "course_id")?;
            for c in &bad {
                writeln!(out, "{}", instance.course(*c).id)?;
            }
            Ok(bad.is_empty())
        }
        ReservesCommand::Adjust {
            instance,
            alloc,
            out,
            out_reserves,
        } => {
            let instance = load_instance(instance)?;
            let outcome = load_allocation(&instance, alloc)?;
            let (adjusted, log) = adjust_reserves(&instance, deterministic(&outcome, "reserve adjustment")?);
            let mut w = csv_out(out.as_deref())?;
            w.write_record(["course_id", "spec_index", "old_seats", "new_seats"])?;
            for ch in &log {
                w.write_record([
                    instance.course(ch.course).id.clone(),
                    ch.spec_index.to_string(),
                    ch.old_seats.to_string(),
                    ch.new_seats.to_string(),
                ])?;
            }
            w.flush()?;
            if let Some(p) = out_reserves {
                save_reserves(&instance, &adjusted, p)?;
            }
            Ok(true)
        }
        ReservesCommand::Optimal { instance, envs, out } => {
            let instance = load_instance(instance)?;
            let specs = optimal_reserves_fixed(&instance, *envs, cli.seed.unwrap_or(0))?;
            save_reserves(&instance, &specs, out)?;
            Ok(true)
        }
    }
}

fn demand(cli: &Cli, cmd: &DemandCommand) -> Result<()> {
    let DemandCommand::Eval {
        instance,
        prices,
        student,
        budget,
        beta,
        bbar,
    } = cmd;
    let instance = load_instance(instance)?;
    let config = engine_config(cli, *beta, *bbar, None)?;
    let schedule = config.price_schedule(&instance);
    let t = load_prices(&instance, schedule, prices)?;
    let s = instance
        .student_by_id(student)
        .with_context(|| format!("unknown student {student}"))?;
    let budget = budget.unwrap_or_else(|| {
        assign_budgets(&tie_break_rank(instance.num_students(), config.seed), config.beta)[s]
    });
    let price = |c: usize| schedule.faced(t[c], instance.level(s, c));
    let chosen = student_demand(instance.utilities().row(s), price, pseudomarket::demand::to_units(budget), instance.k());
    let mut out = io::stdout().lock();
    writeln!(out, "course_id,level,price,utility")?;
    for &c in &chosen {
        writeln!(
            out,
            "{},{},{},{}",
            instance.course(c).id,
            instance.level(s, c),
            from_units(price(c)),
            instance.utility(s, c).unwrap_or(0.0)
        )?;
    }
    let cost: i64 = chosen.iter().map(|&c| price(c)).sum();
    eprintln!(
        "budget {budget:.6}, cost {:.6}, value {:.6}",
        from_units(cost),
        instance.schedule_value(s, &chosen).unwrap_or(0.0)
    );
    Ok(())
}
