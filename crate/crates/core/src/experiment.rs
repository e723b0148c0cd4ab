//! Batteries of mechanisms over many seeds on shared draws, with per-seed
//! outputs and aggregate tables.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demand::{from_units, to_units, PriceSchedule};
use crate::engine::{solve_ranked, tie_break_rank, EngineConfig, EquilibriumResult};
use crate::error::{Error, Result};
use crate::instance::{
    load_instance, save_allocation, Allocation, AllocationFile, Instance, ReserveSpec, YEARS,
};
use crate::mechanisms::{
    aceei, course_tie_breaks, da, optimal_reserves, optimal_reserves_fixed, ps_seniority_reserves, rsd,
    seniority_rank, TieBreak,
};
use crate::metrics::{
    check_priority_efficiency, check_stability, compare, envy_profile, expected_utilities,
    over_enrollment_histogram, price_statistics, priority_violations, priority_violations_fractional,
    utility_sd_by_year, Comparison, EfficiencyVerdict, PriceStatistics,
};
use crate::synthgen::{draw_utilities, GeneratorConfig, Population, UtilityModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Pmp,
    /// Serial dictatorship with the instance's own reserves.
    Rsd,
    RsdOptimal,
    DaStb,
    DaMtb,
    DaMinority,
    Aceei,
    AceeiKludgy,
    Ps,
}

impl Mechanism {
    pub const ALL: [Mechanism; 9] = [
        Mechanism::Pmp,
        Mechanism::Rsd,
        Mechanism::RsdOptimal,
        Mechanism::DaStb,
        Mechanism::DaMtb,
        Mechanism::DaMinority,
        Mechanism::Aceei,
        Mechanism::AceeiKludgy,
        Mechanism::Ps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Pmp => "pmp",
            Mechanism::Rsd => "rsd",
            Mechanism::RsdOptimal => "rsd-optimal",
            Mechanism::DaStb => "da-stb",
            Mechanism::DaMtb => "da-mtb",
            Mechanism::DaMinority => "da-minority",
            Mechanism::Aceei => "aceei",
            Mechanism::AceeiKludgy => "aceei-kludgy",
            Mechanism::Ps => "ps",
        }
    }

    pub fn is_market(self) -> bool {
        matches!(self, Mechanism::Pmp | Mechanism::Aceei | Mechanism::AceeiKludgy)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Mechanism::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown mechanism {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Where instances come from: a fixed file (only tie-breaks vary across
/// seeds) or the synthetic generator (utilities and tie-breaks vary, the
/// population is drawn once from `population_seed`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSource {
    Generator(GeneratorConfig),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub source: InstanceSource,
    pub population_seed: u64,
    pub mechanisms: Vec<Mechanism>,
    pub seeds: Vec<u64>,
    pub engine: EngineConfig,
    /// Environments used to estimate optimal reserves.
    pub optimal_envs: usize,
    /// Mechanism the others are compared against.
    pub benchmark: Mechanism,
    /// Run the exhaustive efficiency check (small instances only).
    pub efficiency: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            source: InstanceSource::Generator(GeneratorConfig::default()),
            population_seed: 0,
            mechanisms: vec![
                Mechanism::Pmp,
                Mechanism::RsdOptimal,
                Mechanism::DaStb,
                Mechanism::DaMtb,
            ],
            seeds: (0..10).collect(),
            engine: EngineConfig::default(),
            optimal_envs: 100,
            benchmark: Mechanism::RsdOptimal,
            efficiency: false,
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.mechanisms.is_empty() {
            return Err(Error::Config("a plan needs at least one seed and one mechanism".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.mechanisms.iter().collect::<BTreeSet<_>>().len() != self.mechanisms.len() {
            return Err(Error::Config("mechanisms must be distinct".into()));
        }
        if self.optimal_envs == 0 {
            return Err(Error::Config("optimal_envs must be at least 1".into()));
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the plan's JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(Sha256::digest(bytes))[..12].to_string()
    }

    fn needs_optimal(&self) -> bool {
        self.mechanisms.contains(&Mechanism::RsdOptimal)
    }
}

enum Base {
    Generated {
        population: Population,
        model: UtilityModelParams,
    },
    Fixed(Instance),
}

/// Everything shared by all seeds of a plan.
pub struct Prepared {
    base: Base,
    pub optimal: Option<Vec<ReserveSpec>>,
}

impl Prepared {
    pub fn new(plan: &ExperimentPlan) -> Result<Self> {
        let base = match &plan.source {
            InstanceSource::Generator(cfg) => Base::Generated {
                population: cfg.population(plan.population_seed)?,
                model: cfg.model.clone(),
            },
            InstanceSource::File(path) => Base::Fixed(load_instance(path)?),
        };
        let optimal = if plan.needs_optimal() {
            Some(match &base {
                Base::Generated { population, model } => {
                    optimal_reserves(population, model, plan.optimal_envs, plan.population_seed)?
                }
                Base::Fixed(inst) => optimal_reserves_fixed(inst, plan.optimal_envs, plan.population_seed)?,
            })
        } else {
            None
        };
        Ok(Prepared { base, optimal })
    }

    pub fn instance(&self, seed: u64) -> Result<Instance> {
        match &self.base {
            Base::Generated { population, model } => draw_utilities(population, model, seed),
            Base::Fixed(inst) => Ok(inst.clone()),
        }
    }
}

/// One mechanism's output on one draw.
#[derive(Clone, Debug)]
pub struct MechanismRun {
    pub mechanism: Mechanism,
    pub outcome: AllocationFile,
    pub equilibrium: Option<EquilibriumResult>,
}

impl MechanismRun {
    pub fn allocation(&self) -> Option<&Allocation> {
        match &self.outcome {
            AllocationFile::Deterministic(a) => Some(a),
            AllocationFile::Fractional(_) => None,
        }
    }

    /// Certified for markets, always for the others.
    pub fn completed(&self) -> bool {
        self.equilibrium.as_ref().is_none_or(|e| e.certified)
    }
}

/// Runs `mechanism` on `instance` for `seed`. PMP, serial dictatorship and
/// single tie-break acceptance all use the ranking drawn from `seed`.
pub fn run_mechanism(
    mechanism: Mechanism,
    instance: &Instance,
    engine: &EngineConfig,
    seed: u64,
    optimal: Option<&[ReserveSpec]>,
) -> Result<MechanismRun> {
    let rank = tie_break_rank(instance.num_students(), seed);
    let config = EngineConfig {
        seed,
        ..engine.clone()
    };
    let det = |a: Allocation| AllocationFile::Deterministic(a);
    let (outcome, equilibrium) = match mechanism {
        Mechanism::Pmp => {
            let res = solve_ranked(instance, &config, &rank)?;
            (det(res.allocation.clone()), Some(res))
        }
        Mechanism::Aceei | Mechanism::AceeiKludgy => {
            let res = aceei(instance, &config, mechanism == Mechanism::AceeiKludgy)?;
            (det(res.allocation.clone()), Some(res))
        }
        Mechanism::Rsd => (det(rsd(instance, &seniority_rank(instance, &rank))), None),
        Mechanism::RsdOptimal => {
            let specs = optimal.ok_or_else(|| Error::Config("optimal reserves were not computed".into()))?;
            let with = instance.with_reserves(specs.to_vec())?;
            (det(rsd(&with, &seniority_rank(instance, &rank))), None)
        }
        Mechanism::DaStb => (det(da(instance, &TieBreak::Single(rank), false)), None),
        Mechanism::DaMinority => (det(da(instance, &TieBreak::Single(rank), true)), None),
        Mechanism::DaMtb => {
            let ranks = course_tie_breaks(instance.num_students(), instance.num_courses(), seed);
            (det(da(instance, &TieBreak::Multiple(ranks), false)), None)
        }
        Mechanism::Ps => (AllocationFile::Fractional(ps_seniority_reserves(instance)), None),
    };
    Ok(MechanismRun {
        mechanism,
        outcome,
        equilibrium,
    })
}

/// Statistics of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub mechanism: Mechanism,
    pub seed: u64,
    /// Hash of the utilities and tie-break this run consumed.
    pub draw_hash: String,
    pub completed: bool,
    pub certified: Option<bool>,
    pub clearing_error: Option<f64>,
    pub error_bound: Option<f64>,
    pub restarts: Option<usize>,
    pub mean_utility: f64,
    pub utility_sd_by_year: Vec<f64>,
    pub violation_share: f64,
    /// Share of courses over capacity by at least 1, 2, ..., k seats.
    pub over_enrollment: Vec<f64>,
    /// Blocking students plus irrational holdings and oversized courses.
    pub blocks: Option<usize>,
    pub envy_histogram: Option<Vec<usize>>,
    pub envy_two_or_more: Option<f64>,
    pub efficiency: Option<String>,
    pub prices: Option<PriceStatistics>,
    pub versus_benchmark: Option<Comparison>,
}

/// Hash of the draw shared by the mechanisms of one seed.
pub fn draw_hash(instance: &Instance, seed: u64) -> String {
    let mut h = Sha256::new();
    for s in 0..instance.num_students() {
        for &(c, u) in instance.utilities().row(s) {
            h.update((s as u64).to_le_bytes());
            h.update((c as u64).to_le_bytes());
            h.update(u.to_le_bytes());
        }
    }
    for s in tie_break_rank(instance.num_students(), seed) {
        h.update((s as u64).to_le_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

pub fn run_metrics(
    instance: &Instance,
    run: &MechanismRun,
    seed: u64,
    benchmark: Option<&MechanismRun>,
    efficiency: bool,
) -> RunMetrics {
    let n = instance.num_students().max(1) as f64;
    let (utilities, violations, over, blocks, envy, eff) = match &run.outcome {
        AllocationFile::Deterministic(a) => {
            let envy = envy_profile(instance, a);
            let eff = efficiency.then(|| match check_priority_efficiency(instance, a) {
                EfficiencyVerdict::Efficient => "efficient".to_string(),
                EfficiencyVerdict::Dominated(_) => "dominated".to_string(),
                EfficiencyVerdict::Skipped { .. } => "skipped".to_string(),
            });
            let st = check_stability(instance, a);
            (
                expected_utilities(instance, a),
                priority_violations(instance, a).share,
                over_enrollment_histogram(instance, &a.enrollment(instance.num_courses())),
                Some(st.blocks.len() + st.irrational.len() + st.oversized.len()),
                Some(envy),
                eff,
            )
        }
        AllocationFile::Fractional(f) => {
            let cols = f.column_sums(instance.num_courses());
            let counts: Vec<u32> = cols.iter().map(|&x| x.round() as u32).collect();
            (
                expected_utilities(instance, f),
                priority_violations_fractional(instance, f).share,
                over_enrollment_histogram(instance, &counts),
                None,
                None,
                None,
            )
        }
    };
    let versus_benchmark = benchmark
        .filter(|b| b.mechanism != run.mechanism)
        .map(|b| compare_outcomes(instance, &run.outcome, &b.outcome));
    let eq = run.equilibrium.as_ref();
    RunMetrics {
        mechanism: run.mechanism,
        seed,
        draw_hash: draw_hash(instance, seed),
        completed: run.completed(),
        certified: eq.map(|e| e.certified),
        clearing_error: eq.map(|e| e.error),
        error_bound: eq.map(|e| e.bound),
        restarts: eq.map(|e| e.trace.restarts),
        mean_utility: utilities.iter().sum::<f64>() / n,
        utility_sd_by_year: utility_sd_by_year(instance, &utilities),
        violation_share: violations,
        over_enrollment: over,
        blocks,
        envy_two_or_more: envy.as_ref().map(|e| e.share_at_least(2)),
        envy_histogram: envy.map(|e| e.histogram),
        efficiency: eff,
        prices: eq.map(|e| price_statistics(instance, e)),
        versus_benchmark,
    }
}

fn compare_outcomes(instance: &Instance, a: &AllocationFile, b: &AllocationFile) -> Comparison {
    match (a, b) {
        (AllocationFile::Deterministic(x), AllocationFile::Deterministic(y)) => compare(instance, x, y),
        (AllocationFile::Deterministic(x), AllocationFile::Fractional(y)) => compare(instance, x, y),
        (AllocationFile::Fractional(x), AllocationFile::Deterministic(y)) => compare(instance, x, y),
        (AllocationFile::Fractional(x), AllocationFile::Fractional(y)) => compare(instance, x, y),
    }
}

/// Price table: `course_id,t,cutoff_level,price_at_cutoff,excess`.
pub fn save_prices(instance: &Instance, result: &EquilibriumResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["course_id", "t", "cutoff_level", "price_at_cutoff", "excess"])?;
    for c in 0..instance.num_courses() {
        let r = result.cutoff(c);
        w.write_record([
            instance.course(c).id.clone(),
            from_units(result.t_units[c]).to_string(),
            r.to_string(),
            result.price(c, r).to_string(),
            result.excess[c].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the `t` column of a price table, in course order, as grid units.
pub fn load_prices(instance: &Instance, schedule: PriceSchedule, path: impl AsRef<Path>) -> Result<Vec<i64>> {
    #[derive(Deserialize)]
    struct Row {
        course_id: String,
        t: f64,
    }
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut t: Vec<Option<i64>> = vec![None; instance.num_courses()];
    for row in csv::Reader::from_reader(BufReader::new(file)).deserialize() {
        let row: Row = row?;
        let c = instance
            .course_by_id(&row.course_id)
            .ok_or_else(|| Error::invalid(format!("unknown course id {}", row.course_id)))?;
        if !row.t.is_finite() {
            return Err(Error::invalid(format!("non-finite t for course {}", row.course_id)));
        }
        t[c] = Some(schedule.clamp(to_units(row.t)));
    }
    t.into_iter()
        .enumerate()
        .map(|(c, x)| x.ok_or_else(|| Error::invalid(format!("no price for course {}", instance.course(c).id))))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub plan_hash: String,
    pub metrics: Vec<RunMetrics>,
    pub failures: Vec<SeedFailure>,
    /// Every requested run finished, and every market run certified.
    pub all_completed: bool,
}

impl ExperimentSummary {
    pub fn of(&self, mechanism: Mechanism) -> impl Iterator<Item = &RunMetrics> {
        self.metrics.iter().filter(move |m| m.mechanism == mechanism)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One seed: draw once, run every mechanism on the draw, write allocations,
/// price tables and the seed's metrics.
fn run_seed(
    plan: &ExperimentPlan,
    prepared: &Prepared,
    seed: u64,
    hash: &str,
    out_dir: &Path,
) -> Result<Vec<RunMetrics>> {
    let instance = prepared.instance(seed)?;
    let mut runs = Vec::with_capacity(plan.mechanisms.len());
    for &m in &plan.mechanisms {
        let run = run_mechanism(m, &instance, &plan.engine, seed, prepared.optimal.as_deref())?;
        save_allocation(
            &instance,
            &run.outcome,
            out_dir.join(format!("alloc-{m}-{hash}-s{seed}.csv")),
        )?;
        if let Some(eq) = &run.equilibrium {
            save_prices(&instance, eq, out_dir.join(format!("prices-{m}-{hash}-s{seed}.csv")))?;
            if !eq.certified {
                log::warn!("seed {seed}: {m} did not certify (error {:.3}, bound {:.3})", eq.error, eq.bound);
            }
        }
        runs.push(run);
    }
    let bench = runs.iter().find(|r| r.mechanism == plan.benchmark);
    let metrics: Vec<RunMetrics> = runs
        .iter()
        .map(|r| run_metrics(&instance, r, seed, bench, plan.efficiency))
        .collect();
    write_json(&out_dir.join(format!("metrics-{hash}-s{seed}.json")), &metrics)?;
    Ok(metrics)
}

/// Runs the plan over all seeds in parallel and writes per-seed outputs plus
/// `summary-*.csv`, `preferences-*.csv` and `run-*.json` into `out_dir`.
pub fn run_experiment(plan: &ExperimentPlan, out_dir: impl AsRef<Path>) -> Result<ExperimentSummary> {
    plan.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let hash = plan.hash();
    write_json(&out_dir.join(format!("plan-{hash}.json")), plan)?;
    let prepared = Prepared::new(plan)?;

    let results: Vec<(u64, Result<Vec<RunMetrics>>)> = plan
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(plan, &prepared, seed, &hash, out_dir)))
        .collect();
    let mut metrics = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(m) => metrics.extend(m),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let summary = ExperimentSummary {
        all_completed: failures.is_empty() && metrics.iter().all(|m| m.completed),
        plan_hash: hash.clone(),
        metrics,
        failures,
    };
    write_summary(plan, &summary, &out_dir.join(format!("summary-{hash}.csv")))?;
    write_preferences(plan, &summary, &out_dir.join(format!("preferences-{hash}.csv")))?;
    write_json(
        &out_dir.join(format!("run-{hash}.json")),
        &serde_json::json!({
            "plan_hash": hash,
            "seeds": plan.seeds,
            "all_completed": summary.all_completed,
            "failures": summary.failures,
        }),
    )?;
    Ok(summary)
}

/// Mean and population standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

fn display(mean: f64, sd: f64) -> String {
    format!("{mean:.4} ({sd:.4})")
}

fn write_summary(plan: &ExperimentPlan, summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["mechanism", "metric", "runs", "mean", "sd", "display"])?;
    for &m in &plan.mechanisms {
        let runs: Vec<&RunMetrics> = summary.of(m).collect();
        let mut rows: Vec<(String, Vec<f64>)> = vec![
            ("completed".into(), runs.iter().map(|r| f64::from(u8::from(r.completed))).collect()),
            ("mean_utility".into(), runs.iter().map(|r| r.mean_utility).collect()),
            ("violation_share".into(), runs.iter().map(|r| r.violation_share).collect()),
        ];
        let opt = |name: &str, f: &dyn Fn(&RunMetrics) -> Option<f64>| {
            let xs: Vec<f64> = runs.iter().filter_map(|r| f(r)).collect();
            (!xs.is_empty()).then(|| (name.to_string(), xs))
        };
        rows.extend(opt("clearing_error", &|r| r.clearing_error));
        rows.extend(opt("restarts", &|r| r.restarts.map(|x| x as f64)));
        rows.extend(opt("blocks", &|r| r.blocks.map(|x| x as f64)));
        rows.extend(opt("envy_two_or_more", &|r| r.envy_two_or_more));
        let k = runs.first().map_or(0, |r| r.over_enrollment.len());
        for j in 0..k {
            rows.push((
                format!("over_enrollment_ge_{}", j + 1),
                runs.iter().map(|r| r.over_enrollment[j]).collect(),
            ));
        }
        if let Some(hist_len) = runs.iter().find_map(|r| r.envy_histogram.as_ref().map(Vec::len)) {
            for d in 0..hist_len {
                rows.extend(opt(&format!("envy_depth_{d}"), &|r| {
                    r.envy_histogram.as_ref().map(|h| h[d] as f64 / h.iter().sum::<usize>().max(1) as f64)
                }));
            }
        }
        for y in 0..usize::from(YEARS) {
            rows.push((
                format!("utility_sd_year_{}", y + 1),
                runs.iter().map(|r| r.utility_sd_by_year[y]).collect(),
            ));
            rows.extend(opt(&format!("sd_change_pct_year_{}", y + 1), &|r| {
                r.versus_benchmark.as_ref().and_then(|c| c.by_year[y].sd_change_pct)
            }));
        }
        for (name, xs) in rows {
            let (mean, sd) = mean_sd(&xs);
            w.write_record([
                m.name().to_string(),
                name,
                xs.len().to_string(),
                mean.to_string(),
                sd.to_string(),
                display(mean, sd),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per mechanism and year, share preferring it to the benchmark and the
/// opposite share, as mean (sd) over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreferenceRow {
    pub mechanism: Mechanism,
    /// 0 for all students.
    pub year: u8,
    pub prefer: (f64, f64),
    pub not_prefer: (f64, f64),
    pub indifferent: (f64, f64),
}

pub fn preference_rows(plan: &ExperimentPlan, summary: &ExperimentSummary) -> Vec<PreferenceRow> {
    let mut rows = Vec::new();
    for &m in &plan.mechanisms {
        if m == plan.benchmark {
            continue;
        }
        let cmps: Vec<&Comparison> = summary.of(m).filter_map(|r| r.versus_benchmark.as_ref()).collect();
        if cmps.is_empty() {
            continue;
        }
        for year in 0..=YEARS {
            let pick = |c: &Comparison| {
                if year == 0 {
                    c.overall.clone()
                } else {
                    c.by_year[usize::from(year) - 1].clone()
                }
            };
            let ys: Vec<_> = cmps.iter().map(|c| pick(c)).collect();
            let stat = |f: &dyn Fn(&crate::metrics::YearComparison) -> f64| {
                mean_sd(&ys.iter().map(f).collect::<Vec<f64>>())
            };
            rows.push(PreferenceRow {
                mechanism: m,
                year,
                prefer: stat(&|y| y.prefer_a),
                not_prefer: stat(&|y| y.prefer_b),
                indifferent: stat(&|y| y.indifferent),
            });
        }
    }
    rows
}

fn write_preferences(plan: &ExperimentPlan, summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record([
        "mechanism",
        "benchmark",
        "year",
        "prefer_mean",
        "prefer_sd",
        "not_prefer_mean",
        "not_prefer_sd",
        "indifferent_mean",
        "prefer",
        "not_prefer",
    ])?;
    for row in preference_rows(plan, summary) {
        w.write_record([
            row.mechanism.name().to_string(),
            plan.benchmark.name().to_string(),
            if row.year == 0 { "all".to_string() } else { row.year.to_string() },
            row.prefer.0.to_string(),
            row.prefer.1.to_string(),
            row.not_prefer.0.to_string(),
            row.not_prefer.1.to_string(),
            row.indifferent.0.to_string(),
            display(100.0 * row.prefer.0, 100.0 * row.prefer.1),
            display(100.0 * row.not_prefer.0, 100.0 * row.not_prefer.1),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    ChoiceSetSize,
    Sigma,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ChoiceSetSize => "choice-set-size",
            SweepAxis::Sigma => "sigma",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "choice-set-size" | "choice_set_size" => Ok(SweepAxis::ChoiceSetSize),
            "sigma" => Ok(SweepAxis::Sigma),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}; expected choice-set-size or sigma"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub summary: ExperimentSummary,
    pub preferences: Vec<PreferenceRow>,
}

/// The plan with one generator parameter replaced.
pub fn plan_at(plan: &ExperimentPlan, axis: SweepAxis, value: f64) -> Result<ExperimentPlan> {
    let InstanceSource::Generator(cfg) = &plan.source else {
        return Err(Error::Config("sweeps need a generator source".into()));
    };
    if !value.is_finite() {
        return Err(Error::Config(format!("sweep value {value} is not finite")));
    }
    let mut cfg = cfg.clone();
    match axis {
        SweepAxis::ChoiceSetSize => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("choice-set size must be a positive integer, got {value}")));
            }
            cfg.model.choice_set_size = value as usize;
        }
        SweepAxis::Sigma => {
            if value < 0.0 {
                return Err(Error::Config(format!("sigma must be non-negative, got {value}")));
            }
            cfg.model.sigma = value;
        }
    }
    Ok(ExperimentPlan {
        source: InstanceSource::Generator(cfg),
        ..plan.clone()
    })
}

/// One experiment per value, each in its own subdirectory, plus
/// `sweep-<axis>-<hash>.csv` with the preference shares of every value.
pub fn sweep(
    plan: &ExperimentPlan,
    axis: SweepAxis,
    values: &[f64],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<SweepPoint>> {
    let out_dir = out_dir.as_ref();
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        let p = plan_at(plan, axis, v)?;
        let summary = run_experiment(&p, out_dir.join(format!("{}-{v}", axis.name())))?;
        let preferences = preference_rows(&p, &summary);
        points.push(SweepPoint {
            value: v,
            summary,
            preferences,
        });
    }
    let path = out_dir.join(format!("sweep-{}-{}.csv", axis.name(), plan.hash()));
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["value", "mechanism", "year", "prefer", "indifferent", "not_prefer"])?;
    for p in &points {
        for row in &p.preferences {
            w.write_record([
                p.value.to_string(),
                row.mechanism.name().to_string(),
                if row.year == 0 { "all".to_string() } else { row.year.to_string() },
                row.prefer.0.to_string(),
                row.indifferent.0.to_string(),
                row.not_prefer.0.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(points)
}
