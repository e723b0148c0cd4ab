//! Equilibrium search for the pseudo-market with priorities.
//!
//! Budgets are evenly spaced in `[1, 1+β]` along a random student ranking.
//! Starting from a guess built from ideal schedules, a tâtonnement (phase one)
//! drives the market-clearing error under `√(kM/2)`; a second phase then
//! raises the prices of over-enrolled courses by the smallest amounts that
//! remove their excess. Both phases alternate for a few rounds and the whole
//! search restarts from a perturbed guess if they fail.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{
    clearing_error, from_units, student_demand, to_units, DemandState, Market, PriceRule,
    PriceSchedule,
};
use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub beta: f64,
    pub bbar: f64,
    pub rule: PriceRule,
    /// Phase-one step: `Δt = step·b̄·z/q`, at most `b̄/2` per iteration.
    pub step: f64,
    /// Step multiplier after a non-improving iteration.
    pub step_decay: f64,
    pub min_step: f64,
    /// Non-improving iterations tolerated in round `n` is `n` times this.
    pub patience_per_round: usize,
    /// Iteration cap for round `n` is `n` times this.
    pub max_iterations_per_round: usize,
    /// Return to the best prices after this many non-improving iterations.
    pub revert_after: usize,
    /// Relative improvement that still counts once under the bound.
    pub improve_eps: f64,
    pub max_rounds: usize,
    pub max_restarts: usize,
    /// Largest allowed share of courses over capacity by at least 1, 2, ... seats.
    pub over_targets: Vec<f64>,
    /// Restart noise, uniform in `[0, restart_noise·b̄]` per course.
    pub restart_noise: f64,
    /// Phase-two passes allowed per course.
    pub phase_two_passes_per_course: usize,
    pub seed: u64,
    /// Starting prices; overrides the ideal-schedule guess.
    pub initial_t: Option<Vec<f64>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            beta: 0.25,
            bbar: 1.251,
            rule: PriceRule::Priority,
            step: 0.1,
            step_decay: 0.95,
            min_step: 0.01,
            patience_per_round: 30,
            max_iterations_per_round: 500,
            revert_after: 10,
            improve_eps: 0.01,
            max_rounds: 6,
            max_restarts: 5,
            over_targets: vec![0.073, 0.041, 0.033, 0.025, 0.019],
            restart_noise: 0.25,
            phase_two_passes_per_course: 20,
            seed: 0,
            initial_t: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self, instance: &Instance) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.bbar > 1.0 + self.beta) {
            return Err(Error::Config(format!(
                "need beta >= 0 and bbar > 1 + beta, got beta={} bbar={}",
                self.beta, self.bbar
            )));
        }
        if !(self.step > 0.0) || !(0.0..=1.0).contains(&self.step_decay) || self.max_rounds == 0 {
            return Err(Error::Config("step, step_decay and max_rounds out of range".into()));
        }
        if let Some(t) = &self.initial_t {
            if t.len() != instance.num_courses() || t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!(
                    "initial_t needs {} finite entries",
                    instance.num_courses()
                )));
            }
        }
        Ok(())
    }

    pub fn price_schedule(&self, instance: &Instance) -> PriceSchedule {
        PriceSchedule::new(self.rule, self.bbar, instance.depth())
    }
}

/// `√(kM/2)`.
pub fn theory_bound(instance: &Instance) -> f64 {
    (instance.k() as f64 * instance.num_courses() as f64 / 2.0).sqrt()
}

/// Budgets along `rank` (`rank[0]` is the top student): the i-th gets
/// `1 + β·(N−1−i)/(N−1)`; a lone student gets `1 + β`.
pub fn assign_budgets(rank: &[usize], beta: f64) -> Vec<f64> {
    let n = rank.len();
    let mut budgets = vec![0.0; n];
    for (i, &s) in rank.iter().enumerate() {
        budgets[s] = if n == 1 {
            1.0 + beta
        } else {
            1.0 + beta * (n - 1 - i) as f64 / (n - 1) as f64
        };
    }
    budgets
}

/// Random ranking drawn from the tie-break stream of `seed`.
pub fn tie_break_rank(num_students: usize, seed: u64) -> Vec<usize> {
    rng::permutation(&mut rng::stream(seed, Stream::TieBreak), num_students)
}

/// Guess from ideal schedules. For each over-demanded course, walks priority
/// levels from the top until ideal demand exceeds capacity, and prices that
/// level so the fraction of its demanders that must leave faces the median
/// budget. Other courses start free.
pub fn initial_price(market: &Market) -> Vec<i64> {
    let inst = market.instance();
    let sched = market.schedule();
    let levels = usize::from(sched.levels());
    let mut budgets = market.budgets().to_vec();
    budgets.sort_unstable();
    let median = budgets.get(budgets.len() / 2).copied().unwrap_or(0);

    let mut by_level = vec![vec![0u32; levels]; inst.num_courses()];
    for s in 0..inst.num_students() {
        for &c in market.ideal(s) {
            let level = if sched.rule == PriceRule::Priority {
                usize::from(inst.level(s, c))
            } else {
                1
            };
            by_level[c][level - 1] += 1;
        }
    }
    (0..inst.num_courses())
        .map(|c| {
            let q = inst.capacity(c);
            let total: u32 = by_level[c].iter().sum();
            if total <= q {
                return 0;
            }
            let mut above = 0;
            for r in (1..=levels).rev() {
                let here = by_level[c][r - 1];
                if above + here > q {
                    let leave = f64::from(above + here - q) / f64::from(here);
                    let t = (r as i64 - 1) * sched.bbar + (median as f64 * leave).round() as i64;
                    return sched.clamp(t);
                }
                above += here;
            }
            0
        })
        .collect()
}

/// Demand evaluated at one price vector.
#[derive(Clone, Debug)]
pub struct Probe {
    pub t: Vec<i64>,
    pub state: DemandState,
    pub excess: Vec<i64>,
    pub error: f64,
    /// Courses over capacity by more than `k − 1`.
    pub big_over: usize,
}

impl Probe {
    fn new(market: &Market, t: Vec<i64>, state: DemandState) -> Self {
        let excess = market.excess(&t, &state.counts);
        let error = clearing_error(&excess);
        let inst = market.instance();
        let big_over = over_enrollment(inst, &state.counts)
            .iter()
            .filter(|&&o| o > inst.k() as i64 - 1)
            .count();
        Probe {
            t,
            state,
            excess,
            error,
            big_over,
        }
    }

    fn better_than(&self, other: &Probe) -> bool {
        (self.error, self.big_over) < (other.error, other.big_over)
    }
}

/// Seats taken beyond capacity, per course (zero when under).
pub fn over_enrollment(instance: &Instance, counts: &[u32]) -> Vec<i64> {
    counts
        .iter()
        .enumerate()
        .map(|(c, &d)| (i64::from(d) - i64::from(instance.capacity(c))).max(0))
        .collect()
}

/// Over-enrollment is within the target shares and no course is over by
/// more than `k − 1`.
pub fn over_enrollment_ok(instance: &Instance, counts: &[u32], targets: &[f64]) -> bool {
    let over = over_enrollment(instance, counts);
    let m = instance.num_courses().max(1) as f64;
    let cap = instance.k() as i64 - 1;
    over.iter().all(|&o| o <= cap)
        && targets.iter().enumerate().all(|(j, &share)| {
            let at_least = over.iter().filter(|&&o| o > j as i64).count() as f64;
            at_least / m <= share + 1e-12
        })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PhaseStats {
    pub iterations: usize,
    pub resolved_students: usize,
}

/// Tâtonnement from `start`. Returns the best probe seen and whether its
/// error is within the bound.
pub fn phase_one(
    market: &Market,
    start: Probe,
    round: usize,
    config: &EngineConfig,
    stats: &mut PhaseStats,
) -> (Probe, bool) {
    let inst = market.instance();
    let sched = market.schedule();
    let bound = theory_bound(inst);
    let patience = config.patience_per_round * round;
    let max_iter = config.max_iterations_per_round * round;
    let half = sched.bbar / 2;

    let mut best = start.clone();
    let mut current = start;
    let mut anchor = best.error;
    let mut step = config.step;
    let mut stall = 0;
    for _ in 0..max_iter {
        if best.error == 0.0 && best.big_over == 0 {
            break;
        }
        stats.iterations += 1;
        let scale = step * sched.bbar as f64;
        let new_t: Vec<i64> = current
            .t
            .iter()
            .enumerate()
            .map(|(c, &t)| {
                let q = f64::from(inst.capacity(c).max(1));
                let delta = (scale * current.excess[c] as f64 / q).round() as i64;
                sched.clamp(t + delta.clamp(-half, half))
            })
            .collect();
        let (state, touched) = market.incremental(&current.t, &current.state, &new_t);
        stats.resolved_students += touched;
        current = Probe::new(market, new_t, state);

        if current.better_than(&best) {
            let significant = anchor > bound || current.error < anchor * (1.0 - config.improve_eps);
            best = current.clone();
            if significant {
                anchor = best.error;
                stall = 0;
                continue;
            }
        } else {
            step = (step * config.step_decay).max(config.min_step);
        }
        stall += 1;
        if stall >= patience {
            break;
        }
        if config.revert_after > 0 && stall % config.revert_after == 0 {
            current = best.clone();
        }
    }
    let within = best.error <= bound;
    (best, within)
}

/// Smallest increase of `t_c` (on the grid) that makes `s` drop course `c`.
fn drop_increase(market: &Market, s: usize, t: &[i64], c: usize) -> i64 {
    let sched = market.schedule();
    let room = sched.t_max() - t[c];
    if room <= 0 {
        return 0;
    }
    let drops = |delta: i64| {
        market
            .demand_with(s, t, c, t[c] + delta)
            .binary_search(&c)
            .is_err()
    };
    let (mut lo, mut hi) = (0, room);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if drops(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Raises the price of the most over-enrolled course by the smallest amount
/// that removes its whole excess, until over-enrollment is within targets.
/// Returns the final probe, whether the error is within the bound, and whether
/// the over-enrollment conditions hold.
pub fn phase_two(
    market: &Market,
    start: Probe,
    config: &EngineConfig,
    stats: &mut PhaseStats,
) -> (Probe, bool, bool) {
    let inst = market.instance();
    let bound = theory_bound(inst);
    let cap = config.phase_two_passes_per_course * inst.num_courses().max(1);
    let mut probe = start;
    for _ in 0..cap {
        if over_enrollment_ok(inst, &probe.state.counts, &config.over_targets) {
            break;
        }
        stats.iterations += 1;
        let over = over_enrollment(inst, &probe.state.counts);
        let Some((c, &excess)) = over
            .iter()
            .enumerate()
            .max_by_key(|&(c, &o)| (o, std::cmp::Reverse(c)))
        else {
            break;
        };
        let holders: Vec<usize> = (0..inst.num_students())
            .filter(|&s| probe.state.schedules[s].binary_search(&c).is_ok())
            .collect();
        let mut deltas: Vec<i64> = holders
            .par_iter()
            .map(|&s| drop_increase(market, s, &probe.t, c))
            .collect();
        deltas.sort_unstable();
        let e = (excess as usize).min(deltas.len());
        if e == 0 {
            break;
        }
        let mut new_t = probe.t.clone();
        new_t[c] = market.schedule().clamp(new_t[c] + deltas[e - 1]);
        let (state, touched) = market.incremental(&probe.t, &probe.state, &new_t);
        stats.resolved_students += touched;
        probe = Probe::new(market, new_t, state);
    }
    let within = probe.error <= bound;
    let over_ok = over_enrollment_ok(inst, &probe.state.counts, &config.over_targets);
    (probe, within, over_ok)
}

/// Lifts each enrolled course's `t` past empty cutoff levels so that some
/// holder sits at the cutoff level. Demand is unaffected. Skipped where the
/// lift would make a free, under-enrolled course count as excess supply.
pub fn raise_cutoffs(market: &Market, t: &mut [i64], state: &DemandState) {
    let inst = market.instance();
    let sched = market.schedule();
    if sched.rule != PriceRule::Priority {
        return;
    }
    for c in 0..inst.num_courses() {
        let holders: Vec<u8> = (0..inst.num_students())
            .filter(|&s| state.schedules[s].binary_search(&c).is_ok())
            .map(|s| inst.level(s, c))
            .collect();
        if holders.is_empty() {
            continue;
        }
        loop {
            let cut = sched.cutoff(t[c]);
            if cut >= sched.depth || holders.contains(&cut) {
                break;
            }
            let lifted = i64::from(cut) * sched.bbar;
            let was_free = sched.faced(t[c], 1) == 0;
            if was_free && holders.len() < inst.capacity(c) as usize {
                break;
            }
            t[c] = lifted;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SolveTrace {
    pub restarts: usize,
    pub rounds: usize,
    pub phase_one: PhaseStats,
    pub phase_two: PhaseStats,
    /// Final re-solve disagreed with the incrementally maintained demand.
    pub corrected: bool,
}

#[derive(Clone, Debug)]
pub struct EquilibriumResult {
    pub allocation: Allocation,
    /// Per-course price parameter in grid units.
    pub t_units: Vec<i64>,
    pub budgets: Vec<f64>,
    pub budget_units: Vec<i64>,
    pub schedule: PriceSchedule,
    pub excess: Vec<i64>,
    pub error: f64,
    pub bound: f64,
    pub within_bound: bool,
    pub over_ok: bool,
    pub certified: bool,
    pub trace: SolveTrace,
}

impl EquilibriumResult {
    pub fn t(&self) -> Vec<f64> {
        self.t_units.iter().map(|&t| from_units(t)).collect()
    }

    pub fn cutoff(&self, c: usize) -> u8 {
        self.schedule.cutoff(self.t_units[c])
    }

    pub fn cutoffs(&self) -> Vec<u8> {
        self.t_units.iter().map(|&t| self.schedule.cutoff(t)).collect()
    }

    /// Price faced at level `level` of course `c`.
    pub fn price(&self, c: usize, level: u8) -> f64 {
        from_units(self.schedule.faced(self.t_units[c], level))
    }

    /// Per course, prices at levels `1..=R`.
    pub fn expanded_prices(&self) -> Vec<Vec<f64>> {
        self.t_units
            .iter()
            .map(|&t| self.schedule.expand(t).into_iter().map(from_units).collect())
            .collect()
    }
}

/// Runs the full search with the ranking drawn from `config.seed`.
pub fn solve(instance: &Instance, config: &EngineConfig) -> Result<EquilibriumResult> {
    let rank = tie_break_rank(instance.num_students(), config.seed);
    solve_ranked(instance, config, &rank)
}

/// Runs the full search with an explicit budget ranking.
pub fn solve_ranked(
    instance: &Instance,
    config: &EngineConfig,
    rank: &[usize],
) -> Result<EquilibriumResult> {
    config.validate(instance)?;
    if rank.len() != instance.num_students() {
        return Err(Error::Config(format!(
            "ranking has {} students, instance has {}",
            rank.len(),
            instance.num_students()
        )));
    }
    let budgets = assign_budgets(rank, config.beta);
    let budget_units: Vec<i64> = budgets.iter().map(|&b| to_units(b)).collect();
    let sched = config.price_schedule(instance);
    let market = Market::new(instance, sched, budget_units.clone());
    let bound = theory_bound(instance);

    let t0: Vec<i64> = match &config.initial_t {
        Some(t) => t.iter().map(|&x| sched.clamp(to_units(x))).collect(),
        None => initial_price(&market),
    };

    let mut trace = SolveTrace::default();
    let mut best: Option<(Probe, bool, bool)> = None;
    let mut noise_rng = rng::stream(config.seed, Stream::EngineNoise);
    let noise_max = (config.restart_noise * sched.bbar as f64).round() as i64;

    'outer: for restart in 0..=config.max_restarts {
        trace.restarts = restart;
        let start_t: Vec<i64> = if restart == 0 {
            t0.clone()
        } else {
            t0.iter()
                .map(|&t| sched.clamp(t + noise_rng.random_range(0..=noise_max)))
                .collect()
        };
        let state = market.batch(&start_t);
        let mut probe = Probe::new(&market, start_t, state);
        for round in 1..=config.max_rounds {
            trace.rounds += 1;
            let (p1, _) = phase_one(&market, probe, round, config, &mut trace.phase_one);
            let (p2, _, _) = phase_two(&market, p1, config, &mut trace.phase_two);

            let mut t = p2.t.clone();
            raise_cutoffs(&market, &mut t, &p2.state);
            let fresh = market.batch(&t);
            if fresh != p2.state {
                trace.corrected = true;
            }
            let checked = Probe::new(&market, t, fresh);
            let within = checked.error <= bound;
            let over_ok = over_enrollment_ok(instance, &checked.state.counts, &config.over_targets);
            let replace = match &best {
                None => true,
                Some((b, bw, bo)) => {
                    let rank_new = (within && over_ok, within, over_ok);
                    let rank_old = (*bw && *bo, *bw, *bo);
                    rank_new > rank_old || (rank_new == rank_old && checked.better_than(b))
                }
            };
            if replace {
                best = Some((checked.clone(), within, over_ok));
            }
            if within && over_ok {
                break 'outer;
            }
            // a re-solve that breaks the phase conditions forces a restart
            if p2.state != checked.state {
                break;
            }
            probe = checked;
        }
    }

    let (probe, within, over_ok) = best.expect("at least one round runs");
    let certified = within && over_ok;
    if !certified {
        log::warn!(
            "no certified equilibrium after {} restarts: error {:.3} (bound {:.3}), over-enrollment ok: {}",
            trace.restarts,
            probe.error,
            bound,
            over_ok
        );
    }
    Ok(EquilibriumResult {
        allocation: Allocation::from_schedules(probe.state.schedules),
        t_units: probe.t,
        budgets,
        budget_units,
        schedule: sched,
        excess: probe.excess,
        error: probe.error,
        bound,
        within_bound: within,
        over_ok,
        certified,
        trace,
    })
}

/// Demand, excess and clearing error at an explicit price table
/// (`prices[c][r-1]` is course `c`'s price at level `r`).
#[derive(Clone, Debug, PartialEq)]
pub struct PriceCheck {
    pub allocation: Allocation,
    pub excess: Vec<i64>,
    pub error: f64,
}

pub fn check_prices(instance: &Instance, prices: &[Vec<f64>], budgets: &[f64]) -> Result<PriceCheck> {
    if prices.len() != instance.num_courses() || budgets.len() != instance.num_students() {
        return Err(Error::Config("price table or budgets have the wrong size".into()));
    }
    let depth = usize::from(instance.depth());
    if prices.iter().any(|p| p.len() < depth) {
        return Err(Error::Config(format!("every course needs {depth} level prices")));
    }
    let schedules: Vec<Vec<usize>> = (0..instance.num_students())
        .map(|s| {
            student_demand(
                instance.utilities().row(s),
                |c| to_units(prices[c][usize::from(instance.level(s, c)) - 1]),
                to_units(budgets[s]),
                instance.k(),
            )
        })
        .collect();
    let allocation = Allocation::from_schedules(schedules);
    let counts = allocation.enrollment(instance.num_courses());
    let excess: Vec<i64> = (0..instance.num_courses())
        .map(|c| {
            let z = i64::from(counts[c]) - i64::from(instance.capacity(c));
            if to_units(prices[c][0]) > 0 {
                z
            } else {
                z.max(0)
            }
        })
        .collect();
    let error = clearing_error(&excess);
    Ok(PriceCheck {
        allocation,
        excess,
        error,
    })
}
