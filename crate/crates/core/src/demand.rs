//! Priority-specific prices and the utility-maximising demand of each student.
//!
//! Prices and budgets live on an integer grid of 10⁻⁶ so that affordability
//! never depends on floating-point rounding. A course's whole price vector is
//! driven by one scalar `t`; the level a student sits at in the course decides
//! which entry she faces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instance::Instance;

/// Grid units per unit of money.
pub const UNITS: i64 = 1_000_000;

pub fn to_units(x: f64) -> i64 {
    (x * UNITS as f64).round() as i64
}

pub fn from_units(u: i64) -> f64 {
    u as f64 / UNITS as f64
}

/// How a course's scalar `t` becomes the price a student faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceRule {
    /// `max(t − (r−1)·b̄, 0)` at level `r`.
    Priority,
    /// Everyone faces `t`.
    Flat,
    /// Everyone faces `t·(R−r+1)/R`.
    Kludgy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PriceSchedule {
    pub rule: PriceRule,
    /// Threshold above every budget, in grid units.
    pub bbar: i64,
    pub depth: u8,
}

impl PriceSchedule {
    pub fn new(rule: PriceRule, bbar: f64, depth: u8) -> Self {
        PriceSchedule {
            rule,
            bbar: to_units(bbar),
            depth: depth.max(1),
        }
    }

    /// Number of distinct price levels the rule produces.
    pub fn levels(&self) -> u8 {
        match self.rule {
            PriceRule::Flat => 1,
            PriceRule::Priority | PriceRule::Kludgy => self.depth,
        }
    }

    /// Upper end of the range of `t`: at `t_max` nobody can afford the course.
    pub fn t_max(&self) -> i64 {
        i64::from(self.levels()) * self.bbar
    }

    pub fn faced(&self, t: i64, level: u8) -> i64 {
        match self.rule {
            PriceRule::Priority => (t - i64::from(level.saturating_sub(1)) * self.bbar).max(0),
            PriceRule::Flat => t,
            PriceRule::Kludgy => {
                let r = i64::from(self.depth);
                let num = t as i128 * i128::from(r - i64::from(level) + 1);
                // round half up on the grid
                ((2 * num + i128::from(r)) / (2 * i128::from(r))) as i64
            }
        }
    }

    /// Lowest level whose price is below `b̄`, clamped to the top level.
    pub fn cutoff(&self, t: i64) -> u8 {
        match self.rule {
            PriceRule::Priority => {
                let r = 1 + t.max(0) / self.bbar;
                r.min(i64::from(self.depth)) as u8
            }
            PriceRule::Flat => 1,
            PriceRule::Kludgy => (1..=self.depth)
                .find(|&r| self.faced(t, r) < self.bbar)
                .unwrap_or(self.depth),
        }
    }

    /// Prices at levels `1..=depth`, in grid units.
    pub fn expand(&self, t: i64) -> Vec<i64> {
        (1..=self.depth).map(|r| self.faced(t, r)).collect()
    }

    pub fn clamp(&self, t: i64) -> i64 {
        t.clamp(0, self.t_max())
    }
}

/// Priority-rule prices `p_r = max(t − (r−1)·b̄, 0)` for `r = 1..=depth`.
pub fn expand_prices(t: f64, bbar: f64, depth: u8) -> Vec<f64> {
    PriceSchedule::new(PriceRule::Priority, bbar, depth)
        .expand(to_units(t))
        .into_iter()
        .map(from_units)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub course: usize,
    pub utility: f64,
    pub price: i64,
}

const BOUND_SLACK: f64 = 1e-9;

/// Sum of utilities taken in ascending course order, so that every solver
/// compares identical floating-point values.
fn canonical_value(courses: &mut [(usize, f64)]) -> f64 {
    courses.sort_unstable_by_key(|&(c, _)| c);
    courses.iter().map(|&(_, u)| u).sum()
}

#[derive(Clone, Debug)]
struct Best {
    courses: Vec<usize>,
    value: f64,
    cost: i64,
}

impl Best {
    fn empty() -> Self {
        Best {
            courses: Vec::new(),
            value: 0.0,
            cost: 0,
        }
    }

    /// Higher value, then lower cost, then lexicographically smaller.
    fn beaten_by(&self, courses: &[usize], value: f64, cost: i64) -> bool {
        if value != self.value {
            return value > self.value;
        }
        if cost != self.cost {
            return cost < self.cost;
        }
        courses < self.courses.as_slice()
    }
}

/// Best schedule of at most `k` courses costing at most `budget`.
///
/// Ties in total utility go to the cheaper schedule, then to the
/// lexicographically smallest sorted course list. Courses with non-positive
/// utility are never chosen.
pub fn best_schedule(candidates: &[Candidate], budget: i64, k: usize) -> Vec<usize> {
    let mut cands: Vec<Candidate> = candidates
        .iter()
        .copied()
        .filter(|c| c.utility > 0.0)
        .collect();
    cands.sort_by(|a, b| {
        b.utility
            .total_cmp(&a.utility)
            .then(a.course.cmp(&b.course))
    });

    // ideal bundle affordable and strictly separated from the rest
    let top = cands.len().min(k);
    let ideal_cost: i64 = cands[..top].iter().map(|c| c.price).sum();
    let separated = top == cands.len() || cands[top - 1].utility > cands[top].utility;
    if ideal_cost <= budget && separated {
        let mut out: Vec<usize> = cands[..top].iter().map(|c| c.course).collect();
        out.sort_unstable();
        return out;
    }

    cands.retain(|c| c.price <= budget);
    let mut prefix = Vec::with_capacity(cands.len() + 1);
    prefix.push(0.0);
    for c in &cands {
        prefix.push(prefix.last().unwrap() + c.utility);
    }
    let mut search = Search {
        cands: &cands,
        prefix,
        budget,
        k,
        stack: Vec::with_capacity(k),
        best: Best::empty(),
    };
    search.dfs(0, 0, 0.0);
    let mut out = search.best.courses;
    out.sort_unstable();
    out
}

struct Search<'a> {
    cands: &'a [Candidate],
    prefix: Vec<f64>,
    budget: i64,
    k: usize,
    stack: Vec<usize>,
    best: Best,
}

impl Search<'_> {
    fn consider(&mut self, cost: i64) {
        if self.stack.is_empty() {
            return;
        }
        let mut items: Vec<(usize, f64)> = self
            .stack
            .iter()
            .map(|&i| (self.cands[i].course, self.cands[i].utility))
            .collect();
        let value = canonical_value(&mut items);
        let courses: Vec<usize> = items.iter().map(|&(c, _)| c).collect();
        if self.best.beaten_by(&courses, value, cost) {
            self.best = Best {
                courses,
                value,
                cost,
            };
        }
    }

    /// Utilities of the first `m` candidates from `start` priced within `room`.
    fn greedy_bound(&self, start: usize, m: usize, room: i64) -> f64 {
        self.cands[start..]
            .iter()
            .filter(|c| c.price <= room)
            .take(m)
            .map(|c| c.utility)
            .sum()
    }

    fn dfs(&mut self, start: usize, cost: i64, value: f64) {
        self.consider(cost);
        let open = self.k - self.stack.len();
        if open == 0 {
            return;
        }
        let n = self.cands.len();
        for i in start..n {
            let loose = value + self.prefix[(i + open).min(n)] - self.prefix[i];
            if loose < self.best.value - BOUND_SLACK {
                break;
            }
            let c = self.cands[i];
            if cost + c.price > self.budget {
                continue;
            }
            let room = self.budget - cost - c.price;
            let bound = value + c.utility + self.greedy_bound(i + 1, open - 1, room);
            if bound < self.best.value - BOUND_SLACK {
                continue;
            }
            self.stack.push(i);
            self.dfs(i + 1, cost + c.price, value + c.utility);
            self.stack.pop();
        }
    }
}

/// Reference solver: enumerates every affordable schedule of size ≤ `k`.
/// Uses the same tie rule as [`best_schedule`].
pub fn exhaustive_schedule(candidates: &[Candidate], budget: i64, k: usize) -> Vec<usize> {
    let n = candidates.len();
    assert!(n <= 24, "exhaustive search limited to 24 courses");
    let mut best = Best::empty();
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let chosen: Vec<&Candidate> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &candidates[i])
            .collect();
        let cost: i64 = chosen.iter().map(|c| c.price).sum();
        if cost > budget {
            continue;
        }
        let mut items: Vec<(usize, f64)> = chosen.iter().map(|c| (c.course, c.utility)).collect();
        let value = canonical_value(&mut items);
        let courses: Vec<usize> = items.iter().map(|&(c, _)| c).collect();
        if best.beaten_by(&courses, value, cost) {
            best = Best {
                courses,
                value,
                cost,
            };
        }
    }
    best.courses
}

/// Demand of one student: `row` is her sparse utility row, `price` gives the
/// price she faces at each course.
pub fn student_demand(
    row: &[(usize, f64)],
    price: impl Fn(usize) -> i64,
    budget: i64,
    k: usize,
) -> Vec<usize> {
    let cands: Vec<Candidate> = row
        .iter()
        .filter(|&&(_, u)| u > 0.0)
        .map(|&(course, utility)| Candidate {
            course,
            utility,
            price: price(course),
        })
        .collect();
    best_schedule(&cands, budget, k)
}

/// Schedules and per-course demand counts at some price vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DemandState {
    pub schedules: Vec<Vec<usize>>,
    pub counts: Vec<u32>,
}

impl DemandState {
    fn from_schedules(schedules: Vec<Vec<usize>>, num_courses: usize) -> Self {
        let mut counts = vec![0u32; num_courses];
        for sched in &schedules {
            for &c in sched {
                counts[c] += 1;
            }
        }
        DemandState { schedules, counts }
    }
}

/// Euclidean norm of an excess vector.
pub fn clearing_error(z: &[i64]) -> f64 {
    (z.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt()
}

/// An instance together with a price rule and budgets: everything needed to
/// evaluate demand at any `t`.
pub struct Market<'a> {
    instance: &'a Instance,
    schedule: PriceSchedule,
    budgets: Vec<i64>,
    ideal: Vec<Vec<usize>>,
    /// Per course, students with positive utility for it.
    interested: Vec<Vec<usize>>,
}

impl<'a> Market<'a> {
    pub fn new(instance: &'a Instance, schedule: PriceSchedule, budgets: Vec<i64>) -> Self {
        assert_eq!(budgets.len(), instance.num_students());
        let m = instance.num_courses();
        let mut interested = vec![Vec::new(); m];
        for s in 0..instance.num_students() {
            for &(c, u) in instance.utilities().row(s) {
                if u > 0.0 {
                    interested[c].push(s);
                }
            }
        }
        let ideal = (0..instance.num_students())
            .into_par_iter()
            .map(|s| student_demand(instance.utilities().row(s), |_| 0, i64::MAX / 4, instance.k()))
            .collect();
        Market {
            instance,
            schedule,
            budgets,
            ideal,
            interested,
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn schedule(&self) -> PriceSchedule {
        self.schedule
    }

    pub fn budgets(&self) -> &[i64] {
        &self.budgets
    }

    /// Top-k positive-utility schedule at zero prices.
    pub fn ideal(&self, s: usize) -> &[usize] {
        &self.ideal[s]
    }

    pub fn interested(&self, c: usize) -> &[usize] {
        &self.interested[c]
    }

    pub fn faced(&self, s: usize, c: usize, t: &[i64]) -> i64 {
        self.schedule.faced(t[c], self.instance.level(s, c))
    }

    pub fn demand(&self, s: usize, t: &[i64]) -> Vec<usize> {
        student_demand(
            self.instance.utilities().row(s),
            |c| self.faced(s, c, t),
            self.budgets[s],
            self.instance.k(),
        )
    }

    /// Demand of `s` with course `course`'s parameter replaced by `tc`.
    pub fn demand_with(&self, s: usize, t: &[i64], course: usize, tc: i64) -> Vec<usize> {
        let level = self.instance.level(s, course);
        student_demand(
            self.instance.utilities().row(s),
            |c| {
                if c == course {
                    self.schedule.faced(tc, level)
                } else {
                    self.faced(s, c, t)
                }
            },
            self.budgets[s],
            self.instance.k(),
        )
    }

    pub fn cost(&self, s: usize, schedule: &[usize], t: &[i64]) -> i64 {
        schedule.iter().map(|&c| self.faced(s, c, t)).sum()
    }

    pub fn batch(&self, t: &[i64]) -> DemandState {
        let schedules = (0..self.instance.num_students())
            .into_par_iter()
            .map(|s| self.demand(s, t))
            .collect();
        DemandState::from_schedules(schedules, self.instance.num_courses())
    }

    /// Demand at `new_t` given the exact demand `prev` at `prev_t`. Only
    /// students whose schedule became unaffordable, or who lack their ideal
    /// schedule and saw a wanted course get cheaper and affordable, are
    /// re-solved. Returns the new state and the number of re-solved students.
    pub fn incremental(
        &self,
        prev_t: &[i64],
        prev: &DemandState,
        new_t: &[i64],
    ) -> (DemandState, usize) {
        let n = self.instance.num_students();
        let mut dirty = vec![false; n];
        for c in 0..self.instance.num_courses() {
            if new_t[c] > prev_t[c] {
                for &s in &self.interested[c] {
                    if !dirty[s]
                        && prev.schedules[s].binary_search(&c).is_ok()
                        && self.cost(s, &prev.schedules[s], new_t) > self.budgets[s]
                    {
                        dirty[s] = true;
                    }
                }
            } else if new_t[c] < prev_t[c] {
                for &s in &self.interested[c] {
                    if dirty[s] || prev.schedules[s] == self.ideal[s] {
                        continue;
                    }
                    let now = self.faced(s, c, new_t);
                    if now < self.faced(s, c, prev_t) && now <= self.budgets[s] {
                        dirty[s] = true;
                    }
                }
            }
        }
        let todo: Vec<usize> = (0..n).filter(|&s| dirty[s]).collect();
        let fresh: Vec<(usize, Vec<usize>)> = todo
            .par_iter()
            .map(|&s| (s, self.demand(s, new_t)))
            .collect();
        let mut state = prev.clone();
        for (s, sched) in fresh {
            for &c in &state.schedules[s] {
                state.counts[c] -= 1;
            }
            for &c in &sched {
                state.counts[c] += 1;
            }
            state.schedules[s] = sched;
        }
        (state, todo.len())
    }

    /// Excess demand: under-enrollment counts only where the lowest-level
    /// price is positive.
    pub fn excess(&self, t: &[i64], counts: &[u32]) -> Vec<i64> {
        (0..self.instance.num_courses())
            .map(|c| {
                let z = i64::from(counts[c]) - i64::from(self.instance.capacity(c));
                if self.schedule.faced(t[c], 1) > 0 {
                    z
                } else {
                    z.max(0)
                }
            })
            .collect()
    }
}
