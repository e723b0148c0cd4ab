use super::{set_value, UTILITY_EPS};
use crate::instance::{Allocation, Instance};

/// Largest product of per-student candidate counts that is enumerated.
pub const EFFICIENCY_GUARD: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub enum EfficiencyVerdict {
    Efficient,
    /// A Pareto improvement whose holders' priorities dominate course by course.
    Dominated(Allocation),
    /// The search space exceeds the guard; no verdict.
    Skipped { candidates: f64 },
}

/// Searches, with capacities equal to enrollment, for an allocation with the
/// same enrollment per course that every student weakly prefers, some student
/// strictly, and whose priority-level counts at or above every level are
/// at least the original ones at every course.
pub fn check_priority_efficiency(instance: &Instance, allocation: &Allocation) -> EfficiencyVerdict {
    let m = instance.num_courses();
    let n = instance.num_students();
    let enrollment = allocation.enrollment(m);

    let mut candidates: Vec<Vec<(Vec<usize>, bool)>> = Vec::with_capacity(n);
    let mut space = 1.0f64;
    for s in 0..n {
        let own = allocation.schedule(s);
        let own_value = set_value(instance, s, own);
        let mut pool: Vec<usize> = instance
            .utilities()
            .row(s)
            .iter()
            .map(|&(c, _)| c)
            .chain(own.iter().copied())
            .filter(|&c| enrollment[c] > 0)
            .collect();
        pool.sort_unstable();
        pool.dedup();
        if pool.len() > 24 {
            return EfficiencyVerdict::Skipped { candidates: f64::INFINITY };
        }
        let mut options = Vec::new();
        for mask in 0u32..(1 << pool.len()) {
            if mask.count_ones() as usize > instance.k() {
                continue;
            }
            let sched: Vec<usize> = (0..pool.len()).filter(|i| mask >> i & 1 == 1).map(|i| pool[i]).collect();
            let v = set_value(instance, s, &sched);
            if v >= own_value - UTILITY_EPS {
                options.push((sched, v > own_value + UTILITY_EPS));
            }
        }
        space *= options.len() as f64;
        if space > EFFICIENCY_GUARD {
            return EfficiencyVerdict::Skipped { candidates: space };
        }
        candidates.push(options);
    }

    let mut search = Search {
        instance,
        allocation,
        candidates: &candidates,
        remaining: enrollment.iter().map(|&e| e as i64).collect(),
        chosen: vec![0; n],
    };
    if search.dfs(0, false) {
        let schedules = (0..n).map(|s| candidates[s][search.chosen[s]].0.clone()).collect();
        EfficiencyVerdict::Dominated(Allocation::from_schedules(schedules))
    } else {
        EfficiencyVerdict::Efficient
    }
}

struct Search<'a> {
    instance: &'a Instance,
    allocation: &'a Allocation,
    candidates: &'a [Vec<(Vec<usize>, bool)>],
    remaining: Vec<i64>,
    chosen: Vec<usize>,
}

impl Search<'_> {
    fn dfs(&mut self, s: usize, strict: bool) -> bool {
        if s == self.candidates.len() {
            return strict && self.remaining.iter().all(|&r| r == 0) && self.respects_priorities();
        }
        for i in 0..self.candidates[s].len() {
            let (sched, better) = &self.candidates[s][i];
            if sched.iter().any(|&c| self.remaining[c] == 0) {
                continue;
            }
            for &c in sched {
                self.remaining[c] -= 1;
            }
            self.chosen[s] = i;
            let found = self.dfs(s + 1, strict || *better);
            for &c in sched {
                self.remaining[c] += 1;
            }
            if found {
                return true;
            }
        }
        false
    }

    /// Holder counts at or above each level never fall below the original.
    fn respects_priorities(&self) -> bool {
        let inst = self.instance;
        let depth = usize::from(inst.depth());
        let m = inst.num_courses();
        let mut diff = vec![0i64; m * (depth + 1)];
        for s in 0..inst.num_students() {
            for &c in &self.candidates[s][self.chosen[s]].0 {
                diff[c * (depth + 1) + usize::from(inst.level(s, c))] += 1;
            }
            for &c in self.allocation.schedule(s) {
                diff[c * (depth + 1) + usize::from(inst.level(s, c))] -= 1;
            }
        }
        (0..m).all(|c| {
            let mut above = 0;
            (1..=depth).rev().all(|r| {
                above += diff[c * (depth + 1) + r];
                above >= 0
            })
        })
    }
}
