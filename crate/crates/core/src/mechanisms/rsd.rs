use super::{positions, preference_list, specs_by_year};
use crate::instance::{Allocation, Instance};

/// Remaining seats per course, split into reserve pools and regular seats.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeatLedger {
    /// Per course, `(spec index, seats left)` in year-descending order.
    pub pools: Vec<Vec<(usize, u32)>>,
    pub regular: Vec<u32>,
}

impl SeatLedger {
    pub fn new(instance: &Instance) -> Self {
        let mut pools = Vec::with_capacity(instance.num_courses());
        let mut regular = Vec::with_capacity(instance.num_courses());
        for c in 0..instance.num_courses() {
            let specs: Vec<(usize, u32)> = specs_by_year(instance, c)
                .into_iter()
                .map(|i| (i, instance.reserves()[i].seats))
                .collect();
            let reserved: u32 = specs.iter().map(|&(_, r)| r).sum();
            regular.push(instance.capacity(c) - reserved);
            pools.push(specs);
        }
        SeatLedger { pools, regular }
    }

    /// Takes a seat of `c` for `s`: an eligible pool first, else a regular
    /// seat. Returns false when none is available to her.
    pub fn take(&mut self, instance: &Instance, s: usize, c: usize) -> bool {
        let student = instance.student(s);
        for (spec, left) in &mut self.pools[c] {
            if *left > 0 && instance.reserves()[*spec].is_eligible(student) {
                *left -= 1;
                return true;
            }
        }
        if self.regular[c] > 0 {
            self.regular[c] -= 1;
            return true;
        }
        false
    }
}

/// Seniority first (year 4 at the top), then the tie-break ranking.
pub fn seniority_rank(instance: &Instance, tie_break: &[usize]) -> Vec<usize> {
    let pos = positions(tie_break);
    let mut rank: Vec<usize> = (0..instance.num_students()).collect();
    rank.sort_by_key(|&s| (std::cmp::Reverse(instance.student(s).year), pos[s]));
    rank
}

/// Serial dictatorship over `rank` with the instance's reserves: each student
/// takes her best available positive-utility courses, up to `k`.
pub fn rsd(instance: &Instance, rank: &[usize]) -> Allocation {
    let mut ledger = SeatLedger::new(instance);
    let mut schedules = vec![Vec::new(); instance.num_students()];
    for &s in rank {
        for c in preference_list(instance, s) {
            if schedules[s].len() == instance.k() {
                break;
            }
            if ledger.take(instance, s, c) {
                schedules[s].push(c);
            }
        }
    }
    Allocation::from_schedules(schedules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Course, PriorityMode, PrioritySource, ReserveSpec, Scope, Student};

    fn fixture() -> Instance {
        let st = |id: &str, year, dept: &str| Student {
            id: id.into(),
            college: "A".into(),
            year,
            department: dept.into(),
        };
        let course = |id: &str, q| Course {
            id: id.into(),
            college: "A".into(),
            department: "X".into(),
            capacity: q,
        };
        Instance::new(
            vec![st("senior", 4, "Y"), st("junior", 1, "X")],
            vec![course("Hot", 1), course("Other", 1)],
            1,
            vec![ReserveSpec {
                course: 0,
                departments: Scope::Only(["X".to_string()].into()),
                years: Scope::Only([1].into()),
                seats: 1,
            }],
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![(0, 0, 3.0), (0, 1, 1.0), (1, 0, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn reserved_seat_waits_for_eligible_student() {
        let inst = fixture();
        let rank = seniority_rank(&inst, &[1, 0]);
        assert_eq!(rank, vec![0, 1]);
        let a = rsd(&inst, &rank);
        assert_eq!(a.schedules, vec![vec![1], vec![0]]);
    }

    #[test]
    fn lone_student_takes_top_k() {
        let inst = fixture();
        let solo = inst.with_reserves(vec![]).unwrap();
        let a = rsd(&solo, &[0]);
        assert_eq!(a.schedules[0], vec![0]);
    }

    #[test]
    fn ledger_never_goes_negative() {
        let inst = fixture();
        let mut ledger = SeatLedger::new(&inst);
        assert_eq!(ledger.regular, vec![0, 1]);
        assert!(!ledger.take(&inst, 0, 0));
        assert!(ledger.take(&inst, 1, 0));
        assert!(!ledger.take(&inst, 1, 0));
    }
}
