use serde::Serialize;

use super::stability::lowest_holder_levels;
use super::{best_subset, set_value, value, UTILITY_EPS};
use crate::instance::{Allocation, FractionalAllocation, Instance};

/// Students who could improve using a seat held by someone of strictly lower
/// priority at that course.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViolationReport {
    pub students: Vec<usize>,
    pub share: f64,
}

impl ViolationReport {
    fn new(students: Vec<usize>, n: usize) -> Self {
        let share = if n == 0 { 0.0 } else { students.len() as f64 / n as f64 };
        ViolationReport { students, share }
    }
}

pub fn priority_violations(instance: &Instance, allocation: &Allocation) -> ViolationReport {
    let low = lowest_holder_levels(instance, allocation);
    let violators = (0..instance.num_students())
        .filter(|&s| {
            let own = allocation.schedule(s);
            let own_value = set_value(instance, s, own);
            instance.utilities().row(s).iter().any(|&(c, u)| {
                if u <= 0.0 || allocation.holds(s, c) || !low[c].is_some_and(|l| l < instance.level(s, c)) {
                    return false;
                }
                let mut pool = own.to_vec();
                pool.push(c);
                set_value(instance, s, &best_subset(instance, s, &pool)) > own_value + UTILITY_EPS
            })
        })
        .collect();
    ViolationReport::new(violators, instance.num_students())
}

/// Ex-ante version: `s` violates when a lower-priority student holds a
/// positive share of a course she ranks above something she holds, or above
/// an empty slot in her schedule.
pub fn priority_violations_fractional(instance: &Instance, allocation: &FractionalAllocation) -> ViolationReport {
    let mut low: Vec<Option<u8>> = vec![None; instance.num_courses()];
    for (s, row) in allocation.shares.iter().enumerate() {
        for &(c, x) in row {
            if x > UTILITY_EPS {
                let r = instance.level(s, c);
                low[c] = Some(low[c].map_or(r, |l| l.min(r)));
            }
        }
    }
    let k = instance.k() as f64;
    let violators = (0..instance.num_students())
        .filter(|&s| {
            let row = &allocation.shares[s];
            let spare = allocation.row_sum(s) < k - UTILITY_EPS;
            let worst_held = row
                .iter()
                .filter(|&&(_, x)| x > UTILITY_EPS)
                .map(|&(c, _)| value(instance, s, c))
                .fold(f64::INFINITY, f64::min);
            instance.utilities().row(s).iter().any(|&(c, u)| {
                u > 0.0
                    && allocation.share(s, c) < 1.0 - UTILITY_EPS
                    && low[c].is_some_and(|l| l < instance.level(s, c))
                    && (spare || u > worst_held + UTILITY_EPS)
            })
        })
        .collect();
    ViolationReport::new(violators, instance.num_students())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Course, PriorityMode, PrioritySource, Student};

    fn instance() -> Instance {
        let students = [4u8, 1]
            .iter()
            .enumerate()
            .map(|(i, &year)| Student {
                id: format!("s{i}"),
                college: "A".into(),
                year,
                department: "X".into(),
            })
            .collect();
        let courses = (0..2)
            .map(|i| Course {
                id: format!("c{i}"),
                college: "A".into(),
                department: "X".into(),
                capacity: 1,
            })
            .collect();
        Instance::new(
            students,
            courses,
            1,
            vec![],
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![(0, 0, 3.0), (0, 1, 1.0), (1, 0, 2.0), (1, 1, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn senior_displaced_by_junior_is_flagged() {
        let inst = instance();
        let bad = Allocation::from_schedules(vec![vec![1], vec![0]]);
        assert_eq!(priority_violations(&inst, &bad).students, vec![0]);
        let good = Allocation::from_schedules(vec![vec![0], vec![1]]);
        assert_eq!(priority_violations(&inst, &good).share, 0.0);
    }

    #[test]
    fn empty_schedule_counts_as_room() {
        let inst = instance();
        let a = Allocation::from_schedules(vec![vec![], vec![0]]);
        assert_eq!(priority_violations(&inst, &a).share, 0.5);
    }

    #[test]
    fn fractional_shares() {
        let inst = instance();
        let split = FractionalAllocation {
            shares: vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)]],
        };
        assert_eq!(priority_violations_fractional(&inst, &split).students, vec![0]);
        let sorted = FractionalAllocation {
            shares: vec![vec![(0, 1.0)], vec![(1, 1.0)]],
        };
        assert_eq!(priority_violations_fractional(&inst, &sorted).share, 0.0);
    }
}
