use serde::Serialize;

use super::{best_subset, set_value, value, UTILITY_EPS};
use crate::instance::{Allocation, Instance};

/// A student and a schedule she prefers that she could assemble from her own
/// courses, free seats and seats of strictly lower-priority holders.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Block {
    pub student: usize,
    pub schedule: Vec<usize>,
    pub gain: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Students holding more than `k` courses.
    pub oversized: Vec<usize>,
    /// `(student, course)` pairs with a held course of non-positive utility.
    pub irrational: Vec<(usize, usize)>,
    pub blocks: Vec<Block>,
}

impl StabilityReport {
    pub fn is_stable(&self) -> bool {
        self.oversized.is_empty() && self.irrational.is_empty() && self.blocks.is_empty()
    }
}

/// Lowest priority level among each course's holders (`None` when empty).
pub(crate) fn lowest_holder_levels(instance: &Instance, allocation: &Allocation) -> Vec<Option<u8>> {
    let mut low: Vec<Option<u8>> = vec![None; instance.num_courses()];
    for (s, sched) in allocation.schedules.iter().enumerate() {
        for &c in sched {
            let r = instance.level(s, c);
            low[c] = Some(low[c].map_or(r, |l| l.min(r)));
        }
    }
    low
}

/// Courses `s` could add under capacities equal to current enrollment: the
/// ones held by somebody of strictly lower priority.
fn reachable(instance: &Instance, allocation: &Allocation, low: &[Option<u8>], s: usize) -> Vec<usize> {
    let mut pool = allocation.schedule(s).to_vec();
    for &(c, _) in instance.utilities().row(s) {
        if !allocation.holds(s, c) && low[c].is_some_and(|l| l < instance.level(s, c)) {
            pool.push(c);
        }
    }
    pool
}

/// Stability with each course's capacity reset to its enrollment.
pub fn check_stability(instance: &Instance, allocation: &Allocation) -> StabilityReport {
    let low = lowest_holder_levels(instance, allocation);
    let mut report = StabilityReport::default();
    for s in 0..instance.num_students() {
        let own = allocation.schedule(s);
        if own.len() > instance.k() {
            report.oversized.push(s);
        }
        for &c in own {
            if value(instance, s, c) <= 0.0 {
                report.irrational.push((s, c));
            }
        }
        let pool = reachable(instance, allocation, &low, s);
        let best = best_subset(instance, s, &pool);
        let gain = set_value(instance, s, &best) - set_value(instance, s, own);
        if gain > UTILITY_EPS {
            report.blocks.push(Block {
                student: s,
                schedule: best,
                gain,
            });
        }
    }
    report
}

/// Oracle for one student's best block: every subset of at most `k` of the
/// reachable courses.
pub fn best_block_brute_force(instance: &Instance, allocation: &Allocation, s: usize) -> Option<Block> {
    let low = lowest_holder_levels(instance, allocation);
    let pool = reachable(instance, allocation, &low, s);
    assert!(pool.len() <= 20, "brute force over {} courses", pool.len());
    let own = set_value(instance, s, allocation.schedule(s));
    let mut best: Option<Block> = None;
    for mask in 0u32..(1 << pool.len()) {
        if mask.count_ones() as usize > instance.k() {
            continue;
        }
        let subset: Vec<usize> = (0..pool.len()).filter(|i| mask >> i & 1 == 1).map(|i| pool[i]).collect();
        let gain = set_value(instance, s, &subset) - own;
        if gain > UTILITY_EPS && best.as_ref().is_none_or(|b| gain > b.gain) {
            let mut schedule = subset;
            schedule.sort_unstable();
            best = Some(Block {
                student: s,
                schedule,
                gain,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tests::EXAMPLE_ONE;
    use crate::instance::{parse_instance, Course, PriorityMode, PrioritySource, Student};
    use proptest::prelude::*;

    #[test]
    fn example_one_allocation_has_no_block() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        let a = Allocation::from_schedules(vec![vec![1], vec![0]]);
        assert!(check_stability(&inst, &a).is_stable());
    }

    #[test]
    fn negative_course_is_irrational() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        let inst = inst.with_utilities(vec![(0, 0, 2.0), (0, 1, -1.0), (1, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let a = Allocation::from_schedules(vec![vec![1], vec![0]]);
        let report = check_stability(&inst, &a);
        assert_eq!(report.irrational, vec![(0, 1)]);
        assert!(!report.is_stable());
    }

    fn fixture() -> Instance {
        let students = [4u8, 1, 1]
            .iter()
            .enumerate()
            .map(|(i, &year)| Student {
                id: format!("s{i}"),
                college: "A".into(),
                year,
                department: "X".into(),
            })
            .collect();
        let courses = (0..3)
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
            vec![(0, 0, 5.0), (0, 1, 1.0), (1, 0, 5.0), (1, 2, 1.0), (2, 2, 3.0)],
        )
        .unwrap()
    }

    #[test]
    fn senior_blocks_junior_holder() {
        let inst = fixture();
        let a = Allocation::from_schedules(vec![vec![1], vec![0], vec![2]]);
        let report = check_stability(&inst, &a);
        assert_eq!(report.blocks.len(), 1);
        assert_eq!(report.blocks[0].student, 0);
        assert_eq!(report.blocks[0].schedule, vec![0]);
        assert_eq!(best_block_brute_force(&inst, &a, 0), Some(report.blocks[0].clone()));
        // a junior cannot take the other junior's seat
        assert_eq!(best_block_brute_force(&inst, &a, 1), None);
    }

    proptest! {
        #[test]
        fn block_finder_matches_enumeration(
            years in prop::collection::vec(1u8..=4, 4),
            utils in prop::collection::vec(-2i32..6, 4 * 6),
            k in 1usize..=3,
            picks in prop::collection::vec(prop::collection::vec(0usize..6, 0..3), 4),
        ) {
            let students = years.iter().enumerate().map(|(i, &year)| Student {
                id: format!("s{i}"), college: "A".into(), year, department: "X".into(),
            }).collect();
            let courses = (0..6).map(|i| Course {
                id: format!("c{i}"), college: "A".into(), department: "X".into(), capacity: 2,
            }).collect();
            let rows: Vec<(usize, usize, f64)> = utils.iter().enumerate()
                .map(|(i, &u)| (i / 6, i % 6, f64::from(u))).collect();
            let inst = Instance::new(students, courses, k, vec![],
                PrioritySource::Mode(PriorityMode::Hybrid), rows).unwrap();
            let schedules: Vec<Vec<usize>> = picks.into_iter()
                .map(|mut p| { p.truncate(k); p }).collect();
            let a = Allocation::from_schedules(schedules);
            let report = check_stability(&inst, &a);
            for s in 0..4 {
                let fast = report.blocks.iter().find(|b| b.student == s).map(|b| b.gain);
                let slow = best_block_brute_force(&inst, &a, s).map(|b| b.gain);
                match (fast, slow) {
                    (None, None) => {}
                    (Some(f), Some(g)) => prop_assert!((f - g).abs() < 1e-9),
                    other => prop_assert!(false, "student {s}: {other:?}"),
                }
            }
        }
    }
}
