use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{set_value, value, UTILITY_EPS};
use crate::instance::{Allocation, Instance};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EnvyProfile {
    /// Per student, the worst depth over comparable students.
    pub depth: Vec<usize>,
    /// `histogram[d]` students have depth `d`, for `d` in `0..=k`.
    pub histogram: Vec<usize>,
}

impl EnvyProfile {
    /// Share of students whose depth is at least `d`.
    pub fn share_at_least(&self, d: usize) -> f64 {
        let n: usize = self.histogram.iter().sum();
        if n == 0 {
            return 0.0;
        }
        self.histogram.iter().skip(d).sum::<usize>() as f64 / n as f64
    }
}

/// Fewest courses to strike from `other` so that `s` no longer prefers it to
/// `own`. Striking her favourites first is optimal for additive utility.
pub fn envy_depth(instance: &Instance, s: usize, own: &[usize], other: &[usize]) -> usize {
    let own_value = set_value(instance, s, own);
    let mut worth: Vec<f64> = other.iter().map(|&c| value(instance, s, c)).collect();
    worth.sort_by(|a, b| b.total_cmp(a));
    let mut rest = set_value(instance, s, other);
    let mut removed = 0;
    while rest > own_value + UTILITY_EPS && removed < worth.len() {
        rest -= worth[removed];
        removed += 1;
    }
    removed
}

/// Envy of every student towards students whose priority is weakly lower at
/// every course.
pub fn envy_profile(instance: &Instance, allocation: &Allocation) -> EnvyProfile {
    let n = instance.num_students();
    let pri = instance.priorities();
    let mut groups: HashMap<&[u8], Vec<usize>> = HashMap::new();
    for s in 0..n {
        groups.entry(pri.row(s)).or_default().push(s);
    }
    let mut groups: Vec<(&[u8], Vec<usize>)> = groups.into_iter().collect();
    groups.sort_by_key(|g| g.1[0]);
    let group_of: Vec<usize> = {
        let mut g = vec![0; n];
        for (i, (_, members)) in groups.iter().enumerate() {
            for &s in members {
                g[s] = i;
            }
        }
        g
    };
    // below[g]: groups whose levels are all weakly lower than g's
    let below: Vec<Vec<usize>> = groups
        .iter()
        .map(|(high, _)| {
            (0..groups.len())
                .filter(|&h| groups[h].0.iter().zip(high.iter()).all(|(lo, hi)| lo <= hi))
                .collect()
        })
        .collect();

    let depth: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|s| {
            let own = allocation.schedule(s);
            let mut worst = 0;
            for &g in &below[group_of[s]] {
                for &other in &groups[g].1 {
                    if other != s {
                        worst = worst.max(envy_depth(instance, s, own, allocation.schedule(other)));
                    }
                }
            }
            worst
        })
        .collect();
    let mut histogram = vec![0; instance.k() + 1];
    for &d in &depth {
        histogram[d.min(instance.k())] += 1;
    }
    EnvyProfile { depth, histogram }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Course, PriorityMode, PrioritySource, Student};
    use proptest::prelude::*;

    fn instance(years: &[u8], k: usize, utils: Vec<(usize, usize, f64)>) -> Instance {
        let students = years
            .iter()
            .enumerate()
            .map(|(i, &year)| Student {
                id: format!("s{i}"),
                college: "A".into(),
                year,
                department: "X".into(),
            })
            .collect();
        let courses = (0..6)
            .map(|i| Course {
                id: format!("c{i}"),
                college: "A".into(),
                department: "X".into(),
                capacity: 3,
            })
            .collect();
        Instance::new(students, courses, k, vec![], PrioritySource::Mode(PriorityMode::Hybrid), utils).unwrap()
    }

    #[test]
    fn identical_schedules_give_no_envy() {
        let inst = instance(&[2, 2], 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 1.0)]);
        assert_eq!(envy_depth(&inst, 0, &[0, 1], &[0, 1]), 0);
        let a = Allocation::from_schedules(vec![vec![0, 1], vec![0, 1]]);
        assert_eq!(envy_profile(&inst, &a).histogram, vec![2, 0, 0]);
    }

    #[test]
    fn one_strike_removes_envy() {
        // own worth 5; the other schedule is worth 9 with its best course at 6
        let inst = instance(&[2, 2], 2, vec![(0, 0, 5.0), (0, 1, 6.0), (0, 2, 3.0)]);
        assert_eq!(envy_depth(&inst, 0, &[0], &[1, 2]), 1);
        let inst = instance(&[2, 2], 2, vec![(0, 0, 1.0), (0, 1, 6.0), (0, 2, 3.0)]);
        assert_eq!(envy_depth(&inst, 0, &[0], &[1, 2]), 2);
    }

    #[test]
    fn only_weakly_lower_priority_students_count() {
        let inst = instance(&[1, 4], 1, vec![(0, 0, 1.0), (0, 1, 5.0), (1, 1, 1.0)]);
        let a = Allocation::from_schedules(vec![vec![0], vec![1]]);
        // the junior envies the senior, who is not comparable to her
        assert_eq!(envy_profile(&inst, &a).depth, vec![0, 0]);
        let inst = instance(&[4, 1], 1, vec![(0, 0, 1.0), (0, 1, 5.0), (1, 1, 1.0)]);
        assert_eq!(envy_profile(&inst, &a).depth, vec![1, 0]);
    }

    proptest! {
        #[test]
        fn greedy_depth_matches_enumeration(
            utils in prop::collection::vec(-3i32..8, 6),
            own in prop::collection::btree_set(0usize..6, 0..4),
            other in prop::collection::btree_set(0usize..6, 0..4),
        ) {
            let rows = utils.iter().enumerate().map(|(c, &u)| (0, c, f64::from(u))).collect();
            let inst = instance(&[1, 1], 3, rows);
            let own: Vec<usize> = own.into_iter().collect();
            let other: Vec<usize> = other.into_iter().collect();
            let own_value = set_value(&inst, 0, &own);
            let mut best = other.len();
            for mask in 0u32..(1 << other.len()) {
                let kept: Vec<usize> = (0..other.len()).filter(|i| mask >> i & 1 == 0).map(|i| other[i]).collect();
                if set_value(&inst, 0, &kept) <= own_value + UTILITY_EPS {
                    best = best.min(mask.count_ones() as usize);
                }
            }
            prop_assert_eq!(envy_depth(&inst, 0, &own, &other), best);
        }
    }
}
