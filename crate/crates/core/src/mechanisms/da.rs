use super::{positions, preference_list, specs_by_year};
use crate::instance::{Allocation, Instance};

/// How courses order students within a priority level.
#[derive(Clone, Debug)]
pub enum TieBreak {
    /// One ranking shared by every course.
    Single(Vec<usize>),
    /// One ranking per course.
    Multiple(Vec<Vec<usize>>),
}

impl TieBreak {
    fn positions(&self, num_courses: usize) -> Vec<Vec<usize>> {
        match self {
            TieBreak::Single(rank) => vec![positions(rank); num_courses],
            TieBreak::Multiple(ranks) => ranks.iter().map(|r| positions(r)).collect(),
        }
    }
}

/// Student-proposing deferred acceptance for multi-unit demand. Students
/// propose in batches to their next best courses until they hold `k` or run
/// out. With `minority_reserves`, each course first fills its reserve pools
/// (year-descending) with eligible applicants, then the rest of its seats.
pub fn da(instance: &Instance, tie_break: &TieBreak, minority_reserves: bool) -> Allocation {
    let n = instance.num_students();
    let m = instance.num_courses();
    let k = instance.k();
    let pos = tie_break.positions(m);
    let prefs: Vec<Vec<usize>> = (0..n).map(|s| preference_list(instance, s)).collect();
    let pools: Vec<Vec<usize>> = (0..m).map(|c| specs_by_year(instance, c)).collect();

    let mut next = vec![0usize; n];
    let mut holding = vec![0usize; n];
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut proposals: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut active: Vec<usize> = (0..n).collect();

    while !active.is_empty() {
        let mut touched = Vec::new();
        for &s in &active {
            while holding[s] < k && next[s] < prefs[s].len() {
                let c = prefs[s][next[s]];
                next[s] += 1;
                holding[s] += 1;
                if proposals[c].is_empty() {
                    touched.push(c);
                }
                proposals[c].push(s);
            }
        }
        let mut rejected = Vec::new();
        for c in touched {
            let mut pool = std::mem::take(&mut held[c]);
            pool.append(&mut proposals[c]);
            pool.sort_by_key(|&s| (std::cmp::Reverse(instance.level(s, c)), pos[c][s]));
            let kept = if minority_reserves {
                choose_with_reserves(instance, c, &pools[c], &pool)
            } else {
                let q = instance.capacity(c) as usize;
                let mut flags = vec![false; pool.len()];
                flags.iter_mut().take(q).for_each(|f| *f = true);
                flags
            };
            for (&s, keep) in pool.iter().zip(kept) {
                if keep {
                    held[c].push(s);
                } else {
                    holding[s] -= 1;
                    rejected.push(s);
                }
            }
        }
        rejected.sort_unstable();
        rejected.dedup();
        active = rejected
            .into_iter()
            .filter(|&s| next[s] < prefs[s].len())
            .collect();
    }

    let mut schedules = vec![Vec::new(); n];
    for (c, students) in held.iter().enumerate() {
        for &s in students {
            schedules[s].push(c);
        }
    }
    Allocation::from_schedules(schedules)
}

/// Which of the ranked applicants `pool` course `c` keeps.
fn choose_with_reserves(instance: &Instance, c: usize, specs: &[usize], pool: &[usize]) -> Vec<bool> {
    let mut keep = vec![false; pool.len()];
    let mut taken = 0usize;
    for &spec in specs {
        let reserve = &instance.reserves()[spec];
        let mut left = reserve.seats as usize;
        for (i, &s) in pool.iter().enumerate() {
            if left == 0 {
                break;
            }
            if !keep[i] && reserve.is_eligible(instance.student(s)) {
                keep[i] = true;
                left -= 1;
                taken += 1;
            }
        }
    }
    let mut free = instance.capacity(c) as usize - taken;
    for flag in keep.iter_mut() {
        if free == 0 {
            break;
        }
        if !*flag {
            *flag = true;
            free -= 1;
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Course, PriorityMode, PrioritySource, ReserveSpec, Scope, Student};

    fn student(id: &str, year: u8, dept: &str) -> Student {
        Student {
            id: id.into(),
            college: "A".into(),
            year,
            department: dept.into(),
        }
    }

    fn course(id: &str, q: u32) -> Course {
        Course {
            id: id.into(),
            college: "A".into(),
            department: "X".into(),
            capacity: q,
        }
    }

    #[test]
    fn priority_beats_tie_break() {
        let inst = Instance::new(
            vec![student("a", 1, "Y"), student("b", 4, "Y")],
            vec![course("C", 1), course("D", 1)],
            1,
            vec![],
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 2.0), (1, 1, 1.0)],
        )
        .unwrap();
        let a = da(&inst, &TieBreak::Single(vec![0, 1]), false);
        assert_eq!(a.schedules, vec![vec![1], vec![0]]);
    }

    #[test]
    fn minority_reserve_holds_seat_for_eligible() {
        let reserve = ReserveSpec {
            course: 0,
            departments: Scope::Only(["X".to_string()].into()),
            years: Scope::All,
            seats: 1,
        };
        let inst = Instance::new(
            vec![student("a", 4, "Y"), student("b", 4, "Y"), student("c", 1, "Y")],
            vec![course("C", 2), course("D", 3)],
            1,
            vec![reserve],
            PrioritySource::Mode(PriorityMode::Flat),
            vec![(0, 0, 2.0), (1, 0, 2.0), (2, 0, 2.0)],
        )
        .unwrap();
        // Nobody is eligible, so the reserve pool falls through to regular seats.
        let a = da(&inst, &TieBreak::Single(vec![2, 1, 0]), true);
        assert_eq!(a.enrollment(2)[0], 2);
        assert_eq!(a.schedules[0], Vec::<usize>::new());

        let mut students = inst.students().to_vec();
        students[0].department = "X".into();
        let inst = Instance::new(
            students,
            inst.courses().to_vec(),
            1,
            inst.reserves().to_vec(),
            PrioritySource::Mode(PriorityMode::Flat),
            vec![(0, 0, 2.0), (1, 0, 2.0), (2, 0, 2.0)],
        )
        .unwrap();
        let a = da(&inst, &TieBreak::Single(vec![2, 1, 0]), true);
        assert_eq!(a.schedules, vec![vec![0], vec![], vec![0]]);
        let plain = da(&inst, &TieBreak::Single(vec![2, 1, 0]), false);
        assert_eq!(plain.schedules, vec![vec![], vec![0], vec![0]]);
    }

    #[test]
    fn multi_unit_students_hold_up_to_k() {
        let inst = Instance::new(
            vec![student("a", 2, "Y"), student("b", 3, "Y")],
            (0..4).map(|i| course(&format!("C{i}"), 1)).collect(),
            2,
            vec![],
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![
                (0, 0, 4.0),
                (0, 1, 3.0),
                (0, 2, 2.0),
                (1, 0, 4.0),
                (1, 2, 3.0),
                (1, 3, 1.0),
            ],
        )
        .unwrap();
        let a = da(&inst, &TieBreak::Single(vec![0, 1]), false);
        assert_eq!(a.schedules, vec![vec![1], vec![0, 2]]);
    }
}
