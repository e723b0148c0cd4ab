//! Feasibility of reserve systems against a target assignment, and the
//! minimal reserve adjustment that restores feasibility.
//!
//! Seats of a course are split into one pool per criterion plus the
//! unreserved remainder. A student may sit in a criterion's pool only if she
//! meets the criterion. Students are grouped into cells by the exact set of
//! criteria they meet; the system is feasible iff every student can be seated.

use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance, ReserveSpec};

/// Most criteria per course handled by the subset enumeration.
pub const MAX_CRITERIA: usize = 20;

/// Largest student count the matching oracle accepts.
pub const ORACLE_MAX_STUDENTS: u64 = 200;

/// One course's reserve structure together with the students to be seated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReserveSystem {
    pub capacity: u32,
    /// Seats held for each criterion.
    pub reserved: Vec<u32>,
    /// `cells[mask]` counts students meeting exactly the criteria in `mask`.
    /// `cells[0]` are students meeting none.
    pub cells: Vec<u32>,
}

impl ReserveSystem {
    pub fn new(capacity: u32, reserved: Vec<u32>) -> Self {
        assert!(reserved.len() <= MAX_CRITERIA, "too many criteria");
        let cells = vec![0; 1 << reserved.len()];
        ReserveSystem {
            capacity,
            reserved,
            cells,
        }
    }

    pub fn num_criteria(&self) -> usize {
        self.reserved.len()
    }

    pub fn total_students(&self) -> u64 {
        self.cells.iter().map(|&x| u64::from(x)).sum()
    }

    pub fn total_reserved(&self) -> u64 {
        self.reserved.iter().map(|&r| u64::from(r)).sum()
    }

    /// Builds the system for course `c` from the students holding it.
    pub fn for_course(instance: &Instance, roster: &[usize], c: usize) -> Self {
        Self::for_course_with(instance, instance.reserves(), roster, c)
    }

    /// As [`ReserveSystem::for_course`] with a substitute reserve list that
    /// shares the instance's per-course indexing.
    pub fn for_course_with(
        instance: &Instance,
        reserves: &[ReserveSpec],
        roster: &[usize],
        c: usize,
    ) -> Self {
        let specs = instance.course_reserves(c);
        let mut system = ReserveSystem::new(
            instance.capacity(c),
            specs.iter().map(|&i| reserves[i].seats).collect(),
        );
        for &s in roster {
            let student = instance.student(s);
            let mask = specs
                .iter()
                .enumerate()
                .filter(|&(_, &i)| reserves[i].is_eligible(student))
                .fold(0usize, |m, (bit, _)| m | (1 << bit));
            system.cells[mask] += 1;
        }
        system
    }
}

/// Hall's condition: for every set `U` of criteria, the students whose cells
/// lie inside `U` fit in the unreserved seats plus the pools of `U`.
pub fn is_feasible(system: &ReserveSystem) -> bool {
    let n = system.num_criteria();
    let full = (1usize << n) - 1;
    let capacity = i64::from(system.capacity);
    let total_reserved = system.total_reserved() as i64;
    if total_reserved > capacity {
        return false;
    }
    // students in cells that are subsets of each U (zeta transform)
    let mut inside: Vec<i64> = system.cells.iter().map(|&x| i64::from(x)).collect();
    for bit in 0..n {
        for mask in 0..=full {
            if mask & (1 << bit) != 0 {
                inside[mask] += inside[mask ^ (1 << bit)];
            }
        }
    }
    (0..=full).all(|u| {
        let outside: i64 = (0..n)
            .filter(|j| u & (1 << j) == 0)
            .map(|j| i64::from(system.reserved[j]))
            .sum();
        inside[u] <= capacity - outside
    })
}

/// Independent check: seats every student by maximum bipartite matching.
pub fn feasibility_oracle(system: &ReserveSystem) -> Result<bool> {
    let students = system.total_students();
    if students > ORACLE_MAX_STUDENTS {
        return Err(Error::SizeGuard(format!(
            "matching oracle takes at most {ORACLE_MAX_STUDENTS} students, got {students}"
        )));
    }
    if system.total_reserved() > u64::from(system.capacity) {
        return Ok(false);
    }
    if students > u64::from(system.capacity) {
        return Ok(false);
    }
    // seat kinds: criterion index, or None for unreserved
    let mut seats: Vec<Option<usize>> = Vec::with_capacity(system.capacity as usize);
    for (i, &r) in system.reserved.iter().enumerate() {
        seats.extend(std::iter::repeat_n(Some(i), r as usize));
    }
    seats.resize(system.capacity as usize, None);

    let mut adjacency: Vec<Vec<usize>> = Vec::new();
    for (mask, &count) in system.cells.iter().enumerate() {
        let options: Vec<usize> = seats
            .iter()
            .enumerate()
            .filter(|(_, kind)| kind.is_none_or(|i| mask & (1 << i) != 0))
            .map(|(j, _)| j)
            .collect();
        for _ in 0..count {
            adjacency.push(options.clone());
        }
    }

    let mut seat_owner: Vec<Option<usize>> = vec![None; seats.len()];
    for student in 0..adjacency.len() {
        let mut visited = vec![false; seats.len()];
        if !augment(student, &adjacency, &mut seat_owner, &mut visited) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn augment(
    student: usize,
    adjacency: &[Vec<usize>],
    owner: &mut [Option<usize>],
    visited: &mut [bool],
) -> bool {
    for &seat in &adjacency[student] {
        if visited[seat] {
            continue;
        }
        visited[seat] = true;
        let free = match owner[seat] {
            None => true,
            Some(other) => augment(other, adjacency, owner, visited),
        };
        if free {
            owner[seat] = Some(student);
            return true;
        }
    }
    false
}

/// One reserve spec whose seat count was lowered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReserveChange {
    pub course: usize,
    /// Index into the instance's reserve list.
    pub spec_index: usize,
    pub old_seats: u32,
    pub new_seats: u32,
}

/// Lowers reserves until each course can seat its holders under `allocation`.
///
/// Over-enrolled courses are first treated as having capacity equal to their
/// enrollment. Specs are decremented one seat at a time, cycling through them
/// by year of study descending (all-years specs first, then file order),
/// skipping specs already at zero.
pub fn adjust_reserves(
    instance: &Instance,
    allocation: &Allocation,
) -> (Vec<ReserveSpec>, Vec<ReserveChange>) {
    let mut reserves = instance.reserves().to_vec();
    let mut log = Vec::new();
    let rosters = allocation.rosters(instance.num_courses());
    for (c, roster) in rosters.iter().enumerate() {
        let specs = instance.course_reserves(c);
        if specs.is_empty() {
            continue;
        }
        let mut system = ReserveSystem::for_course(instance, roster, c);
        system.capacity = system.capacity.max(roster.len() as u32);
        if is_feasible(&system) {
            continue;
        }
        let mut order: Vec<usize> = (0..specs.len()).collect();
        order.sort_by_key(|&local| std::cmp::Reverse(reserves[specs[local]].year_rank()));

        let old: Vec<u32> = system.reserved.clone();
        let mut cursor = 0;
        while !is_feasible(&system) {
            let Some(step) = (0..order.len())
                .map(|o| (cursor + o) % order.len())
                .find(|&o| system.reserved[order[o]] > 0)
            else {
                break;
            };
            system.reserved[order[step]] -= 1;
            cursor = (step + 1) % order.len();
        }
        for (local, &global) in specs.iter().enumerate() {
            if system.reserved[local] != old[local] {
                reserves[global].seats = system.reserved[local];
                log.push(ReserveChange {
                    course: c,
                    spec_index: global,
                    old_seats: old[local],
                    new_seats: system.reserved[local],
                });
            }
        }
    }
    (reserves, log)
}

/// Courses whose reserves cannot seat their holders under `allocation`.
pub fn infeasible_courses(instance: &Instance, allocation: &Allocation) -> Vec<usize> {
    let rosters = allocation.rosters(instance.num_courses());
    rosters
        .iter()
        .enumerate()
        .filter(|(c, roster)| !is_feasible(&ReserveSystem::for_course(instance, roster, *c)))
        .map(|(c, _)| c)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Course, PriorityMode, PrioritySource, Scope, Student};

    fn two_criteria(x0: u32) -> ReserveSystem {
        let mut s = ReserveSystem::new(10, vec![3, 4]);
        s.cells[0] = x0;
        s
    }

    #[test]
    fn hand_evaluated_systems() {
        assert!(is_feasible(&two_criteria(3)));
        assert!(!is_feasible(&two_criteria(4)));
        let mut none = ReserveSystem::new(5, vec![]);
        none.cells[0] = 5;
        assert!(is_feasible(&none));
        for sys in [two_criteria(3), two_criteria(4), none] {
            assert_eq!(feasibility_oracle(&sys).unwrap(), is_feasible(&sys));
        }
    }

    #[test]
    fn oracle_edge_cases() {
        let mut full = ReserveSystem::new(4, vec![4]);
        full.cells[0] = 1;
        assert!(!feasibility_oracle(&full).unwrap());
        let mut open = ReserveSystem::new(6, vec![0, 0]);
        open.cells = vec![1, 2, 1, 2];
        assert!(feasibility_oracle(&open).unwrap());
        let mut big = ReserveSystem::new(500, vec![]);
        big.cells[0] = 201;
        assert!(matches!(feasibility_oracle(&big), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn eligible_students_use_pools() {
        // 3 seats, 2 reserved for criterion 0; 2 eligible + 1 ineligible fit
        let mut s = ReserveSystem::new(3, vec![2]);
        s.cells = vec![1, 2];
        assert!(is_feasible(&s));
        s.cells = vec![2, 1];
        assert!(!is_feasible(&s));
        assert!(!feasibility_oracle(&s).unwrap());
    }

    fn fixture(reserve_seats: Vec<(Scope<u8>, u32)>, holders: Vec<u8>) -> (Instance, Allocation) {
        let students: Vec<Student> = holders
            .iter()
            .enumerate()
            .map(|(i, &year)| Student {
                id: format!("s{i}"),
                college: "A".into(),
                year,
                department: "D".into(),
            })
            .collect();
        let courses = vec![
            Course {
                id: "C".into(),
                college: "A".into(),
                department: "D".into(),
                capacity: 5,
            },
            Course {
                id: "Other".into(),
                college: "A".into(),
                department: "D".into(),
                capacity: 5,
            },
        ];
        let reserves = reserve_seats
            .into_iter()
            .map(|(years, seats)| ReserveSpec {
                course: 0,
                departments: Scope::Only(["D".to_string()].into()),
                years,
                seats,
            })
            .collect();
        let n = students.len();
        let inst = Instance::new(
            students,
            courses,
            1,
            reserves,
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![],
        )
        .unwrap();
        (inst, Allocation::from_schedules(vec![vec![0]; n]))
    }

    #[test]
    fn adjustment_decrements_offending_spec() {
        // q=5, 4 seats for year-4 students, three year-1 holders: two too many
        let (inst, alloc) = fixture(vec![(Scope::Only([4].into()), 4)], vec![1, 1, 1]);
        assert_eq!(infeasible_courses(&inst, &alloc), vec![0]);
        let (adjusted, log) = adjust_reserves(&inst, &alloc);
        assert_eq!(adjusted[0].seats, 2);
        assert_eq!(
            log,
            vec![ReserveChange {
                course: 0,
                spec_index: 0,
                old_seats: 4,
                new_seats: 2
            }]
        );
        let fixed = inst.with_reserves(adjusted).unwrap();
        assert!(infeasible_courses(&fixed, &alloc).is_empty());
    }

    #[test]
    fn feasible_course_is_untouched() {
        let (inst, alloc) = fixture(vec![(Scope::Only([4].into()), 2)], vec![4, 4, 1]);
        let (adjusted, log) = adjust_reserves(&inst, &alloc);
        assert!(log.is_empty());
        assert_eq!(adjusted, inst.reserves());
    }

    #[test]
    fn cycles_in_year_descending_order_skipping_zeros() {
        // specs: year 3 with 1 seat, year 4 with 3 seats; five year-1 holders
        let (inst, alloc) = fixture(
            vec![(Scope::Only([3].into()), 1), (Scope::Only([4].into()), 3)],
            vec![1, 1, 1, 1, 1],
        );
        let (adjusted, _) = adjust_reserves(&inst, &alloc);
        // year-4 first, then year-3, then year-4 again (year-3 now empty)...
        assert_eq!(adjusted[1].seats, 0);
        assert_eq!(adjusted[0].seats, 0);
    }

    #[test]
    fn over_enrolled_course_uses_enrollment_as_capacity() {
        let (inst, alloc) = fixture(vec![(Scope::Only([4].into()), 5)], vec![4, 4, 4, 4, 4, 4, 1]);
        // 7 holders on q=5: capacity becomes 7, 5 reserved, 1 ineligible fits
        let (adjusted, log) = adjust_reserves(&inst, &alloc);
        assert!(log.is_empty(), "{log:?}");
        assert_eq!(adjusted[0].seats, 5);
    }
}
