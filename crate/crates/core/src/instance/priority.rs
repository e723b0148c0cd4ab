use serde::{Deserialize, Serialize};

use super::{ReserveSpec, Student};
use crate::error::{Error, Result};

/// Priority level in `1..=R`; larger is higher.
pub type PriorityLevel = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorityMode {
    /// `2·year − 1 + eligible`, R = 8.
    Hybrid,
    /// Ineligible students on levels 1–4 by year, eligible ones on 5–8.
    DepartmentFirst,
    /// Everybody on level 1, R = 1.
    Flat,
    /// Levels given verbatim in the instance file.
    Explicit,
}

impl PriorityMode {
    pub fn depth(self) -> u8 {
        match self {
            PriorityMode::Hybrid | PriorityMode::DepartmentFirst => 8,
            PriorityMode::Flat => 1,
            PriorityMode::Explicit => 1,
        }
    }
}

/// Dense student × course matrix of priority levels.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorityStructure {
    mode: PriorityMode,
    depth: u8,
    num_courses: usize,
    levels: Vec<u8>,
}

impl PriorityStructure {
    pub fn flat(num_students: usize, num_courses: usize) -> Self {
        PriorityStructure {
            mode: PriorityMode::Flat,
            depth: 1,
            num_courses,
            levels: vec![1; num_students * num_courses],
        }
    }

    pub(crate) fn explicit(
        num_students: usize,
        num_courses: usize,
        depth: u8,
        entries: &[(usize, usize, u8)],
        describe: impl Fn(usize, usize) -> String,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("priority depth R must be at least 1"));
        }
        let mut levels = vec![1u8; num_students * num_courses];
        for &(s, c, level) in entries {
            if s >= num_students || c >= num_courses {
                return Err(Error::invalid(format!(
                    "priority entry ({s}, {c}) refers to an unknown student or course"
                )));
            }
            if level == 0 || level > depth {
                return Err(Error::invalid(format!(
                    "priority level {level} for {} outside 1..={depth}",
                    describe(s, c)
                )));
            }
            levels[s * num_courses + c] = level;
        }
        Ok(PriorityStructure {
            mode: PriorityMode::Explicit,
            depth,
            num_courses,
            levels,
        })
    }

    pub fn mode(&self) -> PriorityMode {
        self.mode
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn level(&self, s: usize, c: usize) -> PriorityLevel {
        self.levels[s * self.num_courses + c]
    }

    /// Student `s`'s level at every course.
    pub fn row(&self, s: usize) -> &[u8] {
        &self.levels[s * self.num_courses..(s + 1) * self.num_courses]
    }

    /// Entries that differ from level 1, as written to instance files.
    pub fn explicit_entries(&self) -> Vec<(usize, usize, u8)> {
        if self.num_courses == 0 {
            return Vec::new();
        }
        self.levels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l != 1)
            .map(|(i, &l)| (i / self.num_courses, i % self.num_courses, l))
            .collect()
    }
}

/// Computes the priority matrix from years and reserve eligibility.
/// `reserves_by_course[c]` lists indices into `reserves`.
pub fn build_priorities(
    students: &[Student],
    num_courses: usize,
    reserves: &[ReserveSpec],
    reserves_by_course: &[Vec<usize>],
    mode: PriorityMode,
) -> PriorityStructure {
    if matches!(mode, PriorityMode::Flat | PriorityMode::Explicit) {
        return PriorityStructure::flat(students.len(), num_courses);
    }
    let mut levels = Vec::with_capacity(students.len() * num_courses);
    for student in students {
        for specs in reserves_by_course.iter().take(num_courses) {
            let eligible = specs.iter().any(|&i| reserves[i].is_eligible(student));
            levels.push(level_for(mode, student.year, eligible));
        }
    }
    PriorityStructure {
        mode,
        depth: mode.depth(),
        num_courses,
        levels,
    }
}

fn level_for(mode: PriorityMode, year: u8, eligible: bool) -> u8 {
    match mode {
        PriorityMode::Hybrid => 2 * year - 1 + u8::from(eligible),
        PriorityMode::DepartmentFirst => year + if eligible { 4 } else { 0 },
        PriorityMode::Flat | PriorityMode::Explicit => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Scope;

    fn real_analysis() -> (Vec<Student>, Vec<ReserveSpec>) {
        let st = |id: &str, year, dept: &str| Student {
            id: id.into(),
            college: "A".into(),
            year,
            department: dept.into(),
        };
        let students = vec![
            st("y4d2", 4, "Dept2"),
            st("y4other", 4, "Dept9"),
            st("y3d2", 3, "Dept2"),
            st("y2d2", 2, "Dept2"),
            st("y1other", 1, "Dept9"),
        ];
        let spec = ReserveSpec {
            course: 0,
            departments: Scope::Only(["Dept2".to_string()].into()),
            years: Scope::Only([3, 4].into()),
            seats: 10,
        };
        (students, vec![spec])
    }

    #[test]
    fn hybrid_levels_follow_reserve_eligibility() {
        let (students, reserves) = real_analysis();
        let p = build_priorities(&students, 2, &reserves, &[vec![0], vec![]], PriorityMode::Hybrid);
        let col0: Vec<u8> = (0..5).map(|s| p.level(s, 0)).collect();
        assert_eq!(col0, vec![8, 7, 6, 3, 1]);
        // no reserves on the second course: odd levels by year only
        let col1: Vec<u8> = (0..5).map(|s| p.level(s, 1)).collect();
        assert_eq!(col1, vec![7, 7, 5, 3, 1]);
        assert_eq!(p.depth(), 8);
    }

    #[test]
    fn department_first_levels() {
        let (students, reserves) = real_analysis();
        let p = build_priorities(&students, 1, &reserves, &[vec![0]], PriorityMode::DepartmentFirst);
        assert_eq!(p.level(2, 0), 7);
        assert_eq!(p.level(1, 0), 4);
        assert_eq!(p.level(0, 0), 8);
        assert_eq!(p.level(3, 0), 2);
    }

    #[test]
    fn hybrid_formula_for_every_year() {
        for year in 1..=4u8 {
            for eligible in [false, true] {
                let level = level_for(PriorityMode::Hybrid, year, eligible);
                assert_eq!(level, 2 * year - 1 + u8::from(eligible));
                assert!((1..=8).contains(&level));
            }
        }
    }

    #[test]
    fn flat_is_all_ones() {
        let (students, reserves) = real_analysis();
        let p = build_priorities(&students, 1, &reserves, &[vec![0]], PriorityMode::Flat);
        assert!((0..5).all(|s| p.level(s, 0) == 1));
        assert_eq!(p.depth(), 1);
    }

    #[test]
    fn explicit_rejects_out_of_range_level() {
        let err = PriorityStructure::explicit(1, 1, 2, &[(0, 0, 3)], |_, _| "s/c".into());
        assert!(err.is_err());
        let ok = PriorityStructure::explicit(2, 2, 2, &[(1, 0, 2)], |_, _| String::new()).unwrap();
        assert_eq!(ok.explicit_entries(), vec![(1, 0, 2)]);
        assert_eq!(ok.level(0, 0), 1);
    }
}
