//! Course-allocation instances: students, courses, capacities, reserves,
//! priorities and additive utilities.
//!
//! An [`Instance`] is immutable once built. Every constructor path goes through
//! [`Instance::new`], which validates the whole problem and computes the
//! priority matrix, so downstream modules never re-check invariants.

mod io;
mod priority;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use io::{
    load_allocation, load_instance, load_reserves, parse_instance, save_allocation,
    save_instance, save_reserves, write_allocation, AllocationFile,
};
pub use priority::{build_priorities, PriorityLevel, PriorityMode, PriorityStructure};

/// Number of study years. Fifth-year students are folded into year 4.
pub const YEARS: u8 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Student {
    pub id: String,
    #[serde(default)]
    pub college: String,
    pub year: u8,
    #[serde(default)]
    pub department: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Course {
    pub id: String,
    #[serde(default)]
    pub college: String,
    #[serde(default)]
    pub department: String,
    pub capacity: u32,
}

/// Either every value, or an explicit set. Serialized as `"All"` or a list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scope<T: Ord> {
    All,
    Only(BTreeSet<T>),
}

impl<T: Ord> Scope<T> {
    pub fn contains(&self, value: &T) -> bool {
        match self {
            Scope::All => true,
            Scope::Only(set) => set.contains(value),
        }
    }

    pub fn is_all(&self) -> bool {
        matches!(self, Scope::All)
    }
}

impl<T: Ord + Serialize> Serialize for Scope<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Scope::All => serializer.serialize_str("All"),
            Scope::Only(set) => set.serialize(serializer),
        }
    }
}

impl<'de, T: Ord + Deserialize<'de>> Deserialize<'de> for Scope<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw<T: Ord> {
            Tag(String),
            List(BTreeSet<T>),
        }
        match Raw::<T>::deserialize(deserializer)? {
            Raw::Tag(s) if s == "All" => Ok(Scope::All),
            Raw::Tag(s) => Err(serde::de::Error::custom(format!(
                "expected \"All\" or a list, found \"{s}\""
            ))),
            Raw::List(set) => Ok(Scope::Only(set)),
        }
    }
}

/// Seats of one course set aside for students matching a department/year
/// criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct ReserveSpec {
    pub course: usize,
    pub departments: Scope<String>,
    pub years: Scope<u8>,
    pub seats: u32,
}

impl ReserveSpec {
    pub fn is_eligible(&self, student: &Student) -> bool {
        self.departments.contains(&student.department) && self.years.contains(&student.year)
    }

    /// Sort key for "year of study in decreasing order". An all-years spec
    /// covers year 4 and sorts first.
    pub fn year_rank(&self) -> u8 {
        match &self.years {
            Scope::All => YEARS + 1,
            Scope::Only(set) => set.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Sparse additive utilities. A course missing from a student's row is not
/// in her choice set and is never demanded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Utilities {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Utilities {
    /// Rows must be sorted by course index without duplicates.
    pub(crate) fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        Utilities { rows }
    }

    pub fn row(&self, student: usize) -> &[(usize, f64)] {
        &self.rows[student]
    }

    pub fn get(&self, student: usize, course: usize) -> Option<f64> {
        let row = &self.rows[student];
        row.binary_search_by_key(&course, |&(c, _)| c)
            .ok()
            .map(|i| row[i].1)
    }

    pub fn num_entries(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    students: Vec<Student>,
    courses: Vec<Course>,
    k: usize,
    reserves: Vec<ReserveSpec>,
    priorities: PriorityStructure,
    utilities: Utilities,
    student_index: HashMap<String, usize>,
    course_index: HashMap<String, usize>,
    reserves_by_course: Vec<Vec<usize>>,
}

/// How priority levels are obtained when building an instance.
#[derive(Clone, Debug)]
pub enum PrioritySource {
    Mode(PriorityMode),
    /// Explicit `(student, course, level)` entries; missing pairs get level 1.
    Explicit {
        depth: u8,
        entries: Vec<(usize, usize, u8)>,
    },
}

impl Instance {
    /// Validates and assembles an instance. Utility triples are
    /// `(student index, course index, value)`.
    pub fn new(
        students: Vec<Student>,
        courses: Vec<Course>,
        k: usize,
        reserves: Vec<ReserveSpec>,
        priorities: PrioritySource,
        utilities: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let student_index = index_ids(students.iter().map(|s| s.id.as_str()), "student")?;
        let course_index = index_ids(courses.iter().map(|c| c.id.as_str()), "course")?;

        for s in &students {
            if !(1..=YEARS).contains(&s.year) {
                return Err(Error::invalid(format!(
                    "student {}: year {} outside 1..={YEARS}",
                    s.id, s.year
                )));
            }
        }
        let m = courses.len();
        if k == 0 || 2 * k > m {
            return Err(Error::invalid(format!(
                "schedule size k={k} must satisfy 1 <= k <= M/2 with M={m}"
            )));
        }

        let reserves_by_course = validate_reserves(&courses, &reserves)?;

        let n = students.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(s, c, value) in &utilities {
            if s >= n || c >= m {
                return Err(Error::invalid(format!(
                    "utility entry ({s}, {c}) refers to an unknown student or course"
                )));
            }
            if !value.is_finite() {
                return Err(Error::invalid(format!(
                    "utility of student {} for course {} is not finite",
                    students[s].id, courses[c].id
                )));
            }
            rows[s].push((c, value));
        }
        for (s, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::invalid(format!(
                    "duplicate utility for student {} and course {}",
                    students[s].id, courses[w[0].0].id
                )));
            }
        }

        let priorities = match priorities {
            PrioritySource::Mode(mode) => {
                build_priorities(&students, m, &reserves, &reserves_by_course, mode)
            }
            PrioritySource::Explicit { depth, entries } => {
                PriorityStructure::explicit(n, m, depth, &entries, |s, c| {
                    format!("{}/{}", students[s].id, courses[c].id)
                })?
            }
        };

        Ok(Instance {
            students,
            courses,
            k,
            reserves,
            priorities,
            utilities: Utilities::from_rows(rows),
            student_index,
            course_index,
            reserves_by_course,
        })
    }

    pub fn num_students(&self) -> usize {
        self.students.len()
    }

    pub fn num_courses(&self) -> usize {
        self.courses.len()
    }

    pub fn students(&self) -> &[Student] {
        &self.students
    }

    pub fn student(&self, s: usize) -> &Student {
        &self.students[s]
    }

    pub fn courses(&self) -> &[Course] {
        &self.courses
    }

    pub fn course(&self, c: usize) -> &Course {
        &self.courses[c]
    }

    pub fn capacity(&self, c: usize) -> u32 {
        self.courses[c].capacity
    }

    pub fn capacities(&self) -> Vec<u32> {
        self.courses.iter().map(|c| c.capacity).collect()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reserves(&self) -> &[ReserveSpec] {
        &self.reserves
    }

    /// Indices into [`Instance::reserves`] for one course, in file order.
    pub fn course_reserves(&self, c: usize) -> &[usize] {
        &self.reserves_by_course[c]
    }

    pub fn priorities(&self) -> &PriorityStructure {
        &self.priorities
    }

    pub fn depth(&self) -> u8 {
        self.priorities.depth()
    }

    pub fn level(&self, s: usize, c: usize) -> u8 {
        self.priorities.level(s, c)
    }

    pub fn utilities(&self) -> &Utilities {
        &self.utilities
    }

    pub fn utility(&self, s: usize, c: usize) -> Option<f64> {
        self.utilities.get(s, c)
    }

    pub fn student_by_id(&self, id: &str) -> Option<usize> {
        self.student_index.get(id).copied()
    }

    pub fn course_by_id(&self, id: &str) -> Option<usize> {
        self.course_index.get(id).copied()
    }

    /// Additive value of a schedule for student `s`; `None` when the schedule
    /// contains a course outside her choice set.
    pub fn schedule_value(&self, s: usize, courses: &[usize]) -> Option<f64> {
        let mut sorted: Vec<usize> = courses.to_vec();
        sorted.sort_unstable();
        sorted
            .iter()
            .try_fold(0.0, |acc, &c| self.utility(s, c).map(|u| acc + u))
    }

    /// Same structure with a different reserve list. Priorities are rebuilt
    /// for the structural modes and kept verbatim for explicit ones.
    pub fn with_reserves(&self, reserves: Vec<ReserveSpec>) -> Result<Self> {
        let reserves_by_course = validate_reserves(&self.courses, &reserves)?;
        let priorities = match self.priorities.mode() {
            PriorityMode::Explicit => self.priorities.clone(),
            mode => build_priorities(
                &self.students,
                self.courses.len(),
                &reserves,
                &reserves_by_course,
                mode,
            ),
        };
        Ok(Instance {
            reserves,
            reserves_by_course,
            priorities,
            ..self.clone()
        })
    }

    /// Same structure with every course at level 1 (`R = 1`).
    pub fn with_flat_priorities(&self) -> Self {
        Instance {
            priorities: PriorityStructure::flat(self.num_students(), self.num_courses()),
            ..self.clone()
        }
    }

    /// Same population and priorities with new utilities.
    pub fn with_utilities(&self, utilities: Vec<(usize, usize, f64)>) -> Result<Self> {
        let source = match self.priorities.mode() {
            PriorityMode::Explicit => PrioritySource::Explicit {
                depth: self.depth(),
                entries: self.priorities.explicit_entries(),
            },
            mode => PrioritySource::Mode(mode),
        };
        Instance::new(
            self.students.clone(),
            self.courses.clone(),
            self.k,
            self.reserves.clone(),
            source,
            utilities,
        )
    }
}

fn index_ids<'a>(
    ids: impl Iterator<Item = &'a str>,
    what: &str,
) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (i, id) in ids.enumerate() {
        if index.insert(id.to_string(), i).is_some() {
            return Err(Error::invalid(format!("duplicate {what} id {id}")));
        }
    }
    Ok(index)
}

fn validate_reserves(courses: &[Course], reserves: &[ReserveSpec]) -> Result<Vec<Vec<usize>>> {
    let mut by_course = vec![Vec::new(); courses.len()];
    for (i, spec) in reserves.iter().enumerate() {
        let Some(list) = by_course.get_mut(spec.course) else {
            return Err(Error::invalid(format!(
                "reserve #{i} refers to unknown course index {}",
                spec.course
            )));
        };
        if let Scope::Only(years) = &spec.years {
            if years.is_empty() || years.iter().any(|y| !(1..=YEARS).contains(y)) {
                return Err(Error::invalid(format!(
                    "reserve #{i} on course {}: years must be non-empty and within 1..={YEARS}",
                    courses[spec.course].id
                )));
            }
        }
        list.push(i);
    }
    for (c, specs) in by_course.iter().enumerate() {
        let course = &courses[c];
        let total: u64 = specs.iter().map(|&i| u64::from(reserves[i].seats)).sum();
        if total > u64::from(course.capacity) {
            return Err(Error::invalid(format!(
                "course {}: {total} reserved seats exceed capacity {}",
                course.id, course.capacity
            )));
        }
        let mut all_years = 0;
        let mut seen_years = BTreeSet::new();
        for &i in specs {
            match &reserves[i].years {
                Scope::All => all_years += 1,
                Scope::Only(years) => {
                    for y in years {
                        if !seen_years.insert(*y) {
                            return Err(Error::invalid(format!(
                                "course {}: more than one reserve covers year {y} (merge them first)",
                                course.id
                            )));
                        }
                    }
                }
            }
        }
        if all_years > 1 {
            return Err(Error::invalid(format!(
                "course {}: more than one all-years reserve (merge them first)",
                course.id
            )));
        }
    }
    Ok(by_course)
}

/// A deterministic allocation: one schedule (sorted course indices) per student.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub schedules: Vec<Vec<usize>>,
}

impl Allocation {
    pub fn empty(num_students: usize) -> Self {
        Allocation {
            schedules: vec![Vec::new(); num_students],
        }
    }

    pub fn from_schedules(mut schedules: Vec<Vec<usize>>) -> Self {
        for s in &mut schedules {
            s.sort_unstable();
            s.dedup();
        }
        Allocation { schedules }
    }

    pub fn num_students(&self) -> usize {
        self.schedules.len()
    }

    pub fn schedule(&self, s: usize) -> &[usize] {
        &self.schedules[s]
    }

    pub fn holds(&self, s: usize, c: usize) -> bool {
        self.schedules[s].binary_search(&c).is_ok()
    }

    pub fn enrollment(&self, num_courses: usize) -> Vec<u32> {
        let mut counts = vec![0u32; num_courses];
        for sched in &self.schedules {
            for &c in sched {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Students holding each course, ascending.
    pub fn rosters(&self, num_courses: usize) -> Vec<Vec<usize>> {
        let mut rosters = vec![Vec::new(); num_courses];
        for (s, sched) in self.schedules.iter().enumerate() {
            for &c in sched {
                rosters[c].push(s);
            }
        }
        rosters
    }
}

/// A random (ex-ante) allocation: per student, shares of course seats.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FractionalAllocation {
    /// Per student `(course, share)` sorted by course, shares in `(0, 1]`.
    pub shares: Vec<Vec<(usize, f64)>>,
}

impl FractionalAllocation {
    pub fn num_students(&self) -> usize {
        self.shares.len()
    }

    pub fn row_sum(&self, s: usize) -> f64 {
        self.shares[s].iter().map(|&(_, x)| x).sum()
    }

    pub fn column_sums(&self, num_courses: usize) -> Vec<f64> {
        let mut sums = vec![0.0; num_courses];
        for row in &self.shares {
            for &(c, x) in row {
                sums[c] += x;
            }
        }
        sums
    }

    pub fn share(&self, s: usize, c: usize) -> f64 {
        let row = &self.shares[s];
        row.binary_search_by_key(&c, |&(c, _)| c)
            .map(|i| row[i].1)
            .unwrap_or(0.0)
    }
}

impl From<&Allocation> for FractionalAllocation {
    fn from(a: &Allocation) -> Self {
        FractionalAllocation {
            shares: a
                .schedules
                .iter()
                .map(|s| s.iter().map(|&c| (c, 1.0)).collect())
                .collect(),
        }
    }
}

/// Read access shared by deterministic and fractional allocations.
pub trait Assignment {
    fn num_students(&self) -> usize;
    /// `(course, weight)` pairs held by student `s`.
    fn holdings(&self, s: usize) -> Vec<(usize, f64)>;
}

impl Assignment for Allocation {
    fn num_students(&self) -> usize {
        self.schedules.len()
    }

    fn holdings(&self, s: usize) -> Vec<(usize, f64)> {
        self.schedules[s].iter().map(|&c| (c, 1.0)).collect()
    }
}

impl Assignment for FractionalAllocation {
    fn num_students(&self) -> usize {
        self.shares.len()
    }

    fn holdings(&self, s: usize) -> Vec<(usize, f64)> {
        self.shares[s].clone()
    }
}

impl fmt::Display for Scope<u8> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::All => write!(f, "All"),
            Scope::Only(set) => {
                let parts: Vec<String> = set.iter().map(u8::to_string).collect();
                write!(f, "{}", parts.join("+"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn student(id: &str, year: u8, dept: &str) -> Student {
        Student {
            id: id.into(),
            college: "A".into(),
            year,
            department: dept.into(),
        }
    }

    pub(crate) fn course(id: &str, capacity: u32) -> Course {
        Course {
            id: id.into(),
            college: "A".into(),
            department: String::new(),
            capacity,
        }
    }

    #[test]
    fn empty_student_list_is_legal() {
        let inst = Instance::new(
            vec![],
            vec![course("A", 1), course("B", 1)],
            1,
            vec![],
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![],
        )
        .unwrap();
        assert_eq!(inst.num_students(), 0);
        assert_eq!(inst.num_courses(), 2);
    }

    #[test]
    fn rejects_oversized_reserve() {
        let spec = ReserveSpec {
            course: 0,
            departments: Scope::All,
            years: Scope::All,
            seats: 5,
        };
        let err = Instance::new(
            vec![student("s1", 1, "d")],
            vec![course("C1", 3), course("C2", 3)],
            1,
            vec![spec],
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("C1"), "{err}");
    }

    #[test]
    fn rejects_unmerged_reserves() {
        let year1 = |seats| ReserveSpec {
            course: 0,
            departments: Scope::Only(["d1".to_string()].into()),
            years: Scope::Only([1].into()),
            seats,
        };
        let err = Instance::new(
            vec![],
            vec![course("C1", 10), course("C2", 3)],
            1,
            vec![year1(2), year1(3)],
            PrioritySource::Mode(PriorityMode::Hybrid),
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("merge"), "{err}");
    }

    #[test]
    fn rejects_k_above_half_the_courses() {
        let err = Instance::new(
            vec![],
            vec![course("C1", 1), course("C2", 1), course("C3", 1)],
            2,
            vec![],
            PrioritySource::Mode(PriorityMode::Flat),
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_duplicate_utilities_and_bad_year() {
        let courses = vec![course("C1", 1), course("C2", 1)];
        let dup = Instance::new(
            vec![student("s", 1, "")],
            courses.clone(),
            1,
            vec![],
            PrioritySource::Mode(PriorityMode::Flat),
            vec![(0, 0, 1.0), (0, 0, 2.0)],
        );
        assert!(dup.is_err());
        let bad_year = Instance::new(
            vec![student("s", 5, "")],
            courses,
            1,
            vec![],
            PrioritySource::Mode(PriorityMode::Flat),
            vec![],
        );
        assert!(bad_year.is_err());
    }

    #[test]
    fn scope_serde_round_trip() {
        let all: Scope<u8> = serde_json::from_str("\"All\"").unwrap();
        assert_eq!(all, Scope::All);
        let some: Scope<u8> = serde_json::from_str("[4, 3]").unwrap();
        assert_eq!(some, Scope::Only([3, 4].into()));
        assert_eq!(serde_json::to_string(&some).unwrap(), "[3,4]");
        assert!(serde_json::from_str::<Scope<u8>>("\"Some\"").is_err());
    }
}
