//! JSON instance files and CSV allocation files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Allocation, Course, FractionalAllocation, Instance, PriorityMode, PrioritySource, ReserveSpec,
    Scope, Student,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ReserveRecord {
    course: String,
    departments: Scope<String>,
    years: Scope<u8>,
    seats: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    students: Vec<Student>,
    courses: Vec<Course>,
    #[serde(default)]
    reserves: Vec<ReserveRecord>,
    k: usize,
    #[serde(rename = "R")]
    depth: u8,
    priority_mode: PriorityMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    priorities: Vec<(String, String, u8)>,
    #[serde(default)]
    utilities: Vec<(String, String, f64)>,
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_instance(&text)
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_str(text)?;
    let student_ids: Vec<String> = file.students.iter().map(|s| s.id.clone()).collect();
    let course_ids: Vec<String> = file.courses.iter().map(|c| c.id.clone()).collect();
    let student_lookup = lookup(&student_ids);
    let course_lookup = lookup(&course_ids);
    let student_of = |id: &str| {
        student_lookup
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown student id {id}")))
    };
    let course_of = |id: &str| {
        course_lookup
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown course id {id}")))
    };

    let reserves = file
        .reserves
        .into_iter()
        .map(|r| {
            Ok(ReserveSpec {
                course: course_of(&r.course)?,
                departments: r.departments,
                years: r.years,
                seats: r.seats,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let utilities = file
        .utilities
        .iter()
        .map(|(s, c, v)| Ok((student_of(s)?, course_of(c)?, *v)))
        .collect::<Result<Vec<_>>>()?;

    let source = match file.priority_mode {
        PriorityMode::Explicit => PrioritySource::Explicit {
            depth: file.depth,
            entries: file
                .priorities
                .iter()
                .map(|(s, c, l)| Ok((student_of(s)?, course_of(c)?, *l)))
                .collect::<Result<Vec<_>>>()?,
        },
        mode => {
            if file.depth != mode.depth() {
                return Err(Error::invalid(format!(
                    "priority mode {mode:?} requires R={}, file says R={}",
                    mode.depth(),
                    file.depth
                )));
            }
            if !file.priorities.is_empty() {
                return Err(Error::invalid(
                    "explicit priorities given but priority_mode is not \"explicit\"",
                ));
            }
            PrioritySource::Mode(mode)
        }
    };

    Instance::new(
        file.students,
        file.courses,
        file.k,
        reserves,
        source,
        utilities,
    )
}

fn lookup(ids: &[String]) -> std::collections::HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

pub fn save_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = to_file(instance);
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(out);
    serde_json::to_writer(&mut w, &file)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn to_file(inst: &Instance) -> InstanceFile {
    let sid = |s: usize| inst.student(s).id.clone();
    let cid = |c: usize| inst.course(c).id.clone();
    let mode = inst.priorities().mode();
    InstanceFile {
        students: inst.students().to_vec(),
        courses: inst.courses().to_vec(),
        reserves: inst
            .reserves()
            .iter()
            .map(|r| ReserveRecord {
                course: cid(r.course),
                departments: r.departments.clone(),
                years: r.years.clone(),
                seats: r.seats,
            })
            .collect(),
        k: inst.k(),
        depth: inst.depth(),
        priority_mode: mode,
        priorities: if mode == PriorityMode::Explicit {
            inst.priorities()
                .explicit_entries()
                .into_iter()
                .map(|(s, c, l)| (sid(s), cid(c), l))
                .collect()
        } else {
            Vec::new()
        },
        utilities: (0..inst.num_students())
            .flat_map(|s| {
                inst.utilities()
                    .row(s)
                    .iter()
                    .map(move |&(c, v)| (s, c, v))
            })
            .map(|(s, c, v)| (sid(s), cid(c), v))
            .collect(),
    }
}

/// Writes a reserve list in the instance file's reserve schema.
pub fn save_reserves(instance: &Instance, reserves: &[ReserveSpec], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<ReserveRecord> = reserves
        .iter()
        .map(|r| ReserveRecord {
            course: instance.course(r.course).id.clone(),
            departments: r.departments.clone(),
            years: r.years.clone(),
            seats: r.seats,
        })
        .collect();
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut w, &records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a reserve list written by [`save_reserves`] (or the `reserves`
/// array of an instance file).
pub fn load_reserves(instance: &Instance, path: impl AsRef<Path>) -> Result<Vec<ReserveSpec>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<ReserveRecord> = serde_json::from_reader(BufReader::new(file))?;
    records
        .into_iter()
        .map(|r| {
            Ok(ReserveSpec {
                course: instance
                    .course_by_id(&r.course)
                    .ok_or_else(|| Error::invalid(format!("unknown course id {}", r.course)))?,
                departments: r.departments,
                years: r.years,
                seats: r.seats,
            })
        })
        .collect()
}

/// An allocation read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum AllocationFile {
    Deterministic(Allocation),
    Fractional(FractionalAllocation),
}

#[derive(Serialize, Deserialize)]
struct AllocationRow {
    student_id: String,
    course_id: String,
    share: f64,
}

/// Writes `(student, course, share)` rows. f64 uses the shortest string that
/// parses back to the same bits.
pub fn write_allocation<W: Write>(
    instance: &Instance,
    rows: impl IntoIterator<Item = (usize, usize, f64)>,
    writer: W,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(["student_id", "course_id", "share"])?;
    for (s, c, share) in rows {
        w.serialize(AllocationRow {
            student_id: instance.student(s).id.clone(),
            course_id: instance.course(c).id.clone(),
            share,
        })?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_allocation(
    instance: &Instance,
    allocation: &AllocationFile,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let out = File::create(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<(usize, usize, f64)> = match allocation {
        AllocationFile::Deterministic(a) => a
            .schedules
            .iter()
            .enumerate()
            .flat_map(|(s, sched)| sched.iter().map(move |&c| (s, c, 1.0)))
            .collect(),
        AllocationFile::Fractional(f) => f
            .shares
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().map(move |&(c, x)| (s, c, x)))
            .collect(),
    };
    write_allocation(instance, rows, BufWriter::new(out))
}

/// Reads an allocation CSV. The result is deterministic iff every share is 1.
pub fn load_allocation(instance: &Instance, path: impl AsRef<Path>) -> Result<AllocationFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let n = instance.num_students();
    let mut shares: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut integral = true;
    for row in reader.deserialize() {
        let row: AllocationRow = row?;
        let s = instance
            .student_by_id(&row.student_id)
            .ok_or_else(|| Error::invalid(format!("unknown student id {}", row.student_id)))?;
        let c = instance
            .course_by_id(&row.course_id)
            .ok_or_else(|| Error::invalid(format!("unknown course id {}", row.course_id)))?;
        if !(row.share > 0.0 && row.share <= 1.0) {
            return Err(Error::invalid(format!(
                "share {} for student {} and course {} outside (0, 1]",
                row.share, row.student_id, row.course_id
            )));
        }
        integral &= row.share == 1.0;
        shares[s].push((c, row.share));
    }
    for (s, row) in shares.iter_mut().enumerate() {
        row.sort_by_key(|&(c, _)| c);
        if row.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!(
                "student {} listed twice for the same course",
                instance.student(s).id
            )));
        }
    }
    Ok(if integral {
        AllocationFile::Deterministic(Allocation {
            schedules: shares
                .into_iter()
                .map(|row| row.into_iter().map(|(c, _)| c).collect())
                .collect(),
        })
    } else {
        AllocationFile::Fractional(FractionalAllocation { shares })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE_ONE: &str = r#"{
        "students": [
            {"id": "1", "college": "A", "year": 1, "department": "d"},
            {"id": "2", "college": "A", "year": 1, "department": "d"}
        ],
        "courses": [
            {"id": "A", "college": "A", "department": "d", "capacity": 1},
            {"id": "B", "college": "A", "department": "d", "capacity": 1}
        ],
        "reserves": [],
        "k": 1,
        "R": 2,
        "priority_mode": "explicit",
        "priorities": [["1", "B", 2], ["2", "A", 2]],
        "utilities": [["1", "A", 2.0], ["1", "B", 1.0], ["2", "A", 1.0], ["2", "B", 2.0]]
    }"#;

    #[test]
    fn parses_two_by_two_fixture() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        assert_eq!(inst.num_students(), 2);
        assert_eq!(inst.num_courses(), 2);
        assert_eq!(inst.capacities(), vec![1, 1]);
        assert_eq!(inst.k(), 1);
        assert_eq!(inst.level(0, 1), 2);
        assert_eq!(inst.level(0, 0), 1);
    }

    #[test]
    fn instance_round_trip() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&inst, &path).unwrap();
        let back = load_instance(&path).unwrap();
        assert_eq!(back.students(), inst.students());
        assert_eq!(back.utilities(), inst.utilities());
        assert_eq!(back.priorities(), inst.priorities());
    }

    #[test]
    fn reserve_exceeding_capacity_names_course() {
        let text = EXAMPLE_ONE.replace(
            r#""reserves": []"#,
            r#""reserves": [{"course": "B", "departments": "All", "years": [1], "seats": 5}]"#,
        );
        let err = parse_instance(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("course B"), "{err}");
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_instance("{"), Err(Error::Parse(_))));
        let missing_k = EXAMPLE_ONE.replace(r#""k": 1,"#, "");
        assert!(matches!(parse_instance(&missing_k), Err(Error::Parse(_))));
    }

    #[test]
    fn mode_depth_mismatch_rejected() {
        let text = EXAMPLE_ONE
            .replace(r#""explicit""#, r#""hybrid""#)
            .replace(r#""priorities": [["1", "B", 2], ["2", "A", 2]],"#, "");
        assert!(parse_instance(&text).is_err());
        let fixed = text.replace(r#""R": 2"#, r#""R": 8"#);
        assert_eq!(parse_instance(&fixed).unwrap().depth(), 8);
    }

    #[test]
    fn allocation_round_trips() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alloc.csv");

        let det = AllocationFile::Deterministic(Allocation::from_schedules(vec![vec![1], vec![0]]));
        save_allocation(&inst, &det, &path).unwrap();
        assert_eq!(load_allocation(&inst, &path).unwrap(), det);

        let empty = AllocationFile::Deterministic(Allocation::empty(2));
        save_allocation(&inst, &empty, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body.trim(), "student_id,course_id,share");
        assert_eq!(load_allocation(&inst, &path).unwrap(), empty);

        let third = 1.0 / 3.0;
        let frac = AllocationFile::Fractional(FractionalAllocation {
            shares: vec![vec![(0, 0.5), (1, 0.5)], vec![(0, third)]],
        });
        save_allocation(&inst, &frac, &path).unwrap();
        assert_eq!(load_allocation(&inst, &path).unwrap(), frac);
    }

    #[test]
    fn reserves_round_trip() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reserves.json");
        let specs = vec![ReserveSpec {
            course: 1,
            departments: Scope::Only(["d".to_string()].into()),
            years: Scope::All,
            seats: 1,
        }];
        save_reserves(&inst, &specs, &path).unwrap();
        assert_eq!(load_reserves(&inst, &path).unwrap(), specs);
    }
}
