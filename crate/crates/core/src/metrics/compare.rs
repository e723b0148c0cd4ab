use serde::Serialize;

use super::{value, UTILITY_EPS};
use crate::instance::{Assignment, Instance, YEARS};

/// Expected additive utility of every student.
pub fn expected_utilities(instance: &Instance, a: &impl Assignment) -> Vec<f64> {
    (0..a.num_students())
        .map(|s| {
            let mut held = a.holdings(s);
            held.sort_by_key(|&(c, _)| c);
            held.iter().map(|&(c, w)| w * value(instance, s, c)).sum()
        })
        .collect()
}

fn population_sd(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Standard deviation of utilities within each year (index `year - 1`).
pub fn utility_sd_by_year(instance: &Instance, utilities: &[f64]) -> Vec<f64> {
    (1..=YEARS)
        .map(|y| {
            let xs: Vec<f64> = (0..instance.num_students())
                .filter(|&s| instance.student(s).year == y)
                .map(|s| utilities[s])
                .collect();
            population_sd(&xs)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YearComparison {
    /// 0 for all students together.
    pub year: u8,
    pub students: usize,
    pub prefer_a: f64,
    pub prefer_b: f64,
    pub indifferent: f64,
    /// Mean of `(u_a − u_b)/|u_b|` over students whose utility changed.
    pub mean_relative_gain: Option<f64>,
    pub sd_a: f64,
    pub sd_b: f64,
    /// Percent change of the standard deviation from `b` to `a`.
    pub sd_change_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub overall: YearComparison,
    pub by_year: Vec<YearComparison>,
}

fn summarize(year: u8, ua: &[f64], ub: &[f64]) -> YearComparison {
    let n = ua.len();
    let mut prefer_a = 0;
    let mut prefer_b = 0;
    let mut gains = Vec::new();
    for (&a, &b) in ua.iter().zip(ub) {
        if a > b + UTILITY_EPS {
            prefer_a += 1;
        } else if b > a + UTILITY_EPS {
            prefer_b += 1;
        } else {
            continue;
        }
        if b.abs() > UTILITY_EPS {
            gains.push((a - b) / b.abs());
        }
    }
    let share = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    let sd_a = population_sd(ua);
    let sd_b = population_sd(ub);
    YearComparison {
        year,
        students: n,
        prefer_a: share(prefer_a),
        prefer_b: share(prefer_b),
        indifferent: share(n - prefer_a - prefer_b),
        mean_relative_gain: (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64),
        sd_a,
        sd_b,
        sd_change_pct: (sd_b > 0.0).then(|| 100.0 * (sd_a - sd_b) / sd_b),
    }
}

/// Who prefers `a` to `b`, by year and overall.
pub fn compare(instance: &Instance, a: &impl Assignment, b: &impl Assignment) -> Comparison {
    let ua = expected_utilities(instance, a);
    let ub = expected_utilities(instance, b);
    let by_year = (1..=YEARS)
        .map(|y| {
            let idx: Vec<usize> = (0..instance.num_students())
                .filter(|&s| instance.student(s).year == y)
                .collect();
            let pa: Vec<f64> = idx.iter().map(|&s| ua[s]).collect();
            let pb: Vec<f64> = idx.iter().map(|&s| ub[s]).collect();
            summarize(y, &pa, &pb)
        })
        .collect();
    Comparison {
        overall: summarize(0, &ua, &ub),
        by_year,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{Allocation, Course, FractionalAllocation, PriorityMode, PrioritySource, Student};

    fn instance() -> Instance {
        let students = (0..2)
            .map(|i| Student {
                id: format!("s{i}"),
                college: "A".into(),
                year: 2,
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
            vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn same_allocation_is_indifferent() {
        let inst = instance();
        let a = Allocation::from_schedules(vec![vec![0], vec![1]]);
        let cmp = compare(&inst, &a, &a);
        assert_eq!(cmp.overall.indifferent, 1.0);
        assert_eq!(cmp.overall.mean_relative_gain, None);
        assert_eq!(cmp.overall.sd_change_pct, Some(0.0));
    }

    #[test]
    fn one_strict_gain_splits_half_and_half() {
        let inst = instance();
        let a = Allocation::from_schedules(vec![vec![0], vec![1]]);
        let b = Allocation::from_schedules(vec![vec![1], vec![0]]);
        let cmp = compare(&inst, &a, &b);
        let y2 = &cmp.by_year[1];
        assert_eq!((y2.prefer_a, y2.prefer_b, y2.indifferent), (0.5, 0.0, 0.5));
        assert_eq!(y2.mean_relative_gain, Some(1.0));
        let back = compare(&inst, &b, &a);
        assert_eq!(back.by_year[1].prefer_b, 0.5);
        assert_eq!(back.by_year[1].prefer_a, 0.0);
        assert_eq!(cmp.by_year[0].students, 0);
    }

    #[test]
    fn fractional_utilities_are_expectations() {
        let inst = instance();
        let f = FractionalAllocation {
            shares: vec![vec![(0, 0.5), (1, 0.5)], vec![]],
        };
        assert_eq!(expected_utilities(&inst, &f), vec![1.5, 0.0]);
    }
}
