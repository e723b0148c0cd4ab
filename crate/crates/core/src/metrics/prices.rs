use serde::Serialize;

use crate::demand::{from_units, PriceSchedule};
use crate::engine::EquilibriumResult;
use crate::instance::{Allocation, Instance, YEARS};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PriceStatistics {
    /// Courses per cutoff level (index `level - 1`).
    pub cutoff_histogram: Vec<usize>,
    /// Mean price at the cutoff level, per cutoff level.
    pub mean_cutoff_price: Vec<Option<f64>>,
    /// `paid_by_year[y-1][n]`: year-`y` students holding `n` courses they pay for.
    pub paid_by_year: Vec<Vec<usize>>,
}

pub fn price_statistics(instance: &Instance, result: &EquilibriumResult) -> PriceStatistics {
    price_statistics_at(instance, &result.allocation, result.schedule, &result.t_units)
}

/// Same statistics from a price vector and an allocation.
pub fn price_statistics_at(
    instance: &Instance,
    allocation: &Allocation,
    schedule: PriceSchedule,
    t_units: &[i64],
) -> PriceStatistics {
    let levels = usize::from(schedule.levels());
    let mut cutoff_histogram = vec![0; levels];
    let mut price_sum = vec![0.0; levels];
    for c in 0..instance.num_courses() {
        let r = schedule.cutoff(t_units[c]);
        cutoff_histogram[usize::from(r) - 1] += 1;
        price_sum[usize::from(r) - 1] += from_units(schedule.faced(t_units[c], r));
    }
    let mean_cutoff_price = cutoff_histogram
        .iter()
        .zip(&price_sum)
        .map(|(&n, &p)| (n > 0).then(|| p / n as f64))
        .collect();

    let mut paid_by_year = vec![vec![0; instance.k() + 1]; usize::from(YEARS)];
    for s in 0..instance.num_students() {
        let paid = allocation
            .schedule(s)
            .iter()
            .filter(|&&c| schedule.faced(t_units[c], instance.level(s, c)) > 0)
            .count();
        paid_by_year[usize::from(instance.student(s).year) - 1][paid.min(instance.k())] += 1;
    }
    PriceStatistics {
        cutoff_histogram,
        mean_cutoff_price,
        paid_by_year,
    }
}

/// Share of courses over capacity by at least `j` seats, for `j` in `1..=k`.
pub fn over_enrollment_histogram(instance: &Instance, counts: &[u32]) -> Vec<f64> {
    let m = instance.num_courses().max(1) as f64;
    (1..=instance.k() as i64)
        .map(|j| {
            (0..instance.num_courses())
                .filter(|&c| i64::from(counts[c]) - i64::from(instance.capacity(c)) >= j)
                .count() as f64
                / m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{to_units, PriceRule};
    use crate::engine::tests::EXAMPLE_ONE;
    use crate::engine::SolveTrace;
    use crate::instance::parse_instance;

    fn result(inst: &Instance, t: &[f64], schedules: Vec<Vec<usize>>) -> EquilibriumResult {
        EquilibriumResult {
            allocation: Allocation::from_schedules(schedules),
            t_units: t.iter().map(|&x| to_units(x)).collect(),
            budgets: vec![1.0; inst.num_students()],
            budget_units: vec![1_000_000; inst.num_students()],
            schedule: PriceSchedule::new(PriceRule::Priority, 1.251, inst.depth()),
            excess: vec![0; inst.num_courses()],
            error: 0.0,
            bound: 1.0,
            within_bound: true,
            over_ok: true,
            certified: true,
            trace: SolveTrace::default(),
        }
    }

    #[test]
    fn free_market_has_everything_at_level_one() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        let stats = price_statistics(&inst, &result(&inst, &[0.0, 0.0], vec![vec![0], vec![1]]));
        assert_eq!(stats.cutoff_histogram, vec![2, 0]);
        assert_eq!(stats.mean_cutoff_price, vec![Some(0.0), None]);
        assert_eq!(stats.paid_by_year[0], vec![2, 0]);
    }

    #[test]
    fn cutoff_two_price() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        let stats = price_statistics(&inst, &result(&inst, &[2.0, 0.0], vec![vec![1], vec![0]]));
        assert_eq!(stats.cutoff_histogram, vec![1, 1]);
        assert!((stats.mean_cutoff_price[1].unwrap() - 0.749).abs() < 1e-12);
        // student 2 holds A at level 2 and pays 0.749
        assert_eq!(stats.paid_by_year[0], vec![1, 1]);
    }

    #[test]
    fn over_enrollment_shares() {
        let inst = parse_instance(EXAMPLE_ONE).unwrap();
        assert_eq!(over_enrollment_histogram(&inst, &[2, 1]), vec![0.5]);
        assert_eq!(over_enrollment_histogram(&inst, &[1, 0]), vec![0.0]);
    }
}
