//! Welfare and fairness statistics for allocations: stability against
//! lower-priority holders, priority-constrained efficiency, schedule envy,
//! priority violations, pairwise comparisons and price summaries.

mod compare;
mod efficiency;
mod envy;
mod prices;
mod stability;
mod violations;

pub use compare::{compare, expected_utilities, utility_sd_by_year, Comparison, YearComparison};
pub use efficiency::{check_priority_efficiency, EfficiencyVerdict, EFFICIENCY_GUARD};
pub use envy::{envy_depth, envy_profile, EnvyProfile};
pub use prices::{over_enrollment_histogram, price_statistics, price_statistics_at, PriceStatistics};
pub use stability::{best_block_brute_force, check_stability, Block, StabilityReport};
pub use violations::{priority_violations, priority_violations_fractional, ViolationReport};

use crate::instance::Instance;

/// Slack for strict utility comparisons.
pub const UTILITY_EPS: f64 = 1e-9;

/// Utility of `c` for `s`; courses outside her choice set are worth 0.
pub(crate) fn value(instance: &Instance, s: usize, c: usize) -> f64 {
    instance.utility(s, c).unwrap_or(0.0)
}

/// Additive value, summed in course order so equal sets give equal sums.
pub(crate) fn set_value(instance: &Instance, s: usize, courses: &[usize]) -> f64 {
    let mut sorted = courses.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&c| value(instance, s, c)).sum()
}

/// Best schedule of at most `k` courses drawn from `pool`: the top positive
/// ones (ties by course index).
pub(crate) fn best_subset(instance: &Instance, s: usize, pool: &[usize]) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = pool
        .iter()
        .map(|&c| (c, value(instance, s, c)))
        .filter(|&(_, u)| u > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = ranked.into_iter().take(instance.k()).map(|(c, _)| c).collect();
    out.sort_unstable();
    out
}
