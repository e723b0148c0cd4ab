//! Benchmark mechanisms: serial dictatorship with seat reserves, deferred
//! acceptance, flat and discounted pseudo-markets, and probabilistic serial.

mod aceei;
mod da;
mod optimal;
mod ps;
mod rsd;

pub use aceei::aceei;
pub use da::{da, TieBreak};
pub use optimal::{
    eligible_assignments, optimal_reserves, optimal_reserves_fixed, optimal_reserves_from,
};
pub use ps::ps_seniority_reserves;
pub use rsd::{rsd, seniority_rank, SeatLedger};

use crate::instance::Instance;
use crate::rng::{self, Stream};

/// Positive-utility courses of `s`, best first (ties by course index).
pub(crate) fn preference_list(instance: &Instance, s: usize) -> Vec<usize> {
    let mut row: Vec<(usize, f64)> = instance
        .utilities()
        .row(s)
        .iter()
        .copied()
        .filter(|&(_, u)| u > 0.0)
        .collect();
    row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    row.into_iter().map(|(c, _)| c).collect()
}

/// A course's reserve specs (indices into the instance's list), ordered by
/// year of study descending with file order breaking ties.
pub(crate) fn specs_by_year(instance: &Instance, c: usize) -> Vec<usize> {
    let mut specs = instance.course_reserves(c).to_vec();
    specs.sort_by_key(|&i| std::cmp::Reverse(instance.reserves()[i].year_rank()));
    specs
}

/// One independent random ranking per course.
pub fn course_tie_breaks(num_students: usize, num_courses: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..num_courses)
        .map(|c| {
            rng::permutation(
                &mut rng::substream(seed, Stream::CourseTieBreaks, c as u64),
                num_students,
            )
        })
        .collect()
}

/// Position of every student in a ranking.
pub(crate) fn positions(rank: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; rank.len()];
    for (i, &s) in rank.iter().enumerate() {
        pos[s] = i;
    }
    pos
}
