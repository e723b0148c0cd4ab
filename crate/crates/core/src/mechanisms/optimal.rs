use rand::Rng as _;
use rayon::prelude::*;

use super::{da, specs_by_year, TieBreak};
use crate::engine::tie_break_rank;
use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance, PrioritySource, ReserveSpec};
use crate::rng::{self, Stream};
use crate::synthgen::{draw_utilities, Population, UtilityModelParams};

/// Per reserve spec, how many assigned students it covers. A student counts
/// for the first spec of the course (year-descending) she is eligible for.
pub fn eligible_assignments(instance: &Instance, allocation: &Allocation) -> Vec<u32> {
    let mut counts = vec![0u32; instance.reserves().len()];
    for (c, roster) in allocation.rosters(instance.num_courses()).iter().enumerate() {
        let specs = specs_by_year(instance, c);
        for &s in roster {
            let student = instance.student(s);
            if let Some(&i) = specs.iter().find(|&&i| instance.reserves()[i].is_eligible(student)) {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// Reserve sizes set to the mean eligible count over environments, rounded
/// half away from zero and capped so a course's reserves never exceed its
/// capacity (earlier years of study lose out first).
pub fn optimal_reserves_from(instance: &Instance, counts: &[Vec<u32>]) -> Result<Vec<ReserveSpec>> {
    let specs = instance.reserves();
    if counts.is_empty() || counts.iter().any(|c| c.len() != specs.len()) {
        return Err(Error::Config(format!(
            "need at least one environment with {} reserve counts",
            specs.len()
        )));
    }
    let mut out = specs.to_vec();
    for c in 0..instance.num_courses() {
        let mut room = instance.capacity(c);
        for i in specs_by_year(instance, c) {
            let total: u64 = counts.iter().map(|env| u64::from(env[i])).sum();
            let mean = (total as f64 / counts.len() as f64).round() as u32;
            let seats = mean.min(room);
            room -= seats;
            out[i].seats = seats;
        }
    }
    Ok(out)
}

/// Optimal reserves for a generated population: `num_envs` fresh utility and
/// tie-break draws, each run through deferred acceptance with one ranking.
pub fn optimal_reserves(
    pop: &Population,
    model: &UtilityModelParams,
    num_envs: usize,
    seed: u64,
) -> Result<Vec<ReserveSpec>> {
    let counts: Vec<Vec<u32>> = (0..num_envs)
        .into_par_iter()
        .map(|e| {
            let env_seed: u64 = rng::substream(seed, Stream::Environments, e as u64).random();
            let inst = draw_utilities(pop, model, env_seed)?;
            let rank = tie_break_rank(inst.num_students(), env_seed);
            let alloc = da(&inst, &TieBreak::Single(rank), false);
            Ok(eligible_assignments(&inst, &alloc))
        })
        .collect::<Result<_>>()?;
    let base = Instance::new(
        pop.students.clone(),
        pop.courses.clone(),
        pop.k,
        pop.reserves.clone(),
        PrioritySource::Mode(pop.priority_mode),
        vec![],
    )?;
    optimal_reserves_from(&base, &counts)
}

/// The same estimate when utilities are fixed: environments differ only in
/// the tie-break.
pub fn optimal_reserves_fixed(instance: &Instance, num_envs: usize, seed: u64) -> Result<Vec<ReserveSpec>> {
    let counts: Vec<Vec<u32>> = (0..num_envs)
        .into_par_iter()
        .map(|e| {
            let env_seed: u64 = rng::substream(seed, Stream::Environments, e as u64).random();
            let rank = tie_break_rank(instance.num_students(), env_seed);
            eligible_assignments(instance, &da(instance, &TieBreak::Single(rank), false))
        })
        .collect();
    optimal_reserves_from(instance, &counts)
}
