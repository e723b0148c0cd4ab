use super::{preference_list, specs_by_year};
use crate::instance::{FractionalAllocation, Instance, YEARS};

const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Pool(usize, usize),
    Regular(usize),
}

impl Source {
    fn course(self) -> usize {
        match self {
            Source::Pool(c, _) | Source::Regular(c) => c,
        }
    }
}

struct Supply {
    /// Per course, `(spec index, mass left)` in year-descending order.
    pools: Vec<Vec<(usize, f64)>>,
    regular: Vec<f64>,
}

impl Supply {
    fn left(&self, src: Source) -> f64 {
        match src {
            Source::Pool(c, j) => self.pools[c][j].1,
            Source::Regular(c) => self.regular[c],
        }
    }

    fn left_mut(&mut self, src: Source) -> &mut f64 {
        match src {
            Source::Pool(c, j) => &mut self.pools[c][j].1,
            Source::Regular(c) => &mut self.regular[c],
        }
    }

    /// Where `s` can eat course `c` now: an eligible pool first.
    fn source_for(&self, instance: &Instance, s: usize, c: usize) -> Option<Source> {
        let student = instance.student(s);
        for (j, &(spec, left)) in self.pools[c].iter().enumerate() {
            if left > EPS && instance.reserves()[spec].is_eligible(student) {
                return Some(Source::Pool(c, j));
            }
        }
        (self.regular[c] > EPS).then_some(Source::Regular(c))
    }
}

/// Probabilistic serial by seniority with reserves. Year cohorts eat in turn
/// (fourth year first), each for `k` time units at unit speed, always from
/// their best course still available to them; eligible students eat reserved
/// mass before regular mass, and nobody holds more than one unit of a course.
pub fn ps_seniority_reserves(instance: &Instance) -> FractionalAllocation {
    let n = instance.num_students();
    let m = instance.num_courses();
    let prefs: Vec<Vec<usize>> = (0..n).map(|s| preference_list(instance, s)).collect();
    let mut supply = Supply {
        pools: Vec::with_capacity(m),
        regular: Vec::with_capacity(m),
    };
    for c in 0..m {
        let pools: Vec<(usize, f64)> = specs_by_year(instance, c)
            .into_iter()
            .map(|i| (i, f64::from(instance.reserves()[i].seats)))
            .collect();
        let reserved: f64 = pools.iter().map(|p| p.1).sum();
        supply.regular.push(f64::from(instance.capacity(c)) - reserved);
        supply.pools.push(pools);
    }

    let mut shares: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut pool_rate: Vec<Vec<u32>> = supply.pools.iter().map(|p| vec![0; p.len()]).collect();
    let mut regular_rate = vec![0u32; m];

    for year in (1..=YEARS).rev() {
        let cohort: Vec<usize> = (0..n).filter(|&s| instance.student(s).year == year).collect();
        let mut pointer = vec![0usize; cohort.len()];
        // current source and the eaten share of its course
        let mut eating: Vec<Option<(Source, f64)>> = vec![None; cohort.len()];
        let pick = |i: usize, pointer: &mut [usize], supply: &Supply| -> Option<(Source, f64)> {
            let s = cohort[i];
            while pointer[i] < prefs[s].len() {
                let c = prefs[s][pointer[i]];
                if let Some(src) = supply.source_for(instance, s, c) {
                    return Some((src, 0.0));
                }
                pointer[i] += 1;
            }
            None
        };
        for i in 0..cohort.len() {
            eating[i] = pick(i, &mut pointer, &supply);
        }

        let mut time_left = instance.k() as f64;
        while time_left > EPS {
            let mut any = false;
            for &(src, _) in eating.iter().flatten() {
                any = true;
                match src {
                    Source::Pool(c, j) => pool_rate[c][j] += 1,
                    Source::Regular(c) => regular_rate[c] += 1,
                }
            }
            if !any {
                break;
            }
            let mut dt = time_left;
            for &(src, held) in eating.iter().flatten() {
                let rate = match src {
                    Source::Pool(c, j) => pool_rate[c][j],
                    Source::Regular(c) => regular_rate[c],
                };
                dt = dt.min(supply.left(src) / f64::from(rate)).min(1.0 - held);
            }
            for &(src, _) in eating.iter().flatten() {
                *supply.left_mut(src) -= dt;
            }
            for &(src, _) in eating.iter().flatten() {
                match src {
                    Source::Pool(c, j) => pool_rate[c][j] = 0,
                    Source::Regular(c) => regular_rate[c] = 0,
                }
                let left = supply.left_mut(src);
                if *left < EPS {
                    *left = 0.0;
                }
            }
            time_left -= dt;

            for i in 0..cohort.len() {
                let Some((src, held)) = eating[i] else { continue };
                let held = held + dt;
                let c = src.course();
                if held >= 1.0 - EPS {
                    flush(&mut shares[cohort[i]], c, 1.0);
                    pointer[i] += 1;
                    eating[i] = pick(i, &mut pointer, &supply);
                } else if supply.left(src) == 0.0 {
                    match supply.source_for(instance, cohort[i], c) {
                        Some(next) => eating[i] = Some((next, held)),
                        None => {
                            flush(&mut shares[cohort[i]], c, held);
                            pointer[i] += 1;
                            eating[i] = pick(i, &mut pointer, &supply);
                        }
                    }
                } else {
                    eating[i] = Some((src, held));
                }
            }
        }
        for (i, e) in eating.iter().enumerate() {
            if let Some((src, held)) = *e {
                flush(&mut shares[cohort[i]], src.course(), held);
            }
        }
    }

    for row in &mut shares {
        row.sort_by_key(|&(c, _)| c);
    }
    FractionalAllocation { shares }
}

fn flush(row: &mut Vec<(usize, f64)>, c: usize, share: f64) {
    if share > EPS {
        row.push((c, share.min(1.0)));
    }
}
