//! Synthetic course-allocation instances.
//!
//! Utility of student `s` (college `a`, year `y`) for course `c` (college `a'`)
//! is `θ[a][y] + γ[a][a'] + z[c] + ε`, with `ε ~ N(0, σ²)`. The defaults are
//! the calibrated values for a seven-college university. A population
//! (students, courses, capacities, reserves, course popularity) is drawn once;
//! utilities and choice sets can then be redrawn any number of times.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{
    Course, Instance, PriorityMode, PrioritySource, ReserveSpec, Scope, Student, YEARS,
};
use crate::rng::{self, Stream};

/// Piecewise-linear inverse CDF through `(probability, value)` knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles(pub Vec<[f64; 2]>);

impl Quantiles {
    pub fn validate(&self, what: &str) -> Result<()> {
        let k = &self.0;
        let ok = k.len() >= 2
            && k[0][0] == 0.0
            && k[k.len() - 1][0] == 1.0
            && k.windows(2).all(|w| w[0][0] < w[1][0] && w[0][1] <= w[1][1]);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what}: quantile knots must run from probability 0 to 1 with increasing values"
            )))
        }
    }

    pub fn at(&self, u: f64) -> f64 {
        let k = &self.0;
        let u = u.clamp(0.0, 1.0);
        let i = k.partition_point(|p| p[0] <= u).clamp(1, k.len() - 1);
        let ([p0, v0], [p1, v1]) = (k[i - 1], k[i]);
        v0 + (v1 - v0) * (u - p0) / (p1 - p0)
    }

    pub fn sample(&self, rng: &mut rng::Rng) -> f64 {
        self.at(rng.random::<f64>())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UtilityModelParams {
    pub colleges: Vec<String>,
    /// Per college, the horizontal component for years 1..4.
    pub theta: Vec<[f64; 4]>,
    /// Row: student college, column: course college. Zero diagonal.
    pub gamma: Vec<Vec<f64>>,
    pub z_quantiles: Quantiles,
    pub sigma: f64,
    pub choice_set_size: usize,
    /// Percent of a college's enrollment going to each course college; used
    /// as choice-set sampling weights.
    pub pair_shares: Vec<Vec<f64>>,
}

impl Default for UtilityModelParams {
    fn default() -> Self {
        default_params()
    }
}

pub fn default_params() -> UtilityModelParams {
    UtilityModelParams {
        colleges: ["A", "B", "C", "D", "E", "F", "G"].map(String::from).to_vec(),
        theta: vec![
            [0.12, 0.20, -0.04, -0.27],
            [0.13, 0.19, 0.01, -0.31],
            [0.28, 0.21, 0.01, -0.44],
            [0.09, 0.19, -0.03, -0.32],
            [0.20, 0.15, -0.13, -0.29],
            [0.17, 0.08, -0.09, -0.28],
            [0.19, 0.11, 0.01, -0.37],
        ],
        gamma: vec![
            vec![0.0, -0.65, -0.58, -0.28, -0.55, -0.70, -0.52],
            vec![-0.11, 0.0, -0.54, -0.24, -0.09, -0.46, -0.48],
            vec![0.37, -0.22, 0.0, -0.01, 0.01, -0.28, -0.26],
            vec![0.14, -0.12, -0.39, 0.0, -0.16, -0.32, -0.27],
            vec![0.02, -0.55, -0.34, -0.17, 0.0, -0.33, -0.40],
            vec![-0.07, -0.65, -0.57, -0.21, -0.17, 0.0, -0.55],
            vec![-0.19, -0.56, -0.58, 0.04, -0.20, -0.49, 0.0],
        ],
        z_quantiles: Quantiles(vec![
            [0.0, -2.32],
            [0.1, -1.89],
            [0.25, -1.70],
            [0.5, -1.47],
            [0.75, -1.12],
            [0.9, -0.67],
            [1.0, 2.28],
        ]),
        sigma: 1.0,
        choice_set_size: 80,
        pair_shares: vec![
            vec![71.0, 0.47, 1.9, 17.0, 1.7, 5.0, 2.7],
            vec![1.9, 44.0, 0.61, 18.0, 19.0, 12.0, 4.1],
            vec![10.0, 1.3, 4.5, 37.0, 29.0, 15.0, 2.4],
            vec![2.5, 0.98, 0.83, 64.0, 12.0, 13.0, 6.8],
            vec![1.2, 2.6, 0.14, 24.0, 54.0, 16.0, 2.1],
            vec![1.5, 1.8, 0.84, 23.0, 18.0, 52.0, 2.3],
            vec![1.3, 0.39, 0.26, 31.0, 7.7, 6.1, 53.0],
        ],
    }
}

impl UtilityModelParams {
    pub fn validate(&self) -> Result<()> {
        let a = self.colleges.len();
        let square = |m: &Vec<Vec<f64>>| m.len() == a && m.iter().all(|r| r.len() == a);
        if self.theta.len() != a || !square(&self.gamma) || !square(&self.pair_shares) {
            return Err(Error::Config(format!(
                "theta, gamma and pair_shares must be sized for {a} colleges"
            )));
        }
        if (0..a).any(|i| self.gamma[i][i] != 0.0) {
            return Err(Error::Config("gamma must have a zero diagonal".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma {} must be >= 0", self.sigma)));
        }
        if self.choice_set_size == 0 {
            return Err(Error::Config("choice_set_size must be positive".into()));
        }
        if self.pair_shares.iter().flatten().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("pair_shares must be non-negative".into()));
        }
        self.z_quantiles.validate("z_quantiles")
    }

    fn college_index(&self, name: &str) -> Option<usize> {
        self.colleges.iter().position(|c| c == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollegeCensus {
    pub students: u32,
    pub courses: u32,
}

/// Student and course counts per college, in the model's college order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub colleges: Vec<CollegeCensus>,
}

impl Census {
    /// Full-size university population.
    pub fn full() -> Self {
        let students = [853, 1642, 259, 1274, 745, 741, 509];
        let courses = [180, 84, 12, 269, 88, 84, 39];
        Census {
            colleges: students
                .iter()
                .zip(courses)
                .map(|(&s, c)| CollegeCensus {
                    students: s,
                    courses: c,
                })
                .collect(),
        }
    }

    /// Every count multiplied by `ratio`, rounded; at least one course per
    /// college with students.
    pub fn scaled(ratio: f64) -> Self {
        let full = Census::full();
        Census {
            colleges: full
                .colleges
                .iter()
                .map(|c| {
                    let students = (f64::from(c.students) * ratio).round() as u32;
                    let courses = (f64::from(c.courses) * ratio).round() as u32;
                    CollegeCensus {
                        students,
                        courses: if students > 0 { courses.max(1) } else { courses },
                    }
                })
                .collect(),
        }
    }

    pub fn num_students(&self) -> u32 {
        self.colleges.iter().map(|c| c.students).sum()
    }

    pub fn num_courses(&self) -> u32 {
        self.colleges.iter().map(|c| c.courses).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationParams {
    pub k: usize,
    pub priority_mode: PriorityMode,
    pub capacity_quantiles: Quantiles,
    pub departments_per_college: u32,
    /// Probability that a course carries any reserve.
    pub reserve_probability: f64,
    /// Reserved fraction of capacity, drawn uniformly in this range.
    pub reserve_fraction: [f64; 2],
    /// Probability that a reserved course has a second spec.
    pub second_spec_probability: f64,
    /// Probability that a spec also admits a second department.
    pub extra_department_probability: f64,
}

impl Default for PopulationParams {
    fn default() -> Self {
        PopulationParams {
            k: 5,
            priority_mode: PriorityMode::Hybrid,
            capacity_quantiles: Quantiles(vec![
                [0.0, 2.0],
                [0.1, 8.0],
                [0.25, 15.0],
                [0.5, 25.0],
                [0.75, 50.0],
                [0.9, 98.0],
                [1.0, 250.0],
            ]),
            departments_per_college: 3,
            reserve_probability: 0.7,
            reserve_fraction: [0.2, 1.0],
            second_spec_probability: 0.4,
            extra_department_probability: 0.3,
        }
    }
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        self.capacity_quantiles.validate("capacity_quantiles")?;
        let [lo, hi] = self.reserve_fraction;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(prob(lo) && prob(hi) && lo <= hi)
            || !prob(self.reserve_probability)
            || !prob(self.second_spec_probability)
            || !prob(self.extra_department_probability)
        {
            return Err(Error::Config("reserve probabilities must lie in [0, 1]".into()));
        }
        if self.departments_per_college == 0 || self.k == 0 {
            return Err(Error::Config("k and departments_per_college must be positive".into()));
        }
        if self.priority_mode == PriorityMode::Explicit {
            return Err(Error::Config("generated instances need a structural priority mode".into()));
        }
        Ok(())
    }
}

/// Everything about an instance except the utilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub students: Vec<Student>,
    pub courses: Vec<Course>,
    pub reserves: Vec<ReserveSpec>,
    /// Vertical component per course.
    pub z: Vec<f64>,
    pub k: usize,
    pub priority_mode: PriorityMode,
}

pub fn generate_population(
    model: &UtilityModelParams,
    params: &PopulationParams,
    census: &Census,
    seed: u64,
) -> Result<Population> {
    model.validate()?;
    params.validate()?;
    if census.colleges.len() != model.colleges.len() {
        return Err(Error::Config(format!(
            "census lists {} colleges, model has {}",
            census.colleges.len(),
            model.colleges.len()
        )));
    }
    if census.num_students() == 0 || census.num_courses() == 0 {
        return Err(Error::Config("census must contain students and courses".into()));
    }
    let mut rng = rng::stream(seed, Stream::Population);
    let dept = |college: &str, d: u32| format!("{college}{d}");

    let mut students = Vec::new();
    for (a, cen) in census.colleges.iter().enumerate() {
        let college = &model.colleges[a];
        let n = cen.students as usize;
        for i in 0..n {
            let year = 1 + (i * usize::from(YEARS) / n) as u8;
            let d = rng.random_range(1..=params.departments_per_college);
            students.push(Student {
                id: format!("s{:05}", students.len()),
                college: college.clone(),
                year,
                department: dept(college, d),
            });
        }
    }

    let mut courses = Vec::new();
    let mut z = Vec::new();
    for (a, cen) in census.colleges.iter().enumerate() {
        let college = &model.colleges[a];
        for _ in 0..cen.courses {
            let d = rng.random_range(1..=params.departments_per_college);
            let capacity = params.capacity_quantiles.sample(&mut rng).round().max(1.0) as u32;
            courses.push(Course {
                id: format!("{college}-{:04}", courses.len()),
                college: college.clone(),
                department: dept(college, d),
                capacity,
            });
            z.push(model.z_quantiles.sample(&mut rng));
        }
    }
    let all_departments: Vec<String> = model
        .colleges
        .iter()
        .flat_map(|c| (1..=params.departments_per_college).map(move |d| dept(c, d)))
        .collect();

    let mut reserves = Vec::new();
    for (c, course) in courses.iter().enumerate() {
        if !rng.random_bool(params.reserve_probability) {
            continue;
        }
        let [lo, hi] = params.reserve_fraction;
        let fraction = lo + (hi - lo) * rng.random::<f64>();
        let total = (f64::from(course.capacity) * fraction).round() as u32;
        if total == 0 {
            continue;
        }
        let patterns = year_patterns();
        let first = patterns.choose(&mut rng).unwrap().clone();
        let mut specs = vec![first.clone()];
        if total >= 2 && rng.random_bool(params.second_spec_probability) {
            let compatible: Vec<&Scope<u8>> = patterns
                .iter()
                .filter(|p| disjoint(p, &first))
                .collect();
            if let Some(second) = compatible.choose(&mut rng) {
                specs.push((*second).clone());
            }
        }
        let first_share = if specs.len() == 2 {
            rng.random_range(1..total)
        } else {
            total
        };
        for (i, years) in specs.into_iter().enumerate() {
            let mut departments = BTreeSet::from([course.department.clone()]);
            if rng.random_bool(params.extra_department_probability) {
                departments.insert(all_departments.choose(&mut rng).unwrap().clone());
            }
            reserves.push(ReserveSpec {
                course: c,
                departments: Scope::Only(departments),
                years,
                seats: if i == 0 { first_share } else { total - first_share },
            });
        }
    }

    Ok(Population {
        students,
        courses,
        reserves,
        z,
        k: params.k,
        priority_mode: params.priority_mode,
    })
}

fn year_patterns() -> Vec<Scope<u8>> {
    let only = |ys: &[u8]| Scope::Only(ys.iter().copied().collect());
    vec![
        only(&[1]),
        only(&[2]),
        only(&[3]),
        only(&[4]),
        only(&[1, 2]),
        only(&[3, 4]),
        Scope::All,
    ]
}

/// Two year scopes may coexist on one course.
fn disjoint(a: &Scope<u8>, b: &Scope<u8>) -> bool {
    match (a, b) {
        (Scope::All, Scope::All) => false,
        (Scope::All, _) | (_, Scope::All) => true,
        (Scope::Only(x), Scope::Only(y)) => x.is_disjoint(y),
    }
}

/// Draws choice sets and utilities for a fixed population.
pub fn draw_utilities(pop: &Population, model: &UtilityModelParams, seed: u64) -> Result<Instance> {
    model.validate()?;
    let mut rng = rng::stream(seed, Stream::Utilities);
    let m = pop.courses.len();
    let college_of = |name: &str| {
        model
            .college_index(name)
            .ok_or_else(|| Error::Config(format!("college {name} missing from the model")))
    };
    let course_college: Vec<usize> = pop
        .courses
        .iter()
        .map(|c| college_of(&c.college))
        .collect::<Result<_>>()?;
    let mut per_college = vec![0usize; model.colleges.len()];
    for &a in &course_college {
        per_college[a] += 1;
    }

    let mut choice: Vec<Vec<bool>> = Vec::with_capacity(pop.students.len());
    let mut student_college = Vec::with_capacity(pop.students.len());
    for student in &pop.students {
        let a = college_of(&student.college)?;
        student_college.push(a);
        let mut set = vec![false; m];
        if model.choice_set_size >= m {
            set.fill(true);
        } else {
            let weights: Vec<f64> = course_college
                .iter()
                .map(|&b| model.pair_shares[a][b] / per_college[b] as f64)
                .collect();
            let positive = weights.iter().filter(|&&w| w > 0.0).count();
            let indices: Vec<usize> = (0..m).collect();
            let picked = indices
                .choose_multiple_weighted(&mut rng, model.choice_set_size.min(positive), |&c| {
                    weights[c]
                })
                .map_err(|e| Error::Config(format!("choice-set weights: {e}")))?;
            for &c in picked {
                set[c] = true;
            }
        }
        choice.push(set);
    }

    // reserve holders: at least 2r eligible students see each reserved course
    for spec in &pop.reserves {
        let eligible: Vec<usize> = (0..pop.students.len())
            .filter(|&s| spec.is_eligible(&pop.students[s]))
            .collect();
        let need = (2 * spec.seats as usize).min(eligible.len());
        if eligible.len() < 2 * spec.seats as usize {
            log::debug!(
                "course {}: only {} students eligible for a reserve of {} seats",
                pop.courses[spec.course].id,
                eligible.len(),
                spec.seats
            );
        }
        let have = eligible.iter().filter(|&&s| choice[s][spec.course]).count();
        if have < need {
            let mut missing: Vec<usize> = eligible
                .iter()
                .copied()
                .filter(|&s| !choice[s][spec.course])
                .collect();
            missing.shuffle(&mut rng);
            for &s in missing.iter().take(need - have) {
                choice[s][spec.course] = true;
            }
        }
    }

    let noise = Normal::new(0.0, model.sigma)
        .map_err(|e| Error::Config(format!("sigma {}: {e}", model.sigma)))?;
    let mut utilities = Vec::new();
    for (s, student) in pop.students.iter().enumerate() {
        let a = student_college[s];
        let horizontal = model.theta[a][usize::from(student.year) - 1];
        for c in (0..m).filter(|&c| choice[s][c]) {
            let eps = noise.sample(&mut rng);
            let u = horizontal + model.gamma[a][course_college[c]] + pop.z[c] + eps;
            utilities.push((s, c, u));
        }
    }

    Instance::new(
        pop.students.clone(),
        pop.courses.clone(),
        pop.k,
        pop.reserves.clone(),
        PrioritySource::Mode(pop.priority_mode),
        utilities,
    )
}

/// Population and utilities from one seed.
pub fn generate_instance(
    model: &UtilityModelParams,
    params: &PopulationParams,
    census: &Census,
    seed: u64,
) -> Result<Instance> {
    let pop = generate_population(model, params, census, seed)?;
    draw_utilities(&pop, model, seed)
}

/// Generator settings as read from a TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Population ratio relative to the full university.
    pub scale: f64,
    pub model: UtilityModelParams,
    pub population: PopulationParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            scale: 0.1,
            model: default_params(),
            population: PopulationParams::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn census(&self) -> Census {
        Census::scaled(self.scale)
    }

    pub fn population(&self, seed: u64) -> Result<Population> {
        generate_population(&self.model, &self.population, &self.census(), seed)
    }

    pub fn instance(&self, seed: u64) -> Result<Instance> {
        generate_instance(&self.model, &self.population, &self.census(), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_coefficients() {
        let p = default_params();
        assert_eq!(p.theta[2][0], 0.28);
        assert_eq!(p.gamma[0][0], 0.0);
        assert_eq!(p.gamma[2][0], 0.37);
        assert_eq!(p.z_quantiles.at(0.5), -1.47);
        assert_eq!(p.z_quantiles.at(0.0), -2.32);
        assert_eq!(p.z_quantiles.at(1.0), 2.28);
        p.validate().unwrap();
    }

    #[test]
    fn theta_roughly_centred_within_college() {
        // year weights are unpublished; equal weights leave small residuals
        for row in default_params().theta {
            assert!(row.iter().sum::<f64>().abs() / 4.0 < 0.05, "{row:?}");
        }
    }

    #[test]
    fn z_median_matches_knot() {
        let q = default_params().z_quantiles;
        let mut rng = rng::stream(3, Stream::Population);
        let mut draws: Vec<f64> = (0..100_000).map(|_| q.sample(&mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        assert!((draws[50_000] + 1.47).abs() < 0.02);
    }

    #[test]
    fn scaled_census() {
        let c = Census::scaled(0.1);
        assert_eq!(c.num_students(), 602);
        assert_eq!(c.num_courses(), 75);
    }

    fn tiny_config() -> GeneratorConfig {
        GeneratorConfig {
            scale: 0.05,
            model: UtilityModelParams {
                choice_set_size: 20,
                ..default_params()
            },
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = tiny_config();
        let a = cfg.instance(11).unwrap();
        let b = cfg.instance(11).unwrap();
        let c = cfg.instance(12).unwrap();
        assert_eq!(a.utilities(), b.utilities());
        assert_eq!(a.reserves(), b.reserves());
        assert_ne!(a.utilities(), c.utilities());
    }

    #[test]
    fn choice_sets_have_requested_size_and_reserve_holders() {
        let cfg = tiny_config();
        let pop = cfg.population(5).unwrap();
        let inst = draw_utilities(&pop, &cfg.model, 5).unwrap();
        let mut expanded = 0;
        for s in 0..inst.num_students() {
            let row = inst.utilities().row(s);
            assert!(row.len() >= 20);
            expanded += row.len() - 20;
        }
        assert!(expanded < inst.num_students() * 20);
        for spec in inst.reserves() {
            let eligible: Vec<usize> = (0..inst.num_students())
                .filter(|&s| spec.is_eligible(inst.student(s)))
                .collect();
            let holders = eligible
                .iter()
                .filter(|&&s| inst.utility(s, spec.course).is_some())
                .count();
            assert!(holders >= (2 * spec.seats as usize).min(eligible.len()));
        }
    }

    #[test]
    fn noiseless_model_ranks_by_popularity() {
        let mut model = default_params();
        model.sigma = 0.0;
        for row in &mut model.theta {
            *row = [0.0; 4];
        }
        for row in &mut model.gamma {
            row.fill(0.0);
        }
        let cfg = GeneratorConfig {
            scale: 0.02,
            model,
            ..GeneratorConfig::default()
        };
        let pop = cfg.population(1).unwrap();
        let inst = draw_utilities(&pop, &cfg.model, 1).unwrap();
        for s in 0..inst.num_students() {
            for &(c, u) in inst.utilities().row(s) {
                assert_eq!(u, pop.z[c]);
            }
        }
    }

    #[test]
    fn residuals_have_mean_zero_and_unit_spread() {
        let cfg = GeneratorConfig {
            scale: 0.85,
            model: UtilityModelParams {
                choice_set_size: 10,
                ..default_params()
            },
            ..GeneratorConfig::default()
        };
        let pop = cfg.population(9).unwrap();
        let inst = draw_utilities(&pop, &cfg.model, 9).unwrap();
        assert!(inst.num_students() >= 5000);
        let m = &cfg.model;
        let idx = |name: &str| m.college_index(name).unwrap();
        let mut res = Vec::new();
        for s in 0..inst.num_students() {
            let st = inst.student(s);
            let a = idx(&st.college);
            for &(c, u) in inst.utilities().row(s) {
                let b = idx(&inst.course(c).college);
                res.push(u - m.theta[a][usize::from(st.year) - 1] - m.gamma[a][b] - pop.z[c]);
            }
        }
        let n = res.len() as f64;
        let mean = res.iter().sum::<f64>() / n;
        let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean}");
        assert!((sd - 1.0).abs() < 3.0 * (0.5 / n).sqrt(), "sd {sd}");
    }

    #[test]
    fn config_overrides_from_toml() {
        let cfg = GeneratorConfig::from_toml("scale = 0.2\n[model]\nsigma = 1.5\n").unwrap();
        assert_eq!(cfg.scale, 0.2);
        assert_eq!(cfg.model.sigma, 1.5);
        assert_eq!(cfg.model.theta[0][0], 0.12);
        assert!(GeneratorConfig::from_toml("bogus = 1").is_err());
    }
}
