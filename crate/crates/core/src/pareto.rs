//! NSGA-II over 49-bit aperture chromosomes.
//!
//! Objectives are minimized: `z1 = r_max` and `z2 = -d_min`. Offspring come
//! from binary tournaments on (rank, crowding), uniform crossover and per-bit
//! flip mutation; survivors are chosen front by front from the merged parent
//! and offspring population, breaking the last front by crowding distance.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::PatternScores;
use crate::pattern::{AperturePattern, CELLS};

/// Number of objectives.
pub const OBJECTIVES: usize = 2;

/// One member of the population.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub chromosome: AperturePattern,
    pub scores: PatternScores,
    /// `(r_max, -d_min)`, both minimized.
    pub objectives: [f64; OBJECTIVES],
    /// Index of the non-domination front, 0 being the best.
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(chromosome: AperturePattern, scores: PatternScores) -> Self {
        Self {
            chromosome,
            scores,
            objectives: [scores.r_max, -scores.d_min],
            rank: 0,
            crowding: 0.0,
        }
    }
}

/// Pareto dominance on minimized objective vectors.
pub fn dominates_objectives(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

pub fn dominates(a: &Individual, b: &Individual) -> bool {
    dominates_objectives(&a.objectives, &b.objectives)
}

/// Fast non-dominated sort over objective vectors; returns fronts of indices.
pub fn non_dominated_sort_objectives(points: &[[f64; OBJECTIVES]]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates_objectives(&points[i], &points[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates_objectives(&points[j], &points[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Sorts `pop` into fronts, writing each member's rank. Returns fronts of indices.
pub fn non_dominated_sort(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let points: Vec<[f64; OBJECTIVES]> = pop.iter().map(|i| i.objectives).collect();
    let fronts = non_dominated_sort_objectives(&points);
    for (rank, front) in fronts.iter().enumerate() {
        for &i in front {
            pop[i].rank = rank;
        }
    }
    fronts
}

/// Crowding distances of a set of objective vectors (one front).
pub fn crowding_distances(points: &[[f64; OBJECTIVES]]) -> Vec<f64> {
    let n = points.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0; n];
    #[allow(clippy::needless_range_loop)]
    for m in 0..OBJECTIVES {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[a][m].total_cmp(&points[b][m]));
        let lo = points[order[0]][m];
        let hi = points[order[n - 1]][m];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for k in 1..n - 1 {
            let i = order[k];
            if dist[i].is_finite() {
                dist[i] += (points[order[k + 1]][m] - points[order[k - 1]][m]) / span;
            }
        }
    }
    dist
}

/// Assigns crowding distance to the members of `pop` listed in `front`.
pub fn crowding_distance(pop: &mut [Individual], front: &[usize]) {
    let points: Vec<[f64; OBJECTIVES]> = front.iter().map(|&i| pop[i].objectives).collect();
    for (&i, d) in front.iter().zip(crowding_distances(&points)) {
        pop[i].crowding = d;
    }
}

/// The crowded-comparison order: lower rank first, then larger crowding.
fn crowded_cmp(a: &Individual, b: &Individual) -> Ordering {
    a.rank.cmp(&b.rank).then_with(|| b.crowding.total_cmp(&a.crowding))
}

/// NSGA-II settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    /// Probability that a pair of parents is recombined.
    pub crossover_prob: f64,
    /// Per-bit flip probability.
    pub mutation_prob: f64,
    pub rng_seed: u64,
    /// Cells the search may open; the rest stay closed.
    pub free_cells: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 1500,
            generations: 100,
            crossover_prob: 0.9,
            mutation_prob: 1.0 / CELLS as f64,
            rng_seed: 1,
            free_cells: (1u64 << CELLS) - 1,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "population size must be even and >= 4, got {}",
                self.population_size
            )));
        }
        for (name, p) in [("crossover", self.crossover_prob), ("mutation", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if self.free_cells == 0 || self.free_cells >> CELLS != 0 {
            return Err(Error::Config(format!("free cell mask {:#x}", self.free_cells)));
        }
        Ok(())
    }
}

/// Per-generation summary of the surviving population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    /// Smallest `r_max` in the population.
    pub best_r: f64,
    /// Smallest `-d_min` in the population.
    pub best_neg_d: f64,
    pub front_size: usize,
    pub evaluations: usize,
}

/// Result of a search.
#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    /// Distinct members of the final non-dominated front.
    pub front: Vec<Individual>,
    pub trace: Vec<GenerationStats>,
}

struct Evaluator<'a, F> {
    scorer: &'a F,
    cache: HashMap<u64, PatternScores>,
}

impl<'a, F> Evaluator<'a, F>
where
    F: Fn(&AperturePattern) -> Result<PatternScores> + Sync,
{
    fn evaluate(&mut self, chromosomes: &[AperturePattern]) -> Result<Vec<Individual>> {
        let mut missing: Vec<AperturePattern> = chromosomes
            .iter()
            .filter(|c| !self.cache.contains_key(&c.bits()))
            .copied()
            .collect();
        missing.sort_unstable();
        missing.dedup();

        let scored = score_all(self.scorer, &missing);
        for (c, s) in missing.iter().zip(scored) {
            let s = s.map_err(|e| Error::Input(format!("scoring pattern {}: {e}", c.bit_string())))?;
            if !(s.r_max.is_finite() && s.d_min.is_finite()) {
                return Err(Error::Input(format!(
                    "non-finite objectives for pattern {}",
                    c.bit_string()
                )));
            }
            self.cache.insert(c.bits(), s);
        }
        Ok(chromosomes
            .iter()
            .map(|c| Individual::new(*c, self.cache[&c.bits()]))
            .collect())
    }
}

#[cfg(feature = "parallel")]
fn score_all<F>(scorer: &F, patterns: &[AperturePattern]) -> Vec<Result<PatternScores>>
where
    F: Fn(&AperturePattern) -> Result<PatternScores> + Sync,
{
    use rayon::prelude::*;
    patterns.par_iter().map(scorer).collect()
}

#[cfg(not(feature = "parallel"))]
fn score_all<F>(scorer: &F, patterns: &[AperturePattern]) -> Vec<Result<PatternScores>>
where
    F: Fn(&AperturePattern) -> Result<PatternScores> + Sync,
{
    patterns.iter().map(scorer).collect()
}

fn random_chromosome<R: Rng>(rng: &mut R, free: u64) -> AperturePattern {
    let bits = rng.random::<u64>() & free;
    repair(bits, free, rng)
}

/// Opens one random free cell when every cell is closed.
fn repair<R: Rng>(bits: u64, free: u64, rng: &mut R) -> AperturePattern {
    let bits = if bits == 0 {
        let cells: Vec<u32> = (0..CELLS as u32).filter(|i| free >> i & 1 == 1).collect();
        1u64 << cells[rng.random_range(0..cells.len())]
    } else {
        bits
    };
    AperturePattern::from_bits(bits).expect("repaired chromosome has an open cell")
}

fn tournament<'p, R: Rng>(pop: &'p [Individual], rng: &mut R) -> &'p Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if crowded_cmp(b, a) == Ordering::Less {
        b
    } else {
        a
    }
}

fn make_offspring<R: Rng>(pop: &[Individual], cfg: &GaConfig, rng: &mut R) -> Vec<AperturePattern> {
    let free = cfg.free_cells;
    let mut children = Vec::with_capacity(cfg.population_size);
    while children.len() < cfg.population_size {
        let p1 = tournament(pop, rng).chromosome.bits();
        let p2 = tournament(pop, rng).chromosome.bits();
        let (mut c1, mut c2) = (p1, p2);
        if rng.random::<f64>() < cfg.crossover_prob {
            let swap = rng.random::<u64>() & free;
            c1 = (p1 & !swap) | (p2 & swap);
            c2 = (p2 & !swap) | (p1 & swap);
        }
        for child in [c1, c2] {
            let mut bits = child;
            for i in 0..CELLS {
                if free >> i & 1 == 1 && rng.random::<f64>() < cfg.mutation_prob {
                    bits ^= 1 << i;
                }
            }
            children.push(repair(bits & free, free, rng));
        }
    }
    children.truncate(cfg.population_size);
    children
}

/// Ranks and assigns crowding to a whole population; returns the fronts.
fn rank_population(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let fronts = non_dominated_sort(pop);
    for f in &fronts {
        crowding_distance(pop, f);
    }
    fronts
}

fn check_front(pop: &[Individual], front: &[usize]) {
    for &i in front {
        for &j in front {
            debug_assert!(!dominates(&pop[i], &pop[j]), "front member {i} dominates {j}");
        }
    }
}

fn stats(generation: usize, pop: &[Individual], front_size: usize, evaluations: usize) -> GenerationStats {
    GenerationStats {
        generation,
        best_r: pop.iter().map(|i| i.objectives[0]).fold(f64::INFINITY, f64::min),
        best_neg_d: pop.iter().map(|i| i.objectives[1]).fold(f64::INFINITY, f64::min),
        front_size,
        evaluations,
    }
}

/// Runs NSGA-II. Deterministic for a given `cfg.rng_seed`.
pub fn evolve<F>(cfg: &GaConfig, scorer: F) -> Result<EvolveOutcome>
where
    F: Fn(&AperturePattern) -> Result<PatternScores> + Sync,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut eval = Evaluator {
        scorer: &scorer,
        cache: HashMap::new(),
    };

    let initial: Vec<AperturePattern> = (0..cfg.population_size)
        .map(|_| random_chromosome(&mut rng, cfg.free_cells))
        .collect();
    let mut pop = eval.evaluate(&initial)?;
    let mut fronts = rank_population(&mut pop);
    check_front(&pop, &fronts[0]);
    let mut trace = vec![stats(0, &pop, fronts[0].len(), eval.cache.len())];

    for generation in 1..=cfg.generations {
        let children = make_offspring(&pop, cfg, &mut rng);
        let mut merged = pop;
        merged.extend(eval.evaluate(&children)?);
        fronts = rank_population(&mut merged);
        check_front(&merged, &fronts[0]);

        let mut next = Vec::with_capacity(cfg.population_size);
        for front in &fronts {
            if next.len() + front.len() <= cfg.population_size {
                next.extend(front.iter().map(|&i| merged[i].clone()));
            } else {
                let mut last: Vec<usize> = front.clone();
                last.sort_by(|&a, &b| merged[b].crowding.total_cmp(&merged[a].crowding));
                let room = cfg.population_size - next.len();
                next.extend(last.into_iter().take(room).map(|i| merged[i].clone()));
            }
            if next.len() == cfg.population_size {
                break;
            }
        }
        pop = next;
        // ranks and crowding of survivors, for the next round of tournaments
        fronts = rank_population(&mut pop);
        trace.push(stats(generation, &pop, fronts[0].len(), eval.cache.len()));
    }

    let mut seen = std::collections::HashSet::new();
    let front: Vec<Individual> = fronts[0]
        .iter()
        .map(|&i| pop[i].clone())
        .filter(|ind| seen.insert(ind.chromosome.bits()))
        .collect();
    Ok(EvolveOutcome { front, trace })
}

/// Picks the front member with the largest flip distance, then the smallest
/// `r_max`, then the lexicographically smallest bit string.
pub fn select_final(front: &[Individual]) -> Result<AperturePattern> {
    front
        .iter()
        .min_by(|a, b| {
            b.scores
                .d_r_min
                .total_cmp(&a.scores.d_r_min)
                .then_with(|| a.scores.r_max.total_cmp(&b.scores.r_max))
                .then_with(|| a.chromosome.bit_string().cmp(&b.chromosome.bit_string()))
        })
        .map(|i| i.chromosome)
        .ok_or_else(|| Error::EmptyInput("empty front".into()))
}
