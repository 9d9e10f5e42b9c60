//! Genetic search over complex unmixing matrices with the model-based
//! objective as fitness.
//!
//! Generation 1 is the initial population; each later generation is bred by
//! roulette selection, row-swap crossover and per-entry complex Gaussian
//! mutation, keeping the `elitism` best individuals unchanged.

use log::debug;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::normalize_rows;
use crate::modelsep::{Objective, ObjectiveBreakdown, UnmixingMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    /// Probability that an entry is perturbed.
    pub mutation_rate: f64,
    /// Perturbation std relative to the row RMS.
    pub mutation_scale: f64,
    pub elitism: usize,
    /// Std of the complex perturbation added to the all-ones start.
    pub init_spread: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 50,
            seed: 0,
            mutation_rate: 0.3,
            mutation_scale: 1.0,
            elitism: 1,
            init_spread: 0.5,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Configuration(format!("population must be >= 2, got {}", self.population)));
        }
        if self.generations < 1 {
            return Err(Error::Configuration("generations must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.mutation_scale) {
            return Err(Error::Configuration("mutation rate and scale must lie in [0, 1]".into()));
        }
        if self.elitism >= self.population {
            return Err(Error::Configuration("elitism must be smaller than the population".into()));
        }
        if !(self.init_spread >= 0.0) || !self.init_spread.is_finite() {
            return Err(Error::Configuration("init_spread must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub w: UnmixingMatrix,
    pub fitness: f64,
}

fn complex_normal(rng: &mut ChaCha8Rng, std: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (std / std::f64::consts::SQRT_2)
}

fn renormalized(mut m: DMatrix<Complex64>, fallback: &UnmixingMatrix) -> UnmixingMatrix {
    if normalize_rows(&mut m) {
        UnmixingMatrix::new(m).unwrap_or_else(|_| fallback.clone())
    } else {
        fallback.clone()
    }
}

/// Individual 0 is the normalized all-ones matrix; the rest add complex
/// Gaussian noise of std `init_spread` before normalization.
pub fn initialize(config: &GaConfig, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Vec<UnmixingMatrix>> {
    config.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::Parameter("unmixing matrix must be non-empty".into()));
    }
    let ones = UnmixingMatrix::ones(rows, cols);
    let mut out = vec![ones.clone()];
    for _ in 1..config.population {
        let m = DMatrix::from_fn(rows, cols, |_, _| Complex64::new(1.0, 0.0) + complex_normal(rng, config.init_spread));
        out.push(renormalized(m, &ones));
    }
    Ok(out)
}

/// Roulette wheel over non-negative fitness; uniform when all are zero.
pub fn select(fitness: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
    if fitness.is_empty() {
        return Err(Error::Parameter("cannot select from an empty population".into()));
    }
    if fitness.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
        return Err(Error::Parameter("fitness must be finite and non-negative".into()));
    }
    let total: f64 = fitness.iter().sum();
    if total <= 0.0 {
        return Ok(rng.random_range(0..fitness.len()));
    }
    let mut target = rng.random::<f64>() * total;
    for (i, f) in fitness.iter().enumerate() {
        if target < *f {
            return Ok(i);
        }
        target -= f;
    }
    // rounding at the end of the wheel
    Ok(fitness.iter().rposition(|f| *f > 0.0).unwrap_or(0))
}

/// Swaps the rows in `rows` between the parents.
pub fn crossover_rows(a: &UnmixingMatrix, b: &UnmixingMatrix, rows: &[usize]) -> Result<(UnmixingMatrix, UnmixingMatrix)> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Parameter("parents differ in shape".into()));
    }
    let (mut ca, mut cb) = (a.matrix().clone(), b.matrix().clone());
    for &r in rows {
        if r >= a.rows() {
            return Err(Error::Parameter(format!("row {r} out of range")));
        }
        ca.set_row(r, &b.matrix().row(r));
        cb.set_row(r, &a.matrix().row(r));
    }
    // whole rows move, so they stay unit-norm
    Ok((UnmixingMatrix::from_unit_rows(ca), UnmixingMatrix::from_unit_rows(cb)))
}

/// Swaps a uniformly drawn nonempty proper subset of rows; with one row the
/// single row is swapped.
pub fn crossover(a: &UnmixingMatrix, b: &UnmixingMatrix, rng: &mut ChaCha8Rng) -> Result<(UnmixingMatrix, UnmixingMatrix)> {
    let n = a.rows();
    if n == 0 || n > 63 {
        return Err(Error::Parameter(format!("crossover supports 1..=63 rows, got {n}")));
    }
    let rows: Vec<usize> = if n == 1 {
        vec![0]
    } else {
        let mask: u64 = rng.random_range(1..(1u64 << n) - 1);
        (0..n).filter(|r| mask >> r & 1 == 1).collect()
    };
    crossover_rows(a, b, &rows)
}

/// Adds complex Gaussian noise of std `mutation_scale * row RMS` to each entry
/// with probability `mutation_rate`, then normalizes.
pub fn mutate(w: &UnmixingMatrix, config: &GaConfig, rng: &mut ChaCha8Rng) -> UnmixingMatrix {
    if config.mutation_rate == 0.0 {
        return w.clone();
    }
    let mut m = w.matrix().clone();
    let cols = m.ncols() as f64;
    for r in 0..m.nrows() {
        let rms = (m.row(r).iter().map(|z| z.norm_sqr()).sum::<f64>() / cols).sqrt();
        for c in 0..m.ncols() {
            if rng.random::<f64>() < config.mutation_rate {
                m[(r, c)] += complex_normal(rng, config.mutation_scale * rms);
            }
        }
    }
    renormalized(m, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// 1-based.
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best: ObjectiveBreakdown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Individual,
    /// Best individual of each generation.
    pub best_per_generation: Vec<UnmixingMatrix>,
    pub history: Vec<GenerationRecord>,
}

impl GaResult {
    pub fn fitness_trace(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.best_fitness).collect()
    }

    /// Per-generation log as JSON.
    pub fn log_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.history).map_err(|e| Error::Numerical(format!("serializing GA log: {e}")))
    }
}

fn evaluate(objective: &Objective, population: &[UnmixingMatrix]) -> Vec<f64> {
    population.par_iter().map(|w| objective.fitness(w)).collect()
}

fn best_index(fitness: &[f64]) -> usize {
    // first maximum, so ties resolve deterministically
    let mut best = 0;
    for (i, f) in fitness.iter().enumerate() {
        if *f > fitness[best] {
            best = i;
        }
    }
    best
}

/// Maximizes the objective for an `n_sources x M` unmixing matrix.
pub fn run(objective: &Objective, n_sources: usize, config: &GaConfig) -> Result<GaResult> {
    config.validate()?;
    let m = objective.data().channels();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut population = initialize(config, n_sources, m, &mut rng)?;
    let mut fitness = evaluate(objective, &population);

    let mut history = Vec::with_capacity(config.generations);
    let mut best_per_generation = Vec::with_capacity(config.generations);
    for generation in 1..=config.generations {
        if generation > 1 {
            let mut order: Vec<usize> = (0..population.len()).collect();
            order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
            let mut next: Vec<UnmixingMatrix> = order[..config.elitism].iter().map(|&i| population[i].clone()).collect();
            let mut next_fitness: Vec<f64> = order[..config.elitism].iter().map(|&i| fitness[i]).collect();
            let mut offspring = Vec::with_capacity(config.population);
            while next.len() + offspring.len() < config.population {
                let a = select(&fitness, &mut rng)?;
                let b = select(&fitness, &mut rng)?;
                let (ca, cb) = crossover(&population[a], &population[b], &mut rng)?;
                offspring.push(mutate(&ca, config, &mut rng));
                if next.len() + offspring.len() < config.population {
                    offspring.push(mutate(&cb, config, &mut rng));
                }
            }
            next_fitness.extend(evaluate(objective, &offspring));
            next.extend(offspring);
            population = next;
            fitness = next_fitness;
        }
        let b = best_index(&fitness);
        let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
        debug!("generation {generation}: best {:.4e}, mean {:.4e}", fitness[b], mean);
        history.push(GenerationRecord {
            generation,
            best_fitness: fitness[b],
            mean_fitness: mean,
            best: objective.evaluate(&population[b], false),
        });
        best_per_generation.push(population[b].clone());
    }
    let b = best_index(&fitness);
    Ok(GaResult { best: Individual { w: population[b].clone(), fitness: fitness[b] }, best_per_generation, history })
}
