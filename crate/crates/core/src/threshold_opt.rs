//! Class-wise tagging thresholds found by a genetic search whose Gaussian
//! mutation width follows an annealing schedule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::tagging_f_score;
use crate::types::WeakLabels;

/// Thresholds are kept inside `[MARGIN, 1 - MARGIN]`.
pub const MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub population_size: usize,
    pub generations: usize,
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    pub elite_count: usize,
    pub tournament_size: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population_size: 24,
            generations: 100,
            initial_temperature: 0.25,
            cooling_rate: 0.97,
            elite_count: 2,
            tournament_size: 2,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be >= 2".into()));
        }
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(Error::Config("cooling_rate must lie in (0, 1)".into()));
        }
        if self.elite_count >= self.population_size {
            return Err(Error::Config(
                "elite_count must be < population_size".into(),
            ));
        }
        if !(self.initial_temperature >= 0.0 && self.initial_temperature.is_finite()) {
            return Err(Error::Config("initial_temperature must be >= 0".into()));
        }
        if self.tournament_size == 0 {
            return Err(Error::Config("tournament_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub thresholds: Vec<f64>,
    pub fitness: f64,
    /// Best-so-far fitness after initialisation and after each generation.
    pub trace: Vec<f64>,
    pub baseline_fitness: f64,
}

/// Tag decisions `score > threshold`.
pub fn apply_thresholds(pooled: &[f64], thresholds: &[f64]) -> WeakLabels {
    WeakLabels::new(pooled.iter().zip(thresholds).map(|(s, t)| s > t).collect())
}

/// Macro tagging F-score (percent) of thresholded pooled scores.
pub fn fitness(
    thresholds: &[f64],
    dev_scores: &[Vec<f64>],
    dev_tags: &[WeakLabels],
) -> Result<f64> {
    if dev_scores.is_empty() {
        return Err(Error::Data("empty development set".into()));
    }
    if let Some(bad) = dev_scores.iter().find(|s| s.len() != thresholds.len()) {
        return Err(Error::shape("fitness scores", thresholds.len(), bad.len()));
    }
    let pred: Vec<WeakLabels> = dev_scores
        .iter()
        .map(|s| apply_thresholds(s, thresholds))
        .collect();
    Ok(tagging_f_score(dev_tags, &pred, &[])?.macro_f_score)
}

#[derive(Clone)]
struct Scored {
    theta: Vec<f64>,
    fitness: f64,
    mean: f64,
}

/// Higher fitness first; ties go to the lower mean threshold.
fn better(a: &Scored, b: &Scored) -> bool {
    a.fitness > b.fitness || (a.fitness == b.fitness && a.mean < b.mean)
}

fn clamp(v: f64) -> f64 {
    v.clamp(MARGIN, 1.0 - MARGIN)
}

pub fn optimize(
    dev_scores: &[Vec<f64>],
    dev_tags: &[WeakLabels],
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let c = dev_scores
        .first()
        .ok_or_else(|| Error::Data("empty development set".into()))?
        .len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let score = |theta: Vec<f64>| -> Result<Scored> {
        let fitness = fitness(&theta, dev_scores, dev_tags)?;
        let mean = theta.iter().sum::<f64>() / c.max(1) as f64;
        Ok(Scored {
            theta,
            fitness,
            mean,
        })
    };

    let baseline = score(vec![0.5; c])?;
    let baseline_fitness = baseline.fitness;
    let mut pop = vec![baseline];
    while pop.len() < cfg.population_size {
        let theta = (0..c).map(|_| clamp(rng.random::<f64>())).collect();
        pop.push(score(theta)?);
    }
    let rank = |pop: &mut Vec<Scored>| {
        pop.sort_by(|a, b| {
            b.fitness
                .total_cmp(&a.fitness)
                .then(a.mean.total_cmp(&b.mean))
        })
    };
    rank(&mut pop);
    let mut best = pop[0].clone();
    let mut trace = vec![best.fitness];
    let mut temperature = cfg.initial_temperature;

    for _ in 0..cfg.generations {
        let mut next: Vec<Scored> = pop[..cfg.elite_count].to_vec();
        let noise =
            Normal::new(0.0, temperature.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        while next.len() < cfg.population_size {
            let a = tournament(&pop, cfg.tournament_size, &mut rng);
            let b = tournament(&pop, cfg.tournament_size, &mut rng);
            let child: Vec<f64> = (0..c)
                .map(|k| {
                    let gene = if rng.random::<bool>() {
                        pop[a].theta[k]
                    } else {
                        pop[b].theta[k]
                    };
                    clamp(gene + noise.sample(&mut rng))
                })
                .collect();
            next.push(score(child)?);
        }
        pop = next;
        rank(&mut pop);
        if better(&pop[0], &best) {
            best = pop[0].clone();
        }
        trace.push(best.fitness);
        temperature *= cfg.cooling_rate;
    }

    Ok(SearchResult {
        thresholds: best.theta,
        fitness: best.fitness,
        trace,
        baseline_fitness,
    })
}

fn tournament(pop: &[Scored], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.random_range(0..pop.len());
    for _ in 1..size {
        let other = rng.random_range(0..pop.len());
        if better(&pop[other], &pop[winner]) {
            winner = other;
        }
    }
    winner
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(v: &[u8]) -> Vec<WeakLabels> {
        v.iter()
            .map(|b| WeakLabels::from_slice(&[*b]).unwrap())
            .collect()
    }

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|s| vec![*s]).collect()
    }

    #[test]
    fn fitness_examples() {
        let scores = col(&[0.9, 0.8, 0.7, 0.2, 0.1, 0.05]);
        let y = tags(&[1, 1, 1, 0, 0, 0]);
        assert_eq!(fitness(&[1.0 - MARGIN], &scores, &y).unwrap(), 0.0);
        assert!((fitness(&[0.4], &scores, &y).unwrap() - 100.0).abs() < 1e-12);
        // hand count at 0.5: scores 0.9, 0.6 positive; tags 1,0,1,0,1,0
        let scores = col(&[0.9, 0.6, 0.4, 0.3, 0.2, 0.1]);
        let y = tags(&[1, 0, 1, 0, 1, 0]);
        // TP 1, FP 1, FN 2: P 1/2, R 1/3, F 0.4
        assert!((fitness(&[0.5], &scores, &y).unwrap() - 40.0).abs() < 1e-12);
        assert!(fitness(&[0.5], &[], &[]).is_err());
    }

    #[test]
    fn zero_generations_returns_best_initial() {
        let scores = col(&[0.9, 0.8, 0.3, 0.2]);
        let y = tags(&[1, 1, 0, 0]);
        let cfg = SearchConfig {
            generations: 0,
            seed: 4,
            ..Default::default()
        };
        let r = optimize(&scores, &y, &cfg).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.fitness, r.trace[0]);
        assert!(r.fitness >= r.baseline_fitness);
    }

    #[test]
    fn matches_grid_search_on_unimodal_fixture() {
        let scores = col(&[
            0.95, 0.9, 0.72, 0.66, 0.6, 0.58, 0.45, 0.41, 0.3, 0.12, 0.08,
        ]);
        let y = tags(&[1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0]);
        let grid = (1..1000)
            .map(|k| fitness(&[k as f64 * 1e-3], &scores, &y).unwrap())
            .fold(f64::MIN, f64::max);
        let r = optimize(&scores, &y, &SearchConfig::default()).unwrap();
        assert!((r.fitness - grid).abs() < 1e-6, "{} vs {grid}", r.fitness);
    }

    #[test]
    fn deterministic_given_seed() {
        let scores: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0])
            .collect();
        let y: Vec<WeakLabels> = (0..20)
            .map(|i| WeakLabels::new(vec![i % 3 == 0, i % 2 == 0]))
            .collect();
        let cfg = SearchConfig {
            generations: 20,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            optimize(&scores, &y, &cfg).unwrap(),
            optimize(&scores, &y, &cfg).unwrap()
        );
    }

    #[test]
    fn invalid_configs() {
        let s = col(&[0.5]);
        let y = tags(&[1]);
        for cfg in [
            SearchConfig {
                population_size: 1,
                elite_count: 0,
                ..Default::default()
            },
            SearchConfig {
                cooling_rate: 1.0,
                ..Default::default()
            },
            SearchConfig {
                elite_count: 24,
                ..Default::default()
            },
        ] {
            assert!(matches!(optimize(&s, &y, &cfg), Err(Error::Config(_))));
        }
        assert!(matches!(
            optimize(&[], &[], &SearchConfig::default()),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn trace_monotone_and_never_below_baseline(
            rows in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>(), any::<bool>()), 1..30),
            seed in any::<u64>(),
        ) {
            let scores: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
            let y: Vec<WeakLabels> = rows.iter().map(|r| WeakLabels::new(vec![r.2, r.3])).collect();
            let cfg = SearchConfig { generations: 15, seed, ..Default::default() };
            let r = optimize(&scores, &y, &cfg).unwrap();
            prop_assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(r.fitness >= r.baseline_fitness);
            prop_assert!(r.thresholds.iter().all(|t| *t > 0.0 && *t < 1.0));
        }
    }
}
