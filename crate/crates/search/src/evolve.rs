//! Seeded evolutionary search over the gene space with the compiler cost
//! model in the loop.
//!
//! Population 16, tournament selection (size 3), uniform crossover,
//! per-gene mutation probability 0.2. The first individual is always the
//! all-dense genome, so an unconstrained budget returns the distortion-free
//! baseline. Fitness orders feasible (cost within budget) before
//! infeasible, then lower distortion, then lower cost. Fresh evaluations
//! count against the budget; repeated genomes hit a cache. Deterministic in
//! the seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use xgir_core::graph::Graph;
use xgir_core::tensor::Tensor;

use crate::evaluate::{baseline_outputs, compile_candidate, distortion_against};
use crate::space::{Candidate, Gene, SearchSpace};
use crate::SearchError;

pub const POPULATION: usize = 16;
pub const MUTATION_PROB: f64 = 0.2;
pub const TOURNAMENT: usize = 3;
pub const DEFAULT_EVALS: usize = 200;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TraceRecord {
    pub eval: usize,
    pub genes: Vec<usize>,
    pub resolved: Vec<Gene>,
    pub cost: f64,
    pub distortion: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub best_genes: Vec<Gene>,
    pub cost: f64,
    pub distortion: f64,
    /// False iff no candidate satisfied the budget; `best` is then the
    /// least-infeasible (lowest-cost) one.
    pub feasible: bool,
    pub evaluations: usize,
    pub trace: Vec<TraceRecord>,
}

#[derive(Clone, Copy)]
struct Score {
    cost: f64,
    distortion: f64,
    eval: usize,
}

fn fitness_cmp(a: &Score, b: &Score, budget: f64) -> Ordering {
    let fa = a.cost <= budget;
    let fb = b.cost <= budget;
    fb.cmp(&fa)
        .then(a.distortion.total_cmp(&b.distortion))
        .then(a.cost.total_cmp(&b.cost))
        .then(a.eval.cmp(&b.eval))
}

/// Run the search. `evals` is the fresh-evaluation budget (at least the
/// population size); identical seeds reproduce identical traces.
pub fn search(
    space: &SearchSpace,
    model: &Graph,
    calibration: &[BTreeMap<String, Tensor>],
    evals: usize,
    seed: u64,
) -> Result<SearchOutcome, SearchError> {
    space.validate_against(model)?;
    if evals < POPULATION.min(space.genome_count().min(u128::from(u16::MAX)) as usize) {
        return Err(SearchError::BudgetTooSmall { evals, population: POPULATION });
    }

    let dense = Candidate::all_dense(space);
    let baseline = compile_candidate(space, model, &dense)?;
    let base_outputs = baseline_outputs(&baseline.graph, calibration)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<Vec<usize>, Score> = HashMap::new();
    let mut trace: Vec<TraceRecord> = Vec::new();

    let evaluate = |genes: &Vec<usize>,
                        cache: &mut HashMap<Vec<usize>, Score>,
                        trace: &mut Vec<TraceRecord>|
     -> Result<Score, SearchError> {
        if let Some(s) = cache.get(genes) {
            return Ok(*s);
        }
        let candidate = Candidate { genes: genes.clone() };
        let compiled = compile_candidate(space, model, &candidate)?;
        let distortion = distortion_against(&compiled.graph, &base_outputs, calibration)?;
        let score = Score { cost: compiled.cost, distortion, eval: trace.len() };
        trace.push(TraceRecord {
            eval: trace.len(),
            genes: genes.clone(),
            resolved: candidate
                .resolve(space)
                .into_iter()
                .map(|(_, g)| g.clone())
                .collect(),
            cost: compiled.cost,
            distortion,
            feasible: compiled.cost <= space.budget,
        });
        cache.insert(genes.clone(), score);
        Ok(score)
    };

    let random_genome = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        space
            .layers
            .iter()
            .map(|l| rng.gen_range(0..l.choices.len()))
            .collect()
    };

    // Generation zero: the dense baseline plus random genomes.
    let mut population: Vec<Vec<usize>> = vec![dense.genes.clone()];
    while population.len() < POPULATION && (trace.len() + population.len()) < evals + 1 {
        population.push(random_genome(&mut rng));
    }
    for genome in population.clone() {
        if trace.len() >= evals {
            break;
        }
        evaluate(&genome, &mut cache, &mut trace)?;
    }

    // Evolve until the evaluation budget is spent. Offspring that hit the
    // cache cost nothing; a stall counter stops us when the space is
    // exhausted.
    let mut stall = 0usize;
    while trace.len() < evals && stall < 64 * POPULATION {
        let tournament = |rng: &mut ChaCha8Rng, population: &[Vec<usize>], cache: &HashMap<Vec<usize>, Score>| {
            let mut best: Option<Vec<usize>> = None;
            for _ in 0..TOURNAMENT {
                let pick = population[rng.gen_range(0..population.len())].clone();
                best = match best {
                    None => Some(pick),
                    Some(cur) => {
                        let (sa, sb) = (cache[&pick], cache[&cur]);
                        if fitness_cmp(&sa, &sb, space.budget) == Ordering::Less {
                            Some(pick)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
            best.expect("population non-empty")
        };
        let a = tournament(&mut rng, &population, &cache);
        let b = tournament(&mut rng, &population, &cache);
        let mut child: Vec<usize> = a
            .iter()
            .zip(&b)
            .map(|(&ga, &gb)| if rng.gen_bool(0.5) { ga } else { gb })
            .collect();
        for (i, g) in child.iter_mut().enumerate() {
            if rng.gen_bool(MUTATION_PROB) {
                *g = rng.gen_range(0..space.layers[i].choices.len());
            }
        }
        if cache.contains_key(&child) {
            stall += 1;
            continue;
        }
        stall = 0;
        evaluate(&child, &mut cache, &mut trace)?;
        population.push(child);
        population.sort_by(|x, y| fitness_cmp(&cache[x], &cache[y], space.budget));
        population.truncate(POPULATION);
    }

    let (best_genes_raw, best_score) = cache
        .iter()
        .min_by(|(_, x), (_, y)| fitness_cmp(x, y, space.budget))
        .map(|(g, s)| (g.clone(), *s))
        .expect("at least one evaluation");
    let best = Candidate { genes: best_genes_raw };
    let best_genes = best
        .resolve(space)
        .into_iter()
        .map(|(_, g)| g.clone())
        .collect();
    Ok(SearchOutcome {
        feasible: best_score.cost <= space.budget,
        cost: best_score.cost,
        distortion: best_score.distortion,
        evaluations: trace.len(),
        best,
        best_genes,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgir_core::zoo;

    fn tiny_space(g: &Graph, budget: f64) -> SearchSpace {
        SearchSpace::default_for_model(g, budget).unwrap()
    }

    #[test]
    fn unconstrained_budget_returns_dense() {
        let g = zoo::toy_cnn6(2);
        let space = tiny_space(&g, f64::INFINITY);
        let cal = zoo::random_inputs(&g, 2, 2);
        let out = search(&space, &g, &cal, 24, 7).unwrap();
        assert!(out.feasible);
        assert_eq!(out.distortion, 0.0);
        assert!(out.best_genes.iter().all(Gene::is_dense));
    }

    #[test]
    fn binding_budget_is_respected() {
        let g = zoo::toy_cnn6(2);
        let unconstrained = tiny_space(&g, f64::INFINITY);
        let cal = zoo::random_inputs(&g, 2, 2);
        let dense_cost =
            crate::evaluate::compile_candidate(&unconstrained, &g, &Candidate::all_dense(&unconstrained))
                .unwrap()
                .cost;
        // Budget below dense cost forces pruning.
        let space = tiny_space(&g, dense_cost * 0.5);
        let out = search(&space, &g, &cal, 40, 3).unwrap();
        assert!(out.feasible, "a half-cost candidate exists in this space");
        assert!(out.cost <= space.budget);
        assert!(out.distortion > 0.0);
        assert!(!out.best_genes.iter().all(Gene::is_dense));
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let g = zoo::toy_cnn6(2);
        let space = tiny_space(&g, 1e12);
        let cal = zoo::random_inputs(&g, 2, 1);
        let a = search(&space, &g, &cal, 20, 99).unwrap();
        let b = search(&space, &g, &cal, 20, 99).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn pareto_sanity_no_dominating_candidate() {
        let g = zoo::toy_cnn6(2);
        let space = tiny_space(&g, 1e12);
        let cal = zoo::random_inputs(&g, 2, 1);
        let out = search(&space, &g, &cal, 24, 5).unwrap();
        for rec in &out.trace {
            let dominates = rec.cost < out.cost && rec.distortion < out.distortion;
            assert!(!dominates, "eval {} dominates the returned best", rec.eval);
        }
    }

    #[test]
    fn budget_below_population_rejected() {
        let g = zoo::toy_cnn6(2);
        let space = tiny_space(&g, 1e12);
        let cal = zoo::random_inputs(&g, 2, 1);
        assert!(matches!(
            search(&space, &g, &cal, 3, 1),
            Err(SearchError::BudgetTooSmall { .. })
        ));
    }
}
