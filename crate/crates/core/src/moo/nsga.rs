use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{crowding_distance, fast_nondominated_sort, Chromosome, ObjectiveVector};
use crate::error::{FedPaeError, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NsgaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-bit flip probability; `None` means `1 / bench_size`.
    pub mutation_rate: Option<f64>,
    pub seed: u64,
}

fn default_crossover_rate() -> f64 {
    0.9
}

impl Default for NsgaConfig {
    /// Population 100, 100 generations.
    fn default() -> Self {
        NsgaConfig {
            population_size: 100,
            generations: 100,
            crossover_rate: default_crossover_rate(),
            mutation_rate: None,
            seed: 0,
        }
    }
}

impl NsgaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 || !self.population_size.is_multiple_of(2) {
            return Err(FedPaeError::config("population_size", "must be even and at least 2"));
        }
        if self.generations == 0 {
            return Err(FedPaeError::config("generations", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(FedPaeError::config("crossover_rate", "must lie in [0, 1]"));
        }
        if let Some(m) = self.mutation_rate {
            if !(0.0..=1.0).contains(&m) {
                return Err(FedPaeError::config("mutation_rate", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoEntry<T> {
    pub chromosome: Chromosome,
    pub objectives: ObjectiveVector<T>,
}

/// Mutually non-dominated solutions with distinct masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront<T> {
    pub entries: Vec<ParetoEntry<T>>,
}

impl<T: Scalar> ParetoFront<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, mask: &Chromosome) -> bool {
        self.entries.iter().any(|e| &e.chromosome == mask)
    }

    /// One JSON object per line: `{"mask", "strength", "diversity", "val_accuracy"}`.
    pub fn to_jsonl(&self, val_accuracy: impl Fn(&Chromosome) -> Option<f64>) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let record = serde_json::json!({
                "mask": e.chromosome.to_string(),
                "strength": crate::scalar::round_sig(e.objectives.strength.as_f64()),
                "diversity": crate::scalar::round_sig(e.objectives.diversity.as_f64()),
                "val_accuracy": val_accuracy(&e.chromosome).map(crate::scalar::round_sig),
            });
            let _ = writeln!(out, "{record}");
        }
        out
    }
}

/// Result of one NSGA-II run.
#[derive(Debug, Clone)]
pub struct Evolution<T> {
    pub front: ParetoFront<T>,
    /// Every distinct mask evaluated, with its objectives.
    pub memo: BTreeMap<Chromosome, ObjectiveVector<T>>,
    /// Objective evaluations requested, counting memo hits.
    pub evaluations: usize,
}

/// Forces exactly `k` set bits by clearing or setting uniformly random bits.
pub fn repair_cardinality(mut bits: Vec<bool>, k: usize, rng: &mut Rng) -> Result<Chromosome> {
    if bits.len() < k {
        return Err(FedPaeError::input(format!(
            "cannot hold {k} models in a bench of {}",
            bits.len()
        )));
    }
    let set: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
    if set.len() > k {
        for j in sample(rng, set.len(), set.len() - k) {
            bits[set[j]] = false;
        }
    } else if set.len() < k {
        let clear: Vec<usize> = (0..bits.len()).filter(|&i| !bits[i]).collect();
        for j in sample(rng, clear.len(), k - set.len()) {
            bits[clear[j]] = true;
        }
    }
    Chromosome::new(bits, k)
}

fn random_mask(bench_size: usize, k: usize, rng: &mut Rng) -> Chromosome {
    let mut bits = vec![false; bench_size];
    for i in sample(rng, bench_size, k) {
        bits[i] = true;
    }
    Chromosome { bits }
}

struct Memo<'f, T, F> {
    table: BTreeMap<Chromosome, ObjectiveVector<T>>,
    evaluate: &'f F,
    requests: usize,
}

impl<T: Scalar, F: Fn(&Chromosome) -> ObjectiveVector<T>> Memo<'_, T, F> {
    fn get(&mut self, mask: &Chromosome) -> Result<ObjectiveVector<T>> {
        self.requests += 1;
        if let Some(v) = self.table.get(mask) {
            return Ok(*v);
        }
        let v = (self.evaluate)(mask);
        if v.has_nan() {
            return Err(FedPaeError::NanObjective { mask: mask.to_string() });
        }
        self.table.insert(mask.clone(), v);
        Ok(v)
    }
}

/// Rank (front index) and crowding distance for every member of a population.
fn rank_and_crowd<T: Scalar>(objs: &[ObjectiveVector<T>]) -> (Vec<usize>, Vec<T>, Vec<Vec<usize>>) {
    let fronts = fast_nondominated_sort(objs);
    let mut rank = vec![0; objs.len()];
    let mut crowd = vec![T::zero(); objs.len()];
    for (r, front) in fronts.iter().enumerate() {
        let members: Vec<ObjectiveVector<T>> = front.iter().map(|&i| objs[i]).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&members)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (rank, crowd, fronts)
}

/// Crowded comparison: lower rank wins, then larger crowding distance, then lower index.
fn better(a: usize, b: usize, rank: &[usize], crowd: &[impl Scalar]) -> usize {
    if rank[a] != rank[b] {
        return if rank[a] < rank[b] { a } else { b };
    }
    if crowd[a] != crowd[b] {
        return if crowd[a] > crowd[b] { a } else { b };
    }
    a.min(b)
}

/// Runs NSGA-II and returns the deduplicated first front of the final population.
///
/// The initial population is `seeds` topped up with random cardinality-`k`
/// masks. Each generation applies binary tournament selection on the crowded
/// comparison, uniform crossover, per-bit mutation and cardinality repair,
/// then keeps the best `P` of parents and offspring by rank and crowding.
pub fn evolve<T, F>(
    config: &NsgaConfig,
    bench_size: usize,
    k: usize,
    evaluate: &F,
    seeds: &[Chromosome],
) -> Result<Evolution<T>>
where
    T: Scalar,
    F: Fn(&Chromosome) -> ObjectiveVector<T>,
{
    config.validate()?;
    if k == 0 || bench_size < k {
        return Err(FedPaeError::input(format!(
            "ensemble size {k} must be in 1..={bench_size}"
        )));
    }
    let p = config.population_size;
    if seeds.len() > p {
        return Err(FedPaeError::input(format!(
            "{} seed masks exceed the population size {p}",
            seeds.len()
        )));
    }
    for s in seeds {
        if s.len() != bench_size || s.cardinality() != k {
            return Err(FedPaeError::input(format!(
                "seed mask {s} is not a cardinality-{k} mask over {bench_size} models"
            )));
        }
    }
    let mutation_rate = config.mutation_rate.unwrap_or(1.0 / bench_size as f64);
    let mut rng = rng_from_seed(config.seed);
    let mut memo = Memo {
        table: BTreeMap::new(),
        evaluate,
        requests: 0,
    };

    let mut population: Vec<Chromosome> = seeds.to_vec();
    while population.len() < p {
        population.push(random_mask(bench_size, k, &mut rng));
    }
    let mut objs = population.iter().map(|c| memo.get(c)).collect::<Result<Vec<_>>>()?;

    for _ in 0..config.generations {
        let (rank, crowd, _) = rank_and_crowd(&objs);
        let tournament = |rng: &mut Rng| {
            let a = rng.random_range(0..p);
            let b = rng.random_range(0..p);
            better(a, b, &rank, &crowd)
        };
        let mut offspring = Vec::with_capacity(p);
        while offspring.len() < p {
            let (pa, pb) = (tournament(&mut rng), tournament(&mut rng));
            let (mut ca, mut cb) = (population[pa].bits.clone(), population[pb].bits.clone());
            if rng.random_bool(config.crossover_rate) {
                for i in 0..bench_size {
                    if rng.random_bool(0.5) {
                        std::mem::swap(&mut ca[i], &mut cb[i]);
                    }
                }
            }
            for child in [ca, cb] {
                let mut child = child;
                for bit in child.iter_mut() {
                    if rng.random_bool(mutation_rate) {
                        *bit = !*bit;
                    }
                }
                offspring.push(repair_cardinality(child, k, &mut rng)?);
            }
        }
        let offspring_objs = offspring.iter().map(|c| memo.get(c)).collect::<Result<Vec<_>>>()?;

        population.extend(offspring);
        objs.extend(offspring_objs);
        let (_, crowd, fronts) = rank_and_crowd(&objs);
        let mut survivors = Vec::with_capacity(p);
        for front in fronts {
            if survivors.len() + front.len() <= p {
                survivors.extend(front);
            } else {
                let mut rest = front;
                rest.sort_by(|&a, &b| {
                    crowd[b]
                        .partial_cmp(&crowd[a])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                survivors.extend(rest.into_iter().take(p - survivors.len()));
            }
            if survivors.len() == p {
                break;
            }
        }
        population = survivors.iter().map(|&i| population[i].clone()).collect();
        objs = survivors.iter().map(|&i| objs[i]).collect();
        if population.iter().any(|c| c.cardinality() != k) {
            return Err(FedPaeError::Invariant("population member lost its cardinality".into()));
        }
    }

    let fronts = fast_nondominated_sort(&objs);
    let mut entries: Vec<ParetoEntry<T>> = Vec::new();
    for &i in fronts.first().map(Vec::as_slice).unwrap_or(&[]) {
        if !entries.iter().any(|e| e.chromosome == population[i]) {
            entries.push(ParetoEntry {
                chromosome: population[i].clone(),
                objectives: objs[i],
            });
        }
    }
    entries.sort_by(|a, b| {
        b.objectives
            .strength
            .partial_cmp(&a.objectives.strength)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.chromosome.cmp(&b.chromosome))
    });
    Ok(Evolution {
        front: ParetoFront { entries },
        memo: memo.table,
        evaluations: memo.requests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moo::dominates;

    fn config(seed: u64) -> NsgaConfig {
        NsgaConfig {
            population_size: 20,
            generations: 15,
            seed,
            ..NsgaConfig::default()
        }
    }

    /// Synthetic objectives: strength rewards low indices, diversity rewards spread.
    fn toy(c: &Chromosome) -> ObjectiveVector<f64> {
        let idx = c.selected();
        let n = c.len() as f64;
        let strength = idx.iter().map(|&i| 1.0 - i as f64 / n).sum::<f64>() / idx.len() as f64;
        let spread = (idx[idx.len() - 1] - idx[0]) as f64 / n;
        ObjectiveVector::new(strength, spread)
    }

    #[test]
    fn repair_cases() {
        let mut rng = rng_from_seed(1);
        let keep: Chromosome = "11100".parse().unwrap();
        assert_eq!(repair_cardinality(keep.bits().to_vec(), 3, &mut rng).unwrap(), keep);
        let full = vec![true; 5];
        let cut = repair_cardinality(full, 3, &mut rng).unwrap();
        assert_eq!(cut.cardinality(), 3);
        let grown = repair_cardinality(vec![false; 5], 2, &mut rng).unwrap();
        assert_eq!(grown.cardinality(), 2);
        assert!(repair_cardinality(vec![false; 2], 3, &mut rng).is_err());
        let sub = repair_cardinality("10111".parse::<Chromosome>().unwrap().bits().to_vec(), 2, &mut rng).unwrap();
        assert!(sub.selected().iter().all(|&i| i != 1));
    }

    #[test]
    fn degenerate_search_space_returns_the_full_mask() {
        let evo = evolve(&config(0), 5, 5, &toy, &[]).unwrap();
        assert_eq!(evo.front.len(), 1);
        assert_eq!(evo.front.entries[0].chromosome.to_string(), "11111");
    }

    #[test]
    fn front_is_mutually_non_dominated_and_deduplicated() {
        let evo = evolve(&config(3), 12, 4, &toy, &[]).unwrap();
        let e = &evo.front.entries;
        for a in e {
            for b in e {
                assert!(!dominates(&a.objectives, &b.objectives).unwrap());
            }
        }
        let mut masks: Vec<_> = e.iter().map(|x| x.chromosome.clone()).collect();
        masks.dedup();
        assert_eq!(masks.len(), e.len());
    }

    #[test]
    fn seeded_masks_are_evaluated_and_memoized() {
        let seed: Chromosome = "000000001111".parse().unwrap();
        let evo = evolve(&config(4), 12, 4, &toy, std::slice::from_ref(&seed)).unwrap();
        assert_eq!(evo.memo.get(&seed), Some(&toy(&seed)));
    }

    #[test]
    fn evolution_is_deterministic() {
        let a = evolve(&config(9), 12, 4, &toy, &[]).unwrap();
        let b = evolve(&config(9), 12, 4, &toy, &[]).unwrap();
        assert_eq!(a.front, b.front);
    }

    #[test]
    fn boundary_values_of_the_memo_survive_to_the_front() {
        for seed in 0..5 {
            let evo = evolve(&config(seed), 10, 3, &toy, &[]).unwrap();
            let best_s = evo.memo.values().map(|o| o.strength).fold(f64::MIN, f64::max);
            let best_d = evo.memo.values().map(|o| o.diversity).fold(f64::MIN, f64::max);
            assert!(evo.front.entries.iter().any(|e| e.objectives.strength == best_s));
            assert!(evo.front.entries.iter().any(|e| e.objectives.diversity == best_d));
        }
    }

    #[test]
    fn nan_objective_aborts_naming_the_mask() {
        let nan = |_: &Chromosome| ObjectiveVector::new(f64::NAN, 0.0);
        match evolve(&config(0), 4, 2, &nan, &[]) {
            Err(FedPaeError::NanObjective { mask }) => assert_eq!(mask.len(), 4),
            other => panic!("expected NaN error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut c = config(0);
        c.population_size = 3;
        assert!(matches!(evolve(&c, 4, 2, &toy, &[]), Err(FedPaeError::Config { .. })));
        let bad: Chromosome = "1110".parse().unwrap();
        assert!(evolve(&config(0), 4, 2, &toy, &[bad]).is_err());
        assert!(evolve(&config(0), 3, 4, &toy, &[]).is_err());
    }
}
