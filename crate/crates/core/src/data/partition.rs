use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{FedPaeError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(FedPaeError::config(
                "split_fractions",
                "every fraction must be finite and > 0",
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FedPaeError::config(
                "split_fractions",
                format!("fractions sum to {sum}, expected 1"),
            ));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    /// Dirichlet concentration; smaller is more skewed.
    pub alpha: f64,
    pub n_clients: usize,
    pub seed: u64,
    #[serde(default)]
    pub split_fractions: SplitFractions,
    /// Clients below this many samples are topped up from the largest client.
    #[serde(default = "default_min_client_samples")]
    pub min_client_samples: usize,
}

fn default_min_client_samples() -> usize {
    1
}

impl PartitionSpec {
    pub fn new(alpha: f64, n_clients: usize, seed: u64) -> Self {
        PartitionSpec {
            alpha,
            n_clients,
            seed,
            split_fractions: SplitFractions::default(),
            min_client_samples: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(FedPaeError::config("alpha", "must be finite and > 0"));
        }
        if self.n_clients < 2 {
            return Err(FedPaeError::config("n_clients", "must be at least 2"));
        }
        if self.min_client_samples == 0 {
            return Err(FedPaeError::config("min_client_samples", "must be at least 1"));
        }
        self.split_fractions.validate()
    }
}

/// One client's disjoint train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientShard {
    pub fn all_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().chain(&self.val).chain(&self.test).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rounds `total * weights` to integers summing exactly to `total`.
///
/// Floors first, then hands the leftover units to the largest fractional
/// remainders; equal remainders go to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| if sum > 0.0 { total as f64 * w / sum } else { 0.0 })
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let leftover = total.saturating_sub(assigned);
    for &i in order.iter().cycle().take(leftover) {
        counts[i] += 1;
    }
    counts
}

fn sample_dirichlet(alpha: f64, n: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every gamma draw underflowed; the limit is a point mass on one client
        let mut p = vec![0.0; n];
        p[rng.random_range(0..n)] = 1.0;
        p
    }
}

/// Per-class Dirichlet label-skew partition.
///
/// Returns one sorted index list per client. Every sample is assigned to
/// exactly one client; the result is a pure function of `(dataset, spec)`.
pub fn partition_dirichlet<T: Scalar>(dataset: &Dataset<T>, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(FedPaeError::input("cannot partition an empty dataset"));
    }
    if spec.n_clients * spec.min_client_samples > dataset.len() {
        return Err(FedPaeError::input(format!(
            "{} clients with at least {} samples each need more than the {} samples available",
            spec.n_clients,
            spec.min_client_samples,
            dataset.len()
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for (i, &label) in dataset.labels().iter().enumerate() {
        by_class[label].push(i);
    }

    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    for (class, members) in by_class.iter_mut().enumerate() {
        let mut rng = rng_from_seed(derive_seed(spec.seed, "partition", class as u64, 0));
        let proportions = sample_dirichlet(spec.alpha, spec.n_clients, &mut rng);
        members.shuffle(&mut rng);
        let counts = largest_remainder(members.len(), &proportions);
        let mut cursor = 0;
        for (client, &n) in counts.iter().enumerate() {
            clients[client].extend_from_slice(&members[cursor..cursor + n]);
            cursor += n;
        }
    }

    repair_small_clients(
        &mut clients,
        dataset.labels(),
        dataset.n_classes(),
        spec.min_client_samples,
    );
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(clients)
}

/// Moves single samples from the largest client (its majority class) to
/// every client holding fewer than `min` samples.
fn repair_small_clients(clients: &mut [Vec<usize>], labels: &[usize], n_classes: usize, min: usize) {
    let mut hists: Vec<Vec<usize>> = clients
        .iter()
        .map(|c| {
            let mut h = vec![0usize; n_classes];
            for &i in c {
                h[labels[i]] += 1;
            }
            h
        })
        .collect();
    for target in 0..clients.len() {
        while clients[target].len() < min {
            let donor = (0..clients.len())
                .filter(|&c| c != target)
                .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
                .expect("at least two clients");
            let hist = &hists[donor];
            let majority = (0..n_classes)
                .max_by(|&a, &b| hist[a].cmp(&hist[b]).then(b.cmp(&a)))
                .unwrap();
            let pos = clients[donor]
                .iter()
                .rposition(|&i| labels[i] == majority)
                .expect("donor holds its majority class");
            let moved = clients[donor].remove(pos);
            hists[donor][majority] -= 1;
            hists[target][majority] += 1;
            clients[target].push(moved);
        }
    }
}

/// Splits one client's samples into train/validation/test.
///
/// Classes with at least three samples are split separately; rarer classes
/// are pooled and split together. If rounding leaves a split empty, one
/// sample moves to it from the largest split.
pub fn split_shard<T: Scalar>(
    client_id: usize,
    indices: &[usize],
    dataset: &Dataset<T>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<ClientShard> {
    fractions.validate()?;
    if indices.len() < 3 {
        return Err(FedPaeError::input(format!(
            "client {client_id} has {} samples; at least 3 are needed to populate train, validation and test",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(FedPaeError::input(format!("index {bad} out of range")));
    }
    let mut rng = rng_from_seed(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
    for &i in indices {
        by_class[dataset.labels()[i]].push(i);
    }
    let mut pooled = Vec::new();
    let mut groups = Vec::new();
    for members in by_class {
        if members.len() >= 3 {
            groups.push(members);
        } else {
            pooled.extend(members);
        }
    }
    if !pooled.is_empty() {
        groups.push(pooled);
    }

    let weights = fractions.as_array();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let allocation = stratified_allocation(&sizes, &weights);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (mut group, counts) in groups.into_iter().zip(allocation) {
        group.sort_unstable();
        group.shuffle(&mut rng);
        let mut cursor = 0;
        for (part, &n) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&group[cursor..cursor + n]);
            cursor += n;
        }
    }
    for empty in 0..3 {
        if parts[empty].is_empty() {
            let donor = (0..3).max_by_key(|&p| (parts[p].len(), 3 - p)).unwrap();
            let moved = parts[donor].pop().expect("donor split is non-empty");
            parts[empty].push(moved);
        }
    }
    let [mut train, mut val, mut test] = parts;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(ClientShard {
        client_id,
        train,
        val,
        test,
    })
}

/// Rounds a groups x parts quota table so that every row sums to its group
/// size, every column sums to its largest-remainder share of the total, and
/// each cell is the floor or ceiling of its quota where possible.
fn stratified_allocation(group_sizes: &[usize], weights: &[f64]) -> Vec<Vec<usize>> {
    let total: usize = group_sizes.iter().sum();
    let mut column_left = largest_remainder(total, weights);
    let wsum: f64 = weights.iter().sum();
    let mut cells: Vec<Vec<usize>> = Vec::with_capacity(group_sizes.len());
    let mut row_left = Vec::with_capacity(group_sizes.len());
    let mut remainders = Vec::new();
    for (g, &n) in group_sizes.iter().enumerate() {
        let mut row = Vec::with_capacity(weights.len());
        for (s, w) in weights.iter().enumerate() {
            let quota = n as f64 * w / wsum;
            let floor = quota.floor() as usize;
            row.push(floor);
            column_left[s] -= floor.min(column_left[s]);
            remainders.push((quota - quota.floor(), g, s));
        }
        row_left.push(n - row.iter().sum::<usize>());
        cells.push(row);
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, g, s) in &remainders {
        if row_left[g] > 0 && column_left[s] > 0 {
            cells[g][s] += 1;
            row_left[g] -= 1;
            column_left[s] -= 1;
        }
    }
    // greedy can strand a unit when its preferred columns filled up first
    for g in 0..cells.len() {
        while row_left[g] > 0 {
            let s = (0..weights.len())
                .max_by_key(|&s| (column_left[s], usize::MAX - s))
                .unwrap();
            cells[g][s] += 1;
            row_left[g] -= 1;
            column_left[s] = column_left[s].saturating_sub(1);
        }
    }
    cells
}

pub fn class_histogram<T: Scalar>(indices: &[usize], dataset: &Dataset<T>) -> Result<Vec<usize>> {
    let mut hist = vec![0; dataset.n_classes()];
    for &i in indices {
        let label = dataset
            .labels()
            .get(i)
            .ok_or_else(|| FedPaeError::input(format!("index {i} out of range")))?;
        hist[*label] += 1;
    }
    Ok(hist)
}

/// Shannon entropy (nats) of a class histogram; zero for an empty histogram.
pub fn label_entropy(hist: &[usize]) -> f64 {
    let total: usize = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    hist.iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Mean per-client label entropy of a partition.
pub fn mean_label_entropy<T: Scalar>(clients: &[Vec<usize>], dataset: &Dataset<T>) -> Result<f64> {
    let mut total = 0.0;
    for c in clients {
        total += label_entropy(&class_histogram(c, dataset)?);
    }
    Ok(total / clients.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    fn labeled(labels: Vec<usize>, n_classes: usize) -> Dataset<f64> {
        let n = labels.len();
        Dataset::new(vec![0.0; n], labels, 1, n_classes).unwrap()
    }

    fn balanced(per_class: usize, n_classes: usize) -> Dataset<f64> {
        labeled((0..per_class * n_classes).map(|i| i % n_classes).collect(), n_classes)
    }

    #[test]
    fn largest_remainder_hand_cases() {
        assert_eq!(largest_remainder(100, &[0.7, 0.15, 0.15]), vec![70, 15, 15]);
        assert_eq!(largest_remainder(10, &[0.7, 0.15, 0.15]), vec![7, 2, 1]);
        assert_eq!(largest_remainder(5, &[1.0, 1.0, 1.0]), vec![2, 2, 1]);
        assert_eq!(largest_remainder(0, &[0.5, 0.5]), vec![0, 0]);
    }

    #[test]
    fn near_uniform_concentration_splits_evenly() {
        let ds = balanced(100, 3);
        let parts = partition_dirichlet(&ds, &PartitionSpec::new(1e9, 4, 11)).unwrap();
        for p in &parts {
            for count in class_histogram(p, &ds).unwrap() {
                assert!((23..=27).contains(&count), "count {count}");
            }
        }
    }

    #[test]
    fn partition_rejects_empty_and_oversubscribed_inputs() {
        let empty = labeled(vec![], 2);
        assert!(matches!(
            partition_dirichlet(&empty, &PartitionSpec::new(0.5, 2, 0)),
            Err(FedPaeError::Input(_))
        ));
        let tiny = balanced(1, 2);
        assert!(matches!(
            partition_dirichlet(&tiny, &PartitionSpec::new(0.5, 3, 0)),
            Err(FedPaeError::Input(_))
        ));
        assert!(matches!(
            partition_dirichlet(&tiny, &PartitionSpec::new(0.0, 2, 0)),
            Err(FedPaeError::Config { field: "alpha", .. })
        ));
    }

    #[test]
    fn starved_clients_are_repaired() {
        let ds = balanced(10, 2);
        for seed in 0..50 {
            let mut spec = PartitionSpec::new(0.05, 8, seed);
            spec.min_client_samples = 2;
            let parts = partition_dirichlet(&ds, &spec).unwrap();
            assert!(parts.iter().all(|p| p.len() >= 2));
        }
    }

    #[test]
    fn entropy_falls_with_concentration() {
        let ds = balanced(100, 10);
        let mean_entropy = |alpha: f64| {
            (0..50)
                .map(|seed| {
                    let parts = partition_dirichlet(&ds, &PartitionSpec::new(alpha, 20, seed)).unwrap();
                    mean_label_entropy(&parts, &ds).unwrap()
                })
                .sum::<f64>()
                / 50.0
        };
        assert!(mean_entropy(0.1) < mean_entropy(0.5));
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let ds = balanced(50, 2);
        let idx: Vec<usize> = (0..100).collect();
        let shard = split_shard(0, &idx, &ds, SplitFractions::default(), 3).unwrap();
        assert_eq!((shard.train.len(), shard.val.len(), shard.test.len()), (70, 15, 15));
        // even indices of an alternating dataset are all class 0
        let single = balanced(10, 2);
        let idx: Vec<usize> = (0..20).step_by(2).collect();
        let shard = split_shard(0, &idx, &single, SplitFractions::default(), 3).unwrap();
        assert_eq!((shard.train.len(), shard.val.len(), shard.test.len()), (7, 2, 1));
        let again = split_shard(0, &idx, &single, SplitFractions::default(), 3).unwrap();
        assert_eq!(shard, again);
    }

    #[test]
    fn stratified_allocation_keeps_rows_columns_and_cells_tight() {
        let cells = stratified_allocation(&[50, 50], &[0.7, 0.15, 0.15]);
        let cols: Vec<usize> = (0..3).map(|s| cells[0][s] + cells[1][s]).collect();
        assert_eq!(cols, vec![70, 15, 15]);
        for row in &cells {
            assert_eq!(row.iter().sum::<usize>(), 50);
            assert!(row[1] == 7 || row[1] == 8);
        }
    }

    #[test]
    fn split_fills_every_part_when_rounding_starves_one() {
        let ds = balanced(3, 3);
        let idx: Vec<usize> = (0..9).collect();
        let shard = split_shard(0, &idx, &ds, SplitFractions::default(), 0).unwrap();
        assert!(!shard.train.is_empty() && !shard.val.is_empty() && !shard.test.is_empty());
        assert_eq!(shard.all_indices(), idx);
        assert!(split_shard(0, &[0, 1], &ds, SplitFractions::default(), 0).is_err());
    }

    #[test]
    fn histogram_cases() {
        let ds = labeled(vec![0, 0, 1], 2);
        assert_eq!(class_histogram(&[0, 1, 2], &ds).unwrap(), vec![2, 1]);
        assert_eq!(class_histogram(&[], &ds).unwrap(), vec![0, 0]);
        assert!(class_histogram(&[3], &ds).is_err());
        let synth = generate_synthetic::<f32>(&SyntheticSpec {
            n_classes: 3,
            n_features: 2,
            n_samples: 31,
            class_separation: 1.0,
            noise_scale: 1.0,
            seed: 0,
        })
        .unwrap();
        let all: Vec<usize> = (0..31).collect();
        let hist = class_histogram(&all, &synth).unwrap();
        assert!(hist.iter().max().unwrap() - hist.iter().min().unwrap() <= 1);
    }

    proptest! {
        #[test]
        fn partition_conserves_every_sample(
            alpha in 0.05f64..5.0,
            n_clients in 2usize..12,
            seed: u64,
            per_class in 3usize..30,
        ) {
            let ds = balanced(per_class, 4);
            let parts = partition_dirichlet(&ds, &PartitionSpec::new(alpha, n_clients, seed)).unwrap();
            let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
            prop_assert!(parts.iter().all(|p| !p.is_empty()));
        }

        #[test]
        fn split_parts_are_disjoint_and_cover(seed: u64, n in 3usize..200, classes in 2usize..6) {
            let ds = labeled((0..n).map(|i| (i * 7 + i / 3) % classes).collect(), classes);
            let idx: Vec<usize> = (0..n).collect();
            let shard = split_shard(1, &idx, &ds, SplitFractions::default(), seed).unwrap();
            prop_assert!(!shard.train.is_empty() && !shard.val.is_empty() && !shard.test.is_empty());
            prop_assert_eq!(shard.all_indices(), idx);
        }
    }
}
