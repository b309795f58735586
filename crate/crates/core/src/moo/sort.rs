//! Fast non-dominated sorting and crowding distance.

use super::{dominates_unchecked, ObjectiveVector};
use crate::scalar::Scalar;

/// Partitions indices into successive non-dominated fronts (O(M N^2)).
///
/// Indices within each front are ascending. Empty input yields no fronts.
pub fn fast_nondominated_sort<T: Scalar>(objectives: &[ObjectiveVector<T>]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut current = Vec::new();
    for p in 0..n {
        for q in 0..n {
            if p == q {
                continue;
            }
            if dominates_unchecked(&objectives[p], &objectives[q]) {
                dominated[p].push(q);
            } else if dominates_unchecked(&objectives[q], &objectives[p]) {
                domination_count[p] += 1;
            }
        }
        if domination_count[p] == 0 {
            current.push(p);
        }
    }
    let mut fronts = Vec::new();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front.
///
/// Per objective, the extreme members get infinity and interior members add
/// the normalized gap between their neighbours; an objective with zero range
/// adds nothing.
pub fn crowding_distance<T: Scalar>(front: &[ObjectiveVector<T>]) -> Vec<T> {
    let n = front.len();
    let mut distance = vec![T::zero(); n];
    if n <= 2 {
        return vec![T::infinity(); n];
    }
    for objective in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            front[a]
                .get(objective)
                .partial_cmp(&front[b].get(objective))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let lo = front[order[0]].get(objective);
        let hi = front[order[n - 1]].get(objective);
        distance[order[0]] = T::infinity();
        distance[order[n - 1]] = T::infinity();
        let range = hi - lo;
        if range <= T::zero() {
            continue;
        }
        for w in order.windows(3) {
            let gap = front[w[2]].get(objective) - front[w[0]].get(objective);
            distance[w[1]] = distance[w[1]] + gap / range;
        }
    }
    distance
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ovs(points: &[(f64, f64)]) -> Vec<ObjectiveVector<f64>> {
        points.iter().map(|&(s, d)| ObjectiveVector::new(s, d)).collect()
    }

    /// Peels fronts by checking every pair directly.
    fn brute_force_fronts(objs: &[ObjectiveVector<f64>]) -> Vec<Vec<usize>> {
        let mut remaining: Vec<usize> = (0..objs.len()).collect();
        let mut fronts = Vec::new();
        while !remaining.is_empty() {
            let front: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| {
                    !remaining.iter().any(|&j| {
                        objs[j].strength >= objs[i].strength
                            && objs[j].diversity >= objs[i].diversity
                            && (objs[j].strength > objs[i].strength || objs[j].diversity > objs[i].diversity)
                    })
                })
                .collect();
            remaining.retain(|i| !front.contains(i));
            fronts.push(front);
        }
        fronts
    }

    #[test]
    fn sort_hand_cases() {
        assert_eq!(
            fast_nondominated_sort(&ovs(&[(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)])),
            vec![vec![0, 1, 2]]
        );
        assert_eq!(
            fast_nondominated_sort(&ovs(&[(1.0, 1.0), (0.0, 0.0)])),
            vec![vec![0], vec![1]]
        );
        assert!(fast_nondominated_sort::<f64>(&[]).is_empty());
    }

    #[test]
    fn crowding_hand_cases() {
        let d = crowding_distance(&ovs(&[(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]));
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert_eq!(d[1], 2.0);
        assert!(crowding_distance(&ovs(&[(0.3, 0.1), (0.2, 0.9)]))
            .iter()
            .all(|v| v.is_infinite()));
        let same = crowding_distance(&ovs(&[(0.4, 0.4); 5]));
        assert!(same.iter().all(|v| !v.is_nan()));
        assert_eq!(same.iter().filter(|v| v.is_infinite()).count(), 2);
        assert_eq!(same.iter().filter(|&&v| v == 0.0).count(), 3);
    }

    proptest! {
        #[test]
        fn sort_matches_brute_force(
            points in prop::collection::vec((0u8..12, 0u8..12), 0..256)
        ) {
            // coarse grid values force plenty of ties and duplicates
            let objs: Vec<ObjectiveVector<f64>> = points
                .iter()
                .map(|&(s, d)| ObjectiveVector::new(f64::from(s) / 11.0, f64::from(d) / 11.0))
                .collect();
            prop_assert_eq!(fast_nondominated_sort(&objs), brute_force_fronts(&objs));
        }
    }
}
