use std::ops::Range;

/// Power-of-two scale putting the group's total pair mass just under 2^51,
/// so integer accumulation is exact and converts back to f64 exactly.
fn fixed_point_scale(mass: f64) -> f64 {
    let e = mass.log2().ceil() as i32;
    2f64.powi((51 - e).clamp(-1000, 1000))
}

/// Position of each instance (0-based) when the group is sorted by score
/// descending, ties by `tie_order` ascending.
pub fn group_ranks(scores: &[f64], tie_order: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| tie_order[a].cmp(&tie_order[b]))
    });
    let mut ranks = vec![0; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos;
    }
    ranks
}

/// Pairwise lambda gradients weighted by the change in the group's
/// reciprocal rank when the pair swaps places.
///
/// Positive lambdas push an instance up. `tie_order` breaks score ties
/// (lower first) and is compared only within a group. Returns
/// `(lambdas, hessians)`.
pub fn compute_lambdas(
    scores: &[f64],
    labels: &[u8],
    groups: &[Range<usize>],
    tie_order: &[usize],
    sigma: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = scores.len();
    let mut lambdas = vec![0.0; n];
    let mut hessians = vec![0.0; n];
    let mut fixed: Vec<i64> = Vec::new();
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for g in groups {
        let s = &scores[g.clone()];
        let y = &labels[g.clone()];
        if !y.contains(&1) || !y.contains(&0) {
            continue;
        }
        let ranks = group_ranks(s, &tie_order[g.clone()]);
        // 1-based ranks of the best and second-best positives
        let mut pos_ranks: Vec<usize> = (0..s.len()).filter(|&i| y[i] == 1).map(|i| ranks[i] + 1).collect();
        pos_ranks.sort_unstable();
        let first = pos_ranks[0];
        let second = pos_ranks.get(1).copied().unwrap_or(usize::MAX);
        let rr = 1.0 / first as f64;

        pairs.clear();
        let h = &mut hessians[g.clone()];
        for i in (0..s.len()).filter(|&i| y[i] == 1) {
            let ri = ranks[i] + 1;
            for j in (0..s.len()).filter(|&j| y[j] == 0) {
                let rj = ranks[j] + 1;
                let new_first = if ri == first { rj.min(second) } else { first.min(rj) };
                let delta = (1.0 / new_first as f64 - rr).abs();
                if delta == 0.0 {
                    continue;
                }
                let rho = 1.0 / (1.0 + (sigma * (s[i] - s[j])).exp());
                pairs.push((i, j, -sigma * rho * delta));
                let w = sigma * sigma * rho * (1.0 - rho) * delta;
                h[i] += w;
                h[j] += w;
            }
        }
        // Accumulate in fixed point so each group's lambdas sum to exactly
        // zero in any summation order.
        let mass: f64 = pairs.iter().map(|p| p.2.abs()).sum();
        if mass == 0.0 {
            continue;
        }
        let scale = fixed_point_scale(mass);
        fixed.clear();
        fixed.resize(s.len(), 0);
        for &(i, j, lambda_ij) in &pairs {
            let q = (lambda_ij * scale).round() as i64;
            fixed[i] -= q;
            fixed[j] += q;
        }
        for (l, q) in lambdas[g.clone()].iter_mut().zip(&fixed) {
            *l = *q as f64 / scale;
        }
    }
    (lambdas, hessians)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_docs_equal_scores() {
        let (l, h) = compute_lambdas(&[0.0, 0.0], &[1, 0], &[0..2], &[0, 1], 1.0);
        assert_eq!(l[0], 0.25);
        assert_eq!(l[1], -0.25);
        assert_eq!(h[0], 0.125);
    }

    #[test]
    fn positive_ranked_second_by_tie_break() {
        // the negative wins the tie; swapping lifts RR from 1/2 to 1
        let (l, _) = compute_lambdas(&[0.0, 0.0], &[1, 0], &[0..2], &[1, 0], 1.0);
        assert_eq!(l[0], 0.25);
    }

    #[test]
    fn all_same_label_is_zero() {
        let (l, h) = compute_lambdas(&[0.3, 0.1, 0.9], &[0, 0, 0], &[0..3], &[0, 1, 2], 1.0);
        assert!(l.iter().chain(&h).all(|&x| x == 0.0));
    }

    #[test]
    fn pairs_below_first_positive_do_not_move_rr() {
        // ranking: pos(0.9) neg(0.5) pos(0.1); swapping the last two keeps RR at 1
        let (l, h) = compute_lambdas(&[0.9, 0.5, 0.1], &[1, 0, 1], &[0..3], &[0, 1, 2], 1.0);
        assert_eq!(l[2], 0.0);
        assert_eq!(h[2], 0.0);
        assert!(l[0] > 0.0 && l[1] < 0.0);
    }

    proptest! {
        #[test]
        fn group_sums_exactly_zero_and_two_doc_sign(
            groups in prop::collection::vec(prop::collection::vec((-5.0f64..5.0, 0u8..2), 1..12), 1..6),
            sigma in 0.1f64..4.0,
        ) {
            let mut scores = vec![];
            let mut labels = vec![];
            let mut ranges = vec![];
            let mut tie = vec![];
            for g in &groups {
                let start = scores.len();
                for (k, (s, y)) in g.iter().enumerate() {
                    scores.push(*s);
                    labels.push(*y);
                    tie.push(k);
                }
                ranges.push(start..scores.len());
            }
            let (l, h) = compute_lambdas(&scores, &labels, &ranges, &tie, sigma);
            for r in &ranges {
                let sum: f64 = l[r.clone()].iter().sum();
                prop_assert_eq!(sum, 0.0);
                let rev: f64 = l[r.clone()].iter().rev().sum();
                prop_assert_eq!(rev, 0.0);
            }
            prop_assert!(h.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn two_doc_positive_always_pushed_up(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let (l, _) = compute_lambdas(&[a, b], &[1, 0], &[0..2], &[0, 1], 1.0);
            prop_assert!(l[0] > 0.0);
            prop_assert_eq!(l[1], -l[0]);
        }
    }
}
