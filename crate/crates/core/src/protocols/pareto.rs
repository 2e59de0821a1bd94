/// `p` dominates `q` when it is at least as good in both coordinates and
/// strictly better in one.
pub fn dominates(p: (f64, f64), q: (f64, f64)) -> bool {
    p.0 >= q.0 && p.1 >= q.1 && (p.0 > q.0 || p.1 > q.1)
}

/// Indices of the non-dominated points, in input order.
///
/// Sweeps points by descending first coordinate (ties by descending second),
/// keeping those whose second coordinate beats everything seen with a
/// strictly larger first coordinate.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .0
            .total_cmp(&points[a].0)
            .then(points[b].1.total_cmp(&points[a].1))
    });
    let mut keep = vec![false; points.len()];
    let mut best_y = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        // group of equal x; only its maximal y values can survive
        let x = points[order[i]].0;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == x {
            j += 1;
        }
        let group_max = points[order[i]].1;
        if group_max > best_y {
            for &idx in &order[i..j] {
                if points[idx].1 == group_max {
                    keep[idx] = true;
                }
            }
            best_y = group_max;
        }
        i = j;
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

/// The non-dominated subset of `(Δoverall, Δsubgroup)` points.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pareto_indices(points).into_iter().map(|i| points[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let pts = [(1.0, 1.0), (0.0, 2.0), (2.0, 0.0), (0.0, 0.0)];
        assert_eq!(pareto_frontier(&pts), vec![(1.0, 1.0), (0.0, 2.0), (2.0, 0.0)]);
        assert_eq!(pareto_frontier(&[(0.3, -0.2)]), vec![(0.3, -0.2)]);
        assert!(pareto_frontier(&[]).is_empty());
    }

    #[test]
    fn ties_and_duplicates() {
        // equal points do not dominate each other
        let pts = [(1.0, 1.0), (1.0, 1.0), (1.0, 0.5), (0.5, 1.0)];
        assert_eq!(pareto_indices(&pts), vec![0, 1]);
    }
}
