use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Bottom-up average-linkage clustering of curves under Euclidean distance,
/// stopped at `k` clusters.
///
/// Labels are numbered by each cluster's smallest member index. Equal
/// linkage distances merge the pair whose (smaller, larger) representative
/// indices compare lowest.
pub fn agglomerative_cluster(curves: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let n = curves.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} outside 1..={n}"
        )));
    }
    if curves.iter().any(|c| c.len() != curves[0].len()) {
        return Err(Error::validation("y_star", "curves differ in length"));
    }
    let mut dist = DMatrix::from_fn(n, n, |i, j| {
        curves[i]
            .iter()
            .zip(&curves[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    });
    // cluster id = smallest member index; `alive[i]` marks ids in use
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive = vec![true; n];
    let mut count = n;

    while count > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !alive[j] {
                    continue;
                }
                let d = dist[(i, j)];
                // strict < keeps the lexicographically first pair on ties
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two clusters alive");
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for m in 0..n {
            if alive[m] && m != i && m != j {
                let d = (ni * dist[(i, m)] + nj * dist[(j, m)]) / (ni + nj);
                dist[(i, m)] = d;
                dist[(m, i)] = d;
            }
        }
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        alive[j] = false;
        count -= 1;
    }

    let mut labels = vec![0; n];
    for (label, id) in (0..n).filter(|&i| alive[i]).enumerate() {
        for &m in &members[id] {
            labels[m] = label;
        }
    }
    Ok(labels)
}
