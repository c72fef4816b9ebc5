use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};

use crate::base::{sq_dist, Dataset, FrameRef, Sequence};
use crate::embed::Embedder;
use crate::error::{Error, Result};

use super::embed_all;

/// Total variance below which a projection is reported as degenerate.
const VARIANCE_FLOOR: f64 = 1e-12;
/// Largest start/end gap, relative to the trail diameter, of a closed loop.
pub const LOOP_CLOSURE_RATIO: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// One row per frame, in input order.
    pub coords: Array2<f64>,
    pub explained_variance: [f64; 2],
    /// Set when the input has no variance; `coords` is then all zeros.
    pub degenerate: bool,
}

/// Projects embedded rows onto their top two principal directions.
pub fn pca_project_rows(rows: ArrayView2<'_, f64>) -> Result<Projection> {
    let n = rows.nrows();
    if n < 3 {
        return Err(Error::config(format!("projection needs at least 3 frames, got {n}")));
    }
    let d = rows.ncols();
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    let centered = &rows - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let total: f64 = cov.diag().sum();
    if !(total > VARIANCE_FLOOR) {
        return Ok(Projection {
            coords: Array2::zeros((n, 2)),
            explained_variance: [0.0, 0.0],
            degenerate: true,
        });
    }
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Array2::zeros((d, 2));
    let mut explained = [0.0; 2];
    for (c, &k) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(k);
        // fix the sign so the largest component is positive
        let (mut big, mut at) = (0.0, 0);
        for (i, x) in v.iter().enumerate() {
            if x.abs() > big {
                big = x.abs();
                at = i;
            }
        }
        let sign = if v[at] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, c]] = sign * v[i];
        }
        explained[c] = (eig.eigenvalues[k].max(0.0) / total).min(1.0);
    }
    Ok(Projection {
        coords: centered.dot(&basis),
        explained_variance: explained,
        degenerate: false,
    })
}

/// Embeds every frame and projects the result to two dimensions.
pub fn pca_project_2d<E: Embedder + ?Sized>(dataset: &Dataset, model: &E) -> Result<Projection> {
    let emb = embed_all(dataset, model)?;
    let views: Vec<_> = emb.iter().map(|e| e.view()).collect();
    pca_project_rows(ndarray::concatenate(Axis(0), &views).expect("equal widths").view())
}

/// `‖start − end‖ / diameter` of a projected trail.
pub fn loop_closure_ratio(trail: ArrayView2<'_, f64>) -> Result<f64> {
    let n = trail.nrows();
    if n < 2 {
        return Err(Error::config("trail needs at least two points"));
    }
    let rows: Vec<Vec<f64>> = trail.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut diameter: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            diameter = diameter.max(sq_dist(&rows[i], &rows[j]));
        }
    }
    if !(diameter > 0.0) {
        return Err(Error::degenerate("trail has zero extent"));
    }
    Ok((sq_dist(&rows[0], &rows[n - 1]) / diameter).sqrt())
}

/// Frame ranges `start..end` of a sequence over which the latent phase
/// completes exactly one turn, back to back from the first frame.
pub fn single_cycle_segments(sequence: &Sequence) -> Result<Vec<(usize, usize)>> {
    let z = sequence.latent().ok_or_else(|| Error::config(format!("sequence {:?} has no latent pose", sequence.id)))?;
    let mut unwrapped = Vec::with_capacity(z.nrows());
    let mut prev: Option<f64> = None;
    let mut acc = 0.0;
    for r in z.rows() {
        let p = r[1].atan2(r[0]);
        if let Some(q) = prev {
            acc += (p - q + PI).rem_euclid(2.0 * PI) - PI;
        }
        prev = Some(p);
        unwrapped.push(acc);
    }
    let mut segments = Vec::new();
    let mut start = 0;
    let turn = 2.0 * PI;
    while let Some(t) = (start + 1..unwrapped.len()).find(|&t| (unwrapped[t] - unwrapped[start]).abs() >= turn) {
        let over = (unwrapped[t] - unwrapped[start]).abs() - turn;
        let under = turn - (unwrapped[t - 1] - unwrapped[start]).abs();
        let last = if under <= over { t - 1 } else { t };
        segments.push((start, last + 1));
        start = last;
    }
    Ok(segments)
}

/// Picks `num_clusters` representative frames: average-linkage clustering
/// of the embeddings, then each cluster's medoid. Clusters are returned in
/// order of their first frame; medoid ties go to the earliest frame.
pub fn agglomerative_representatives<E: Embedder + ?Sized>(dataset: &Dataset, model: &E, num_clusters: usize) -> Result<Vec<FrameRef>> {
    let emb = embed_all(dataset, model)?;
    let views: Vec<_> = emb.iter().map(|e| e.view()).collect();
    let rows = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    let refs: Vec<FrameRef> = dataset
        .sequences()
        .iter()
        .flat_map(|s| (0..s.len()).map(move |t| FrameRef::new(s.id.clone(), t)))
        .collect();
    let picks = representatives_of_rows(rows.view(), num_clusters)?;
    Ok(picks.into_iter().map(|i| refs[i].clone()).collect())
}

/// Row indices of cluster medoids; see [`agglomerative_representatives`].
pub fn representatives_of_rows(rows: ArrayView2<'_, f64>, num_clusters: usize) -> Result<Vec<usize>> {
    let n = rows.nrows();
    if num_clusters < 1 {
        return Err(Error::config("num_clusters must be >= 1"));
    }
    if num_clusters > n {
        return Err(Error::config(format!("num_clusters {num_clusters} exceeds the {n} frames")));
    }
    let data: Vec<Vec<f64>> = rows.rows().into_iter().map(|r| r.to_vec()).collect();
    let dist = |i: usize, j: usize| sq_dist(&data[i], &data[j]).sqrt();
    let mut label: Vec<usize> = (0..n).collect();
    if n > 1 && num_clusters < n {
        let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                condensed.push(dist(i, j));
            }
        }
        let dendrogram = kodama::linkage(&mut condensed, n, kodama::Method::Average);
        // union-find over dendrogram labels: leaves 0..n, merge k gets n + k
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (k, step) in dendrogram.steps().iter().take(n - num_clusters).enumerate() {
            let a = find(&mut parent, step.cluster1);
            let b = find(&mut parent, step.cluster2);
            parent[a] = n + k;
            parent[b] = n + k;
        }
        for (i, l) in label.iter_mut().enumerate() {
            *l = find(&mut parent, i);
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        match groups.iter_mut().find(|g| label[g.1[0]] == label[i]) {
            Some(g) => g.1.push(i),
            None => groups.push((i, vec![i])),
        }
    }
    Ok(groups
        .iter()
        .map(|(_, members)| {
            let mut best = (members[0], f64::INFINITY);
            for &c in members {
                let s: f64 = members.iter().map(|&o| dist(c, o)).sum();
                if s < best.1 {
                    best = (c, s);
                }
            }
            best.0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn two_dimensional_input_is_preserved() {
        let mut rng = RngState::new(2);
        let x = Array2::from_shape_fn((30, 2), |(_, k)| rng.normal() * if k == 0 { 3.0 } else { 1.0 });
        let p = pca_project_rows(x.view()).unwrap();
        assert!(!p.degenerate);
        for i in 0..30 {
            for j in 0..30 {
                let a = sq_dist(&x.row(i).to_vec(), &x.row(j).to_vec()).sqrt();
                let b = sq_dist(&p.coords.row(i).to_vec(), &p.coords.row(j).to_vec()).sqrt();
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
        assert!((p.explained_variance[0] + p.explained_variance[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_input_is_flagged() {
        let x = Array2::from_elem((5, 3), 0.7);
        let p = pca_project_rows(x.view()).unwrap();
        assert!(p.degenerate);
        assert!(p.coords.iter().all(|&v| v == 0.0));
        assert!(pca_project_rows(x.slice(ndarray::s![..2, ..])).is_err());
    }

    #[test]
    fn circle_closes_and_line_does_not() {
        let circle = Array2::from_shape_fn((50, 2), |(t, k)| {
            let a = 2.0 * PI * t as f64 / 49.0;
            if k == 0 { a.cos() } else { a.sin() }
        });
        assert!(loop_closure_ratio(circle.view()).unwrap() < 1e-9);
        let line = Array2::from_shape_fn((10, 2), |(t, _)| t as f64);
        assert!((loop_closure_ratio(line.view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_segments_span_one_turn() {
        let z = Array2::from_shape_fn((101, 2), |(t, k)| {
            let a = 2.0 * PI * 2.5 * t as f64 / 100.0;
            if k == 0 { a.cos() } else { a.sin() }
        });
        let s = Sequence::new("s", z.clone(), Some(z)).unwrap();
        let segs = single_cycle_segments(&s).unwrap();
        assert_eq!(segs, vec![(0, 41), (40, 81)]);
    }

    #[test]
    fn every_frame_its_own_cluster() {
        let mut rng = RngState::new(1);
        let x = Array2::from_shape_fn((7, 3), |_| rng.normal());
        assert_eq!(representatives_of_rows(x.view(), 7).unwrap(), (0..7).collect::<Vec<_>>());
        assert!(representatives_of_rows(x.view(), 0).is_err());
        assert!(representatives_of_rows(x.view(), 8).is_err());
    }

    #[test]
    fn separated_blobs() {
        let mut rng = RngState::new(6);
        let x = Array2::from_shape_fn((40, 2), |(i, _)| rng.normal() * 0.1 + if i % 2 == 0 { 0.0 } else { 10.0 });
        let reps = representatives_of_rows(x.view(), 2).unwrap();
        assert_eq!(reps.len(), 2);
        assert_ne!(reps[0] % 2, reps[1] % 2);

        let mut all = Vec::new();
        for i in 0..40 {
            for j in i + 1..40 {
                all.push(sq_dist(&x.row(i).to_vec(), &x.row(j).to_vec()).sqrt());
            }
        }
        let median = crate::base::nearest_rank_percentile(&all, 50.0).unwrap();
        let d = sq_dist(&x.row(reps[0]).to_vec(), &x.row(reps[1]).to_vec()).sqrt();
        assert!(d >= median);
    }
}
