use std::collections::VecDeque;

use crate::geo::{BoundingBox, GeoPoint, SpatialIndex};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Clustering {
    /// Member indices, ascending; clusters in order of discovery.
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl Clustering {
    /// Index of the largest cluster; ties go to the earliest discovered.
    pub fn largest(&self) -> Option<usize> {
        (0..self.clusters.len()).max_by(|&a, &b| self.clusters[a].len().cmp(&self.clusters[b].len()).then(b.cmp(&a)))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Label {
    Unseen,
    Noise,
    Cluster(usize),
}

/// Density-based clustering under haversine distance.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps_m`. Seeds are taken in input order, so the partition is deterministic.
pub fn dbscan(points: &[GeoPoint], eps_m: f64, min_pts: usize) -> Clustering {
    let Some(bbox) = BoundingBox::covering(points) else {
        return Clustering::default();
    };
    let index = SpatialIndex::build(bbox, eps_m.max(1.0), points.iter().copied().enumerate())
        .expect("points cover their own bounding box");
    let neighbors = |i: usize| -> Vec<usize> {
        index.query_within(&points[i], eps_m).into_iter().map(|(j, _)| j).collect()
    };

    let mut labels = vec![Label::Unseen; points.len()];
    let mut n_clusters = 0;
    for i in 0..points.len() {
        if labels[i] != Label::Unseen {
            continue;
        }
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            labels[i] = Label::Noise;
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        labels[i] = Label::Cluster(c);
        let mut queue: VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                Label::Noise => {
                    // border point
                    labels[j] = Label::Cluster(c);
                    continue;
                }
                Label::Cluster(_) => continue,
                Label::Unseen => labels[j] = Label::Cluster(c),
            }
            let more = neighbors(j);
            if more.len() >= min_pts {
                queue.extend(more);
            }
        }
    }

    let mut out = Clustering { clusters: vec![Vec::new(); n_clusters], noise: Vec::new() };
    for (i, label) in labels.into_iter().enumerate() {
        match label {
            Label::Cluster(c) => out.clusters[c].push(i),
            _ => out.noise.push(i),
        }
    }
    out
}
