//! Density-based clustering on a uniform grid of `eps`-sized cells.
//!
//! Core points have at least `min_pts` points (themselves included) within
//! Euclidean distance `eps`. Clusters are the connected components of core
//! points under that relation. A non-core point within `eps` of some core point
//! joins the cluster of its nearest core neighbour (ties broken by the
//! smaller coordinates), so the result does not depend on input order beyond
//! cluster numbering. Cluster ids follow the first member in input order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 4.0, min_pts: 8 }
    }
}

/// Cluster id per point, `None` for noise.
pub type Cluster = Option<usize>;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub fn dbscan(points: &[(f64, f64)], params: DbscanParams) -> Vec<Cluster> {
    let DbscanParams { eps, min_pts } = params;
    assert!(eps > 0.0 && min_pts >= 1, "dbscan needs eps > 0 and min_pts ≥ 1");
    let cell = |p: (f64, f64)| ((p.0 / eps).floor() as i64, (p.1 / eps).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let neighbours: Vec<Vec<usize>> = points
        .iter()
        .map(|&p| {
            let (cr, cc) = cell(p);
            let mut out = Vec::new();
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if let Some(members) = grid.get(&(cr + dr, cc + dc)) {
                        out.extend(members.iter().copied().filter(|&j| d2(p, points[j]) <= eps2));
                    }
                }
            }
            out
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|n| n.len() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..points.len()).collect();
    for i in 0..points.len() {
        if core[i] {
            for &j in &neighbours[i] {
                if core[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }

    let mut root_of = vec![None; points.len()];
    for i in 0..points.len() {
        if core[i] {
            root_of[i] = Some(find(&mut parent, i));
        } else {
            let nearest = neighbours[i].iter().filter(|&&j| core[j]).min_by(|&&a, &&b| {
                d2(points[i], points[a])
                    .total_cmp(&d2(points[i], points[b]))
                    .then(points[a].0.total_cmp(&points[b].0))
                    .then(points[a].1.total_cmp(&points[b].1))
            });
            root_of[i] = nearest.map(|&j| find(&mut parent, j));
        }
    }

    let mut ids: HashMap<usize, usize> = HashMap::new();
    root_of
        .into_iter()
        .map(|r| {
            r.map(|root| {
                let next = ids.len();
                *ids.entry(root).or_insert(next)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_point_is_noise() {
        assert_eq!(dbscan(&[(0.0, 0.0)], DbscanParams { eps: 1.0, min_pts: 2 }), vec![None]);
        assert_eq!(dbscan(&[(0.0, 0.0)], DbscanParams { eps: 1.0, min_pts: 1 }), vec![Some(0)]);
    }

    #[test]
    fn chain_connects() {
        let pts: Vec<_> = (0..10).map(|i| (0.0, i as f64)).collect();
        let l = dbscan(&pts, DbscanParams { eps: 1.0, min_pts: 3 });
        assert!(l.iter().all(|&c| c == Some(0)));
    }
}
