use nalgebra::Vector3;

use super::{GeomError, RigidPose};

/// An ordered set of 3-D points (meters).
///
/// `canonical` marks clouds expressed in an object's or link's own frame
/// rather than the world frame.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub canonical: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, canonical: false }
    }

    pub fn canonical(points: Vec<Vector3<f64>>) -> Self {
        Self { points, canonical: true }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.points.is_empty() {
            return Err(GeomError::EmptyCloud);
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(GeomError::NonFinite);
        }
        Ok(())
    }

    /// Returns a world-frame copy with every point mapped through `pose`.
    pub fn transformed(&self, pose: &RigidPose) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| pose.transform_point(p)).collect())
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.points.iter().sum();
        sum / self.points.len().max(1) as f64
    }
}

/// Farthest point sampling: greedy max-min selection of `k` indices starting at `seed_index`.
///
/// Ties in the max-min distance are broken toward the lowest index, so the
/// result is a pure function of the inputs.
pub fn fps(cloud: &PointCloud, k: usize, seed_index: usize) -> Result<Vec<usize>, GeomError> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(GeomError::SampleCountOutOfRange { requested: k, available: n });
    }
    if seed_index >= n {
        return Err(GeomError::IndexOutOfRange { index: seed_index, len: n });
    }
    let pts = &cloud.points;
    let mut selected = Vec::with_capacity(k);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = seed_index;
    for _ in 0..k {
        selected.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        let c = pts[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in pts.iter().enumerate() {
            if min_d2[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = (p - c).norm_squared();
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        if best == usize::MAX {
            break;
        }
        current = best;
    }
    Ok(selected)
}

/// Indices of points within `radius` (inclusive) of `center`, nearest first,
/// truncated to `max_neighbors`. Equal distances are ordered by index.
pub fn ball_query(center: &Vector3<f64>, cloud: &PointCloud, radius: f64, max_neighbors: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut hits: Vec<(f64, usize)> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d2 = (p - center).norm_squared();
            (d2 <= r2).then_some((d2, i))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(max_neighbors);
    hits.into_iter().map(|(_, i)| i).collect()
}
