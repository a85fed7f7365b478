use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Frame, HandModel, HandModelError, HandPose};
use crate::geom::{PointCloud, RigidPose, TriangleMesh};

/// Fixed per-model sampling pattern: each sample is a point on one skin
/// sphere, expressed in the frame that sphere hangs from.
#[derive(Clone, Debug)]
pub struct SurfacePattern {
    pub samples: Vec<SurfaceSample>,
}

#[derive(Clone, Copy, Debug)]
pub struct SurfaceSample {
    pub frame: Frame,
    /// Point in the frame's coordinates (sphere center + radius · direction).
    pub local: Vector3<f64>,
    /// Sphere center in the frame's coordinates.
    pub center: Vector3<f64>,
}

fn fibonacci_direction(i: usize, n: usize) -> Vector3<f64> {
    if n == 1 {
        return Vector3::new(0.0, 0.0, -1.0);
    }
    let golden = PI * (3.0 - 5.0f64.sqrt());
    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let phi = golden * i as f64;
    Vector3::new(r * phi.cos(), r * phi.sin(), -z)
}

impl HandModel {
    /// Deterministic stratified sampling of `v` points over the link spheres.
    ///
    /// Every link receives at least one sample; the rest are split in
    /// proportion to each link's skin area (largest remainder). Within a link
    /// samples cycle over its spheres and follow a Fibonacci-sphere layout.
    pub fn surface_pattern(&self, v: usize) -> Result<SurfacePattern, HandModelError> {
        let n_links = self.links.len();
        if v < n_links {
            return Err(HandModelError::TooFewSamples { requested: v, minimum: n_links });
        }
        let areas: Vec<f64> = self
            .links
            .iter()
            .map(|l| l.spheres.iter().map(|s| s.radius * s.radius).sum::<f64>())
            .collect();
        let total: f64 = areas.iter().sum();
        let extra = v - n_links;
        let quotas: Vec<f64> = areas.iter().map(|a| a / total * extra as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| 1 + q.floor() as usize).collect();
        let mut assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..n_links).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if assigned >= v {
                break;
            }
            counts[i] += 1;
            assigned += 1;
        }

        let mut samples = Vec::with_capacity(v);
        for (link, &n) in self.links.iter().zip(&counts) {
            for i in 0..n {
                let sphere = link.spheres[i % link.spheres.len()];
                let dir = fibonacci_direction(i, n);
                samples.push(SurfaceSample {
                    frame: link.frame,
                    local: sphere.center + dir * sphere.radius,
                    center: sphere.center,
                });
            }
        }
        Ok(SurfacePattern { samples })
    }
}

impl SurfacePattern {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// World-frame points for a solved hand pose.
    pub fn points(&self, pose: &HandPose) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| pose.frame(s.frame).transform_point(&s.local)).collect()
    }
}

/// `v` surface points of the hand at the given configuration.
pub fn hand_surface_points(
    model: &HandModel,
    wrist: &RigidPose,
    joints: &[f64],
    v: usize,
) -> Result<PointCloud, HandModelError> {
    let pattern = model.surface_pattern(v)?;
    let pose = model.fk(wrist, joints)?;
    Ok(PointCloud::new(pattern.points(&pose)))
}

/// Derives the canonical sampling seed from a mesh content hash.
pub fn mesh_seed(mesh: &TriangleMesh) -> u64 {
    let h = mesh.content_hash();
    u64::from_str_radix(&h[..16.min(h.len())], 16).unwrap_or(0)
}

/// Area-weighted barycentric samples on the mesh surface in its own frame.
///
/// The seed comes from the mesh content, so a given mesh and `m` always yield
/// the same points and predicted/ground-truth clouds correspond index by index.
pub fn canonical_object_points(mesh: &TriangleMesh, m: usize) -> Result<PointCloud, HandModelError> {
    if m == 0 {
        return Err(HandModelError::TooFewSamples { requested: 0, minimum: 1 });
    }
    let total = mesh.surface_area();
    if !(total > 0.0) {
        return Err(HandModelError::ZeroArea);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut acc = 0.0;
    for f in 0..mesh.faces().len() {
        acc += mesh.face_area(f);
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mesh_seed(mesh));
    let verts = mesh.vertices();
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        let target = rng.random::<f64>() * acc;
        let fi = cumulative.partition_point(|&c| c < target).min(cumulative.len() - 1);
        let f = mesh.faces()[fi];
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let p = verts[f[0]] * (1.0 - r1) + verts[f[1]] * (r1 * (1.0 - r2)) + verts[f[2]] * (r1 * r2);
        points.push(p);
    }
    Ok(PointCloud::canonical(points))
}

/// `m` object surface points at `pose` (canonical sample set, rigidly moved).
pub fn object_surface_points(mesh: &TriangleMesh, pose: &RigidPose, m: usize) -> Result<PointCloud, HandModelError> {
    Ok(canonical_object_points(mesh, m)?.transformed(pose))
}
