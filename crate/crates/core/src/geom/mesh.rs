//! Closed triangle meshes with angle-weighted pseudonormals for exact signed distance.
//!
//! The sign of a query is taken from the pseudonormal of the closest feature
//! (face, edge or vertex); points inside the surface get negative distances.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use super::GeomError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Feature {
    Vertex(usize),
    Edge(usize),
    Face,
}

/// Result of a closest-point query against a mesh.
#[derive(Clone, Copy, Debug)]
pub struct MeshHit {
    pub signed_distance: f64,
    pub closest: Vector3<f64>,
}

/// Validated, watertight, consistently oriented triangle mesh.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    face_normals: Vec<Vector3<f64>>,
    // per face, pseudonormal of edge k (vertex k → vertex k+1)
    edge_normals: Vec<[Vector3<f64>; 3]>,
    vertex_normals: Vec<Vector3<f64>>,
    aabb_min: Vector3<f64>,
    aabb_max: Vector3<f64>,
}

impl TriangleMesh {
    /// Builds and validates a mesh: indices in range, non-degenerate faces,
    /// every edge shared by exactly two faces with opposite orientation, and
    /// positive enclosed volume (outward normals).
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, GeomError> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(GeomError::EmptyMesh);
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeomError::NonFinite);
        }
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(GeomError::FaceIndexOutOfRange { face: fi, index: i });
                }
            }
        }

        let mut face_normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let len = n.norm();
            if len <= 1e-300 {
                return Err(GeomError::DegenerateFace { face: fi });
            }
            face_normals.push(n / len);
        }

        // directed edge -> face; each directed edge must occur once, and its reverse once
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if directed.insert(e, fi).is_some() {
                    return Err(GeomError::NonManifold { a: e.0, b: e.1 });
                }
            }
        }
        let mut edge_normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let mut en = [Vector3::zeros(); 3];
            for (k, slot) in en.iter_mut().enumerate() {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let other = *directed.get(&(b, a)).ok_or(GeomError::NotWatertight { a, b })?;
                *slot = (face_normals[fi] + face_normals[other]).normalize();
            }
            edge_normals.push(en);
        }

        let mut vertex_normals = vec![Vector3::zeros(); vertices.len()];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let p = vertices[f[k]];
                let e1 = (vertices[f[(k + 1) % 3]] - p).normalize();
                let e2 = (vertices[f[(k + 2) % 3]] - p).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex_normals[f[k]] += face_normals[fi] * angle;
            }
        }
        for n in vertex_normals.iter_mut() {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }

        let mut aabb_min = vertices[0];
        let mut aabb_max = vertices[0];
        for v in &vertices {
            aabb_min = aabb_min.inf(v);
            aabb_max = aabb_max.sup(v);
        }

        let mesh = Self { vertices, faces, face_normals, edge_normals, vertex_normals, aabb_min, aabb_max };
        if mesh.signed_volume() <= 0.0 {
            return Err(GeomError::InvertedOrientation);
        }
        Ok(mesh)
    }

    /// Parses the supported OBJ subset: `v x y z` and `f i j k` (1-based,
    /// triangles only); blank lines and `#` comments are skipped.
    pub fn from_obj_str(text: &str) -> Result<Self, GeomError> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            let bad = |msg: &str| GeomError::ObjParse { line: lineno + 1, message: msg.to_string() };
            match tok.next() {
                Some("v") => {
                    let c: Vec<f64> = tok
                        .map(|s| s.parse::<f64>().map_err(|_| bad("invalid vertex coordinate")))
                        .collect::<Result<_, _>>()?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs exactly 3 coordinates"));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = tok
                        .map(|s| match s.parse::<usize>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(bad("face indices must be positive integers")),
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() != 3 {
                        return Err(bad("only triangular faces are supported"));
                    }
                    faces.push([idx[0], idx[1], idx[2]]);
                }
                Some(other) => return Err(bad(&format!("unsupported record `{other}`"))),
                None => {}
            }
        }
        Self::new(vertices, faces)
    }

    /// Serializes to the OBJ subset with 17 significant digits.
    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    /// Stable content hash (hex) of the canonical OBJ serialization.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_obj_string().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Axis-aligned box centered at the origin.
    pub fn cuboid(half_extents: Vector3<f64>) -> Result<Self, GeomError> {
        let h = half_extents;
        let v = |x: f64, y: f64, z: f64| Vector3::new(x * h.x, y * h.y, z * h.z);
        let vertices = vec![
            v(-1.0, -1.0, -1.0),
            v(1.0, -1.0, -1.0),
            v(1.0, 1.0, -1.0),
            v(-1.0, 1.0, -1.0),
            v(-1.0, -1.0, 1.0),
            v(1.0, -1.0, 1.0),
            v(1.0, 1.0, 1.0),
            v(-1.0, 1.0, 1.0),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [2, 3, 7],
            [2, 7, 6],
            [1, 2, 6],
            [1, 6, 5],
            [3, 0, 4],
            [3, 4, 7],
        ];
        Self::new(vertices, faces)
    }

    /// Icosphere of the given radius after `subdivisions` rounds of 4-to-1 splitting.
    pub fn icosphere(radius: f64, subdivisions: usize) -> Result<Self, GeomError> {
        let t = (1.0 + 5.0f64.sqrt()) / 2.0;
        let mut verts: Vec<Vector3<f64>> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
            let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let ab = mid(f[0], f[1], &mut verts);
                let bc = mid(f[1], f[2], &mut verts);
                let ca = mid(f[2], f[0], &mut verts);
                next.push([f[0], ab, ca]);
                next.push([f[1], bc, ab]);
                next.push([f[2], ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        Self::new(verts.into_iter().map(|v| v * radius).collect(), faces)
    }

    /// Uniformly scaled copy (about the mesh origin).
    pub fn scaled(&self, s: f64) -> Result<Self, GeomError> {
        Self::new(self.vertices.iter().map(|v| v * s).collect(), self.faces.clone())
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        self.face_normals[face]
    }

    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.aabb_min, self.aabb_max)
    }

    /// True when `p` lies inside or on the mesh's bounding box.
    pub fn aabb_contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.aabb_min[i] && p[i] <= self.aabb_max[i])
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let f = self.faces[face];
        0.5 * (self.vertices[f[1]] - self.vertices[f[0]])
            .cross(&(self.vertices[f[2]] - self.vertices[f[0]]))
            .norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| self.vertices[f[0]].dot(&self.vertices[f[1]].cross(&self.vertices[f[2]])) / 6.0)
            .sum()
    }

    /// Closest surface point and signed distance (negative inside).
    pub fn query(&self, p: &Vector3<f64>) -> MeshHit {
        let mut best_d2 = f64::INFINITY;
        let mut best = (0usize, Vector3::zeros(), Feature::Face);
        for (fi, f) in self.faces.iter().enumerate() {
            let (c, feat) = closest_on_triangle(p, &self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]);
            let d2 = (p - c).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = (fi, c, feat);
            }
        }
        let (fi, closest, feat) = best;
        let dist = best_d2.sqrt();
        if dist == 0.0 {
            return MeshHit { signed_distance: 0.0, closest };
        }
        let normal = match feat {
            Feature::Face => self.face_normals[fi],
            Feature::Edge(k) => self.edge_normals[fi][k],
            Feature::Vertex(k) => self.vertex_normals[self.faces[fi][k]],
        };
        let sign = if (p - closest).dot(&normal) < 0.0 { -1.0 } else { 1.0 };
        MeshHit { signed_distance: sign * dist, closest }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.query(p).signed_distance
    }
}

/// Signed distance from `point` to `mesh`, negative inside.
pub fn signed_distance(point: &Vector3<f64>, mesh: &TriangleMesh) -> f64 {
    mesh.signed_distance(point)
}

// Ericson, Real-Time Collision Detection §5.1.5, with the Voronoi region reported.
fn closest_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> (Vector3<f64>, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}
