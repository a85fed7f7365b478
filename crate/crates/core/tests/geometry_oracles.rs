use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajopt_core::geom::{icp_rigid, rotation_distance, signed_distance, PointCloud, RigidPose, TriangleMesh};

fn box_sdf(p: &Vector3<f64>, h: &Vector3<f64>) -> f64 {
    let q = p.abs() - h;
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

fn uniform(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

#[test]
fn box_distance_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let h = Vector3::new(rng.random_range(0.01..0.2), rng.random_range(0.01..0.2), rng.random_range(0.01..0.2));
        let mesh = TriangleMesh::cuboid(h).unwrap();
        for _ in 0..1000 {
            let p = uniform(&mut rng, 0.4);
            assert!((signed_distance(&p, &mesh) - box_sdf(&p, &h)).abs() < 1e-7);
        }
    }
}

#[test]
fn sphere_distance_matches_polytope_and_tessellation_bound() {
    let r = 0.1;
    let mesh = TriangleMesh::icosphere(r, 3).unwrap();
    let planes: Vec<(Vector3<f64>, f64)> = (0..mesh.faces().len())
        .map(|f| {
            let n = mesh.face_normal(f);
            (n, n.dot(&mesh.vertices()[mesh.faces()[f][0]]))
        })
        .collect();
    // inscribed radius bounds the tessellation error of |x| − r
    let inradius = planes.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut inside = 0;
    for _ in 0..1000 {
        let p = uniform(&mut rng, 0.13);
        let sd = signed_distance(&p, &mesh);
        let poly = planes.iter().map(|(n, d)| n.dot(&p) - d).fold(f64::NEG_INFINITY, f64::max);
        if poly < 0.0 {
            inside += 1;
            assert!((sd - poly).abs() < 1e-7, "{sd} vs {poly}");
        }
        assert!((sd - (p.norm() - r)).abs() <= (r - inradius) + 1e-12);
        assert_eq!(sd < 0.0, poly < 0.0);
    }
    assert!(inside > 150);
}

#[test]
fn icp_recovers_random_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let n = rng.random_range(20..60);
        let src: Vec<_> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.06..0.06), rng.random_range(-0.03..0.03)))
            .collect();
        let axis = uniform(&mut rng, 1.0).normalize();
        let angle = rng.random_range(0.0..60f64.to_radians());
        let truth = RigidPose::from_axis_angle(axis * angle, uniform(&mut rng, 0.2));
        let source = PointCloud::new(src);
        let target = source.transformed(&truth);
        let res = icp_rigid(&source, &target, 100, 1e-14).unwrap();
        let rot = rotation_distance(&res.transform, &truth);
        let tr = (res.transform.translation() - truth.translation()).norm();
        assert!(rot < 1e-6 && tr < 1e-6, "case {case}: {rot} {tr}");
        for w in res.residuals.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }
}
