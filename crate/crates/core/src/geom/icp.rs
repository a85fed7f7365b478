use nalgebra::{Matrix3, Vector3};

use super::{GeomError, PointCloud, RigidPose};

/// Outcome of a point-to-point ICP run.
#[derive(Clone, Debug)]
pub struct IcpResult {
    /// Source → target transform.
    pub transform: RigidPose,
    /// RMS nearest-neighbor residual after each iteration of the winning start.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Closed-form least-squares rigid alignment of corresponding point pairs
/// (SVD of the cross-covariance, with reflection correction).
pub fn kabsch(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidPose, GeomError> {
    assert_eq!(source.len(), target.len());
    let n = source.len() as f64;
    let cs: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n;
    let ct: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let top = sv.max();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if top <= 0.0 || sorted[1] <= 1e-12 * top {
        return Err(GeomError::DegenerateCovariance);
    }
    let u = svd.u.ok_or(GeomError::DegenerateCovariance)?;
    let v_t = svd.v_t.ok_or(GeomError::DegenerateCovariance)?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rot = nalgebra::UnitQuaternion::from_matrix(&r);
    let t = ct - rot * cs;
    Ok(RigidPose::new(rot, t))
}

fn check_spread(cloud: &PointCloud) -> Result<(), GeomError> {
    cloud.validate()?;
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        cov += (p - c) * (p - c).transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(GeomError::DegenerateCovariance);
    }
    Ok(())
}

fn principal_axes(cloud: &PointCloud) -> Matrix3<f64> {
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        cov += (p - c) * (p - c).transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    if axes.determinant() < 0.0 {
        let flipped = -axes.column(2);
        axes.set_column(2, &flipped);
    }
    axes
}

fn nearest(p: &Vector3<f64>, target: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in target.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn rms_residual(source: &PointCloud, target: &PointCloud, pose: &RigidPose) -> f64 {
    let sum: f64 = source
        .points
        .iter()
        .map(|p| nearest(&pose.transform_point(p), &target.points).1)
        .sum();
    (sum / source.len() as f64).sqrt()
}

fn run_from(
    source: &PointCloud,
    target: &PointCloud,
    init: RigidPose,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult, GeomError> {
    let mut pose = init;
    let mut residuals = vec![rms_residual(source, target, &pose)];
    let mut converged = false;
    let mut iterations = 0;
    let mut matched = Vec::with_capacity(source.len());
    let mut moved = Vec::with_capacity(source.len());
    for _ in 0..max_iters {
        iterations += 1;
        matched.clear();
        moved.clear();
        for p in &source.points {
            let x = pose.transform_point(p);
            matched.push(target.points[nearest(&x, &target.points).0]);
            moved.push(*p);
        }
        // all matches collapsing onto too few target points leaves the step undefined
        let Ok(candidate) = kabsch(&moved, &matched) else { break };
        let res = rms_residual(source, target, &candidate);
        let prev = *residuals.last().unwrap();
        if res > prev {
            // floating-point noise at convergence; keep the better pose
            converged = true;
            break;
        }
        pose = candidate;
        residuals.push(res);
        if (prev - res).abs() < tol {
            converged = true;
            break;
        }
    }
    Ok(IcpResult { transform: pose, residuals, iterations, converged })
}

/// Point-to-point ICP with exhaustive nearest-neighbor correspondences.
///
/// Starts from a centroid-aligned identity and from the four proper
/// principal-axis alignments, runs each until the RMS residual changes by less
/// than `tol` (meters) or `max_iters` is reached, and returns the start with
/// the lowest final residual. Residuals never increase within a run.
pub fn icp_rigid(
    source: &PointCloud,
    target: &PointCloud,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult, GeomError> {
    check_spread(source)?;
    check_spread(target)?;
    let cs = source.centroid();
    let ct = target.centroid();
    let es = principal_axes(source);
    let et = principal_axes(target);

    let mut starts = vec![RigidPose::from_translation(ct - cs)];
    for signs in [[1.0, 1.0, 1.0], [-1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0]] {
        let r = et * Matrix3::from_diagonal(&Vector3::from(signs)) * es.transpose();
        let rot = nalgebra::UnitQuaternion::from_matrix(&r);
        starts.push(RigidPose::new(rot, ct - rot * cs));
    }

    let mut best: Option<IcpResult> = None;
    for init in starts {
        let run = run_from(source, target, init, max_iters, tol)?;
        let better = match &best {
            None => true,
            Some(b) => run.residuals.last() < b.residuals.last(),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}
