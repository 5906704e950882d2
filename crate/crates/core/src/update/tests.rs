use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::geom::{skew, so3_exp, JplQuaternion};
use crate::state::{clone_frame, ClosestPointPlane, FilterState, Sensor, CALIB_LIDAR};
use crate::testing::{gauss3, max_relative_error, numeric_jacobian, random_spd, random_state};

type Obs = Vec<(u64, Vec<Vector3<f64>>)>;

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&a).normalize();
    (u, n.cross(&u))
}

/// A global plane 2 m from the newest LiDAR clone, its closest point in that
/// clone and noise-free observations from every clone.
fn plane_fixture(rng: &mut ChaCha8Rng, state: &FilterState, per_clone: usize, noise: f64) -> (ClosestPointPlane, Obs) {
    let ids: Vec<u64> = state.lidar_clones.clones.iter().map(|c| c.id).collect();
    let anchor_id = *ids.last().unwrap();
    let anchor = clone_frame(state, Sensor::Lidar, anchor_id).unwrap();
    let n_g = gauss3(rng).normalize();
    let d_g = n_g.dot(&anchor.pos) + 2.0;
    let (u, v) = tangent_basis(&n_g);
    let centre = n_g * d_g;
    let obs = ids
        .iter()
        .map(|&id| {
            let f = clone_frame(state, Sensor::Lidar, id).unwrap();
            let pts = (0..per_clone)
                .map(|_| {
                    let g = centre + u * rng.random_range(-3.0..3.0) + v * rng.random_range(-3.0..3.0);
                    f.from_global(&g) + gauss3(rng) * noise
                })
                .collect();
            (id, pts)
        })
        .collect();
    let n_a = anchor.rot * n_g;
    let d_a = d_g - n_g.dot(&anchor.pos);
    (ClosestPointPlane::new(n_a * d_a, anchor_id), obs)
}

fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let x = z.cross(&gauss3(rng)).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// State with `n` camera clones looking at `p_g` from about 3 m, plus the
/// noise-free bearings of `p_g`.
fn camera_fixture(rng: &mut ChaCha8Rng, n: usize, shift_td: bool) -> (FilterState, Vector3<f64>, Vec<BearingMeasurement>) {
    let mut state = random_state(rng, 0, 0, 0);
    let p_g = gauss3(rng) * 2.0;
    let r_c = state.calib_cam.q_si.to_rot();
    for i in 0..n {
        let eye = p_g + gauss3(rng).normalize() * 3.0;
        let c = look_at(&eye, &p_g, rng);
        let r = r_c.transpose() * c;
        state.time = 0.1 * (i + 1) as f64;
        state.imu.q_ig = JplQuaternion::from_rot(&r);
        state.imu.p_gi = eye + r.transpose() * r_c.transpose() * state.calib_cam.p_si;
        state.imu.v_gi = gauss3(rng) * 0.5;
        state.omega = gauss3(rng) * 0.3;
        state.clone_pose(Sensor::Camera, state.time).unwrap();
    }
    if shift_td {
        state.calib_cam.td += 0.003;
    }
    state.cov = random_spd(rng, state.dim(), 1e-2);
    let obs = bearings(&state, &p_g, 1.0 / 460.0);
    (state, p_g, obs)
}

fn bearings(state: &FilterState, p_g: &Vector3<f64>, sigma: f64) -> Vec<BearingMeasurement> {
    state
        .cam_clones
        .clones
        .iter()
        .map(|c| {
            let f = clone_frame(state, Sensor::Camera, c.id).unwrap();
            BearingMeasurement::new(c.id, project(&f.from_global(p_g)).unwrap(), sigma)
        })
        .collect()
}

#[test]
fn point_to_plane_examples() {
    let cp = Vector3::new(0.0, 0.0, 2.0);
    assert_eq!(point_to_plane_residual(&Vector3::new(1.0, 1.0, 2.0), &cp), 0.0);
    assert_eq!(point_to_plane_residual(&Vector3::new(0.0, 0.0, 3.0), &cp), 1.0);
}

#[test]
fn point_to_plane_matches_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let cp = gauss3(&mut rng) * 2.0;
        let p = gauss3(&mut rng) * 3.0;
        let n = cp.normalize();
        // foot of the perpendicular from p onto the plane
        let foot = p - n * (n.dot(&(p - cp)));
        let signed = (p - foot).dot(&n);
        assert!((point_to_plane_residual(&p, &cp) - signed).abs() < 1e-12);
    }
}

#[test]
fn transform_plane_examples() {
    let cp = Vector3::new(0.0, 0.0, 2.0);
    let t = transform_plane(&cp, &Matrix3::identity(), &Vector3::zeros(), 0.1);
    assert_eq!((t.normal, t.distance, t.near_origin), (Vector3::z(), 2.0, false));
    let t = transform_plane(&cp, &Matrix3::identity(), &Vector3::new(0.0, 0.0, 0.5), 0.1);
    assert!((t.distance - 1.5).abs() < 1e-15);
    let t = transform_plane(&cp, &Matrix3::identity(), &Vector3::new(0.0, 0.0, 1.95), 0.1);
    assert!(t.near_origin);
}

#[test]
fn transform_plane_transports_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let cp = gauss3(&mut rng) * 2.0;
        let rot = so3_exp(&gauss3(&mut rng));
        let p_al = gauss3(&mut rng);
        let n = cp.normalize();
        let (u, _) = tangent_basis(&n);
        let on_plane = cp + u * randn(&mut rng);
        // point coordinates in L: rot (x - p_al)
        let in_l = rot * (on_plane - p_al);
        let t = transform_plane(&cp, &rot, &p_al, 0.1);
        assert!((t.normal.dot(&in_l) - t.distance).abs() < 1e-10);
    }
}

#[test]
fn plane_block_is_zero_at_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = random_state(&mut rng, 0, 4, 0);
    let (plane, obs) = plane_fixture(&mut rng, &state, 10, 0.0);
    let block = build_plane_block(&state, &plane, &obs, 0.03).unwrap();
    assert_eq!(block.rows(), 40);
    assert!(block.r.amax() < 1e-8, "{}", block.r.amax());
    let hh = &block.h_n * block.h_n.transpose();
    assert!((hh - DMatrix::identity(40, 40)).amax() < 1e-9);
}

#[test]
fn plane_block_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let state = random_state(&mut rng, 2, 5, 1);
        let (plane, _) = plane_fixture(&mut rng, &state, 0, 0.0);
        let (_, obs) = plane_fixture(&mut rng, &state, 4, 0.05);
        let block = build_plane_block(&state, &plane, &obs, 0.03).unwrap();
        let numeric = numeric_jacobian(&state, 1e-6, |s| -build_plane_block(s, &plane, &obs, 0.03).unwrap().r);
        let err = max_relative_error(&block.h_x, &numeric, 1e-3);
        assert!(err < 1e-4, "state Jacobian error {err:e}");

        let mut num_pi = DMatrix::zeros(block.rows(), 3);
        for k in 0..3 {
            let mut p = plane;
            p.cp[k] += 1e-6;
            let rp = build_plane_block(&state, &p, &obs, 0.03).unwrap().r;
            p.cp[k] -= 2e-6;
            let rm = build_plane_block(&state, &p, &obs, 0.03).unwrap().r;
            num_pi.set_column(k, &(-(rp - rm) / 2e-6));
        }
        let err = max_relative_error(&block.h_pi, &num_pi, 1e-3);
        assert!(err < 1e-4, "plane Jacobian error {err:e}");
    }
}

#[test]
fn slam_plane_system_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let state = random_state(&mut rng, 1, 4, 2);
    let plane = state.planes[1];
    let anchor = clone_frame(&state, Sensor::Lidar, plane.plane.anchor_id).unwrap();
    let n_g = anchor.rot.transpose() * plane.plane.normal();
    let d_g = plane.plane.distance() + n_g.dot(&anchor.pos);
    let (u, v) = tangent_basis(&n_g);
    let obs: Obs = state
        .lidar_clones
        .clones
        .iter()
        .map(|c| {
            let f = clone_frame(&state, Sensor::Lidar, c.id).unwrap();
            let pts = (0..5).map(|_| f.from_global(&(n_g * d_g + u * randn(&mut rng) + v * randn(&mut rng)))).collect();
            (c.id, pts)
        })
        .collect();
    let (r, h) = slam_plane_system(&state, plane.id, &obs, 0.03).unwrap();
    assert!(r.amax() < 1e-8);
    let numeric = numeric_jacobian(&state, 1e-6, |s| -slam_plane_system(s, plane.id, &obs, 0.03).unwrap().0);
    let err = max_relative_error(&h, &numeric, 1e-3);
    assert!(err < 1e-4, "{err:e}");
    // the other SLAM plane does not enter
    let off = state.plane_offset(state.planes[0].id).unwrap();
    assert_eq!(h.columns(off, 3).amax(), 0.0);
}

/// Pose, velocity and body rate on an accelerating arc. Plain circles are
/// avoided because a time shift is then a rigid global rotation.
fn arc_pose(t: f64) -> (JplQuaternion, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let radius = 2.0;
    let yaw = t + 0.3 * t * t;
    let rot = so3_exp(&Vector3::new(0.0, 0.0, yaw)).transpose();
    let p = Vector3::new(radius * t.cos() + 0.5 * t * t, radius * t.sin(), 1.0 + 0.3 * t);
    let v = Vector3::new(-radius * t.sin() + t, radius * t.cos(), 0.3);
    // R = exp(-[ψ z]x) has body rate ψ' z
    (JplQuaternion::from_rot(&rot), p, v, Vector3::new(0.0, 0.0, 1.0 + 0.6 * t))
}

fn arc_state(td: f64, clone_td: f64, stamps: &[f64]) -> FilterState {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut state = random_state(&mut rng, 0, 0, 0);
    state.calib_lidar.td = clone_td;
    state.calib_lidar.p_si = Vector3::new(0.1, -0.05, 0.2);
    state.imu.bg = Vector3::zeros();
    for &s in stamps {
        let (q, p, v, w) = arc_pose(s + clone_td);
        state.imu.q_ig = q;
        state.imu.p_gi = p;
        state.imu.v_gi = v;
        state.omega = w;
        state.time = s;
        state.clone_pose(Sensor::Lidar, s).unwrap();
    }
    state.calib_lidar.td = td;
    state
}

#[test]
fn time_offset_column_predicts_recloned_residual() {
    let stamps = [0.0, 0.1, 0.2, 0.3];
    let td0 = 0.01;
    let delta = 1e-3;
    // truth: clones taken at the shifted true offset
    let truth = arc_state(td0 + delta, td0 + delta, &stamps);
    let walls = [(Vector3::new(1.0, 0.0, 0.0), 4.0), (Vector3::new(0.0, 1.0, 0.0), 4.0), (Vector3::new(0.0, 0.0, 1.0), 3.0)];
    let model = arc_state(td0, td0, &stamps);
    let mut total = 0.0;
    let mut miss = 0.0;
    let mut shifted_total = 0.0;
    for (n_g, d_g) in walls {
        let (u, v) = tangent_basis(&n_g);
        let mut obs: Obs = Vec::new();
        let mut k = 0.0;
        for (c_true, c_model) in truth.lidar_clones.clones.iter().zip(&model.lidar_clones.clones) {
            let f = clone_frame(&truth, Sensor::Lidar, c_true.id).unwrap();
            let pts = (0..8)
                .map(|i| {
                    k += 1.0;
                    let a = (i as f64 * 0.7 + k).sin() * 2.0;
                    let b = (i as f64 * 1.3 + k).cos() * 2.0;
                    f.from_global(&(n_g * d_g + u * a + v * b))
                })
                .collect();
            obs.push((c_model.id, pts));
        }
        let anchor_true = clone_frame(&truth, Sensor::Lidar, truth.lidar_clones.clones[3].id).unwrap();
        let cp = anchor_true.rot * n_g * (d_g - n_g.dot(&anchor_true.pos));
        let plane = ClosestPointPlane::new(cp, model.lidar_clones.clones[3].id);
        let block = build_plane_block(&model, &plane, &obs, 0.03).unwrap();
        let predicted = block.h_x.column(CALIB_LIDAR + 6) * delta;
        total += block.r.norm_squared();
        miss += (&block.r - predicted).norm_squared();
        // the extrapolated clones at the true offset explain most of the residual
        let mut shifted = model.clone();
        shifted.calib_lidar.td = td0 + delta;
        let r_shift = build_plane_block(&shifted, &plane, &obs, 0.03).unwrap().r;
        shifted_total += r_shift.norm_squared();
    }
    // the horizontal plane is blind to yaw-only motion, the walls are not
    assert!(total.sqrt() > 1e-3);
    assert!(shifted_total.sqrt() < 0.05 * total.sqrt());
    let rel = (miss / total).sqrt();
    assert!(rel < 0.05, "time-offset prediction off by {:.2}%", rel * 100.0);
}

#[test]
fn projection_removes_plane_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let state = random_state(&mut rng, 0, 4, 0);
    let (plane, obs) = plane_fixture(&mut rng, &state, 3, 0.03);
    let obs: Obs = obs.into_iter().map(|(id, mut p)| {
        p.truncate(if id == obs_first(&state) { 1 } else { 3 });
        (id, p)
    }).collect();
    let block = build_plane_block(&state, &plane, &obs, 0.03).unwrap();
    assert_eq!(block.rows(), 10);
    let proj = msckf_nullspace_project(&block).unwrap();
    assert_eq!(proj.r.len(), 7);
    assert_eq!(proj.rank, 3);
    // Nᵀ recovered by projecting the identity; NᵀH_π and NᵀH_nH_nᵀN - I vanish
    let nt = left_nullspace_project(&block.h_pi, &DMatrix::identity(10, 10), 1e-9);
    assert!((&nt * &block.h_pi).norm() < 1e-10);
    let iso = &nt * &block.h_n * block.h_n.transpose() * nt.transpose();
    assert!((iso - DMatrix::identity(7, 7)).amax() < 1e-9);
    assert!((proj.h_x - &nt * &block.h_x).amax() < 1e-12);
}

fn obs_first(state: &FilterState) -> u64 {
    state.lidar_clones.clones[0].id
}

#[test]
fn rank_deficient_projection_drops_only_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = DMatrix::from_fn(12, 2, |_, _| randn(&mut rng));
    let h_pi = DMatrix::from_fn(12, 3, |i, j| if j < 2 { a[(i, j)] } else { a[(i, 0)] - 2.0 * a[(i, 1)] });
    let h_x = DMatrix::from_fn(12, 5, |_, _| randn(&mut rng));
    let r = DVector::from_fn(12, |_, _| randn(&mut rng));
    let p = project_out(&h_pi, &h_x, &r, 1.0, 1e-9);
    assert_eq!(p.rank, 2);
    assert_eq!(p.r.len(), 10);
    assert!(p.r.iter().all(|v| v.is_finite()));
}

/// Information-form posterior of `x` when `f` has a flat prior.
fn joint_then_marginalize(
    p: &DMatrix<f64>,
    h_x: &DMatrix<f64>,
    h_f: &DMatrix<f64>,
    r: &DVector<f64>,
    var: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = p.nrows();
    let k = h_f.ncols();
    let mut h = DMatrix::zeros(h_x.nrows(), n + k);
    h.columns_mut(0, n).copy_from(h_x);
    h.columns_mut(n, k).copy_from(h_f);
    let mut info = h.transpose() * &h / var;
    let mut pi = info.view_mut((0, 0), (n, n));
    pi += p.clone().try_inverse().unwrap();
    let eta = h.transpose() * r / var;
    let cov = info.try_inverse().unwrap();
    let mean = &cov * eta;
    (mean.rows(0, n).into_owned(), cov.view((0, 0), (n, n)).into_owned())
}

#[test]
fn projected_update_equals_joint_estimate_then_marginalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let n = rng.random_range(3..9);
        let m = rng.random_range(5..15);
        let p = random_spd(&mut rng, n, 1.0);
        let h_x = DMatrix::from_fn(m, n, |_, _| randn(&mut rng));
        let h_f = DMatrix::from_fn(m, 3, |_, _| randn(&mut rng));
        let r = DVector::from_fn(m, |_, _| randn(&mut rng));
        let var: f64 = 0.3;
        let proj = project_out(&h_f, &h_x, &r, var.sqrt(), 1e-9);
        let (dx, post) = kalman_correction(&p, &proj.r, &proj.h_x, &Noise::Isotropic(var)).unwrap();
        let (dx_j, post_j) = joint_then_marginalize(&p, &h_x, &h_f, &r, var);
        assert!((&dx - dx_j).amax() < 1e-8);
        assert!((&post - post_j).amax() < 1e-8);
    }
}

#[test]
fn zero_jacobian_leaves_state_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut state = random_state(&mut rng, 2, 2, 1);
    let before = state.clone();
    let n = state.dim();
    let r = DVector::from_fn(5, |_, _| randn(&mut rng));
    ekf_update(&mut state, &r, &DMatrix::zeros(5, n), &Noise::Isotropic(0.1)).unwrap();
    assert!((&state.cov - &before.cov).amax() < 1e-15);
    assert_eq!(state.imu.p_gi, before.imu.p_gi);
    assert!((state.imu.q_ig.to_rot() - before.imu.q_ig.to_rot()).amax() < 1e-15);
}

#[test]
fn scalar_kalman_gain() {
    let p = DMatrix::from_element(1, 1, 4.0);
    let h = DMatrix::from_element(1, 1, 2.0);
    let r = DVector::from_element(1, 3.0);
    // K = 4·2/(2·4·2 + 1) = 8/17
    let (dx, post) = kalman_correction(&p, &r, &h, &Noise::Isotropic(1.0)).unwrap();
    assert!((dx[0] - 24.0 / 17.0).abs() < 1e-14);
    assert!((post[(0, 0)] - 4.0 / 17.0).abs() < 1e-14);
}

#[test]
fn singular_innovation_is_reported() {
    let p = DMatrix::zeros(2, 2);
    let h = DMatrix::identity(2, 2);
    let r = DVector::from_element(2, 1.0);
    let err = kalman_correction(&p, &r, &h, &Noise::Full(DMatrix::zeros(2, 2))).unwrap_err();
    assert!(matches!(err, crate::Error::Singular(_)));
}

#[test]
fn compression_preserves_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_spd(&mut rng, 6, 1.0);
    let h = DMatrix::from_fn(40, 6, |_, _| randn(&mut rng));
    let r = DVector::from_fn(40, |_, _| randn(&mut rng));
    let (rc, hc) = compress(&r, &h);
    assert_eq!(hc.shape(), (6, 6));
    let (a, pa) = kalman_correction(&p, &r, &h, &Noise::Isotropic(0.5)).unwrap();
    let (b, pb) = kalman_correction(&p, &rc, &hc, &Noise::Isotropic(0.5)).unwrap();
    assert!((a - b).amax() < 1e-10);
    assert!((pa - pb).amax() < 1e-10);
}

#[test]
fn chi2_threshold_values() {
    assert!((chi2_threshold(1, 0.95) - 3.841459).abs() < 1e-5);
    assert!((chi2_threshold(3, 0.95) - 7.814728).abs() < 1e-5);
    assert_eq!(chi2_threshold(0, 0.95), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn posterior_is_psd_and_shrinks(seed in any::<u64>(), m in 1usize..12, var_exp in -8.0f64..0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_spd(&mut rng, 7, 1.0);
        let h = DMatrix::from_fn(m, 7, |_, _| randn(&mut rng));
        let r = DVector::from_fn(m, |_, _| randn(&mut rng));
        let (_, post) = kalman_correction(&p, &r, &h, &Noise::Isotropic(10f64.powf(var_exp))).unwrap();
        let min_eig = post.clone().symmetric_eigenvalues().min();
        prop_assert!(min_eig > -1e-10, "eigenvalue {min_eig:e}");
        prop_assert!(post.trace() <= p.trace() + 1e-12);
    }
}

#[test]
fn promotion_matches_projected_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let state = random_state(&mut rng, 1, 4, 0);
        let (plane, obs) = plane_fixture(&mut rng, &state, 6, 0.03);
        let fit_plane = estimate_track_plane(&state, &obs).unwrap().0;
        assert_eq!(fit_plane.anchor_id, plane.anchor_id);
        let block = build_plane_block(&state, &fit_plane, &obs, 0.03).unwrap();

        let mut promoted = state.clone();
        let (id, gate) = promote_plane(&mut promoted, &block, 0.999999).unwrap();
        assert!(gate.accepted);
        let id = id.unwrap();
        promoted.check_invariants().unwrap();

        let mut msckf = state.clone();
        let proj = msckf_nullspace_project(&block).unwrap();
        ekf_update(&mut msckf, &proj.r, &proj.h_x, &Noise::Isotropic(0.03 * 0.03)).unwrap();
        let n = state.dim();
        let marg = promoted.cov.view((0, 0), (n, n)).into_owned();
        assert!((&marg - &msckf.cov).amax() < 1e-10, "{:e}", (&marg - &msckf.cov).amax());
        assert!((promoted.imu.p_gi - msckf.imu.p_gi).amax() < 1e-10);
        assert!(promoted.plane(id).is_some());
    }
}

#[test]
fn promotion_respects_novelty() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let state = random_state(&mut rng, 0, 4, 0);
    let (plane, obs) = plane_fixture(&mut rng, &state, 6, 0.0);
    let block = build_plane_block(&state, &plane, &obs, 0.03).unwrap();
    let mut s = state.clone();
    promote_plane(&mut s, &block, 0.95).unwrap();
    let err = promote_plane(&mut s, &block, 0.95).unwrap_err();
    assert!(matches!(err, crate::Error::Rejected(_)));
}

#[test]
fn slam_plane_update_converges_with_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let state = random_state(&mut rng, 0, 4, 0);
    let (plane, obs) = plane_fixture(&mut rng, &state, 10, 0.0);
    let mut s = state.clone();
    s.cov = DMatrix::identity(s.dim(), s.dim()) * 1e-6;
    let mut wrong = plane;
    wrong.cp += Vector3::new(0.02, -0.01, 0.015);
    let block = build_plane_block(&s, &wrong, &obs, 0.01).unwrap();
    let (id, _) = promote_plane(&mut s, &block, 0.999999).unwrap();
    let id = id.unwrap();
    let gate = slam_plane_update(&mut s, id, &obs, 0.01, 0.999999).unwrap();
    assert!(gate.accepted);
    assert!((s.plane(id).unwrap().plane.cp - plane.cp).norm() < 1e-3);
}

#[test]
fn triangulation_recovers_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let (state, p_g, obs) = camera_fixture(&mut rng, 5, true);
        let p = triangulate(&state, &obs).unwrap();
        assert!((p - p_g).norm() < 1e-8, "{}", (p - p_g).norm());
    }
}

#[test]
fn triangulation_rejects_parallel_rays() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (mut state, p_g, _) = camera_fixture(&mut rng, 1, false);
    let c = *state.cam_clones.newest().unwrap();
    state.imu.q_ig = c.q_ig;
    state.imu.p_gi = c.p_gi;
    state.clone_pose(Sensor::Camera, 1.0).unwrap();
    let obs = bearings(&state, &p_g, 1e-3);
    assert!(matches!(triangulate(&state, &obs), Err(crate::Error::Singular(_))));
}

#[test]
fn point_block_zero_at_truth_and_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let (state, p_g, obs) = camera_fixture(&mut rng, 4, true);
        let block = build_point_block(&state, &p_g, &obs).unwrap();
        assert!(block.r.amax() < 1e-8);
        let noisy: Vec<_> = obs.iter().map(|o| BearingMeasurement::new(o.clone_id, o.uv + Vector2::new(1e-3, -2e-3), o.sigma)).collect();
        let h = build_point_block(&state, &p_g, &noisy).unwrap().h_x;
        let numeric = numeric_jacobian(&state, 1e-6, |s| -build_point_block(s, &p_g, &noisy).unwrap().r);
        let err = max_relative_error(&h, &numeric, 1e-3);
        assert!(err < 1e-4, "{err:e}");
        let mut num_f = DMatrix::zeros(block.r.len(), 3);
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = 1e-6;
            let rp = build_point_block(&state, &(p_g + e), &noisy).unwrap().r;
            let rm = build_point_block(&state, &(p_g - e), &noisy).unwrap().r;
            num_f.set_column(k, &(-(rp - rm) / 2e-6));
        }
        assert!(max_relative_error(&block.h_f, &num_f, 1e-3) < 1e-4);
    }
}

#[test]
fn msckf_feature_update_reduces_uncertainty() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (mut state, _, obs) = camera_fixture(&mut rng, 5, true);
    let before = state.cov.trace();
    let out = visual_msckf_update(&mut state, &obs, 0.95).unwrap();
    assert!(matches!(out, FeatureOutcome::Updated(_)));
    assert!(state.cov.trace() < before);
    state.check_invariants().unwrap();
    assert_eq!(visual_msckf_update(&mut state, &obs[..2], 0.95).unwrap(), FeatureOutcome::Dropped);
}

#[test]
fn point_promotion_matches_projected_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (state, p_g, obs) = camera_fixture(&mut rng, 5, true);
    let noisy: Vec<_> = obs.iter().map(|o| BearingMeasurement::new(o.clone_id, o.uv + Vector2::new(randn(&mut rng), randn(&mut rng)) * o.sigma, o.sigma)).collect();
    let mut promoted = state.clone();
    let (id, gate) = promote_point(&mut promoted, &noisy, 0.999999).unwrap();
    assert!(gate.accepted);
    let id = id.unwrap();
    let mut msckf = state.clone();
    visual_msckf_update(&mut msckf, &noisy, 0.999999).unwrap();
    let n = state.dim();
    assert!((promoted.cov.view((0, 0), (n, n)) - &msckf.cov).amax() < 1e-10);
    assert!((promoted.point(id).unwrap().p_gf - p_g).norm() < 0.05);
    let gate = slam_point_update(&mut promoted, id, &noisy, 0.999999).unwrap();
    assert!(gate.dof == 10);
    promoted.check_invariants().unwrap();
}

/// Global yaw about gravity and global translation as error-state columns.
fn unobservable_directions(state: &FilterState) -> DMatrix<f64> {
    let g = Vector3::new(0.0, 0.0, 9.81);
    let n = state.dim();
    let mut dirs = DMatrix::zeros(n, 4);
    let mut put = |row: usize, yaw: Vector3<f64>, pos: Matrix3<f64>| {
        dirs.view_mut((row, 0), (3, 1)).copy_from(&yaw);
        dirs.view_mut((row, 1), (3, 3)).copy_from(&pos);
    };
    put(0, state.imu.q_ig.to_rot() * g, Matrix3::zeros());
    put(6, -skew(&state.imu.v_gi) * g, Matrix3::zeros());
    put(12, -skew(&state.imu.p_gi) * g, Matrix3::identity());
    let l = state.layout();
    for (w, start) in [(&state.cam_clones, l.cam_clones), (&state.lidar_clones, l.lidar_clones)] {
        for (i, c) in w.clones.iter().enumerate() {
            put(start + 6 * i, c.q_ig.to_rot() * g, Matrix3::zeros());
            put(start + 6 * i + 3, -skew(&c.p_gi) * g, Matrix3::identity());
        }
    }
    for (i, p) in state.points.iter().enumerate() {
        put(l.points + 3 * i, -skew(&p.p_gf) * g, Matrix3::identity());
    }
    dirs
}

fn hygiene(h: &DMatrix<f64>, dirs: &DMatrix<f64>) -> f64 {
    (h * dirs).norm() / (h.norm() * dirs.norm())
}

#[test]
fn plane_jacobians_respect_global_yaw_and_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..10 {
        let mut state = random_state(&mut rng, 2, 5, 1);
        state.calib_lidar.td = state.lidar_clones.clones[0].td_ref;
        state.calib_cam.td = state.cam_clones.clones[0].td_ref;
        let (plane, obs) = plane_fixture(&mut rng, &state, 5, 0.0);
        let dirs = unobservable_directions(&state);
        let block = build_plane_block(&state, &plane, &obs, 0.03).unwrap();
        assert!(hygiene(&block.h_x, &dirs) < 1e-6);
        let id = state.planes[0].id;
        let p = state.planes[0].plane;
        let (_, h) = slam_plane_system(&state, id, &planar_obs(&state, &p, &mut rng), 0.03).unwrap();
        assert!(hygiene(&h, &dirs) < 1e-6);
    }
}

fn planar_obs(state: &FilterState, plane: &ClosestPointPlane, rng: &mut ChaCha8Rng) -> Obs {
    let anchor = clone_frame(state, Sensor::Lidar, plane.anchor_id).unwrap();
    let n_g = anchor.rot.transpose() * plane.normal();
    let d_g = plane.distance() + n_g.dot(&anchor.pos);
    let (u, v) = tangent_basis(&n_g);
    state
        .lidar_clones
        .clones
        .iter()
        .map(|c| {
            let f = clone_frame(state, Sensor::Lidar, c.id).unwrap();
            (c.id, (0..4).map(|_| f.from_global(&(n_g * d_g + u * randn(rng) + v * randn(rng)))).collect())
        })
        .collect()
}

#[test]
fn visual_jacobians_respect_global_yaw_and_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let (mut state, p_g, obs) = camera_fixture(&mut rng, 4, false);
        let (_, gate) = promote_point(&mut state.clone(), &obs, 0.95).unwrap();
        assert!(gate.accepted);
        let block = build_point_block(&state, &p_g, &obs).unwrap();
        let dirs = unobservable_directions(&state);
        let g = Vector3::new(0.0, 0.0, 9.81);
        let mut hf_dirs = DMatrix::zeros(3, 4);
        hf_dirs.view_mut((0, 0), (3, 1)).copy_from(&(-skew(&p_g) * g));
        hf_dirs.view_mut((0, 1), (3, 3)).copy_from(&Matrix3::identity());
        let total = &block.h_x * &dirs + &block.h_f * hf_dirs;
        assert!(total.norm() / (block.h_x.norm() * dirs.norm()) < 1e-6);

        let id = state.insert_slam_point(p_g, &crate::state::LandmarkInit::Independent(Matrix3::identity())).unwrap();
        let (_, h, _) = slam_point_system(&state, id, &obs).unwrap();
        assert!(hygiene(&h, &unobservable_directions(&state)) < 1e-6);
    }
}

#[test]
fn diagnostics_are_json_lines() {
    let gate = GateDecision { nis: 1.5, dof: 3, threshold: 7.8, accepted: true };
    let mut log = DiagnosticsLog::new(Vec::new());
    log.write(&UpdateRecord::from_gate(1.0, UpdateKind::MsckfPlane, 4, 0.2, &gate)).unwrap();
    log.write(&UpdateRecord::from_gate(1.1, UpdateKind::SlamPoint, 5, 0.1, &gate)).unwrap();
    let text = String::from_utf8(log.into_inner()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let back: UpdateRecord = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(back.kind, UpdateKind::SlamPoint);
    assert!(lines[0].contains("\"kind\":\"msckf_plane\""));
}
