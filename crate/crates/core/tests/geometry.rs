use std::f64::consts::PI;

use frustumocc::geom::*;
use frustumocc::occupancy::*;
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn oriented_box() -> impl Strategy<Value = OrientedBox3D> {
    (vec3(10.0), 0.2..6.0f64, 0.2..3.0f64, 0.2..3.0f64, -PI..PI).prop_map(|(c, l, w, h, yaw)| {
        OrientedBox3D::new(c, BoxSize::new(l, w, h), yaw).unwrap()
    })
}

fn face_distance(p: Vec3, b: &OrientedBox3D) -> f64 {
    let local = b.to_local(p);
    let h = b.size.half();
    (h.x - local.x.abs()).abs().min((h.y - local.y.abs()).abs()).min((h.z - local.z.abs()).abs())
}

fn small_spec() -> FrustumSpec {
    let k = CameraIntrinsics::new(40.0, 40.0, 32.0, 16.0, 64, 32).unwrap();
    FrustumSpec::new(k, DepthBins::uniform(1.0, 21.0, 20).unwrap(), 4).unwrap()
}

proptest! {
    #[test]
    fn unproject_then_project_round_trips(u in 0.0..704.0f64, v in 0.0..256.0f64, depth in 0.5..80.0f64) {
        let k = CameraIntrinsics::new(503.0, 497.0, 352.0, 128.0, 704, 256).unwrap();
        let p = unproject(&k, (u, v), depth).unwrap();
        prop_assert!((p.z - depth).abs() < 1e-12);
        let (pu, pv) = k.project(p).unwrap();
        prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
    }

    #[test]
    fn frustum_rays_are_collinear(yaw in -PI..PI, pos in vec3(5.0)) {
        let spec = small_spec();
        let pose = RigidTransform::level_camera(pos, yaw);
        let grid = build_frustum(&spec, &pose);
        let s = grid.shape();
        for (row, col) in [(0, 0), (s.height - 1, s.width - 1), (3, 7)] {
            let first = grid.point(row, col, 0);
            let dir = (grid.point(row, col, s.bins - 1) - first).normalized().unwrap();
            for bin in 1..s.bins - 1 {
                let off = grid.point(row, col, bin) - first;
                prop_assert!(off.cross(dir).norm() < 1e-9);
                prop_assert!(off.dot(dir) > 0.0);
            }
            // The ray starts at the camera center.
            let back = first - pos;
            prop_assert!(back.cross(dir).norm() < 1e-9);
        }
    }

    #[test]
    fn face_normals_are_unit_and_outward(b in oriented_box()) {
        for face in box_faces(&b) {
            prop_assert!((face.normal.norm() - 1.0).abs() < 1e-12);
            prop_assert!((face.point - b.center).dot(face.normal) > 0.0);
            prop_assert!(point_occupied_oracle(b.center, &b));
        }
    }

    #[test]
    fn halfspace_agrees_with_box_frame(b in oriented_box(), p in vec3(14.0)) {
        prop_assume!(face_distance(p, &b) > 1e-9);
        prop_assert_eq!(point_occupied_halfspace(p, &b), point_occupied_oracle(p, &b));
    }

    #[test]
    fn labeling_is_rigid_invariant(b in oriented_box(), yaw in -PI..PI, shift in vec3(20.0)) {
        // Moving camera and box together leaves labels unchanged.
        let spec = small_spec();
        let b = OrientedBox3D::new(Vec3::new(b.center.x.abs() + 2.0, 0.0, 8.0), b.size, b.yaw).unwrap();
        let cam_grid = build_frustum(&spec, &RigidTransform::level_camera(Vec3::ZERO, 0.0));
        let base = label_frustum::<f32>(&cam_grid, &[b], Frame::World).unwrap();

        let motion = RigidTransform::new(Mat3::rotation_z(yaw), shift).unwrap();
        let moved_box = OrientedBox3D::new(motion.apply(b.center), b.size, b.yaw + yaw).unwrap();
        let moved_grid = build_frustum(&spec, &motion.compose(&RigidTransform::level_camera(Vec3::ZERO, 0.0)));
        let moved = label_frustum::<f32>(&moved_grid, &[moved_box], Frame::World).unwrap();
        let mismatched = base.values().iter().zip(moved.values()).enumerate().filter(|&(i, (a, c))| {
            a != c && face_distance(cam_grid.points()[i], &b) > 1e-9
        }).count();
        prop_assert_eq!(mismatched, 0);
    }

    #[test]
    fn adding_a_box_never_removes_labels(boxes in prop::collection::vec(oriented_box(), 1..5), extra in oriented_box()) {
        let grid = build_frustum(&small_spec(), &RigidTransform::level_camera(Vec3::new(0.0, 0.0, 0.0), 0.3));
        let before = label_frustum::<f32>(&grid, &boxes, Frame::World).unwrap();
        let mut more = boxes.clone();
        more.push(extra);
        let after = label_frustum::<f32>(&grid, &more, Frame::World).unwrap();
        prop_assert!(before.values().iter().zip(after.values()).all(|(&a, &c)| c >= a));
        let naive = label_frustum_naive::<f32>(&grid, &more, Frame::World).unwrap();
        prop_assert_eq!(after.values(), naive.values());
    }

    #[test]
    fn slab_interval_matches_sampling(b in oriented_box(), origin in vec3(15.0), dir in vec3(1.0)) {
        prop_assume!(dir.norm() > 0.1);
        let dir = dir.normalized().unwrap();
        let hit = ray_occupancy_continuous(origin, dir, &b);
        let step = 1e-3;
        let inside: Vec<f64> = (0..40_000)
            .map(|k| (k as f64 + 0.5) * step)
            .filter(|&t| point_occupied_oracle(origin + dir * t, &b))
            .collect();
        match hit {
            None => prop_assert!(inside.is_empty()),
            Some((t0, t1)) => {
                prop_assert!(t1 >= t0 && t0 >= 0.0);
                if let (Some(first), Some(last)) = (inside.first(), inside.last()) {
                    prop_assert!(*first >= t0 - 1e-9 && *last <= t1 + 1e-9);
                    prop_assert!((inside.len() as f64 * step - (t1 - t0)).abs() <= 2.0 * step);
                } else {
                    prop_assert!(t1 - t0 < 2.0 * step);
                }
            }
        }
    }
}

#[test]
fn camera_frame_grid_needs_camera_frame_boxes() {
    let spec = small_spec();
    let pose = RigidTransform::level_camera(Vec3::new(1.0, 2.0, 1.5), 0.7);
    let world = build_frustum(&spec, &pose);
    let cam = build_frustum_camera(&spec);
    let b = OrientedBox3D::new(pose.apply(Vec3::new(0.5, 0.0, 9.0)), BoxSize::new(3.0, 2.0, 2.0), 0.4).unwrap();
    let in_world = label_frustum::<f32>(&world, &[b], Frame::World).unwrap();
    assert!(in_world.count_occupied() > 0);
    assert!(label_frustum::<f32>(&cam, &[b], Frame::World).is_err());
    // Transform the grid instead of the box: same labels.
    let back = world.transformed(&pose.inverse(), Frame::Camera).transformed(&pose, Frame::World);
    let again = label_frustum::<f32>(&back, &[b], Frame::World).unwrap();
    let differing = in_world.values().iter().zip(again.values()).filter(|(a, c)| a != c).count();
    assert!(differing <= 2, "{differing} labels moved under a round-trip transform");
}
