use frustumocc::fusion::WeightVolume;
use frustumocc::geom::*;
use frustumocc::lift_splat::*;
use frustumocc::synth::UniformStream;
use proptest::prelude::*;

fn random_grid(rng: &mut UniformStream, shape: VolumeShape, half: f64) -> FrustumGrid {
    let pts = (0..shape.len())
        .map(|_| Vec3::new(rng.range([-half, half]), rng.range([-half, half]), rng.range([-2.0, 2.0])))
        .collect();
    FrustumGrid::from_points(shape, Frame::World, pts).unwrap()
}

/// Values on a 1/256 lattice so every f64 sum here is exact.
fn dyadic(rng: &mut UniformStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| (rng.next_f64() * 512.0).floor() / 256.0 - 1.0).collect()
}

fn bev() -> BevGridSpec {
    BevGridSpec::square(16, 0.5, -1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sorted_matches_naive_bitwise(seed in any::<u64>(), cams in 1usize..4, channels in 1usize..5) {
        let mut rng = UniformStream::new(seed, 0);
        let shape = VolumeShape::new(3, 5, 7);
        let grids: Vec<_> = (0..cams).map(|_| random_grid(&mut rng, shape, 5.0)).collect();
        let vols: Vec<_> = (0..cams)
            .map(|_| {
                let v = (0..shape.len() * channels).map(|_| rng.next_f64() as f32).collect();
                LiftedFeatureVolume::from_values(shape, channels, v).unwrap()
            })
            .collect();
        let inputs: Vec<_> = vols.iter().zip(&grids).collect();
        let (a, sa) = voxel_pool_naive(&inputs, &bev()).unwrap();
        let (b, sb) = voxel_pool(&inputs, &bev()).unwrap();
        prop_assert_eq!(sa, sb);
        prop_assert_eq!(sa.in_range + sa.dropped, cams * shape.len());
        let bits = |g: &BevGrid<f32>| g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn pooling_conserves_mass(seed in any::<u64>(), channels in 1usize..4) {
        let mut rng = UniformStream::new(seed, 1);
        let shape = VolumeShape::new(4, 4, 6);
        let grid = random_grid(&mut rng, shape, 5.0);
        let vol = LiftedFeatureVolume::from_values(shape, channels, dyadic(&mut rng, shape.len() * channels)).unwrap();
        let (out, _) = voxel_pool(&[(&vol, &grid)], &bev()).unwrap();
        let spec = bev();
        for c in 0..channels {
            let mut kept = 0.0;
            for row in 0..shape.height {
                for col in 0..shape.width {
                    for bin in 0..shape.bins {
                        if spec.cell_of(grid.point(row, col, bin)).is_some() {
                            kept += vol.value(bin, c, row, col);
                        }
                    }
                }
            }
            prop_assert_eq!(out.channel_sums()[c], kept);
        }
    }

    #[test]
    fn lift_and_pool_are_linear(seed in any::<u64>()) {
        let mut rng = UniformStream::new(seed, 2);
        let shape = VolumeShape::new(2, 3, 4);
        let grid = random_grid(&mut rng, shape, 4.0);
        let feats = FeatureMap::new(2, 2, 3, dyadic(&mut rng, 12)).unwrap();
        let weights = WeightVolume::<f64>::uniform_depth(shape);
        let other = FeatureMap::new(2, 2, 3, dyadic(&mut rng, 12)).unwrap();
        let alpha = 0.25;
        let combined: Vec<f64> = feats.values().iter().zip(other.values()).map(|(a, b)| a + alpha * b).collect();
        let combined = FeatureMap::new(2, 2, 3, combined).unwrap();

        let pool = |f: &FeatureMap<f64>| voxel_pool(&[(&LazyLift::new(f, &weights).unwrap(), &grid)], &bev()).unwrap().0;
        let (p1, p2, p12) = (pool(&feats), pool(&other), pool(&combined));
        for ((a, b), c) in p1.values().iter().zip(p2.values()).zip(p12.values()) {
            prop_assert_eq!(a + alpha * b, *c);
        }
    }

    #[test]
    fn lazy_lift_equals_materialized(seed in any::<u64>()) {
        let mut rng = UniformStream::new(seed, 3);
        let shape = VolumeShape::new(3, 2, 5);
        let f = FeatureMap::new(3, 3, 2, (0..18).map(|_| rng.next_f64() as f32).collect()).unwrap();
        let mut w: Vec<f32> = (0..shape.len()).map(|_| rng.next_f64() as f32).collect();
        for ray in w.chunks_mut(5) {
            let s: f32 = ray.iter().sum();
            ray.iter_mut().for_each(|v| *v /= s);
        }
        let w = WeightVolume::depth(shape, w).unwrap();
        let lifted = lift(&f, &w).unwrap();
        let lazy = LazyLift::new(&f, &w).unwrap();
        for bin in 0..5 {
            for c in 0..3 {
                for row in 0..3 {
                    for col in 0..2 {
                        prop_assert_eq!(lazy.value(bin, c, row, col).to_bits(), lifted.value(bin, c, row, col).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn gather_is_adjoint_of_pool(seed in any::<u64>()) {
        let mut rng = UniformStream::new(seed, 4);
        let shape = VolumeShape::new(2, 2, 5);
        let grid = random_grid(&mut rng, shape, 5.0);
        let x = LiftedFeatureVolume::from_values(shape, 2, dyadic(&mut rng, shape.len() * 2)).unwrap();
        let spec = bev();
        let g = BevGrid::from_values(2, spec.rows(), spec.cols(), dyadic(&mut rng, 2 * spec.cells())).unwrap();
        let (pooled, _) = voxel_pool(&[(&x, &grid)], &spec).unwrap();
        let grads = voxel_pool_grad(&g, &[(&x, &grid)], &spec).unwrap();
        let lhs: f64 = pooled.values().iter().zip(g.values()).map(|(a, b)| a * b).sum();
        let rhs: f64 = grads[0].values().iter().zip(x.values()).map(|(a, b)| a * b).sum();
        prop_assert_eq!(lhs, rhs);
    }
}

#[test]
fn cached_plan_reuses_geometry() {
    let mut rng = UniformStream::new(11, 0);
    let shape = VolumeShape::new(8, 8, 10);
    let grid = random_grid(&mut rng, shape, 4.5);
    let plan = PoolingPlan::build(&[&grid], &bev()).unwrap();
    for batch in 0..3 {
        let vol = LiftedFeatureVolume::from_values(shape, 2, dyadic(&mut rng, shape.len() * 2)).unwrap();
        let (naive, stats) = voxel_pool_naive(&[(&vol, &grid)], &bev()).unwrap();
        assert_eq!(plan.stats(), stats, "batch {batch}");
        assert_eq!(plan.pool(&[&vol]).unwrap(), naive);
    }
}
