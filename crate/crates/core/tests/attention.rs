use frustumocc::gfp::*;
use frustumocc::lift_splat::FeatureMap;
use frustumocc::synth::UniformStream;
use proptest::prelude::*;

fn random_inputs(seed: u64, h: usize, w: usize, bins: usize, ch: usize) -> (OccupancyTokenSet<f64>, FeatureMap<f64>) {
    let mut rng = UniformStream::new(seed, 0);
    let n = h * w;
    let tokens = (0..n * bins).map(|_| rng.next_f64()).collect();
    let values = (0..n * ch).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    (
        OccupancyTokenSet::new(bins, tokens, (0..n).collect()).unwrap(),
        FeatureMap::new(ch, h, w, values).unwrap(),
    )
}

fn scopes() -> impl Strategy<Value = AttentionScope> {
    prop_oneof![
        Just(AttentionScope::Global),
        Just(AttentionScope::PerRow),
        (0usize..3).prop_map(|k| AttentionScope::Windowed(2 * k + 1)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), scope in scopes(), h in 1usize..4, w in 1usize..6) {
        let (t, f) = random_inputs(seed, h, w, 5, 2);
        let cfg = AttentionConfig { scope, ..Default::default() };
        for i in 0..h * w {
            let row = attention_row(&t, &f, &cfg, i).unwrap();
            let s: f64 = row.iter().map(|(_, a)| a).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().any(|&(j, _)| j == i));
        }
    }

    #[test]
    fn global_attention_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..9, shift in 1usize..8) {
        // A single-row map with global scope: permuting pixels permutes outputs.
        let (t, f) = random_inputs(seed, 1, n, 4, 3);
        let cfg = AttentionConfig { scope: AttentionScope::Global, ..Default::default() };
        let out = gfp_attend(&t, &f, &cfg).unwrap();
        let perm: Vec<usize> = (0..n).map(|p| (p + shift) % n).collect();
        let mut pt = vec![0.0; n * 4];
        let mut pf = vec![0.0; n * 3];
        for (p, &q) in perm.iter().enumerate() {
            pt[q * 4..(q + 1) * 4].copy_from_slice(t.token(p));
            for c in 0..3 {
                pf[c * n + q] = f.values()[c * n + p];
            }
        }
        let t2 = OccupancyTokenSet::new(4, pt, (0..n).collect()).unwrap();
        let f2 = FeatureMap::new(3, 1, n, pf).unwrap();
        let out2 = gfp_attend(&t2, &f2, &cfg).unwrap();
        for (p, &q) in perm.iter().enumerate() {
            for c in 0..3 {
                prop_assert!((out.get(c, 0, p) - out2.get(c, 0, q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_constant_logit_shift_is_invisible(seed in any::<u64>(), k in 0.1..1.0f64) {
        // An extra token component equal to k everywhere adds k² to every logit.
        let (t, f) = random_inputs(seed, 2, 4, 3, 2);
        let cfg = AttentionConfig::unscaled(AttentionScope::PerRow);
        let extended: Vec<f64> = t.tokens().chunks(3).flat_map(|c| c.iter().copied().chain(std::iter::once(k))).collect();
        let t2 = OccupancyTokenSet::new(4, extended, (0..8).collect()).unwrap();
        let a = gfp_attend(&t, &f, &cfg).unwrap();
        let b = gfp_attend(&t2, &f, &cfg).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn token_order_does_not_matter(seed in any::<u64>()) {
        let (t, f) = random_inputs(seed, 2, 3, 4, 2);
        let cfg = AttentionConfig::default();
        let order = [4usize, 0, 5, 2, 1, 3];
        let shuffled: Vec<f64> = order.iter().flat_map(|&p| t.token(p).iter().copied()).collect();
        let t2 = OccupancyTokenSet::new(4, shuffled, order.to_vec()).unwrap();
        prop_assert_eq!(gfp_attend(&t, &f, &cfg).unwrap(), gfp_attend(&t2, &f, &cfg).unwrap());
    }
}

#[test]
fn scalar_loop_oracle() {
    let (t, f) = random_inputs(5, 2, 3, 4, 2);
    let cfg = AttentionConfig { scope: AttentionScope::Windowed(3), scale: ScaleMode::InvSqrtBins, temperature: 0.7 };
    let out = gfp_attend(&t, &f, &cfg).unwrap();
    let factor = 0.5 / 0.7;
    for i in 0..6 {
        let (ri, ci) = (i / 3, i % 3);
        let scope: Vec<usize> = (0..6usize).filter(|&j| (j / 3).abs_diff(ri) <= 1 && (j % 3).abs_diff(ci) <= 1).collect();
        let logits: Vec<f64> = scope
            .iter()
            .map(|&j| factor * t.token(i).iter().zip(t.token(j)).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for c in 0..2 {
            let expect: f64 = scope.iter().zip(&logits).map(|(&j, l)| l.exp() / z * f.get(c, j / 3, j % 3)).sum();
            assert!((out.get(c, ri, ci) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn sweep_covers_the_grid() {
    let rows = overlap_sweep(0.01).unwrap();
    assert_eq!(rows.len(), SWEEP_WIDTHS.len() * SWEEP_ANGLES_DEG.len() * SWEEP_OFFSETS.len());
    for r in &rows {
        assert!(r.abs_error <= 2.0 * r.bin_spacing, "{r:?}");
    }
}
