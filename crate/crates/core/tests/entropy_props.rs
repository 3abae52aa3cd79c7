mod common;

use common::{counts_entropy, oracle_hr, pair_counts, random_map};
use entrocam::{
    aura_matrix_entropy, bivariate_entropy, entropy, joint_histogram, merge_outcomes, relative_entropy,
    spatial_disorder_entropy, univariate_entropy, Distribution, GrayMap, Offset, SdeCap, SplitMix64,
};
use proptest::prelude::*;

fn map_strategy(max_side: usize, levels: u8) -> impl Strategy<Value = GrayMap> {
    (2..=max_side, 2..=max_side).prop_flat_map(move |(h, w)| {
        prop::collection::vec(0..levels, h * w).prop_map(move |px| GrayMap::new(w, h, px).unwrap())
    })
}

fn offset_in(map: &GrayMap, a: usize, b: usize) -> Offset {
    let (h, w) = (map.height() as isize, map.width() as isize);
    Offset::new(a as isize % (2 * h - 1) - (h - 1), b as isize % (2 * w - 1) - (w - 1))
}

fn permutation(seed: u64) -> Vec<u8> {
    let mut table: Vec<u8> = (0..=255).collect();
    SplitMix64::new(seed).shuffle(&mut table);
    table
}

proptest! {
    #[test]
    fn merging_never_raises_entropy(
        counts in prop::collection::vec(0u64..100, 2..20),
        i in any::<prop::sample::Index>(),
        j in any::<prop::sample::Index>(),
    ) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let p = Distribution::from_counts(&counts).unwrap();
        let (i, j) = (i.index(counts.len()), j.index(counts.len()));
        prop_assume!(i != j);
        let merged = merge_outcomes(&p, i, j).unwrap();
        prop_assert_eq!(merged.len(), p.len() - 1);
        prop_assert!(entropy(&merged) <= entropy(&p) + 1e-12);
    }

    #[test]
    fn joint_entropy_between_marginals_and_their_sum(map in map_strategy(12, 6), a in 0usize..64, b in 0usize..64) {
        let hist = joint_histogram(&map, offset_in(&map, a, b)).unwrap();
        let joint = bivariate_entropy(&hist).unwrap();
        let hx = entropy(&hist.row_marginal().unwrap());
        let hy = entropy(&hist.col_marginal().unwrap());
        prop_assert!(joint <= hx + hy + 1e-12);
        prop_assert!(joint >= hx.max(hy) - 1e-12);
        prop_assert_eq!(bivariate_entropy(&hist.transpose()).unwrap(), joint);
    }

    #[test]
    fn reversed_offset_gives_identical_value(map in map_strategy(10, 5), a in 0usize..64, b in 0usize..64) {
        let o = offset_in(&map, a, b);
        let fwd = relative_entropy(&map, o).unwrap();
        prop_assert_eq!(fwd.to_bits(), relative_entropy(&map, o.reversed()).unwrap().to_bits());
        let t = map.transpose();
        prop_assert_eq!(fwd.to_bits(), relative_entropy(&t, Offset::new(o.l, o.k)).unwrap().to_bits());
    }

    #[test]
    fn transpose_keeps_ame_and_sde(map in map_strategy(10, 5)) {
        let t = map.transpose();
        prop_assert_eq!(aura_matrix_entropy(&map).unwrap().to_bits(), aura_matrix_entropy(&t).unwrap().to_bits());
        let cap = SdeCap::default();
        prop_assert_eq!(
            spatial_disorder_entropy(&map, cap).unwrap().to_bits(),
            spatial_disorder_entropy(&t, cap).unwrap().to_bits()
        );
    }

    #[test]
    fn relabelling_levels_changes_nothing(map in map_strategy(10, 8), seed in any::<u64>(), a in 0usize..64, b in 0usize..64) {
        let table = permutation(seed);
        let relabelled = map.relabel(|g| table[g as usize]);
        let o = offset_in(&map, a, b);
        prop_assert_eq!(univariate_entropy(&map), univariate_entropy(&relabelled));
        prop_assert_eq!(
            bivariate_entropy(&joint_histogram(&map, o).unwrap()).unwrap(),
            bivariate_entropy(&joint_histogram(&relabelled, o).unwrap()).unwrap()
        );
        prop_assert_eq!(relative_entropy(&map, o).unwrap(), relative_entropy(&relabelled, o).unwrap());
        prop_assert_eq!(aura_matrix_entropy(&map).unwrap(), aura_matrix_entropy(&relabelled).unwrap());
        let cap = SdeCap::default();
        prop_assert_eq!(
            spatial_disorder_entropy(&map, cap).unwrap(),
            spatial_disorder_entropy(&relabelled, cap).unwrap()
        );
    }

    #[test]
    fn histogram_matches_pair_oracle(map in map_strategy(6, 4), a in 0usize..64, b in 0usize..64) {
        let o = offset_in(&map, a, b);
        let hist = joint_histogram(&map, o).unwrap();
        let oracle = pair_counts(&map, o.k, o.l);
        prop_assert_eq!(hist.total(), oracle.values().sum::<u64>());
        for (&(g, g2), &c) in &oracle {
            prop_assert_eq!(hist.count(g, g2), c);
        }
        prop_assert_eq!(
            bivariate_entropy(&hist).unwrap(),
            counts_entropy(oracle.values().copied())
        );
    }
}

#[test]
fn relative_entropy_stays_near_unit_interval_on_large_maps() {
    let mut rng = SplitMix64::new(9);
    for case in 0..40 {
        let side = 32 + rng.below(17);
        let levels: Vec<u8> = (0..2 + rng.below(7)).map(|i| (i * 30) as u8).collect();
        let map = random_map(&mut rng, side, side, &levels);
        for _ in 0..5 {
            let o = Offset::new(rng.below(7) as isize - 3, rng.below(7) as isize - 3);
            let hr = relative_entropy(&map, o).unwrap();
            assert!((-0.05..=1.05).contains(&hr), "case {case} offset {o:?}: H_R {hr}");
        }
    }
}

#[test]
fn sde_of_two_by_two_is_weighted_mean_of_nine_offsets() {
    let mut rng = SplitMix64::new(12);
    for _ in 0..50 {
        let map = random_map(&mut rng, 2, 2, &[0, 1, 2, 3]);
        let mut num = 0.0;
        let mut den = 0.0;
        for a in -1isize..=1 {
            for b in -1isize..=1 {
                let w = ((2 - a.abs()) * (2 - b.abs())) as f64;
                let hr = if (a, b) == (0, 0) { 0.0 } else { oracle_hr(&map, a, b) };
                num += w * hr;
                den += w;
            }
        }
        let sde = spatial_disorder_entropy(&map, SdeCap::default()).unwrap();
        assert!((sde - num / den).abs() < 1e-12, "{sde} vs {}", num / den);
    }
}

#[test]
fn independent_maps_have_high_sde() {
    let mut rng = SplitMix64::new(33);
    let map = random_map(&mut rng, 32, 32, &[0, 85, 170, 255]);
    let sde = spatial_disorder_entropy(&map, SdeCap::default()).unwrap();
    assert!(sde >= 0.85, "{sde}");
    let too_big = GrayMap::filled(65, 8, 0).unwrap();
    assert!(spatial_disorder_entropy(&too_big, SdeCap::default()).is_err());
}
