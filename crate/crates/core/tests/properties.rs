use proptest::prelude::*;

use mvnet::checkpoint;
use mvnet::data::{edge_pad, split_counts, stratified_split, HsiCube, PadMode, PatchSet, Ratios};
use mvnet::params::ParamStore;
use mvnet::rng::Rng;
use mvnet::selfcheck::{duality_error, van_loan_zoh};
use mvnet::ssm::{zoh_discretize, PathRegistry, SsmParams};
use mvnet::training::{compute_metrics, Confusion};
use mvnet::{Error, Tensor};

fn cube_strategy() -> impl Strategy<Value = HsiCube> {
    (1usize..10, 1usize..10, 1usize..5, 1usize..5).prop_flat_map(|(h, w, b, k)| {
        (
            prop::collection::vec(-1e3f32..1e3, h * w * b),
            prop::collection::vec(0u16..=k as u16, h * w),
        )
            .prop_map(move |(data, labels)| {
                let names = (1..=k).map(|i| format!("c{i}")).collect();
                HsiCube::new(h, w, b, data, labels, names).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hsic_round_trip(cube in cube_strategy()) {
        let bytes = cube.to_bytes();
        let names: usize = cube.class_names().iter().map(|n| 4 + n.len()).sum();
        let (h, w, b) = (cube.height(), cube.width(), cube.bands());
        prop_assert_eq!(bytes.len(), 20 + 4 * h * w * b + 2 + 2 * h * w + names);
        let back = HsiCube::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &cube);
        prop_assert!(back.data().iter().zip(cube.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_hsic_is_a_format_error(cube in cube_strategy(), cut in 0.0f64..1.0) {
        let bytes = cube.to_bytes();
        let n = ((bytes.len() as f64) * cut) as usize;
        let is_format_error = matches!(HsiCube::from_bytes(&bytes[..n]), Err(Error::Format { .. }));
        prop_assert!(is_format_error);
    }

    #[test]
    fn padding_grows_every_side(cube in cube_strategy(), m in 0usize..6) {
        for mode in [PadMode::Replicate, PadMode::Zero] {
            let p = edge_pad(&cube, m, mode);
            prop_assert_eq!((p.height(), p.width()), (cube.height() + 2 * m, cube.width() + 2 * m));
            prop_assert_eq!(p.labeled_count(), cube.labeled_count());
            for y in 0..cube.height() {
                for x in 0..cube.width() {
                    prop_assert_eq!(p.pixel(y + m, x + m), cube.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn one_patch_per_labeled_pixel(cube in cube_strategy(), half in 0usize..4) {
        let block = 2 * half + 1;
        let set = PatchSet::from_cube(&cube, block, PadMode::Replicate).unwrap();
        prop_assert_eq!(set.len(), cube.labeled_count());
        for i in 0..set.len() {
            let (y, x) = set.origin(i);
            prop_assert_eq!(set.labels()[i], cube.label(y, x));
            let p = set.patch(i);
            prop_assert_eq!(p.shape(), &[block, block, cube.bands()][..]);
            let c = &p.data()[(half * block + half) * cube.bands()..][..cube.bands()];
            let want: Vec<f64> = cube.pixel(y, x).iter().map(|&v| v as f64).collect();
            prop_assert_eq!(c, &want[..]);
        }
    }

    #[test]
    fn split_counts_cover_and_fill(n in 3usize..500, r in prop::array::uniform3(1u32..20)) {
        let c = split_counts(n, Ratios(r));
        prop_assert_eq!(c.iter().sum::<usize>(), n);
        prop_assert!(c.iter().all(|&v| v >= 1));
    }

    #[test]
    fn stratified_split_partitions(
        sizes in prop::collection::vec(3usize..40, 1..6),
        r in prop::array::uniform3(1u32..10),
        seed in any::<u64>(),
    ) {
        let mut labels: Vec<u16> = sizes.iter().enumerate().flat_map(|(k, &n)| vec![k as u16 + 1; n]).collect();
        Rng::new(seed, 0).shuffle(&mut labels);
        let s = stratified_split(&labels, Ratios(r), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (k, &n) in sizes.iter().enumerate() {
            let class = k as u16 + 1;
            let count = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == class).count();
            prop_assert_eq!([count(&s.train), count(&s.val), count(&s.test)], split_counts(n, Ratios(r)));
        }
        prop_assert_eq!(&stratified_split(&labels, Ratios(r), seed).unwrap(), &s);
    }

    #[test]
    fn scan_equals_kernel(seed in any::<u64>()) {
        prop_assert!(duality_error(&PathRegistry::with_defaults(), 4, seed).unwrap() <= 1e-6);
    }

    #[test]
    fn zoh_matches_block_exponential(
        a in prop::collection::vec(-2.0f64..2.0, 16),
        b in prop::collection::vec(-2.0f64..2.0, 4),
        delta in 0.01f64..0.5,
    ) {
        let d = zoh_discretize(&SsmParams::new(a.clone(), b.clone(), vec![1.0; 4], delta).unwrap()).unwrap();
        let (ao, bo) = van_loan_zoh(&a, &b, delta);
        for (x, y) in d.a_bar.iter().zip(&ao).chain(d.b_bar.iter().zip(&bo)) {
            prop_assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn zoh_is_continuous_at_zero(a in -1e-9f64..1e-9, b in -3.0f64..3.0, delta in 0.01f64..2.0) {
        let d = zoh_discretize(&SsmParams::new(vec![a], vec![b], vec![1.0], delta).unwrap()).unwrap();
        prop_assert!((d.a_bar[0] - 1.0).abs() <= 1e-8);
        prop_assert!((d.b_bar[0] - delta * b).abs() <= 1e-8);
        let exact = if a == 0.0 { delta * b } else { (a * delta).exp_m1() / a * b };
        prop_assert!((d.b_bar[0] - exact).abs() <= 1e-12);
    }

    #[test]
    fn diagonal_confusion_is_perfect(diag in prop::collection::vec(0u64..50, 1..8)) {
        prop_assume!(diag.iter().any(|&v| v > 0));
        let k = diag.len();
        let rows: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| if i == j { diag[i] } else { 0 }).collect()).collect();
        let m = compute_metrics(&Confusion::from_rows(&rows).unwrap()).unwrap();
        prop_assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn off_diagonal_mass_lowers_kappa(diag in prop::collection::vec(1u64..50, 2..6), i in 0usize..6, j in 0usize..6) {
        let k = diag.len();
        let (i, j) = (i % k, j % k);
        prop_assume!(i != j);
        let mut rows: Vec<Vec<u64>> = (0..k).map(|r| (0..k).map(|c| if r == c { diag[r] } else { 0 }).collect()).collect();
        rows[i][j] += 1;
        prop_assert!(compute_metrics(&Confusion::from_rows(&rows).unwrap()).unwrap().kappa < 1.0);
    }

    #[test]
    fn marginal_outer_product_has_zero_kappa(r in prop::collection::vec(1u64..30, 2..6), c0 in prop::collection::vec(1u64..30, 6)) {
        let c = &c0[..r.len()];
        let rows: Vec<Vec<u64>> = r.iter().map(|&ri| c.iter().map(|&cj| ri * cj).collect()).collect();
        prop_assert_eq!(compute_metrics(&Confusion::from_rows(&rows).unwrap()).unwrap().kappa, 0.0);
    }

    #[test]
    fn checkpoint_round_trip(vals in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(&[vals.len()], vals.iter().map(|&v| v as f64).collect()).unwrap());
        s.insert("b", Tensor::scalar(1.5));
        let back = checkpoint::decode(&checkpoint::encode(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }
}

/// Reference values from an independent block-matrix exponential (Padé,
/// scaling and squaring) cross-checked against quadrature of `∫ e^{sA} b ds`.
#[test]
fn zoh_4x4_reference() {
    let a = vec![
        -0.8, 0.3, 0.0, 0.1, 0.2, -1.1, 0.4, 0.0, 0.0, -0.5, -0.3, 0.6, 0.7, 0.0, -0.2, -0.9,
    ];
    let b = vec![1.0, -0.5, 0.25, 2.0];
    let want_a = [
        0.7502808240224726,
        0.0780679473616216,
        0.0051911150641560985,
        0.02747570945398217,
        0.053067606098389855,
        0.6584579346883803,
        0.11393210179338539,
        0.013334681721679172,
        0.017224952919684778,
        -0.14164839634875012,
        0.8770592398822334,
        0.17709454034852404,
        0.18926304260594887,
        0.015309250596631636,
        -0.058520359520853604,
        0.7139477597883896,
    ];
    let want_b = [0.3243776483580065, -0.13123221280959063, 0.17440015970938344, 0.6636783054494767];
    let d = zoh_discretize(&SsmParams::new(a, b, vec![0.0; 4], 0.37).unwrap()).unwrap();
    for (x, y) in d.a_bar.iter().zip(&want_a).chain(d.b_bar.iter().zip(&want_b)) {
        assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
    }
}
