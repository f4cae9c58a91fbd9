use super::*;
use ndarray::ArrayD;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn step_1d(x: &[f64], original_len: usize, scale: usize) -> (Vec<f64>, Vec<usize>) {
    let mut arr = ArrayD::from_shape_vec(IxDyn(&[x.len()]), x.to_vec()).unwrap();
    let mut w = vec![vec![original_len]];
    haar_forward_1d_step(&mut arr.view_mut(), 0, original_len, scale, &mut w).unwrap();
    (arr.into_raw_vec_and_offset().0, w.remove(0))
}

#[test]
fn forward_step_pair() {
    let (out, w) = step_1d(&[1.0, 3.0], 2, 1);
    assert_eq!(out, vec![2.0, -1.0]);
    assert_eq!(w, vec![1, 2]);
}

#[test]
fn forward_step_constant_has_no_detail() {
    let (out, _) = step_1d(&[2.5; 6], 6, 1);
    assert_eq!(out, vec![2.5, 2.5, 2.5, 0.0, 0.0, 0.0]);
    let (out, _) = step_1d(&[2.5; 5], 5, 1);
    assert_eq!(out, vec![2.5, 2.5, 2.5, 0.0, 0.0]);
}

#[test]
fn forward_steps_with_weighted_border() {
    // scale 1: odd length carries the unpaired sample
    let (first, w1) = step_1d(&[2.0, 4.0, 6.0], 3, 1);
    assert_eq!(first, vec![3.0, 6.0, -1.0]);
    assert_eq!(w1, vec![2, 3]);
    // scale 2: the trailing coefficient covers half a block (delta = 0.5)
    assert_eq!(border_weight(3, 2, 2), Some(0.5));
    let (second, _) = step_1d(&first[..2], 3, 2);
    assert_eq!(second, vec![4.0, -1.0]);
    let p = fwt(&[2.0, 4.0, 6.0], &[3], 0.0).unwrap();
    assert_eq!(p.coeffs, vec![4.0, -1.0, -1.0]);
    assert_eq!(p.axis_scales, vec![vec![1, 2, 3]]);
}

#[test]
fn backward_steps_invert_the_hand_trace() {
    let mut w = vec![vec![1, 2, 3]];
    let mut arr = ArrayD::from_shape_vec(IxDyn(&[2]), vec![4.0, -1.0]).unwrap();
    haar_backward_1d_step(&mut arr.view_mut(), 0, 3, 2, &mut w).unwrap();
    assert_eq!(arr.as_slice().unwrap(), &[3.0, 6.0]);
    let mut arr = ArrayD::from_shape_vec(IxDyn(&[3]), vec![3.0, 6.0, -1.0]).unwrap();
    haar_backward_1d_step(&mut arr.view_mut(), 0, 3, 1, &mut w).unwrap();
    assert_eq!(arr.as_slice().unwrap(), &[2.0, 4.0, 6.0]);
    assert_eq!(w, vec![vec![3]]);
}

#[test]
fn one_step_round_trip() {
    let (coeffs, mut w) = step_1d(&[1.0, 3.0], 2, 1);
    let mut arr = ArrayD::from_shape_vec(IxDyn(&[2]), coeffs).unwrap();
    let mut lists = vec![w.clone()];
    haar_backward_1d_step(&mut arr.view_mut(), 0, 2, 1, &mut lists).unwrap();
    assert_eq!(arr.as_slice().unwrap(), &[1.0, 3.0]);
    w.remove(0);
    assert_eq!(lists[0], w);
}

#[test]
fn step_errors() {
    let mut arr = ArrayD::<f64>::zeros(IxDyn(&[2, 2]));
    let mut w = vec![vec![2], vec![2]];
    assert!(haar_forward_1d_step(&mut arr.view_mut(), 2, 2, 1, &mut w).is_err());
    assert!(haar_backward_1d_step(&mut arr.view_mut(), 5, 2, 1, &mut w).is_err());
    assert!(matches!(
        haar_backward_1d_step(&mut arr.view_mut(), 0, 2, 1, &mut w),
        Err(Error::InconsistentScales(_))
    ));
}

#[test]
fn max_scale_examples() {
    assert_eq!(max_scale(&[28, 28]), 5);
    assert_eq!(max_scale(&[2]), 1);
    assert_eq!(max_scale(&[105, 100, 120]), 7);
    assert_eq!(max_scale(&[25, 25]), 5);
    assert_eq!(max_scale(&[1]), 0);
    assert_eq!(max_scale(&[8, 8]), 3);
}

#[test]
fn three_by_four_layout() {
    let plan = HaarPlan::new(&[3, 4]).unwrap();
    assert_eq!(plan.axis_scales(), &[vec![1, 2, 3], vec![1, 2, 4]]);
    assert_eq!(plan.max_scale(), 2);
    // (0, 0) approximation; block [0..2)x[0..2) minus it holds scale-2 details
    assert_eq!(plan.band_scale(0), None);
    assert_eq!(plan.band_scale(1), Some(2));
    assert_eq!(plan.band_scale(4), Some(2));
    assert_eq!(plan.band_scale(5), Some(2));
    assert_eq!(plan.band_scale(2), Some(1));
    assert_eq!(plan.band_scale(11), Some(1));
}

#[test]
fn constant_block_energy() {
    let c = 1.7;
    let p = fwt(&[c; 16], &[4, 4], 1.0).unwrap();
    assert!((p.coeffs[0] - 4.0 * c).abs() < 1e-12);
    assert!(p.coeffs[1..].iter().all(|v| v.abs() < 1e-12));
    let m = TransformMatrices::build(&[4, 4]).unwrap();
    let x = nalgebra::DVector::from_element(16, c);
    let oracle = m.normalized_fwt() * x;
    for (a, b) in oracle.iter().zip(&p.coeffs) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn two_point_matrices() {
    let m = TransformMatrices::build(&[2]).unwrap();
    assert_eq!(m.m_fwt[(0, 0)], 0.5);
    assert_eq!(m.m_fwt[(0, 1)], 0.5);
    assert_eq!(m.m_fwt[(1, 0)], 0.5);
    assert_eq!(m.m_fwt[(1, 1)], -0.5);
    for r in &m.r {
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }
}

const ORACLE_SHAPES: &[&[usize]] = &[
    &[2],
    &[3],
    &[5],
    &[7, 5],
    &[3, 4],
    &[8, 8],
    &[6, 1],
    &[3, 4, 5],
    &[13, 12],
    &[9, 2, 3],
];

#[test]
fn fast_renormalization_matches_matrix_row_norms() {
    for shape in ORACLE_SHAPES {
        let plan = HaarPlan::new(shape).unwrap();
        let m = TransformMatrices::build(shape).unwrap();
        for (a, b) in plan.renormalization().iter().zip(&m.r) {
            assert!((a - b).abs() < 1e-12 * b, "{shape:?}: {a} vs {b}");
        }
    }
}

#[test]
fn matrices_are_inverse_and_orthonormal() {
    for shape in ORACLE_SHAPES {
        let m = TransformMatrices::build(shape).unwrap();
        let n = m.r.len();
        let id = &m.m_fwt * &m.m_iwt;
        assert!((id - DMatrixExt::identity(n)).amax() < 1e-10, "{shape:?}");
        let f = m.normalized_fwt();
        let i = m.normalized_iwt();
        assert!((i.transpose() - &f).amax() < 1e-10, "{shape:?}");
    }
}

#[test]
fn fwt_matches_matrix_product() {
    for (k, shape) in ORACLE_SHAPES.iter().enumerate() {
        let m = TransformMatrices::build(shape).unwrap();
        let x = random_vec(m.r.len(), k as u64);
        let p = fwt(&x, shape, 1.0).unwrap();
        let oracle = m.normalized_fwt() * nalgebra::DVector::from_vec(x);
        for (a, b) in oracle.iter().zip(&p.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn matrix_cap_enforced() {
    assert!(TransformMatrices::build(&[65, 64]).is_err());
}

struct DMatrixExt;
impl DMatrixExt {
    fn identity(n: usize) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::identity(n, n)
    }
}

#[test]
fn zero_pyramid_inverts_to_zero() {
    let plan = HaarPlan::new(&[7, 5]).unwrap();
    let p = plan.forward(&[0.0; 35], 1.0).unwrap();
    assert!(iwt(&p).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn coarsest_approximation_reconstructs_a_constant() {
    for shape in [&[7usize, 5][..], &[8, 8], &[3, 4, 5]] {
        let plan = HaarPlan::new(shape).unwrap();
        let mut coeffs = vec![0.0; plan.len()];
        coeffs[0] = 1.0;
        let p = WaveletPyramid {
            coeffs,
            axis_scales: plan.axis_scales().to_vec(),
            rho: 0.0,
            source_shape: shape.to_vec(),
        };
        let x = iwt(&p).unwrap();
        assert!(x.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }
}

// Block-fill oracle: keeping only scales >= S leaves a field that is constant
// on aligned blocks of side 2^(S-1).
#[test]
fn masked_pyramids_are_blockwise_constant() {
    for (seed, shape) in [&[25usize, 25][..], &[7, 5], &[12, 9, 5], &[16, 16]].iter().enumerate() {
        let plan = HaarPlan::new(shape).unwrap();
        for scale in 1..=plan.max_scale() {
            let x = random_vec(plan.len(), seed as u64 * 31 + scale as u64);
            let mut p = plan.forward(&x, 1.0).unwrap();
            plan.zero_below_scale_in_place(&mut p.coeffs, scale).unwrap();
            let y = plan.inverse(&p).unwrap();
            let side = 1usize << (scale - 1);
            let mut block_value = std::collections::HashMap::new();
            for (flat, idx) in crate::grid_image::GridIndices::new(shape).enumerate() {
                let key: Vec<usize> = idx.iter().map(|i| i / side).collect();
                let v = *block_value.entry(key).or_insert(y[flat]);
                assert!((v - y[flat]).abs() < 1e-10, "{shape:?} scale {scale}");
            }
        }
    }
}

#[test]
fn zero_below_scale_examples() {
    let x = random_vec(64, 3);
    let p = fwt(&x, &[8, 8], 1.0).unwrap();
    assert_eq!(zero_below_scale(&p, 1).unwrap(), p);
    let top = zero_below_scale(&p, 3).unwrap();
    let survivors: Vec<usize> = (0..64).filter(|&i| top.coeffs[i] != 0.0).collect();
    assert_eq!(survivors, vec![0, 1, 8, 9]);
    assert_eq!(zero_below_scale(&top, 3).unwrap(), top);
    assert!(matches!(
        zero_below_scale(&p, 0),
        Err(Error::ScaleOutOfRange { scale: 0, max: 3 })
    ));
    assert!(zero_below_scale(&p, 4).is_err());
}

#[test]
fn zero_below_scale_keeps_coarse_details() {
    let plan = HaarPlan::new(&[8, 8]).unwrap();
    let x = random_vec(64, 9);
    let p = plan.forward(&x, 1.0).unwrap();
    let q = zero_below_scale(&p, 2).unwrap();
    for i in 0..64 {
        match plan.band_scale(i) {
            Some(1) => assert_eq!(q.coeffs[i], 0.0),
            _ => assert_eq!(q.coeffs[i], p.coeffs[i]),
        }
    }
}

#[test]
fn iwt_rejects_inconsistent_scales() {
    let mut p = fwt(&random_vec(12, 1), &[3, 4], 1.0).unwrap();
    p.axis_scales[1] = vec![1, 3, 4];
    assert!(matches!(iwt(&p), Err(Error::InconsistentScales(_))));
}

#[test]
fn sidecar_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = fwt(&random_vec(60, 4), &[3, 4, 5], 1.0).unwrap();
    let (c, s) = (dir.path().join("p.rawf"), dir.path().join("p.scales"));
    save_pyramid(&p, &c, &s).unwrap();
    let text = std::fs::read_to_string(&s).unwrap();
    assert_eq!(text, "rho 1\n1 1 2 3\n1 1 2 4\n1 2 3 5\n");
    assert_eq!(load_pyramid(&c, &s).unwrap(), p);
}

#[test]
fn transform_is_subquadratic() {
    fn time(side: usize) -> f64 {
        let plan = HaarPlan::new(&[side, side]).unwrap();
        let x = random_vec(side * side, 5);
        let mut out = vec![0.0; x.len()];
        (0..5)
            .map(|_| {
                let t = std::time::Instant::now();
                plan.forward_into(&x, 1.0, &mut out).unwrap();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    }
    let small = time(128);
    let large = time(512);
    // 16x more entries: quadratic work would be 256x
    assert!(large / small < 64.0, "ratio {}", large / small);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_any_shape(shape in proptest::collection::vec(1usize..12, 1..4), seed in any::<u64>(), rho in prop_oneof![Just(0.0), Just(1.0)]) {
        let n: usize = shape.iter().product();
        let x = random_vec(n, seed);
        let p = fwt(&x, &shape, rho).unwrap();
        let y = iwt(&p).unwrap();
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn energy_preserved(shape in proptest::collection::vec(1usize..12, 1..4), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let x = random_vec(n, seed);
        let p = fwt(&x, &shape, 1.0).unwrap();
        let ex: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ep: f64 = p.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((ex - ep).abs() <= 1e-10 * ex);
    }

    #[test]
    fn linear(shape in proptest::collection::vec(1usize..9, 2..4), seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n: usize = shape.iter().product();
        let x = random_vec(n, seed);
        let y = random_vec(n, seed ^ 0xabcdef);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let plan = HaarPlan::new(&shape).unwrap();
        let fx = plan.forward(&x, 1.0).unwrap().coeffs;
        let fy = plan.forward(&y, 1.0).unwrap().coeffs;
        let fc = plan.forward(&combo, 1.0).unwrap().coeffs;
        for i in 0..n {
            prop_assert!((fc[i] - (a * fx[i] + b * fy[i])).abs() < 1e-12);
        }
    }
}
