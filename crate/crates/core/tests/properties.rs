use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_flow::circle::{boundary_sf, build_boundary_dirac, CircleGrid, GaugeMap};
use spectral_flow::flow::{spectral_flow, FlowOptions, OperatorPath};
use spectral_flow::halfcyl::{half_trace_integral, CutoffPair, ImageHeatKernel, ImageSign};
use spectral_flow::linalg::{CMatrix, SelfAdjointOp, UnitaryOp};

fn hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let z = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    &z + z.adjoint()
}

fn affine(seed: u64, n: usize) -> OperatorPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = CMatrix::identity(n, n) * Complex64::from(1.5);
    let a = hermitian(n, &mut rng) - &shift;
    let b = hermitian(n, &mut rng) + &shift - &a;
    OperatorPath::new(n, None, move |t| SelfAdjointOp::new(&a + &b * Complex64::from(t)))
}

fn unitary(seed: u64, n: usize) -> UnitaryOp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let z = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random(), rng.random()));
    UnitaryOp::with_tolerance(z.qr().q(), 1e-10).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn additive_under_subdivision(seed in 0u64..10_000, s in 0.05f64..0.95) {
        let p = affine(seed, 5);
        let opts = FlowOptions::default();
        let whole = spectral_flow(&p, &opts).unwrap().value;
        let left = spectral_flow(&p.sub_path(0.0, s), &opts).unwrap().value;
        let right = spectral_flow(&p.sub_path(s, 1.0), &opts).unwrap().value;
        prop_assert_eq!(whole, left + right);
        prop_assert_eq!(spectral_flow(&p.reversed(), &opts).unwrap().value, -whole);
    }

    #[test]
    fn invariant_under_unitary_conjugation(seed in 0u64..10_000) {
        let p = affine(seed, 5);
        let opts = FlowOptions::default();
        let w = unitary(seed, 5);
        prop_assert_eq!(
            spectral_flow(&p, &opts).unwrap().value,
            spectral_flow(&p.conjugated(&w).unwrap(), &opts).unwrap().value
        );
    }

    #[test]
    fn constant_path_has_no_flow(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = OperatorPath::constant(SelfAdjointOp::new(hermitian(4, &mut rng)).unwrap());
        prop_assert_eq!(spectral_flow(&p, &FlowOptions::default()).unwrap().value, 0);
    }

    #[test]
    fn circle_flow_is_total_winding(k1 in -3i64..=3, k2 in -3i64..=3, two in any::<bool>()) {
        let grid = CircleGrid::new(33).unwrap();
        let ks = if two { vec![k1, k2] } else { vec![k1] };
        let d = build_boundary_dirac(grid, ks.len());
        let g = GaugeMap::diagonal_windings(grid, &ks);
        let sf = boundary_sf(&d, &g, &FlowOptions::default()).unwrap();
        prop_assert_eq!(sf.value, ks.iter().sum::<i64>());
    }

    #[test]
    fn half_trace_deviation_is_exponentially_small(eps in 0.004f64..0.025) {
        let c = CutoffPair::default();
        let v = half_trace_integral(eps, &c).unwrap();
        prop_assert!((v - 0.5).abs() <= (-c.a * c.a / (2.0 * eps)).exp());
    }

    #[test]
    fn cutoffs_nest_pointwise(x in 0.0f64..10.0, a in 0.1f64..2.0, w in 0.5f64..8.0) {
        let c = CutoffPair::new(a, a + w).unwrap();
        let (l, m) = (c.lambda(x), c.mu(x));
        prop_assert!((l * m - m).abs() <= 1e-14);
        prop_assert!((0.0..=1.0).contains(&l) && (0.0..=1.0).contains(&m));
    }

    #[test]
    fn image_kernels_are_symmetric(x in 0.0f64..2.0, y in 0.0f64..2.0, eps in 0.01f64..1.0) {
        for sign in [ImageSign::Plus, ImageSign::Minus] {
            let k = ImageHeatKernel::new(eps, sign).unwrap();
            prop_assert!((k.eval(x, y) - k.eval(y, x)).abs() <= 1e-15 * k.eval(x, x).abs().max(1.0));
        }
    }
}
