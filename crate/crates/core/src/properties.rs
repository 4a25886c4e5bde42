//! Cross-module property suites. Every case runs without a model solve.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ddsg_eval::{NaiveDdsg, VectorizedDdsg};
use crate::evaluator::{scalar_fn, Evaluator, FnEvaluator};
use crate::hdmr::{
    combination_coefficients, decompose, exact_cut_evaluate, truncated_family, AnchorPoint, ComponentIndex,
    DecomposeOptions,
};
use crate::irbc::fischer_burmeister;
use crate::runtime::Runtime;
use crate::sparse_grid::{build, BoundaryMode, GridOptions, InterpScratch};

fn mode() -> impl Strategy<Value = BoundaryMode> {
    prop_oneof![Just(BoundaryMode::ZeroBoundary), Just(BoundaryMode::ModifiedLinear)]
}

/// Random smooth test function built from a seed.
fn random_fn(d: usize, seed: u64) -> FnEvaluator<impl Fn(&[f64], &mut [f64]) + Sync> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c: f64 = rng.gen_range(-1.0..1.0);
    FnEvaluator::new(d, 2, move |x: &[f64], out: &mut [f64]| {
        let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        out[0] = (s + c).sin() + x[0] * x[d - 1];
        out[1] = (0.5 * s).exp();
    })
}

/// Downward-closed family grown from random generators.
fn random_family(d: usize, k_max: usize, seed: u64) -> BTreeSet<ComponentIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<ComponentIndex> = truncated_family(d, k_max).into_iter().collect();
    let mut family = BTreeSet::new();
    for u in &all {
        if rng.gen_bool(0.4) {
            family.extend(u.subsets());
        }
    }
    family.insert(ComponentIndex::empty());
    family
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hierarchization_round_trip(d in 1usize..=3, lvl in 1u32..=4, seed in any::<u64>(), m in mode(),
                                  eps in prop_oneof![Just(0.0), Just(1e-3)]) {
        let f = random_fn(d, seed);
        let g = build(&f, &GridOptions { max_level: lvl, threshold: eps, boundary: m }, &Runtime::sequential()).unwrap();
        let mut out = vec![0.0; 2];
        let mut sc = InterpScratch::default();
        for id in 0..g.len() {
            let x = g.key(id).point();
            g.interpolate_into(&x, &mut out, &mut sc).unwrap();
            let mut want = vec![0.0; 2];
            f.evaluate(&x, &mut want).unwrap();
            for o in 0..2 {
                prop_assert!((out[o] - want[o]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn quadrature_is_linear(d in 1usize..=3, lvl in 1u32..=4, s1 in any::<u64>(), s2 in any::<u64>(),
                            a in -3.0f64..3.0, b in -3.0f64..3.0, m in mode()) {
        let (f, h) = (random_fn(d, s1), random_fn(d, s2));
        let combo = FnEvaluator::new(d, 2, |x: &[f64], out: &mut [f64]| {
            let (mut u, mut v) = ([0.0; 2], [0.0; 2]);
            f.evaluate(x, &mut u).unwrap();
            h.evaluate(x, &mut v).unwrap();
            for o in 0..2 {
                out[o] = a * u[o] + b * v[o];
            }
        });
        let opts = GridOptions::regular(lvl, m);
        let rt = Runtime::sequential();
        let (qf, qh, qc) = (
            build(&f, &opts, &rt).unwrap().quadrature(),
            build(&h, &opts, &rt).unwrap().quadrature(),
            build(&combo, &opts, &rt).unwrap().quadrature(),
        );
        for o in 0..2 {
            let want = a * qf[o] + b * qh[o];
            prop_assert!((qc[o] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn refinement_is_monotone(d in 1usize..=2, seed in any::<u64>(), e1 in 1e-4f64..1e-2, factor in 1.5f64..20.0) {
        let f = random_fn(d, seed);
        let rt = Runtime::sequential();
        let fine = build(&f, &GridOptions::adaptive(6, e1, BoundaryMode::ModifiedLinear), &rt).unwrap();
        let coarse = build(&f, &GridOptions::adaptive(6, e1 * factor, BoundaryMode::ModifiedLinear), &rt).unwrap();
        for n in coarse.nodes() {
            prop_assert!(fine.contains(&n.key));
        }
    }

    #[test]
    fn fb_zero_iff_complementary(ia in -8i32..=8, ib in -8i32..=8) {
        let (a, b) = (ia as f64 / 4.0, ib as f64 / 4.0);
        let zero = fischer_burmeister(a, b) == 0.0;
        prop_assert_eq!(zero, a >= 0.0 && b >= 0.0 && a * b == 0.0);
    }

    #[test]
    fn coefficient_lattice_oracle(d in 1usize..=5, k in 1usize..=3, seed in any::<u64>()) {
        let k = k.min(d);
        let family = random_family(d, k, seed);
        let b = combination_coefficients(&family).unwrap();
        // expand the nested telescoping sum subset by subset
        let mut oracle: BTreeMap<ComponentIndex, i64> = family.iter().map(|u| (u.clone(), 0)).collect();
        for u in &family {
            for v in u.subsets() {
                let sign = if (u.order() - v.order()) % 2 == 0 { 1 } else { -1 };
                *oracle.get_mut(&v).unwrap() += sign;
            }
        }
        prop_assert_eq!(&b, &oracle);
        // the same identity on random slot values
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let vals: BTreeMap<&ComponentIndex, f64> = family.iter().map(|u| (u, rng.gen_range(-1.0..1.0))).collect();
        let nested: f64 = family.iter().flat_map(|u| u.subsets().map(move |v| (u.order() - v.order(), v)))
            .map(|(gap, v)| if gap % 2 == 0 { vals[&v] } else { -vals[&v] }).sum();
        let flat: f64 = b.iter().map(|(u, &c)| c as f64 * vals[u]).sum();
        prop_assert!((nested - flat).abs() < 1e-12);
    }

    #[test]
    fn separable_anchor_invariance(d in 2usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f = scalar_fn(d, move |x| x.iter().zip(&w).enumerate()
            .map(|(j, (v, c))| c * (v * (j as f64 + 1.0)).sin() + v * v).sum());
        let a1 = AnchorPoint::at(&f, (0..d).map(|_| rng.gen()).collect()).unwrap();
        let a2 = AnchorPoint::at(&f, (0..d).map(|_| rng.gen()).collect()).unwrap();
        let coeffs = combination_coefficients(&truncated_family(d, 1)).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let y1 = exact_cut_evaluate(&f, &a1, &coeffs, &x).unwrap()[0];
            let y2 = exact_cut_evaluate(&f, &a2, &coeffs, &x).unwrap()[0];
            prop_assert!((y1 - y2).abs() <= 1e-10);
        }
    }

    #[test]
    fn truncation_is_exact_for_low_order_terms(d in 3usize..=6, k0 in 1usize..=3, seed in any::<u64>()) {
        let k0 = k0.min(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms: Vec<(Vec<usize>, f64)> = (0..4)
            .map(|_| {
                let mut dims: Vec<usize> = (0..d).collect();
                for i in 0..k0 {
                    let j = rng.gen_range(i..d);
                    dims.swap(i, j);
                }
                dims.truncate(k0);
                (dims, rng.gen_range(0.5..2.0))
            })
            .collect();
        let f = scalar_fn(d, move |x| terms.iter()
            .map(|(dims, c)| (c * dims.iter().map(|&j| x[j]).sum::<f64>()).cos() * dims.iter().map(|&j| x[j] + 1.0).product::<f64>())
            .sum());
        let anchor = AnchorPoint::at(&f, (0..d).map(|_| rng.gen()).collect()).unwrap();
        let coeffs = combination_coefficients(&truncated_family(d, k0)).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let mut want = [0.0];
            f.evaluate(&x, &mut want).unwrap();
            let got = exact_cut_evaluate(&f, &anchor, &coeffs, &x).unwrap()[0];
            prop_assert!((got - want[0]).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn full_order_decomposition_is_plain_sparse_grid(d in 1usize..=3, lvl in 1u32..=4, seed in any::<u64>(), m in mode()) {
        let f = random_fn(d, seed);
        let rt = Runtime::sequential();
        let grid = GridOptions::regular(lvl, m);
        let anchor = AnchorPoint::at(&f, vec![0.37; d]).unwrap();
        let mut opts = DecomposeOptions::new(d, 0.0, grid);
        opts.eps_rho = 0.0;
        let ddsg = decompose(&f, anchor, &opts, &rt).unwrap();
        let full = ComponentIndex::new((0..d).collect()).unwrap();
        for (u, &b) in ddsg.coefficients() {
            prop_assert_eq!(b, i64::from(*u == full));
        }
        let v = VectorizedDdsg::compile(&ddsg).unwrap();
        let sg = build(&f, &grid, &rt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let (a, b) = (v.evaluate(&x).unwrap(), sg.interpolate(&x).unwrap());
            for o in 0..2 {
                prop_assert!((a[o] - b[o]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pruning_soundness_and_vectorized_equivalence(d in 3usize..=5, seed in any::<u64>(), eps in 1e-6f64..1e-2) {
        let f = random_fn(d, seed);
        let rt = Runtime::sequential();
        let anchor = AnchorPoint::at(&f, vec![0.41; d]).unwrap();
        let mut opts = DecomposeOptions::new(3, eps, GridOptions::regular(3, BoundaryMode::ModifiedLinear));
        opts.eps_rho = 0.0;
        let ddsg = decompose(&f, anchor, &opts, &rt).unwrap();
        let accepted = ddsg.accepted_set();
        for u in &accepted {
            prop_assert!(ddsg.rejected().iter().all(|z| !u.is_superset_of(z)));
            prop_assert!(!ddsg.rejected().contains(u));
            for s in u.facets() {
                prop_assert!(accepted.contains(&s));
            }
        }
        let v = VectorizedDdsg::compile(&ddsg).unwrap();
        let naive = NaiveDdsg::new(&ddsg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let a = v.evaluate(&x).unwrap();
            let mut b = vec![0.0; 2];
            naive.evaluate(&x, &mut b).unwrap();
            for o in 0..2 {
                prop_assert!((a[o] - b[o]).abs() <= 1e-12);
            }
        }
        let qv = v.quadrature();
        let qd = ddsg.quadrature();
        for o in 0..2 {
            prop_assert!((qv[o] - qd[o]).abs() <= 1e-12 * (1.0 + qd[o].abs()));
        }
    }
}

#[test]
fn interpolant_ignores_inactive_dimension() {
    // zero-boundary hats cannot carry a nonzero value to the x₂ edges, so only the modified basis applies
    let f = scalar_fn(2, |x| x[0] * (1.0 - x[0]));
    let g = build(&f, &GridOptions::regular(5, BoundaryMode::ModifiedLinear), &Runtime::sequential()).unwrap();
    for i in 0..=20 {
        let x0 = i as f64 / 20.0;
        let base = g.interpolate(&[x0, 0.5]).unwrap()[0];
        for j in 0..=20 {
            let v = g.interpolate(&[x0, j as f64 / 20.0]).unwrap()[0];
            assert!((v - base).abs() <= 1e-12);
        }
    }
}

#[test]
fn product_bubble_quadrature() {
    let f = scalar_fn(2, |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
    for m in [BoundaryMode::ZeroBoundary, BoundaryMode::ModifiedLinear] {
        let g = build(&f, &GridOptions::regular(6, m), &Runtime::sequential()).unwrap();
        assert!((g.quadrature()[0] - 1.0 / 36.0).abs() <= 2e-3);
    }
}

#[test]
fn eta_matches_monte_carlo_oracle() {
    let f = scalar_fn(3, |x| (x[0] * x[1]).exp() + x[2]);
    let xb = [0.5; 3];
    let cut = |v: &[(usize, f64)]| {
        let mut y = xb;
        for &(j, t) in v {
            y[j] = t;
        }
        (y[0] * y[1]).exp() + y[2]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples = 1_000_000;
    let (mut q12, mut q1, mut q2, mut q3) = (0.0, 0.0, 0.0, 0.0);
    let f0 = cut(&[]);
    for _ in 0..samples {
        let (s, t, r): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        q12 += cut(&[(0, s), (1, t)]) - cut(&[(0, s)]) - cut(&[(1, t)]) + f0;
        q1 += cut(&[(0, s)]) - f0;
        q2 += cut(&[(1, t)]) - f0;
        q3 += cut(&[(2, r)]) - f0;
    }
    let n = samples as f64;
    let oracle = (q12 / n).abs() / (f0 + (q1 + q2 + q3) / n).abs();

    let anchor = AnchorPoint::at(&f, xb.to_vec()).unwrap();
    let mut opts = DecomposeOptions::new(2, 0.0, GridOptions::regular(7, BoundaryMode::ModifiedLinear));
    opts.eps_rho = 0.0;
    let ddsg = decompose(&f, anchor, &opts, &Runtime::sequential()).unwrap();
    let u = ComponentIndex::new(vec![0, 1]).unwrap();
    let got = ddsg.orders()[1].eta.iter().find(|e| e.0 == u).unwrap().1;
    assert!(((got - oracle) / oracle).abs() <= 0.01, "eta {got} vs oracle {oracle}");
}

#[test]
fn separable_sum_beats_plain_sparse_grid() {
    let f = scalar_fn(3, |x| x[0] + x[1] + x[2]);
    let rt = Runtime::sequential();
    let grid = GridOptions::regular(3, BoundaryMode::ModifiedLinear);
    let anchor = AnchorPoint::at(&f, vec![0.2, 0.3, 0.4]).unwrap();
    let mut opts = DecomposeOptions::new(3, 0.0, grid);
    opts.eps_rho = 1e-4;
    let ddsg = decompose(&f, anchor, &opts, &rt).unwrap();
    assert_eq!(ddsg.max_order(), 2);
    let v = VectorizedDdsg::compile(&ddsg).unwrap();
    let sg = build(&f, &grid, &rt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut e_ddsg, mut e_sg) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
        let want = x.iter().sum::<f64>();
        e_ddsg = e_ddsg.max((v.evaluate(&x).unwrap()[0] - want).abs());
        e_sg = e_sg.max((sg.interpolate(&x).unwrap()[0] - want).abs());
    }
    assert!(e_ddsg <= e_sg + 1e-14, "{e_ddsg} vs {e_sg}");
}
