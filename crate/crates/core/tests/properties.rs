use euler_align::analysis::wasserstein1;
use euler_align::convexity::lower_convex_envelope;
use euler_align::dynamics::{SimOptions, Simulator};
use euler_align::initial_data::{Discretization, Flux, QuantileFn};
use euler_align::protocol::{Protocol, ProtocolSpec};
use proptest::prelude::*;

fn kernel() -> impl Strategy<Value = Protocol> {
    prop_oneof![
        (0.1f64..3.0).prop_map(|v| Protocol::constant(v).unwrap()),
        (0.1f64..3.0, 0.0f64..3.0, 0.2f64..4.0).prop_map(|(s, g, l)| {
            Protocol::from_spec(&ProtocolSpec::new("algebraic").param("strength", s).param("gamma", g).param("scale", l)).unwrap()
        }),
        (0.1f64..3.0, 0.2f64..3.0).prop_map(|(s, w)| {
            Protocol::from_spec(&ProtocolSpec::new("gaussian").param("strength", s).param("width", w)).unwrap()
        }),
        (0.2f64..2.0, 0.1f64..0.9, 0.3f64..2.0, 0.0f64..2.0).prop_map(|(c, b, r, g)| {
            Protocol::from_spec(
                &ProtocolSpec::new("weakly-singular").param("c", c).param("beta", b).param("radius", r).param("tail_gamma", g),
            )
            .unwrap()
        }),
    ]
}

fn step_quantile() -> impl Strategy<Value = QuantileFn> {
    prop::collection::vec((0.05f64..1.0, -3.0f64..3.0), 1..12).prop_map(|cells| {
        let total: f64 = cells.iter().map(|c| c.0).sum();
        let mut theta = vec![-0.5];
        let mut xs: Vec<f64> = cells.iter().map(|c| c.1).collect();
        xs.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        for c in &cells[..cells.len() - 1] {
            acc += c.0 / total;
            theta.push(-0.5 + acc);
        }
        theta.push(0.5);
        QuantileFn::step(&theta, &xs)
    })
}

fn flux() -> impl Strategy<Value = Flux> {
    prop::collection::vec((-0.5f64..0.5, -1.0f64..1.0), 0..40).prop_flat_map(|inner| {
        let mut m: Vec<f64> = inner.iter().map(|p| p.0).collect();
        m.extend([-0.5, 0.5]);
        m.sort_by(f64::total_cmp);
        m.dedup();
        let n = m.len();
        (Just(m), prop::collection::vec(-1.0f64..1.0, n)).prop_map(|(m, a)| Flux::linear(m, a))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn primitive_is_odd_and_increasing(p in kernel(), x in 0.0f64..5.0, dx in 1e-3f64..1.0) {
        let a = p.primitive(x);
        prop_assert!((a + p.primitive(-x)).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!(p.primitive(x + dx) >= a);
    }

    #[test]
    fn kernel_is_nonincreasing(p in kernel(), r in 1e-3f64..5.0, dr in 1e-3f64..1.0) {
        prop_assert!(p.phi(r + dr) <= p.phi(r) * (1.0 + 1e-12));
        prop_assert!(p.phi(r) >= 0.0);
    }

    #[test]
    fn primitive_differentiates_to_kernel(p in kernel(), r in 0.05f64..4.0) {
        let h = 1e-5 * r.max(1.0);
        let fd = (p.primitive(r + h) - p.primitive(r - h)) / (2.0 * h);
        // Skip the kink of piecewise kernels.
        prop_assume!((p.phi(r + h) - p.phi(r - h)).abs() < 1e-3 * p.phi(r).max(1e-12));
        prop_assert!((fd - p.phi(r)).abs() <= 1e-5 * (1.0 + p.phi(r)), "{} vs {}", fd, p.phi(r));
    }

    #[test]
    fn envelope_is_convex_minorant(f in flux()) {
        let env = lower_convex_envelope(&f).unwrap();
        for k in 0..f.knots.len() {
            prop_assert!(env.values[k] <= f.values[k] + 1e-15);
        }
        for &k in &env.vertices {
            prop_assert_eq!(env.values[k], f.values[k]);
        }
        for k in 1..f.knots.len() - 1 {
            prop_assert!(env.slope(k) >= env.slope(k - 1) - 1e-9);
        }
        let again = lower_convex_envelope(&env.as_flux()).unwrap();
        for (k, m) in again.knots.iter().enumerate() {
            prop_assert!((again.values[k] - env.eval(*m)).abs() <= 1e-12);
        }
    }

    #[test]
    fn wasserstein_is_a_metric(a in step_quantile(), b in step_quantile(), c in step_quantile()) {
        let ab = wasserstein1(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - wasserstein1(&b, &a)).abs() <= 1e-12);
        prop_assert!(wasserstein1(&a, &a) == 0.0);
        prop_assert!(ab <= wasserstein1(&a, &c) + wasserstein1(&c, &b) + 1e-12);
    }

    #[test]
    fn wasserstein_of_a_shift_is_the_shift(a in step_quantile(), s in -2.0f64..2.0) {
        let shifted = QuantileFn {
            pieces: a.pieces.iter().map(|q| {
                let mut q = *q;
                q.x_lo += s;
                q.x_hi += s;
                q
            }).collect(),
        };
        prop_assert!((wasserstein1(&a, &shifted) - s.abs()).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sticky_dynamics_keep_their_invariants(
        p in kernel(),
        cells in prop::collection::vec((0.1f64..1.0, 0.0f64..2.0, -1.0f64..1.0), 2..12),
    ) {
        let total: f64 = cells.iter().map(|c| c.0).sum();
        let masses: Vec<f64> = cells.iter().map(|c| c.0 / total).collect();
        let mut x: Vec<f64> = cells.iter().map(|c| c.1).collect();
        x.sort_by(f64::total_cmp);
        x.dedup();
        prop_assume!(x.len() == cells.len());
        let v: Vec<f64> = cells.iter().map(|c| c.2).collect();
        let d = Discretization::from_particles(&p, &masses, &x, &v).unwrap();
        let traj = Simulator::new(p, SimOptions::default()).unwrap().run(&d, 3.0, &[1.0, 2.0, 3.0]).unwrap();
        let r = traj.invariants();
        prop_assert!(r.ordered && r.sticky);
        prop_assert!(r.momentum_drift <= 1e-12, "{:?}", r);
        prop_assert!(r.max_principle_excess <= 1e-9, "{:?}", r);
        for e in &traj.events {
            prop_assert!(e.constituents.len() >= 2);
            prop_assert!(euler_align::analysis::barycentric_violation(e, &traj.masses) <= 1e-9);
        }
    }
}
