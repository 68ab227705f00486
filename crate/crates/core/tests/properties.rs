mod common;

use common::*;
use multipole_core::chart::{cylindrical_pair, linear_pair, lorentz_boost, registry_get, spherical_pair, Chart};
use multipole_core::expr::Expr;
use multipole_core::fields::{potential_at, StaticSource, Units};
use multipole_core::multipole::{
    component_rank, embed_dipole_as_quadrupole, extract_dipole, make_electric_dipole, make_electric_quadrupole,
    make_static_dipole, make_toroidal_quadrupole, Bundle, ComponentKind, Components, DipoleComponents, Monopole,
    QuadrupoleComponents,
};
use multipole_core::pairing::{
    charge_survey, pair_bundle, random_forms_along, rng, test_electric_order, test_order, ProbeOptions,
};
use multipole_core::quadrature::QuadOptions;
use multipole_core::tensor::{antisymmetry_defect, mat_mul, ComponentArray, Mat4};
use multipole_core::transform::{transform_dipole, transform_quadrupole, TransformOptions};
use multipole_core::worldline::{Reparametrization, Worldline};
use proptest::prelude::*;
use rand::Rng;

fn quick(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(quick(64))]

    #[test]
    fn jets_agree_with_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ex = random_expr(&mut r, 4);
        let x = random_point(&mut r);
        let j = ex.jet(&x).unwrap();
        let (g, h) = finite_differences(|y| ex.eval(y).unwrap(), &x, 1e-4);
        let hj = j.hessian();
        let scale = j.grad.iter().chain(hj.iter().flatten()).fold(j.value.abs(), |m, v| m.max(v.abs())).max(1e-300);
        for a in 0..4 {
            prop_assert!((g[a] - j.grad[a]).abs() <= 1e-6 * scale);
            for b in 0..4 {
                prop_assert!((h[a][b] - hj[a][b]).abs() <= 1e-6 * scale);
                prop_assert_eq!(hj[a][b], hj[b][a]);
            }
        }
        let v = ex.eval(&x).unwrap();
        prop_assert!((j.value - v).abs() <= 1e-14 * v.abs().max(1.0));
    }

    #[test]
    fn products_of_linear_forms_are_exact(
        a in prop::array::uniform4(-3.0f64..3.0),
        b in prop::array::uniform4(-3.0f64..3.0),
        x in prop::array::uniform4(-2.0f64..2.0),
    ) {
        let lin = |c: &[f64; 4]| Expr::sum((0..4).map(|i| Expr::constant(c[i]) * Expr::var(i)));
        let j = (lin(&a) * lin(&b)).jet(&x).unwrap();
        let la: f64 = (0..4).map(|i| a[i] * x[i]).sum();
        let lb: f64 = (0..4).map(|i| b[i] * x[i]).sum();
        prop_assert!((j.value - la * lb).abs() <= 1e-13 * (1.0 + (la * lb).abs()));
        for i in 0..4 {
            prop_assert!((j.grad[i] - (a[i] * lb + b[i] * la)).abs() <= 1e-13 * 20.0);
            for k in 0..4 {
                prop_assert!((j.hess_at(i, k) - (a[i] * b[k] + a[k] * b[i])).abs() <= 1e-13 * 20.0);
            }
        }
    }
}

fn registry_pairs() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("identity", vec![]),
        ("linear", (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.1 * (i as f64).sin() }).collect()),
        ("lorentz_boost", vec![0.6]),
        ("cylindrical_to_cartesian", vec![]),
        ("cartesian_to_cylindrical", vec![]),
        ("spherical_to_cartesian", vec![]),
        ("cartesian_to_spherical", vec![]),
    ]
}

/// Points inside the forward domain of the named pair.
fn sample_point(name: &str, r: &mut rand_chacha::ChaCha8Rng) -> [f64; 4] {
    let t = r.gen_range(-2.0..2.0);
    match name {
        "cylindrical_to_cartesian" => [t, r.gen_range(0.2..3.0), r.gen_range(-3.0..3.0), r.gen_range(-2.0..2.0)],
        "spherical_to_cartesian" => [t, r.gen_range(0.2..3.0), r.gen_range(0.2..2.9), r.gen_range(-3.0..3.0)],
        "cartesian_to_cylindrical" | "cartesian_to_spherical" => {
            [t, r.gen_range(0.2..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)]
        }
        _ => std::array::from_fn(|_| r.gen_range(-2.0..2.0)),
    }
}

#[test]
fn registry_pairs_invert_each_other() {
    let mut r = rng(5);
    for (name, params) in registry_pairs() {
        let reg = registry_get(name, &params).unwrap();
        let pair = reg.pair().unwrap();
        let pts: Vec<_> = (0..100).map(|_| sample_point(name, &mut r)).collect();
        let check = pair.check(&pts).unwrap();
        assert!(check.round_trip <= 1e-12, "{name}: {check:?}");
        assert!(check.jacobian <= 1e-10, "{name}: {check:?}");
        for p in &pts {
            let h = pair.forward.hessian_at(p).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        assert_eq!(h[a][b][c], h[a][c][b]);
                    }
                }
            }
        }
    }
}

#[test]
fn composed_charts_follow_the_chain_rule() {
    let mut r = rng(6);
    let inner = cylindrical_pair().forward;
    let outer = lorentz_boost(0.3).unwrap().forward;
    let bend = registry_get("polynomial", &[1.0, 2.0, 2.0, 0.2, 3.0, 1.0, 2.0, -0.1]).unwrap().chart().clone();
    for outer in [outer, bend] {
        let both = outer.compose(&inner);
        for _ in 0..100 {
            let x = sample_point("cylindrical_to_cartesian", &mut r);
            let y = inner.apply(&x).unwrap();
            let expect = mat_mul(&outer.jacobian_at(&y).unwrap(), &inner.jacobian_at(&x).unwrap());
            let got = both.jacobian_at(&x).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    assert!((got[a][b] - expect[a][b]).abs() <= 1e-10 * expect[a][b].abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn pushing_a_worldline_commutes_with_evaluation() {
    let polar = Worldline::new(["tau", "1 + 0.2*sin(0.5*tau)", "1.2 + 0.3*cos(0.4*tau)", "0.1*tau"].map(tau_expr), 0.0, 10.0)
        .unwrap();
    for (c, chart) in [
        (wobbly_worldline(), cylindrical_pair().forward),
        (polar, spherical_pair().forward),
        (wobbly_worldline(), lorentz_boost(0.8).unwrap().forward),
    ] {
        let pushed = c.push_through_chart(&chart).unwrap();
        for i in 0..=40 {
            let tau = 0.25 * i as f64;
            let a = pushed.point(tau).unwrap();
            let b = chart.apply(&c.point(tau).unwrap()).unwrap();
            for k in 0..4 {
                assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs().max(1.0));
            }
        }
    }
}

#[test]
fn reparametrized_pairings_match() {
    let c = wobbly_worldline();
    let mut r = rng(7);
    let quad = random_quadrupole(&mut r);
    let dip = random_dipole(&mut r);
    // maps [0, 8] onto [0, 10] with rate 0.75 + 0.125 τ̂
    let rep = Reparametrization::new(tau_expr("0.75*tau + 0.0625*tau^2"), 0.0, 8.0).unwrap();
    let id = Chart::identity();
    let opts = QuadOptions::default();
    let tq = transform_quadrupole(&quad, &id, &c, Some(&rep), &TransformOptions::default()).unwrap();
    let td = transform_dipole(&dip, &id, &c, Some(&rep)).unwrap();
    let c_hat = tq.worldline_hat();
    for f in random_forms_along(&c, 6, [1.5, 0.5, 0.5, 0.5], 70).unwrap() {
        for (a, b) in [
            (Bundle::quadrupole(quad.clone()), Bundle::quadrupole(tq.gamma_hat().clone())),
            (Bundle::dipole(dip.clone()), Bundle::dipole(td.clone())),
            (Bundle::monopole(2.0), Bundle::monopole(2.0)),
        ] {
            let x = pair_bundle(&a, &c, &f, &opts).unwrap().value;
            let y = pair_bundle(&b, c_hat, &f, &opts).unwrap().value;
            assert!(rel(x, y) <= 1e-8, "{x} vs {y}");
        }
    }
}

#[test]
fn constructors_respect_symmetries() {
    let c = wobbly_worldline();
    let mut r = rng(8);
    let taus: Vec<f64> = (0..50).map(|_| r.gen_range(0.0..10.0)).collect();
    let w = ["0.3", "sin(tau)", "1 + tau^2", "cos(2*tau)"].map(tau_expr);
    let q: [[Expr; 4]; 4] =
        std::array::from_fn(|a| std::array::from_fn(|b| tau_expr(&format!("{} + 0.1*tau*{}", a + b, a * b))));
    let p = random_antisymmetric_poly(&mut r);
    make_static_dipole([1.0, 2.0, 3.0], [0.5, -1.0, 0.2]).check_symmetry(&taus, 1e-12).unwrap();
    make_electric_dipole(&w, &c).check_symmetry(&taus, 1e-12).unwrap();
    make_electric_quadrupole(&q, &c).check_symmetry(&taus, 1e-12).unwrap();
    embed_dipole_as_quadrupole(&p, &c).unwrap().check_symmetry(&taus, 1e-12).unwrap();
    make_toroidal_quadrupole([0.3, -0.7, 1.1]).components.check_symmetry(&taus, 1e-12).unwrap();
    let ranks = [
        ComponentKind::ElectricDipoleModGauge,
        ComponentKind::Dipole,
        ComponentKind::ElectricQuadrupoleModGauge,
        ComponentKind::Quadrupole,
    ]
    .map(component_rank);
    assert!(ranks.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn electric_dipole_gauge_shift_changes_nothing() {
    let c = wobbly_worldline();
    let w = ["0.3", "sin(tau)", "1 + tau^2", "cos(2*tau)"].map(tau_expr);
    let xi = tau_expr("exp(0.1*tau)");
    let v = c.velocity_exprs();
    let shifted: [Expr; 4] = std::array::from_fn(|a| w[a].clone() + &xi * &v[a]);
    let a = make_electric_dipole(&w, &c);
    let b = make_electric_dipole(&shifted, &c);
    for tau in [0.0, 3.3, 9.1] {
        let (x, y) = (a.at(tau).unwrap(), b.at(tau).unwrap());
        for i in 0..4 {
            for k in 0..4 {
                assert!((x[i][k] - y[i][k]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn antisymmetric_electric_quadrupole_is_an_embedded_dipole() {
    let c = wobbly_worldline();
    let mut r = rng(12);
    let q = random_antisymmetric_poly(&mut r);
    let minus_q: [[Expr; 4]; 4] = std::array::from_fn(|a| std::array::from_fn(|b| -q[a][b].clone()));
    let g = make_electric_quadrupole(&q, &c);
    let h = embed_dipole_as_quadrupole(&minus_q, &c).unwrap();
    for tau in [0.0, 2.5, 7.75] {
        let (x, y) = (g.at(tau).unwrap(), h.at(tau).unwrap());
        for (u, v) in x.flat().iter().zip(y.flat()) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }
}

#[test]
fn electric_quadrupole_gauge_direction() {
    let c = wobbly_worldline();
    let v = c.velocity_exprs();
    let s = ["0.2", "sin(tau)", "1 - tau", "cos(0.5*tau)"].map(tau_expr);
    // q = Ċ ⊗ s drops out, the symmetrized s ⊗ Ċ + Ċ ⊗ s does not
    let left: [[Expr; 4]; 4] = std::array::from_fn(|a| std::array::from_fn(|b| &v[a] * &s[b]));
    let both: [[Expr; 4]; 4] = std::array::from_fn(|a| std::array::from_fn(|b| &v[a] * &s[b] + &s[a] * &v[b]));
    let g = make_electric_quadrupole(&left, &c);
    let h = make_electric_quadrupole(&both, &c);
    for tau in [0.0, 3.3, 9.1] {
        assert!(g.at(tau).unwrap().flat().iter().all(|x| x.abs() <= 1e-12));
        assert!(h.at(tau).unwrap().flat().iter().any(|x| x.abs() > 1e-3));
    }
}

proptest! {
    #![proptest_config(quick(8))]

    #[test]
    fn embedded_dipoles_pair_like_their_derivative(seed in any::<u64>()) {
        let c = wobbly_worldline();
        let mut r = rng(seed);
        let p = random_antisymmetric_poly(&mut r);
        let emb = embed_dipole_as_quadrupole(&p, &c).unwrap();
        let pc = Components::<Mat4>::from_exprs(p.iter().flatten().cloned().collect()).unwrap();
        let dip = extract_dipole(&pc).unwrap();
        for f in random_forms_along(&c, 2, [1.5, 0.5, 0.5, 0.5], seed).unwrap() {
            let x = pair_bundle(&Bundle::quadrupole(emb.clone()), &c, &f, &QuadOptions::default()).unwrap().value;
            let y = pair_bundle(&Bundle::dipole(dip.clone()), &c, &f, &QuadOptions::default()).unwrap().value;
            prop_assert!(rel(x, y) <= 1e-8);
        }
    }

    #[test]
    fn kappa0_never_changes_pairings(seed in any::<u64>(), k in -10.0f64..10.0) {
        let c = wobbly_worldline();
        let mut r = rng(seed);
        let quad = random_quadrupole(&mut r);
        let kappa0 = random_antisymmetric(&mut r).map(|row| row.map(|v| v * k));
        let chart = cylindrical_pair().forward;
        let a = transform_quadrupole(&quad, &chart, &c, None, &TransformOptions::default()).unwrap();
        let b = transform_quadrupole(&quad, &chart, &c, None, &TransformOptions { kappa0, ..Default::default() }).unwrap();
        for f in random_forms_along(a.worldline_hat(), 2, [1.5, 0.5, 0.5, 0.5], seed).unwrap() {
            let x = pair_bundle(&Bundle::quadrupole(a.gamma_hat().clone()), a.worldline_hat(), &f, &QuadOptions::default()).unwrap().value;
            let y = pair_bundle(&Bundle::quadrupole(b.gamma_hat().clone()), b.worldline_hat(), &f, &QuadOptions::default()).unwrap().value;
            prop_assert!(rel(x, y) <= 1e-9, "{} vs {}", x, y);
        }
        for tau in [0.5, 5.0, 9.5] {
            prop_assert!(antisymmetry_defect(&a.p_at(tau).unwrap()).0 <= 1e-12);
            prop_assert!(antisymmetry_defect(&a.p_rate_at(tau).unwrap()).0 <= 1e-12);
        }
    }

    #[test]
    fn pairings_are_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let c = wobbly_worldline();
        let mut r = rng(seed);
        let (g1, g2) = (random_quadrupole(&mut r), random_quadrupole(&mut r));
        let (d1, d2) = (random_dipole(&mut r), random_dipole(&mut r));
        let g = QuadrupoleComponents::combine(&[(alpha, &g1), (beta, &g2)]);
        let d = DipoleComponents::combine(&[(alpha, &d1), (beta, &d2)]);
        let opts = QuadOptions::default();
        for f in random_forms_along(&c, 2, [1.5, 0.5, 0.5, 0.5], seed).unwrap() {
            let p = |b: Bundle| pair_bundle(&b, &c, &f, &opts).unwrap().value;
            let lhs = p(Bundle::quadrupole(g.clone())) + p(Bundle::dipole(d.clone()));
            let rhs = alpha * (p(Bundle::quadrupole(g1.clone())) + p(Bundle::dipole(d1.clone())))
                + beta * (p(Bundle::quadrupole(g2.clone())) + p(Bundle::dipole(d2.clone())));
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-3));
        }
    }

    #[test]
    fn charge_is_stable_in_mixed_bundles(seed in any::<u64>(), q in -5.0f64..5.0) {
        let c = wobbly_worldline();
        let mut r = rng(seed);
        let b = Bundle {
            monopole: Some(Monopole { q }),
            dipole: Some(random_dipole(&mut r)),
            quadrupole: Some(random_quadrupole(&mut r)),
        };
        let rep = charge_survey(&b, &c, 5, seed, &QuadOptions::default()).unwrap();
        prop_assert!(rep.spread <= 1e-8);
        prop_assert!((rep.mean() - q).abs() <= 1e-8);
    }

    #[test]
    fn electric_order_implies_order(seed in any::<u64>()) {
        let c = Worldline::adapted(0.0, 10.0).unwrap();
        let mut r = rng(seed);
        let po = ProbeOptions { samples: 4, seed, ..Default::default() };
        let q: [[Expr; 4]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| Expr::constant(r.gen_range(-1.0..1.0))));
        let sym: [[Expr; 4]; 4] = std::array::from_fn(|a| std::array::from_fn(|b| &q[a][b] + &q[b][a]));
        for b in [
            Bundle::quadrupole(make_electric_quadrupole(&sym, &c)),
            Bundle::dipole(random_dipole(&mut r)),
            Bundle::quadrupole(random_quadrupole(&mut r)),
        ] {
            let e = test_electric_order(&b, &c, 2, &po).unwrap();
            if e.passed() {
                prop_assert!(test_order(&b, &c, 2, &po).unwrap().passed());
            }
        }
    }
}

#[test]
fn composition_matches_two_stages() {
    let c = wobbly_worldline();
    let mut r = rng(9);
    let quad = random_quadrupole(&mut r);
    let first = cylindrical_pair().forward;
    let second = registry_get("polynomial", &[1.0, 2.0, 2.0, 0.2, 3.0, 1.0, 1.0, -0.1]).unwrap().chart().clone();
    let opts = TransformOptions::default();
    let stage1 = transform_quadrupole(&quad, &first, &c, None, &opts).unwrap();
    let stage2 = transform_quadrupole(stage1.gamma_hat(), &second, stage1.worldline_hat(), None, &opts).unwrap();
    let direct = transform_quadrupole(&quad, &second.compose(&first), &c, None, &opts).unwrap();
    let c_hat = direct.worldline_hat();
    for f in random_forms_along(c_hat, 6, [1.5, 0.5, 0.5, 0.5], 90).unwrap() {
        let x = pair_bundle(&Bundle::quadrupole(stage2.gamma_hat().clone()), stage2.worldline_hat(), &f, &QuadOptions::default())
            .unwrap()
            .value;
        let y = pair_bundle(&Bundle::quadrupole(direct.gamma_hat().clone()), c_hat, &f, &QuadOptions::default())
            .unwrap()
            .value;
        assert!(rel(x, y) <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn embedding_commutes_with_transport() {
    let c = wobbly_worldline();
    let mut r = rng(10);
    let p = random_antisymmetric_poly(&mut r);
    let emb = embed_dipole_as_quadrupole(&p, &c).unwrap();
    let pc = Components::<Mat4>::from_exprs(p.iter().flatten().cloned().collect()).unwrap();
    let dip = extract_dipole(&pc).unwrap();
    for chart in [cylindrical_pair().forward, lorentz_boost(0.5).unwrap().forward] {
        let tq = transform_quadrupole(&emb, &chart, &c, None, &TransformOptions::default()).unwrap();
        let td = transform_dipole(&dip, &chart, &c, None).unwrap();
        let c_hat = tq.worldline_hat();
        for f in random_forms_along(c_hat, 4, [1.5, 0.5, 0.5, 0.5], 100).unwrap() {
            let x = pair_bundle(&Bundle::quadrupole(tq.gamma_hat().clone()), c_hat, &f, &QuadOptions::default()).unwrap().value;
            let y = pair_bundle(&Bundle::dipole(td.clone()), c_hat, &f, &QuadOptions::default()).unwrap().value;
            assert!(rel(x, y) <= 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn scalar_potentials_are_harmonic() {
    let mut r = rng(11);
    let mut eq = [[0.0; 3]; 3];
    eq[0][0] = 1.0;
    eq[1][2] = 0.5;
    eq[2][1] = 0.5;
    let sources = [
        StaticSource::Monopole { q: 2.0 },
        StaticSource::ElectricDipole { p: [0.2, 1.0, -0.4] },
        StaticSource::MagneticDipole { p: [1.0, 0.0, 0.3] },
        StaticSource::ElectricQuadrupole { gamma: eq },
        StaticSource::from_quadrupole(&make_toroidal_quadrupole([1.0, 0.5, -0.2]).projected)[1],
    ];
    for s in &sources {
        let (phi, a) = s.potential_exprs(Units::natural());
        for _ in 0..100 {
            let dir: [f64; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let rad = r.gen_range(0.5..5.0);
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let x = [0.0, dir[0] / n * rad, dir[1] / n * rad, dir[2] / n * rad];
            for e in std::iter::once(&phi).chain(a.iter()) {
                let j = e.jet(&x).unwrap();
                let mag = j.hess.iter().fold(j.value.abs(), |m, v| m.max(v.abs()));
                assert!(j.laplacian(1..4).abs() <= 1e-8 * mag.max(1e-300), "{} at {x:?}", s.kind());
            }
        }
        let p = potential_at(s, &[1.0, 2.0, 3.0], Units::natural()).unwrap();
        assert!(p.magnitude() > 0.0);
    }
}

#[test]
fn linear_pairs_transport_dipoles_tensorially() {
    let mut r = rng(12);
    let c = wobbly_worldline();
    let dip = random_dipole(&mut r);
    let m: Mat4 = std::array::from_fn(|a| std::array::from_fn(|b| if a == b { 1.0 } else { 0.0 } + 0.3 * r.gen_range(-1.0..1.0)));
    let pair = linear_pair(&m, &[0.0; 4]).unwrap();
    let d = transform_dipole(&dip, &pair.forward, &c, None).unwrap();
    for tau in [1.0, 4.0, 7.5] {
        let expect = multipole_core::tensor::push_forward2(&m, &dip.at(tau).unwrap());
        let got = d.at(tau).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert!((got[a][b] - expect[a][b]).abs() <= 1e-13);
            }
        }
    }
}
