#![allow(dead_code)]

use multipole_core::expr::{parse, Expr, VarNames};
use multipole_core::multipole::{DipoleComponents, QuadrupoleComponents};
use multipole_core::tensor::{project_quadrupole, ComponentArray, Mat4, Tensor3};
use multipole_core::worldline::Worldline;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tau_expr(src: &str) -> Expr {
    parse(src, VarNames::Tau).unwrap()
}

/// A non-adapted, non-static worldline used throughout the suites.
pub fn wobbly_worldline() -> Worldline {
    Worldline::new(
        ["tau", "1 + 0.2*sin(0.5*tau)", "0.3*cos(0.4*tau)", "0.1*tau"].map(tau_expr),
        0.0,
        10.0,
    )
    .unwrap()
}

pub fn random_tensor3(rng: &mut ChaCha8Rng) -> Tensor3 {
    let mut t = Tensor3::zero();
    for v in t.flat_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    project_quadrupole(&t)
}

pub fn random_antisymmetric(rng: &mut ChaCha8Rng) -> Mat4 {
    let mut m = Mat4::zero();
    for a in 0..4 {
        for b in a + 1..4 {
            m[a][b] = rng.gen_range(-1.0..1.0);
            m[b][a] = -m[a][b];
        }
    }
    m
}

/// `γ(τ) = T0 + 0.1 τ T1 + 0.01 τ² T2` with each `Ti` satisfying the
/// quadrupole symmetries.
pub fn random_quadrupole(rng: &mut ChaCha8Rng) -> QuadrupoleComponents {
    let t = [random_tensor3(rng), random_tensor3(rng), random_tensor3(rng)];
    let tau = Expr::tau();
    let exprs = (0..64)
        .map(|i| {
            Expr::constant(t[0].flat()[i])
                + Expr::constant(0.1 * t[1].flat()[i]) * tau.clone()
                + Expr::constant(0.01 * t[2].flat()[i]) * (&tau * &tau)
        })
        .collect();
    QuadrupoleComponents::from_exprs(exprs).unwrap()
}

pub fn random_dipole(rng: &mut ChaCha8Rng) -> DipoleComponents {
    let m = [random_antisymmetric(rng), random_antisymmetric(rng)];
    let exprs = (0..16)
        .map(|i| Expr::constant(m[0].flat()[i]) + Expr::constant(0.2 * m[1].flat()[i]) * Expr::tau().sin())
        .collect();
    DipoleComponents::from_exprs(exprs).unwrap()
}

/// Antisymmetric matrix of random cubic polynomials in `τ`.
pub fn random_antisymmetric_poly(rng: &mut ChaCha8Rng) -> [[Expr; 4]; 4] {
    let mut p: [[Expr; 4]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| Expr::zero()));
    for a in 0..4 {
        for b in a + 1..4 {
            let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let t = Expr::tau();
            let e = Expr::constant(c[0])
                + Expr::constant(c[1]) * t.clone()
                + Expr::constant(0.1 * c[2]) * t.powf(2.0)
                + Expr::constant(0.01 * c[3]) * t.powf(3.0);
            p[b][a] = -e.clone();
            p[a][b] = e;
        }
    }
    p
}

/// Random smooth expression in `x0..x3`, well behaved on `[-1, 1]^4`.
pub fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.7) {
            Expr::var(rng.gen_range(0..4))
        } else {
            Expr::constant(rng.gen_range(-2.0..2.0))
        };
    }
    let a = random_expr(rng, depth - 1);
    match rng.gen_range(0..9) {
        0 => a + random_expr(rng, depth - 1),
        1 => a - random_expr(rng, depth - 1),
        2 | 3 => a * random_expr(rng, depth - 1),
        4 => a.sin(),
        5 => a.cos(),
        6 => (a * 0.5).sin().exp(),
        7 => (Expr::one() + &a * &a).sqrt(),
        _ => a / (Expr::constant(2.5) + random_expr(rng, depth - 1).cos()),
    }
}

pub fn random_point(rng: &mut ChaCha8Rng) -> [f64; 4] {
    std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
}

/// `|a − b| / max(|a|, |b|)`.
pub fn rel(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Central difference gradient and Hessian of `f` at `x` with step `h`.
pub fn finite_differences(f: impl Fn(&[f64; 4]) -> f64, x: &[f64; 4], h: f64) -> ([f64; 4], [[f64; 4]; 4]) {
    let at = |da: &[(usize, f64)]| {
        let mut y = *x;
        for &(i, d) in da {
            y[i] += d;
        }
        f(&y)
    };
    let f0 = f(x);
    let grad = std::array::from_fn(|i| (at(&[(i, h)]) - at(&[(i, -h)])) / (2.0 * h));
    let hess = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            if i == j {
                (at(&[(i, h)]) - 2.0 * f0 + at(&[(i, -h)])) / (h * h)
            } else {
                (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h)
            }
        })
    });
    (grad, hess)
}
