use dersens::norm::{eval_norm_map, parse_norm, NormExpr, INF};
use dersens::smooth::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use ScalarExpr as E;

fn c(n: &str) -> E {
    E::col(n)
}
fn k(v: f64) -> E {
    E::Const(v)
}
fn b(e: E) -> Box<E> {
    Box::new(e)
}
fn minus(a: E, bb: E) -> E {
    E::Sum(vec![a, E::Prod(vec![k(-1.0), bb])])
}

/// One function per constructor, all differentiable at generic points.
fn gradient_cases() -> Vec<(&'static str, E)> {
    vec![
        ("const", k(2.5)),
        ("col", c("x")),
        ("power", E::Power(b(E::Sum(vec![E::Prod(vec![c("x"), c("x")]), k(1.0)])), 1.5)),
        ("exp", E::Exp(0.7, b(minus(c("x"), c("y"))))),
        ("sigmoid", E::Sigmoid(2.0, b(minus(c("x"), E::Prod(vec![k(0.5), c("y")]))))),
        ("tauoid", E::Tauoid(1.5, b(E::Sum(vec![c("x"), c("y")])))),
        ("sum", E::Sum(vec![c("x"), E::Prod(vec![k(2.0), c("y")]), c("z")])),
        ("prod", E::Prod(vec![c("x"), c("y"), c("z")])),
        ("min", E::Min(vec![c("x"), c("y"), E::Prod(vec![k(2.0), c("z")])])),
        ("max", E::Max(vec![c("x"), E::Prod(vec![c("y"), c("z")])])),
        ("lp1", E::LpNorm(1.0, vec![c("x"), E::Prod(vec![c("y"), c("z")])])),
        ("lp2", E::LpNorm(2.0, vec![c("x"), c("y"), c("z")])),
        ("lp3", E::LpNorm(3.0, vec![c("x"), E::Prod(vec![c("x"), c("y")])])),
        ("lpinf", E::LpNorm(INF, vec![c("x"), E::Prod(vec![k(0.5), c("y")]), c("z")])),
        ("scalenorm", E::ScaleNorm(3.0, b(E::Prod(vec![c("x"), c("y")])))),
        ("ln", E::Ln(b(E::Sum(vec![E::Prod(vec![c("x"), c("x")]), k(1.0)])))),
        ("div", c("y").div(E::Sum(vec![E::Prod(vec![c("x"), c("x")]), k(2.0)]))),
        ("sigmoid_deriv", E::SigmoidDeriv(1.3, b(minus(c("x"), c("y"))))),
        ("identity_ubf", E::IdentityUbf { b: 0.7, arg: b(E::Sum(vec![c("x"), c("y")])) }),
        ("zero_guard", E::ZeroGuard(b(E::Sigmoid(1.0, b(c("x")))), b(E::Prod(vec![c("y"), c("z")])))),
        ("pick", E::Pick { min: true, keys: vec![c("x"), c("y")], values: vec![E::Prod(vec![c("x"), c("z")]), c("y")] }),
        ("sign", E::Prod(vec![E::Sign(b(c("x"))), c("y")])),
    ]
}

fn norms() -> Vec<NormExpr> {
    ["lp 1 x y z", "lp 2 x (scaled 2 y) z", "linf x (lp 1.5 y z)", "lp 1 (scaled 0.5 x) (linf y z)"]
        .iter()
        .map(|s| parse_norm(s).unwrap())
        .collect()
}

fn point(rng: &mut ChaCha8Rng, r: f64) -> BTreeMap<String, f64> {
    ["x", "y", "z"].iter().map(|v| (v.to_string(), rng.gen_range(-r..r))).collect()
}

#[test]
fn gradient_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, f) in gradient_cases() {
        for (i, n) in norms().into_iter().enumerate() {
            let ds = ds_expr(&f, &n).unwrap();
            for _ in 0..50 {
                let p = point(&mut rng, 3.0);
                let a = eval_map(&ds, &p).unwrap();
                let fd = finite_diff_ds(&f, &n, &p, 1e-5).unwrap();
                let tol = 1e-4 * a.abs().max(fd.abs()).max(1e-6);
                assert!((a - fd).abs() <= tol, "{name} norm#{i} at {p:?}: {a} vs {fd}");
            }
        }
    }
}

#[test]
fn linf_ds_at_ties_is_one() {
    let n = parse_norm("lp 1 x y").unwrap();
    let f = E::LpNorm(INF, vec![c("x"), c("y")]);
    let ds = ds_expr(&f, &n).unwrap();
    let p: BTreeMap<String, f64> = [("x".into(), 2.0), ("y".into(), -2.0)].into();
    assert_eq!(eval_map(&ds, &p).unwrap(), 1.0);
}

fn catalog() -> Vec<(&'static str, E, f64)> {
    vec![
        ("identity", c("x"), 0.1),
        ("const", k(3.0), 0.1),
        ("square", E::Power(b(c("x")), 2.0), 0.5),
        ("cube_of_sum", E::Power(b(E::Sum(vec![c("x"), c("y")])), 3.0), 0.5),
        ("exp", E::Exp(0.05, b(c("x"))), 0.1),
        ("sigmoid", E::Sigmoid(0.3, b(minus(c("x"), c("y")))), 0.4),
        ("tauoid", E::Tauoid(0.3, b(E::Sum(vec![c("x"), k(-2.0)]))), 0.4),
        ("sum", E::Sum(vec![c("x"), c("y")]), 0.1),
        ("prod", E::Prod(vec![c("x"), c("y")]), 0.2),
        ("filtered_sum", E::Prod(vec![c("x"), E::Sigmoid(0.2, b(minus(k(3.0), c("y"))))]), 0.3),
        ("min", E::Min(vec![c("x"), c("y")]), 0.1),
        ("max", E::Max(vec![c("x"), E::Prod(vec![k(2.0), c("y")])]), 0.1),
        ("l2", E::LpNorm(2.0, vec![c("x"), c("y")]), 0.1),
        ("linf", E::LpNorm(INF, vec![c("x"), c("y")]), 0.1),
        ("scalenorm", E::ScaleNorm(2.0, b(c("x"))), 0.1),
        (
            "shared",
            E::Sum(vec![E::Prod(vec![c("x"), E::Sigmoid(0.1, b(c("y")))]), E::Tauoid(0.2, b(c("x")))]),
            0.3,
        ),
    ]
}

fn bound(f: &E, beta: f64, n: &NormExpr) -> SmoothBound {
    let sb = smooth_bound(f, beta, n).unwrap();
    if sb.feasible {
        return sb;
    }
    smooth_bound(f, sb.beta * 1.5, n).unwrap()
}

#[test]
fn bounds_dominate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, f, beta) in catalog() {
        for n in norms() {
            let sb = bound(&f, beta, &n);
            assert!(sb.feasible, "{name}");
            let ds = ds_expr(&f, &n).unwrap();
            for _ in 0..1000 {
                let p = point(&mut rng, 30.0);
                let fv = eval_map(&f, &p).unwrap().abs();
                let u = eval_map(&sb.ubf, &p).unwrap();
                assert!(u >= fv * (1.0 - 1e-9), "{name} ubf {u} < {fv} at {p:?}");
                let d = eval_map(&ds, &p).unwrap();
                let ud = eval_map(&sb.ubds, &p).unwrap();
                assert!(ud >= d * (1.0 - 1e-9) - 1e-12, "{name} ubds {ud} < {d} at {p:?} in {n}");
            }
        }
    }
}

#[test]
fn bounds_are_smooth() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (name, f, beta) in catalog() {
        for n in norms() {
            let sb = bound(&f, beta, &n);
            assert!(sb.beta <= beta.max(sb.beta) * (1.0 + 1e-12));
            for _ in 0..1000 {
                let p = point(&mut rng, 30.0);
                // nearby and far pairs
                let r = if rng.gen_bool(0.5) { 0.5 } else { 30.0 };
                let q: BTreeMap<String, f64> = p.iter().map(|(k, v)| (k.clone(), v + rng.gen_range(-r..r))).collect();
                let diff: BTreeMap<String, f64> = p.iter().map(|(k, v)| (k.clone(), v - q[k])).collect();
                let d = eval_norm_map(&n, &diff).unwrap();
                for e in [&sb.ubf, &sb.ubds] {
                    let (a, bq) = (eval_map(e, &p).unwrap(), eval_map(e, &q).unwrap());
                    assert!(a <= (sb.beta * d).exp() * bq * (1.0 + 1e-9) + 1e-300, "{name}: {a} vs {bq} at d={d} in {n}");
                }
            }
        }
    }
}

#[test]
fn sigmoid_and_tauoid_are_alpha_smooth() {
    let n = parse_norm("x").unwrap();
    for alpha in [0.1, 0.5, 2.0] {
        for f in [E::Sigmoid(alpha, b(c("x"))), E::Tauoid(alpha, b(c("x")))] {
            let sb = smooth_bound(&f, alpha, &n).unwrap();
            assert!(sb.feasible);
            assert!((sb.beta - alpha).abs() < 1e-15);
        }
    }
}

#[test]
fn product_smoothness_adds_under_linf_and_not_under_l1() {
    // log-derivative bounds add up only when both columns can move at once
    let f = E::Prod(vec![E::Sigmoid(0.3, b(c("x"))), E::Sigmoid(0.2, b(c("y")))]);
    let sb = smooth_bound(&f, 1.0, &parse_norm("linf x y").unwrap()).unwrap();
    assert!((sb.beta - 0.5).abs() < 1e-12);
    let sb = smooth_bound(&f, 1.0, &parse_norm("lp 1 x y").unwrap()).unwrap();
    assert!((sb.beta - 0.3).abs() < 1e-12);
}

#[test]
fn ship_example_block_combination() {
    // outer ℓ1 over the (a·speed) and (b·position) blocks gives a max of the
    // per-block sensitivities
    let (a, bb) = (2.0, 3.0);
    let v: f64 = 1.5;
    let (x, y): (f64, f64) = (0.3, 0.4);
    let s1 = 2f64.sqrt() / (a * v.abs());
    let s2 = (x * x + y * y).sqrt() / (bb * v * v);
    let e = combine_ds(
        vec![(k(s1), ["v".to_string()].into()), (k(s2), ["x".to_string(), "y".to_string()].into())],
        1.0,
    )
    .unwrap();
    assert_eq!(e, k(s1.max(s2)));
}
