use proptest::prelude::*;
use sobolev_prune::special;
use sobolev_prune::Interval;

fn interval() -> impl Strategy<Value = Interval> {
    (-8.0..8.0f64, 0.0..5.0f64).prop_map(|(c, w)| Interval::new(c - w, c + w).unwrap())
}

/// An interval together with a point inside it.
fn with_point() -> impl Strategy<Value = (Interval, f64)> {
    (interval(), 0.0..=1.0f64).prop_map(|(a, t)| (a, (a.lo() + t * a.width()).clamp(a.lo(), a.hi())))
}

/// A pair `inner ⊆ outer`.
fn nested() -> impl Strategy<Value = (Interval, Interval)> {
    (interval(), 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(outer, s, t)| {
        let (a, b) = (outer.lo() + s * outer.width(), outer.lo() + t * outer.width());
        let inner = Interval::new(a.min(b), a.max(b)).unwrap();
        (inner, outer)
    })
}

type Unary = (fn(Interval) -> Interval, fn(f64) -> f64);

const UNARY: [Unary; 14] = [
    (|a| -a, |x| -x),
    (Interval::square, |x| x * x),
    (Interval::exp, f64::exp),
    (Interval::cos, f64::cos),
    (Interval::sin, f64::sin),
    (Interval::relu, special::relu),
    (Interval::relu_deriv, special::step),
    (Interval::step, special::step),
    (Interval::sigmoid, special::sigmoid),
    (Interval::sigmoid_deriv, special::sigmoid_deriv),
    (Interval::silu, special::silu),
    (Interval::silu_deriv, special::silu_deriv),
    (Interval::norm_cdf, special::norm_cdf),
    (Interval::norm_pdf, special::norm_pdf),
];

proptest! {
    #[test]
    fn unary_inclusion(op in 0..UNARY.len(), (a, x) in with_point()) {
        let (fi, fp) = UNARY[op];
        prop_assert!(fi(a).contains(fp(x)), "op {op} on {a} at {x}");
    }

    #[test]
    fn binary_inclusion((a, x) in with_point(), (b, y) in with_point()) {
        prop_assert!((a + b).contains(x + y));
        prop_assert!((a - b).contains(x - y));
        prop_assert!((a * b).contains(x * y));
        prop_assert!((a * 2.5).contains(x * 2.5));
    }

    #[test]
    fn division_and_log_inclusion((a, x) in with_point(), lo in 0.05..4.0f64, w in 0.0..3.0f64, t in 0.0..=1.0f64) {
        let b = Interval::new(lo, lo + w).unwrap();
        let y = (lo + t * w).clamp(b.lo(), b.hi());
        prop_assert!(a.checked_div(b).unwrap().contains(x / y));
        prop_assert!(b.ln().unwrap().contains(y.ln()));
    }

    #[test]
    fn isotonic_unary(op in 0..UNARY.len(), (inner, outer) in nested()) {
        let f = UNARY[op].0;
        prop_assert!(f(inner).is_subset_of(&f(outer)), "op {op}: {inner} ⊆ {outer}");
    }

    #[test]
    fn isotonic_binary((a, b) in nested(), (c, d) in nested()) {
        prop_assert!((a + c).is_subset_of(&(b + d)));
        prop_assert!((a - c).is_subset_of(&(b - d)));
        prop_assert!((a * c).is_subset_of(&(b * d)));
    }

    #[test]
    fn degenerate_intervals_are_points(op in 0..UNARY.len(), p in -8.0..8.0f64, q in -8.0..8.0f64) {
        let (fi, fp) = UNARY[op];
        let v = fi(Interval::point(p));
        // the exact rules may evaluate a different but equal formula
        prop_assert!((v.lo() - fp(p)).abs() <= 1e-15 * fp(p).abs().max(1.0));
        prop_assert!((v.hi() - fp(p)).abs() <= 1e-15 * fp(p).abs().max(1.0));
        let (a, b) = (Interval::point(p), Interval::point(q));
        prop_assert_eq!(a + b, Interval::point(p + q));
        prop_assert_eq!(a * b, Interval::point(p * q));
    }

    #[test]
    fn helper_relations(a in interval()) {
        prop_assert!(a.width() >= 0.0);
        prop_assert!(a.lo() <= a.midpoint() && a.midpoint() <= a.hi());
        prop_assert!(a.max_abs() >= 0.0);
        prop_assert!(a.contains(a.midpoint()));
        prop_assert_eq!(Interval::hull(&[a.hi(), a.lo(), a.midpoint()]).unwrap(), a);
    }
}
