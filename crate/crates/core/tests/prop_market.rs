use proptest::prelude::*;
use sobolev_prune::market::{sample, smooth_payoff, smooth_payoff_deriv, BasketConfig};
use sobolev_prune::Interval;

fn basket() -> impl Strategy<Value = BasketConfig> {
    (1usize..5, 1.0..30.0f64, -0.2..0.95f64, 0.1..3.0f64, 80.0..120.0f64).prop_map(|(m, vol, rho, t, k)| {
        BasketConfig::uniform(m, vol, rho, t, k, Interval::new(80.0, 120.0).unwrap()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_are_consistent_and_deterministic(cfg in basket(), seed in any::<u64>()) {
        let a = sample(&cfg, 64, seed).unwrap();
        prop_assert_eq!(&a, &sample(&cfg, 64, seed).unwrap());
        for s in &a {
            prop_assert!(s.x.iter().all(|&f| cfg.spot_box.contains(f)));
            prop_assert!(s.y >= 0.0);
            let itm = s.y > 0.0;
            for (d, w) in s.dydx.iter().zip(&cfg.weights) {
                prop_assert_eq!(*d, if itm { *w } else { 0.0 });
            }
        }
    }

    #[test]
    fn analytic_greeks_are_bounded(cfg in basket(), spot in 80.0..120.0f64) {
        let spots = vec![spot; cfg.assets()];
        let b0: f64 = spots.iter().zip(&cfg.weights).map(|(s, w)| s * w).sum();
        let price = cfg.analytic_price(&spots).unwrap();
        prop_assert!(price >= (b0 - cfg.strike).max(0.0) - 1e-12);
        for (d, w) in cfg.analytic_delta(&spots).unwrap().iter().zip(&cfg.weights) {
            prop_assert!(*d >= 0.0 && *d <= *w);
        }
        prop_assert!(cfg.analytic_basket_gamma(&spots).unwrap() >= 0.0);
    }

    #[test]
    fn smoothing_stays_close_to_the_kink(x in -3.0..3.0f64, w in 1e-4..1.0f64) {
        let v = smooth_payoff(x, w).unwrap();
        // max over u of |u·σ(u) − u⁺| is 0.2785 at u ≈ ∓1.28
        prop_assert!((v - x.max(0.0)).abs() <= 0.2785 * w);
        let h = 1e-6 * w;
        let fd = (smooth_payoff(x + h, w).unwrap() - smooth_payoff(x - h, w).unwrap()) / (2.0 * h);
        prop_assert!((fd - smooth_payoff_deriv(x, w).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn smoothed_slope_is_lipschitz(x in -3.0..3.0f64, w in 1e-2..1.0f64) {
        let h = 1e-3 * w;
        let slope = (smooth_payoff_deriv(x + h, w).unwrap() - smooth_payoff_deriv(x - h, w).unwrap()) / (2.0 * h);
        prop_assert!(slope.abs() <= 1.1 / (2.0 * w));
    }
}
