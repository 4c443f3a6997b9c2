use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sobolev_prune::pruning::{iterative_prune, significance, Compensation, PruneConfig, PruningError};
use sobolev_prune::training::TrainConfig;
use sobolev_prune::{Activation, Interval, MlpModel};

fn net(seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(2..7)).collect();
    let mut m = MlpModel::new(2, &widths, Activation::Silu, &mut rng).unwrap();
    for l in m.layers_mut() {
        l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    m
}

fn unit_box() -> Vec<Interval> {
    vec![Interval::new(-1.0, 1.0).unwrap(); 2]
}

fn cfg(epsilon: f64, nodes_per_cycle: usize) -> PruneConfig {
    PruneConfig {
        input_box: unit_box(),
        retrain: TrainConfig::default(),
        retrain_samples: 0,
        epsilon,
        min_width: 1,
        nodes_per_cycle,
        compensation: Compensation::Interval,
        sample_points: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn significance_is_width_times_max_adjoint(seed in any::<u64>()) {
        let r = significance(&net(seed), &unit_box()).unwrap();
        for (l, layer) in r.layers.iter().enumerate() {
            for (i, n) in layer.iter().enumerate() {
                prop_assert_eq!(n.enclosure, r.enclosures.post[l][i]);
                prop_assert_eq!(n.adjoint, r.enclosures.adjoint[l][i]);
                prop_assert_eq!(n.significance, n.enclosure.width() * n.adjoint.max_abs());
                prop_assert!(n.significance >= 0.0);
            }
        }
    }

    #[test]
    fn silent_nodes_prune_exactly(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let mut m = net(seed);
        let l = pick.index(m.num_hidden());
        let node = pick.index(m.hidden_widths()[l]);
        m.layers_mut()[l + 1].weights.column_mut(node).fill(0.0);
        let r = significance(&m, &unit_box()).unwrap();
        prop_assert_eq!(r.layers[l][node].significance, 0.0);
        let p = m.prune_node(l, node, &r.enclosures).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            prop_assert_eq!(p.forward(&x).unwrap().to_bits(), m.forward(&x).unwrap().to_bits());
        }
    }

    #[test]
    fn accepted_steps_are_safe_and_shrink(seed in any::<u64>(), eps in 0.0..0.5f64, batch in 1usize..4) {
        let m = net(seed);
        let grid: Vec<[f64; 2]> = (0..25).map(|i| [-1.0 + 0.5 * (i / 5) as f64, -1.0 + 0.5 * (i % 5) as f64]).collect();
        let truth: Vec<f64> = grid.iter().map(|x| m.forward(x).unwrap()).collect();
        let validator = |mm: &MlpModel| -> Result<f64, PruningError> {
            let pred: Vec<f64> = grid.iter().map(|x| mm.forward(x).unwrap()).collect();
            Ok(sobolev_prune::training::r2_score(&pred, &truth)?)
        };
        let keep = |mm: &MlpModel, _| Ok(mm.clone());
        let (out, history) = iterative_prune(&m, &cfg(eps, batch), keep, validator).unwrap();
        let mut params = m.parameter_count();
        let mut last_cycle = None;
        for e in history.iter().filter(|e| e.action == sobolev_prune::pruning::PruneAction::Prune) {
            prop_assert!(e.r2_after_retrain >= 1.0 - eps);
            if last_cycle != Some(e.cycle) {
                prop_assert!(e.params_remaining < params);
            }
            params = e.params_remaining;
            last_cycle = Some(e.cycle);
        }
        prop_assert_eq!(out.parameter_count(), params);
        let again = iterative_prune(&m, &cfg(eps, batch), keep, validator).unwrap();
        prop_assert_eq!(again.1, history);
    }
}
