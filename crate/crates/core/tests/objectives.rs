use pbac::agent::{bootdqnp_loss, PriorFunction};
use pbac::critic::{
    ensemble_values, kl_term, pbac_loss, pbac_loss_terms, CriticEnsemble, LossTerms, NextActions, PriorConfig,
};
use pbac::numerics::{Activation, Matrix, MlpParams};
use pbac::replay::{draw_mask, Minibatch, Transition};
use pbac::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

struct Setup {
    batch: Minibatch,
    ens: CriticEnsemble,
    next: Matrix,
    log_probs: Vec<f64>,
}

fn setup(seed: u64, n: usize, k: usize) -> Setup {
    let mut rng = seeded(seed);
    let (ds, da) = (2, 2);
    let rows: Vec<Transition> = (0..n)
        .map(|_| Transition {
            s: (0..ds).map(|_| rng.random_range(-1.0..1.0)).collect(),
            a: (0..da).map(|_| rng.random_range(-1.0..1.0)).collect(),
            r: rng.random_range(-1.0..1.0),
            s_next: (0..ds).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: rng.random_bool(0.25),
        })
        .collect();
    let batch = Minibatch::from_transitions(&rows).unwrap();
    let gamma = rng.random_range(0.5..0.99);
    let mut ens = CriticEnsemble::new(k, ds, da, &[6, 6], gamma, 0.005, &mut rng).unwrap();
    for t in &mut ens.targets {
        let flat: Vec<f64> = t.to_flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        t.set_flat(&flat).unwrap();
    }
    let next = Matrix::from_vec(n, da, (0..n * da).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let log_probs = (0..n).map(|_| rng.random_range(-2.0..1.0)).collect();
    Setup { batch, ens, next, log_probs }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn terms_add_up(seed in 0u64..10_000, n in 1usize..20, k in 2usize..6, kappa in 0.01f64..0.6, alpha in 0.0f64..0.5) {
        let s = setup(seed, n, k);
        let mask = draw_mask(n, k, kappa, &mut seeded(seed ^ 1)).unwrap();
        let next = NextActions { actions: s.next, log_probs: s.log_probs };
        let b = pbac_loss(&s.ens, &s.batch, &mask, &next, alpha, &PriorConfig::new(1.0).unwrap()).unwrap().breakdown;
        prop_assert!((b.total - (b.diversity + b.coherence + b.propagation)).abs() < 1e-12);
        prop_assert!(b.diversity >= 0.0 && b.coherence >= 0.0);
    }

    #[test]
    fn flat_prior_without_propagation_is_masked_td(seed in 0u64..10_000, n in 1usize..20, k in 2usize..6) {
        let s = setup(seed, n, k);
        let mask = draw_mask(n, k, 0.3, &mut seeded(seed ^ 2)).unwrap();
        let terms = LossTerms { coherence: true, propagation: false };
        let prior = PriorConfig::new(f64::INFINITY).unwrap();
        let pb = pbac_loss_terms(&s.ens, &s.batch, &mask, &NextActions::deterministic(s.next.clone()), 0.0, &prior, terms)
            .unwrap();
        let priors = PriorFunction {
            nets: (0..k).map(|_| MlpParams::new(&[4, 6, 1], Activation::CRelu, false, &mut seeded(seed))).collect(),
            beta: 0.0,
        };
        let td = bootdqnp_loss(&s.ens, &priors, &s.batch, &mask, &s.next).unwrap();
        prop_assert!((pb.breakdown.total - td.breakdown.total).abs() < 1e-12);
        for (a, b) in pb.grads.iter().zip(&td.grads) {
            for (x, y) in a.to_flat().iter().zip(b.to_flat()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_term_matches_direct_sum(seed in 0u64..10_000, n in 1usize..12, k in 2usize..6, sigma0_sq in 0.1f64..10.0) {
        let s = setup(seed, n, k);
        let kl = kl_term(&s.ens, &s.batch, &s.next, &PriorConfig::new(sigma0_sq).unwrap()).unwrap();
        let x = ensemble_values(&s.ens, &s.batch.s, &s.batch.a, false).unwrap();
        let xt = ensemble_values(&s.ens, &s.batch.s_next, &s.next, true).unwrap();
        let g = s.ens.gamma;
        let kf = k as f64;
        let mut direct = 0.0;
        for i in 0..n {
            let row = x.row(i);
            let mu = row.iter().sum::<f64>() / kf;
            let var = (row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (kf - 1.0)).max(1e-6);
            let prior_mu = xt.row(i).iter().sum::<f64>() / kf;
            let c = s.batch.r[i] + if s.batch.done[i] { 0.0 } else { g * prior_mu };
            let quad: f64 = row.iter().map(|v| (c - v).powi(2) / (g * g * sigma0_sq)).sum();
            direct += (quad - kf * var.ln()) / (2.0 * kf);
        }
        direct /= n as f64;
        prop_assert!((kl - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }
}
