#![allow(dead_code)]

use dopt_lab::dataset::{Transition, TupleDataset};
use dopt_lab::rng::dirichlet_ones;
use dopt_lab::{ActionTable, Dims, FiniteMdp, RngSpec, TimedPolicy};
use rand::Rng;

/// Denominator of the quantized transition probabilities.
pub const QUANT: u64 = 12;

/// Random model whose transition rows are `count / QUANT` with every
/// successor count at least one, plus its integer counts.
pub fn quantized_mdp(dims: Dims, seed: u64) -> (FiniteMdp, TimedPolicy, Vec<u64>) {
    assert!(dims.num_states as u64 <= QUANT);
    let mut rng = RngSpec::from_seed(seed).rng();
    let (ns, na) = (dims.num_states, dims.num_actions);
    let mut counts = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let mut row = vec![1u64; ns];
        for _ in 0..QUANT - ns as u64 {
            row[rng.random_range(0..ns)] += 1;
        }
        counts.extend(row);
    }
    let transition = counts.iter().map(|&c| c as f64 / QUANT as f64).collect();
    let reward = (0..ns * na).map(|_| rng.random::<f64>()).collect();
    let p0 = dirichlet_ones(&mut rng, ns);
    let mdp = FiniteMdp::new(dims, transition, reward, p0).unwrap();
    let mut probs = Vec::with_capacity(dims.action_cells());
    for _ in 0..dims.horizon * ns {
        probs.extend(dirichlet_ones(&mut rng, na));
    }
    let pi = TimedPolicy::new(ActionTable::from_vec(dims, probs).unwrap()).unwrap();
    (mdp, pi, counts)
}

/// Every `(t, s, a, s')` repeated `count` times, so the empirical model
/// reproduces the quantized transitions exactly.
pub fn exact_dataset(mdp: &FiniteMdp, counts: &[u64]) -> TupleDataset {
    let d = mdp.dims();
    let mut records = Vec::new();
    for t in 0..d.horizon {
        for s in 0..d.num_states {
            for a in 0..d.num_actions {
                for s_next in 0..d.num_states {
                    let c = counts[(s * d.num_actions + a) * d.num_states + s_next];
                    for _ in 0..c {
                        records.push(Transition {
                            t,
                            s,
                            a,
                            r: mdp.reward_sa(s, a),
                            s_next,
                        });
                    }
                }
            }
        }
    }
    TupleDataset::new(records)
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
