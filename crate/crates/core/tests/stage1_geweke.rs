//! Joint-distribution check of the Stage-1 sampler: statistics of states
//! drawn from the prior must match those of a chain that alternates data
//! simulation with one Gibbs sweep.

use variscan::kernel::RandomSource;
use variscan::stage1::prior::{sample_covariates, sample_state, PriorModel};
use variscan::stage1::{sweep, Hyperparameters, Stage1State};

const DRAWS: usize = 50_000;
const BATCH: usize = 1_000;

fn stats(s: &Stage1State) -> Vec<f64> {
    let cells = s.latent.n_cells() as f64;
    let mean_v = s.latent.atoms().iter().zip(s.latent.atom_counts()).map(|(a, &c)| a * c as f64).sum::<f64>() / cells;
    vec![
        s.n_clusters() as f64,
        s.tau_sq,
        s.tau1_sq.ln(),
        s.xi,
        mean_v,
        s.pdp.discount(),
        if s.pdp.discount() == 0.0 { 1.0 } else { 0.0 },
        s.latent.n_atoms() as f64,
        s.indicators.ones() as f64 / s.indicators.total() as f64,
        s.pdp.mass().ln(),
        s.dp_mass.ln(),
    ]
}

const NAMES: [&str; 11] = ["q", "tau^2", "log tau1^2", "xi", "mean v", "d", "d = 0", "atoms", "z fraction", "log mass", "log dp mass"];

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Variance of the mean of a correlated series via batch means.
fn batch_var_of_mean(xs: &[f64]) -> f64 {
    let means: Vec<f64> = xs.chunks(BATCH).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    mean_var(&means).1 / means.len() as f64
}

fn model(sample_masses: bool) -> PriorModel {
    PriorModel {
        mass: 1.0,
        dp_mass: 1.5,
        discount: 0.0,
        base_mean: 0.0,
        base_var: 1.0,
        hyper: Hyperparameters {
            tau_floor: 0.01,
            tau_shape: 3.0,
            tau_scale: 0.5,
            tau1_shape: 3.0,
            tau1_scale: 2.0,
            xi_prior: [3.0, 2.0],
            aux_components: 3,
            quadrature_nodes: 200,
            update_discount: true,
            sample_mass: sample_masses,
            sample_dp_mass: sample_masses,
        },
    }
}

fn geweke(sample_masses: bool, seed: u64) {
    let model = model(sample_masses);
    let (n, p) = (5, 8);
    let mut rng = RandomSource::new(seed, 0);
    let forward: Vec<Vec<f64>> = (0..DRAWS).map(|_| stats(&sample_state(&model, n, p, &mut rng).unwrap())).collect();

    let mut rng = RandomSource::new(seed, 1);
    let mut state = sample_state(&model, n, p, &mut rng).unwrap();
    let mut chain = Vec::with_capacity(DRAWS);
    for _ in 0..DRAWS {
        let mut x = sample_covariates(&state, &mut rng).unwrap();
        sweep(&mut state, &mut x, &mut rng).unwrap();
        chain.push(stats(&state));
    }

    let mut worst = 0.0f64;
    for (s, name) in NAMES.iter().enumerate() {
        let f: Vec<f64> = forward.iter().map(|r| r[s]).collect();
        let c: Vec<f64> = chain.iter().map(|r| r[s]).collect();
        let (mf, vf) = mean_var(&f);
        let (mc, _) = mean_var(&c);
        let se = (vf / DRAWS as f64 + batch_var_of_mean(&c)).sqrt();
        if se == 0.0 {
            assert_eq!(mf, mc, "{name}");
            continue;
        }
        let z = (mf - mc) / se;
        println!("{name:>12}: prior {mf:.4} chain {mc:.4} z {z:+.2}");
        worst = worst.max(z.abs());
    }
    assert!(worst < 4.0, "largest |z| = {worst}");
}

#[test]
fn sweep_preserves_joint_distribution() {
    geweke(false, 2024);
}

#[test]
fn sweep_with_mass_updates_preserves_joint_distribution() {
    geweke(true, 7);
}
