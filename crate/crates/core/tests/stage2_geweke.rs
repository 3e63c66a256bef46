//! Joint-distribution check of the Stage-2 sweep on a fixed six-subject
//! design with three clusters.

use variscan::kernel::RandomSource;
use variscan::regression::prior::{sample_outcomes, sample_state};
use variscan::regression::{sweep, OutcomeData, Selection, SplineSpec, Stage2Hyper, Stage2State};
use variscan::{CovariateMatrix, Partition};

const DRAWS: usize = 60_000;
const BATCH: usize = 1_000;

const NAMES: [&str; 10] = [
    "linear", "spline", "omega0", "omega2", "log sigma2", "beta0", "mean fit^2", "rep 0", "rep 2", "log g",
];

fn stats(s: &Stage2State) -> Vec<f64> {
    let c = |t: Selection| s.gamma.iter().filter(|&&g| g == t).count() as f64;
    vec![
        c(Selection::Linear),
        c(Selection::Spline),
        s.omega[0],
        s.omega[2],
        s.sigma2.ln(),
        s.beta[0],
        s.eta().unwrap().iter().map(|e| e * e).sum::<f64>() / s.n() as f64,
        (s.reps.indices[0] == 0) as u8 as f64,
        (s.reps.indices[2] == 5) as u8 as f64,
        s.g.ln(),
    ]
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn batch_var_of_mean(xs: &[f64]) -> f64 {
    let means: Vec<f64> = xs.chunks(BATCH).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    mean_var(&means).1 / means.len() as f64
}

fn fixture() -> (Partition, CovariateMatrix) {
    let partition = Partition::from_labels(&[0, 0, 1, 2, 2, 2]);
    let values = [
        0.3, -1.1, 0.8, 1.9, -0.4, -0.2, //
        1.2, 0.1, -0.7, 0.5, 1.6, -1.3, //
        -0.9, 0.6, 1.4, -0.3, 0.2, 2.1, //
        0.7, -1.5, 0.4, 1.1, -0.6, 0.9, //
        -0.2, 0.9, -1.2, 0.3, 1.4, 0.6, //
        1.8, -0.5, 0.1, -1.0, 0.7, -0.8,
    ];
    (partition, CovariateMatrix::from_columns(6, 6, values.to_vec()).unwrap())
}

fn geweke(g_prior: Option<[f64; 2]>, seed: u64) {
    let (partition, x) = fixture();
    let hyper = Stage2Hyper {
        spline: SplineSpec::default(),
        nu: 3.0,
        precision_bounds: (0.3, 5.0),
        g_prior,
        resample_representatives: true,
    };
    let g = 6.0;
    let mut rng = RandomSource::new(seed, 0);
    let forward: Vec<Vec<f64>> = (0..DRAWS)
        .map(|_| stats(&sample_state(&partition, &x, &hyper, g, &mut rng).unwrap()))
        .collect();

    let mut rng = RandomSource::new(seed, 1);
    let mut state = sample_state(&partition, &x, &hyper, g, &mut rng).unwrap();
    let mut chain = Vec::with_capacity(DRAWS);
    for _ in 0..DRAWS {
        let data = OutcomeData::gaussian(sample_outcomes(&state, &mut rng).unwrap());
        sweep(&mut state, &data, &partition, &x, &mut rng).unwrap();
        state.check_invariants(&partition).unwrap();
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
    geweke(None, 31);
}

#[test]
fn sweep_with_g_hyperprior_preserves_joint_distribution() {
    geweke(Some([3.0, 12.0]), 32);
}
