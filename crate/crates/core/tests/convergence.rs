use sdae_core::brownian::BrownianPath;
use sdae_core::convergence::{
    fit_rate, pathwise_error, run_sample, run_study, run_study_with, StudyConfig,
};
use sdae_core::integrators::integrate;
use sdae_core::models::{example3d, ornstein_uhlenbeck};
use sdae_core::Scheme;

const N_REF: usize = 1 << 14;

fn desk_resolutions() -> Vec<usize> {
    (5..=10).map(|k| 1 << k).collect()
}

#[test]
fn pathwise_error_matches_brute_force_loop() {
    let p = example3d();
    let path = BrownianPath::generate(1, 1.0, N_REF, 3).unwrap();
    let reference = integrate(&p, N_REF, &path, Scheme::Primary).unwrap();
    let coarse = integrate(&p, 64, &path, Scheme::Primary).unwrap();
    let mut brute = 0.0_f64;
    for i in 0..=64 {
        let j = i * (N_REF / 64);
        assert_eq!(coarse.times[i], reference.times[j]);
        let diff: f64 = (0..3)
            .map(|k| (coarse.states[i][k] - reference.states[j][k]).powi(2))
            .sum::<f64>()
            .sqrt();
        brute = brute.max(diff);
    }
    let e = pathwise_error(&coarse, &reference).unwrap();
    assert!(e > 0.0);
    assert!((e - brute).abs() <= 1e-14 * brute);
    let report = run_sample(&p, 1, N_REF, &[64]).unwrap();
    assert_eq!(report.errors, vec![e]);
}

#[test]
fn single_resolution_rate_is_undefined() {
    let r = run_sample(&ornstein_uhlenbeck(1.0), 3, 64, &[64]).unwrap();
    assert_eq!(r.errors, vec![0.0]);
    assert!(r.rate.is_nan());
    assert!(r.is_ok() && !r.has_rate());
}

#[test]
fn three_sample_rates_fall_in_the_paper_band() {
    let res = desk_resolutions();
    let mut rates = Vec::new();
    for seed in [1, 2, 3] {
        let r = run_sample(&example3d(), seed, N_REF, &res).unwrap();
        assert!(r.is_ok());
        rates.push(r.rate);
    }
    println!("per-sample rates: {rates:?}");
    for r in &rates {
        assert!(*r > 0.3 && *r < 0.65, "rates {rates:?}");
    }
}

/// `Y(t) = e^{-t} + sigma ∫ e^{-(t-s)} dW(s)`, with the stochastic integral
/// summed exactly over the fine increments.
fn ou_exact(sigma: f64, path: &BrownianPath) -> Vec<f64> {
    let n = path.n_fine();
    let h = 1.0 / n as f64;
    let inc = path.increments();
    let mut y = vec![1.0];
    let mut acc = 0.0;
    for i in 0..n {
        // ∫_{t_i}^{t_{i+1}} e^{s} dW ≈ e^{t_i + h/2} ΔW_i
        acc += ((i as f64 + 0.5) * h).exp() * inc.row(i)[0];
        let t = (i + 1) as f64 * h;
        y.push((-t).exp() * (1.0 + sigma * acc));
    }
    y
}

#[test]
fn ornstein_uhlenbeck_converges_at_order_one() {
    let sigma = 1.0;
    let p = ornstein_uhlenbeck(sigma);
    let res = desk_resolutions();
    let mut oracle_rates = Vec::new();
    let mut study_rates = Vec::new();
    for seed in 1..=4 {
        let path = BrownianPath::generate(seed, 1.0, N_REF, 1).unwrap();
        let exact = ou_exact(sigma, &path);
        // five shared grid points t = 0, 1/4, ..., 1
        let errors: Vec<f64> = res
            .iter()
            .map(|&n| {
                let traj = integrate(&p, n, &path, Scheme::Primary).unwrap();
                (0..=4)
                    .map(|k| (traj.states[k * n / 4][0] - exact[k * N_REF / 4]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        oracle_rates.push(fit_rate(&res, &errors).rate);
        study_rates.push(run_sample(&p, seed, N_REF, &res).unwrap().rate);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("oracle rates {oracle_rates:?}, reference rates {study_rates:?}");
    assert!((mean(&oracle_rates) - 1.0).abs() < 0.25, "{oracle_rates:?}");
    assert!((mean(&study_rates) - 1.0).abs() < 0.25, "{study_rates:?}");
}

#[test]
fn mean_error_decreases_with_resolution() {
    let seeds: Vec<u64> = (1..=8).collect();
    let study = run_study(&example3d(), &seeds, N_REF, &desk_resolutions(), true).unwrap();
    let me = study.mean_errors();
    assert!(me[5] < me[0], "{me:?}");
}

#[test]
fn parallel_and_serial_studies_are_identical() {
    let seeds: Vec<u64> = (1..=6).collect();
    let mut cfg = StudyConfig::new(1 << 12, vec![32, 64, 128, 256]);
    cfg.parallel = true;
    let par = run_study_with(&example3d(), &seeds, &cfg).unwrap();
    cfg.parallel = false;
    let ser = run_study_with(&example3d(), &seeds, &cfg).unwrap();
    assert_eq!(par, ser);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    par.write_samples_csv(&mut a).unwrap();
    ser.write_samples_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_seed_study_has_zero_spread() {
    let s = run_study(
        &ornstein_uhlenbeck(1.0),
        &[5],
        1 << 10,
        &[32, 64, 128],
        false,
    )
    .unwrap();
    assert_eq!(s.summary.mean_rate, s.reports[0].rate);
    assert_eq!(s.summary.std_rate, 0.0);
}
