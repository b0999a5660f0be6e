//! End-to-end checks across modules against closed-form oracles.

use landscape_core::data::{
    load_cifar_batch, parse_cifar_batch, read_dataset_cache, synthetic_classification, write_cifar_batch,
    write_dataset_cache, RawImageRecord, PIXELS, RECORD_LEN,
};
use landscape_core::hessian::{
    clean_spectrum_negmag, clean_spectrum_topk, entropy, free_energy, hessian_fd, thermo,
};
use landscape_core::model::{
    read_checkpoint, write_checkpoint, Activation, Dataset, LossKind, NetworkSpec, ParamVector,
};
use landscape_core::numerics::{symmetric_eigenvalues, DenseMatrix, RngStream, Spectrum};
use landscape_core::optim::{self, Algorithm, OptimizerConfig};
use landscape_core::Error;
use proptest::prelude::*;

fn linear(widths: usize, rows: Vec<Vec<f64>>, y: Vec<f64>) -> (NetworkSpec, Dataset) {
    let spec = NetworkSpec::new(vec![widths, 1], vec![Activation::Identity], LossKind::HalfQuadratic, 0.0).unwrap();
    (spec, Dataset::new(DenseMatrix::from_rows(&rows).unwrap(), y).unwrap())
}

#[test]
fn quadratic_toy_entropy_is_closed_form() {
    // summed half-quadratic loss: H = XᵀX = diag(4, 1)
    let (spec, data) = linear(2, vec![vec![2.0, 0.0], vec![0.0, 1.0]], vec![0.3, -0.2]);
    let theta = ParamVector::new(vec![0.15, -0.2]);
    let h = hessian_fd(&spec, &theta, &data).unwrap();
    assert!(h.sub(&DenseMatrix::from_diagonal(&[4.0, 1.0])).unwrap().max_abs() < 1e-9);
    let spectrum = clean_spectrum_negmag(&symmetric_eigenvalues(&h).unwrap());
    let report = thermo(&spec, &theta, &data, &spectrum).unwrap();
    assert!((report.s + 4f64.ln() / 4.0).abs() < 1e-9, "{}", report.s);
    assert_eq!(report.retained_count, 2);
    assert!((report.free_energy - free_energy(report.u, report.h, report.s, report.alpha)).abs() < 1e-12);
}

#[test]
fn halving_alpha_doubles_the_prior_entropy_term() {
    let (u, h, s, alpha) = (0.02, 1e-4, 2.5, 0.8);
    let full = free_energy(u, h, s, alpha) - u;
    let half = free_energy(u, h, s, alpha / 2.0) - u;
    assert!((half - 2.0 * full).abs() < 1e-12);
}

#[test]
fn unique_minimum_gives_identical_entropy_for_every_algorithm() {
    let (spec, data) = linear(1, vec![vec![1.0], vec![2.0]], vec![0.5, 0.8]);
    let theta0 = ParamVector::new(vec![-1.0]);
    let mut entropies = Vec::new();
    let mut minima = Vec::new();
    for alg in Algorithm::ALL {
        let cfg = OptimizerConfig {
            algorithm: alg,
            learning_rate: 0.05,
            batch_size: 1,
            iterations: 400,
            refine_tolerance: 1e-12,
            refine_max_iters: 100_000,
            langevin_minibatches: 2,
            log_every: usize::MAX,
        };
        let traj = optim::run(&spec, &theta0, &data, &cfg, &mut RngStream::new(1, 0)).unwrap();
        let refined = optim::refine(&spec, &traj.final_theta, &data, 1e-12, 0.05, 100_000).unwrap();
        assert!(refined.converged, "{alg:?}");
        let spectrum = clean_spectrum_negmag(&symmetric_eigenvalues(&hessian_fd(&spec, &refined.theta, &data).unwrap()).unwrap());
        entropies.push(entropy(&spectrum, 1).unwrap().s);
        minima.push(refined.theta[0]);
    }
    // minimum of ½Σ(θx − y)² is Σxy/Σx², curvature Σx² = 5
    for (s, m) in entropies.iter().zip(&minima) {
        assert!((m - 2.1 / 5.0).abs() < 1e-11);
        assert!((s + 5f64.ln() / 2.0).abs() < 1e-9);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let spec = NetworkSpec::classifier(&[5, 3, 1], 1e-3);
    let theta = spec.init_gaussian(0.3, &mut RngStream::new(4, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.lscp");
    write_checkpoint(&path, &spec, &theta).unwrap();
    let (widths, back) = read_checkpoint(&path).unwrap();
    assert_eq!(widths, spec.widths());
    assert!(theta.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn cifar_batches_round_trip_and_reject_truncation() {
    let mut rng = RngStream::new(9, 0);
    let records: Vec<RawImageRecord> = (0..4)
        .map(|i| {
            let px: Vec<u8> = (0..PIXELS).map(|_| rng.next_u64() as u8).collect();
            RawImageRecord::new(i as u8, px.try_into().unwrap()).unwrap()
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.bin");
    write_cifar_batch(&path, &records).unwrap();
    assert_eq!(load_cifar_batch(&path).unwrap(), records);
    let bytes = std::fs::read(&path).unwrap();
    match parse_cifar_batch(&bytes[..RECORD_LEN + 10]) {
        Err(Error::Truncated { offset }) => assert_eq!(offset, RECORD_LEN as u64),
        other => panic!("{other:?}"),
    }
}

#[test]
fn dataset_cache_round_trips() {
    let (train, _) = synthetic_classification(4, 6, 2.0, 3).unwrap();
    let mut buf = Vec::new();
    write_dataset_cache(&mut buf, &train).unwrap();
    let back = read_dataset_cache(&mut buf.as_slice()).unwrap();
    assert_eq!(back, train);
}

proptest! {
    #[test]
    fn negmag_cleaning_is_idempotent_and_respects_threshold(values in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let once = clean_spectrum_negmag(&Spectrum::new(values));
        let twice = clean_spectrum_negmag(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.retained_values().all(|v| v > once.threshold && v > 0.0));
        let dropped = once.eigenvalues.len() - once.retained.len();
        prop_assert_eq!(dropped, once.eigenvalues.iter().filter(|&&v| v <= once.threshold).count());
    }

    #[test]
    fn topk_keeps_the_largest(values in prop::collection::vec(-5.0f64..5.0, 1..15), k in 1usize..15) {
        let s = Spectrum::new(values);
        let k = k.min(s.len());
        let top = clean_spectrum_topk(&s, k).unwrap();
        prop_assert_eq!(top.retained.len(), k);
        let smallest_kept = top.retained_values().fold(f64::INFINITY, f64::min);
        prop_assert!(s.eigenvalues[k..].iter().all(|&v| v <= smallest_kept));
    }

    #[test]
    fn linear_model_hessian_is_gram_matrix(xs in prop::collection::vec(-2.0f64..2.0, 6)) {
        let rows = vec![xs[0..2].to_vec(), xs[2..4].to_vec(), xs[4..6].to_vec()];
        let (spec, data) = linear(2, rows.clone(), vec![0.1, 0.2, 0.3]);
        let h = hessian_fd(&spec, &ParamVector::new(vec![0.3, -0.4]), &data).unwrap();
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let gram = x.transpose().matmul(&x).unwrap();
        prop_assert!(h.sub(&gram).unwrap().max_abs() < 1e-8);
    }
}
