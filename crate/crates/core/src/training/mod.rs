//! Objectives, gradients, the local SGD loop and learning metrics.

mod metrics;
mod objective;
mod sgd;
mod synth;

pub use metrics::{estimate_tau, weighted_error, TauEstimate};
pub use objective::{GlobalObjective, LocalDataset, Loss, ObjectiveKind, ObjectiveSpec};
pub use sgd::{local_rounds, sample_batch, stochastic_gradient, LocalOutcome, LocalSgdParams};
pub use synth::{synth_partition, SynthSpec, SyntheticData};

/// Global model at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub theta: Vec<f64>,
    pub round: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupled_prng::{Purpose, SeedMaterial, StreamRng};

    fn problem(kind: ObjectiveKind, noise: f64, ridge: f64) -> (SyntheticData, GlobalObjective) {
        let seed = SeedMaterial::new(11, "t");
        let spec = SynthSpec {
            clients: 4,
            dim: 5,
            samples_per_client: 30,
            noise_std: noise,
            kind,
            heterogeneity: 0.0,
        };
        let data = synth_partition(&seed, &spec).unwrap();
        let obj = GlobalObjective::new(Loss::new(kind, ridge), data.datasets.clone()).unwrap();
        (data, obj)
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn shapes_and_determinism() {
        let seed = SeedMaterial::new(3, "x");
        let spec = SynthSpec {
            clients: 2,
            dim: 2,
            samples_per_client: 3,
            noise_std: 0.1,
            kind: ObjectiveKind::LeastSquares,
            heterogeneity: 0.0,
        };
        let a = synth_partition(&seed, &spec).unwrap();
        let b = synth_partition(&seed, &spec).unwrap();
        assert_eq!(a.datasets, b.datasets);
        assert_eq!(a.datasets.len(), 2);
        for d in &a.datasets {
            assert_eq!((d.features.len(), d.targets.len()), (6, 3));
        }
        let other = synth_partition(&SeedMaterial::new(4, "x"), &spec).unwrap();
        assert_ne!(a.datasets, other.datasets);
    }

    #[test]
    fn heterogeneity_shifts_clients() {
        let seed = SeedMaterial::new(3, "x");
        let mut spec = SynthSpec {
            clients: 2,
            dim: 3,
            samples_per_client: 4,
            noise_std: 0.0,
            kind: ObjectiveKind::LeastSquares,
            heterogeneity: 0.0,
        };
        let iid = synth_partition(&seed, &spec).unwrap();
        spec.heterogeneity = 0.5;
        let het = synth_partition(&seed, &spec).unwrap();
        assert_eq!(iid.planted, het.planted);
        assert_eq!(iid.datasets[0].features, het.datasets[0].features);
        assert_ne!(iid.datasets[0].targets, het.datasets[0].targets);
    }

    #[test]
    fn noiseless_least_squares_recovers_planted() {
        let (data, obj) = problem(ObjectiveKind::LeastSquares, 0.0, 0.0);
        let opt = obj.minimize();
        for (a, b) in opt.iter().zip(&data.planted) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!(obj.value(&opt) < 1e-20);
        assert!(norm(&obj.gradient(&opt)) < 1e-10);
    }

    #[test]
    fn full_batch_gradient_vanishes_at_local_optimum() {
        let (data, _) = problem(ObjectiveKind::LeastSquares, 0.3, 0.0);
        let d = &data.datasets[0];
        let local = GlobalObjective::new(Loss::new(ObjectiveKind::LeastSquares, 0.0), vec![d.clone()]).unwrap();
        let opt = local.minimize();
        let all: Vec<usize> = (0..d.len()).collect();
        let g = stochastic_gradient(&local.loss, d, &opt, &all).unwrap();
        assert!(norm(&g) < 1e-10);
    }

    #[test]
    fn singleton_batches_average_to_full_gradient() {
        for kind in [ObjectiveKind::LeastSquares, ObjectiveKind::Logistic] {
            let (data, obj) = problem(kind, 0.2, 0.01);
            let d = &data.datasets[1];
            let theta = vec![0.3, -0.2, 0.1, 0.5, -0.4];
            let full = obj.loss.full_gradient(d, &theta);
            let mut mean = vec![0.0; theta.len()];
            for i in 0..d.len() {
                let g = stochastic_gradient(&obj.loss, d, &theta, &[i]).unwrap();
                mean.iter_mut().zip(g).for_each(|(m, g)| *m += g / d.len() as f64);
            }
            for (a, b) in mean.iter().zip(&full) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_or_out_of_range_batch_is_error() {
        let (data, obj) = problem(ObjectiveKind::LeastSquares, 0.1, 0.0);
        let theta = vec![0.0; 5];
        assert!(stochastic_gradient(&obj.loss, &data.datasets[0], &theta, &[]).is_err());
        assert!(stochastic_gradient(&obj.loss, &data.datasets[0], &theta, &[30]).is_err());
    }

    #[test]
    fn smoothness_certificate() {
        let (_, obj) = problem(ObjectiveKind::LeastSquares, 0.5, 0.0);
        let nu = obj.smoothness();
        assert!(nu > 0.0);
        let mut rng = StreamRng::new(&SeedMaterial::new(5, "s"), 0, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let a: Vec<f64> = (0..5).map(|_| 3.0 * rng.next_standard_normal()).collect();
            let b: Vec<f64> = (0..5).map(|_| 3.0 * rng.next_standard_normal()).collect();
            let ga = obj.gradient(&a);
            let gb = obj.gradient(&b);
            let dg: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
            let dt: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let ratio = norm(&dg) / norm(&dt);
            assert!(ratio <= nu * (1.0 + 1e-12));
            worst = worst.max(ratio);
        }
        assert!(worst > 0.2 * nu);
    }

    #[test]
    fn gradients_match_central_differences() {
        for kind in [ObjectiveKind::LeastSquares, ObjectiveKind::Logistic] {
            let (_, obj) = problem(kind, 0.3, 0.05);
            let mut rng = StreamRng::new(&SeedMaterial::new(6, "fd"), 0, 0);
            for _ in 0..100 {
                let theta: Vec<f64> = (0..5).map(|_| rng.next_standard_normal()).collect();
                let g = obj.gradient(&theta);
                for j in 0..5 {
                    let h = 1e-5;
                    let mut p = theta.clone();
                    let mut m = theta.clone();
                    p[j] += h;
                    m[j] -= h;
                    let fd = (obj.value(&p) - obj.value(&m)) / (2.0 * h);
                    let scale = g[j].abs().max(1e-3);
                    assert!((fd - g[j]).abs() / scale < 1e-6, "{kind:?} {j}: {fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn logistic_minimizer_is_stationary() {
        let (_, obj) = problem(ObjectiveKind::Logistic, 0.0, 0.01);
        let opt = obj.minimize();
        assert!(norm(&obj.gradient(&opt)) < 1e-10);
        let spec = ObjectiveSpec::analyze(&obj, &vec![1.0; 5]);
        assert!(spec.smoothness > 0.0 && spec.gradient_variance >= 0.0 && spec.initial_gap >= 0.0);
    }

    fn params(steps: usize, eta: f64, batch: usize) -> LocalSgdParams {
        LocalSgdParams {
            steps,
            learning_rate: eta,
            batch_size: batch,
            divergence_ceiling: 1e6,
        }
    }

    fn update(outcome: LocalOutcome) -> Vec<f64> {
        match outcome {
            LocalOutcome::Update(d) => d,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_full_batch_step() {
        let (data, obj) = problem(ObjectiveKind::LeastSquares, 0.1, 0.0);
        let d = &data.datasets[2];
        let theta = vec![0.1; 5];
        let seed = SeedMaterial::new(1, "r").for_purpose(Purpose::Batch);
        let mut rng = StreamRng::new(&seed, 2, 0);
        let delta = update(local_rounds(&obj.loss, d, &theta, &params(1, 0.05, 1000), &mut rng).unwrap());
        let g = obj.loss.full_gradient(d, &theta);
        for (a, b) in delta.iter().zip(&g) {
            assert!((a + 0.05 * b).abs() < 1e-15);
        }
        let mut rng = StreamRng::new(&seed, 2, 0);
        let zero = update(local_rounds(&obj.loss, d, &theta, &params(4, 0.0, 5), &mut rng).unwrap());
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_steps_match_unrolled_oracle() {
        let (data, obj) = problem(ObjectiveKind::Logistic, 0.0, 0.01);
        let d = &data.datasets[0];
        let theta0 = vec![0.2, -0.1, 0.0, 0.3, 0.05];
        let seed = SeedMaterial::new(9, "r").for_purpose(Purpose::Batch);
        let mut rng = StreamRng::new(&seed, 0, 4);
        let delta = update(local_rounds(&obj.loss, d, &theta0, &params(3, 0.1, 7), &mut rng).unwrap());

        let mut oracle_rng = StreamRng::new(&seed, 0, 4);
        let mut theta = theta0.clone();
        for _ in 0..3 {
            let batch = sample_batch(d.len(), 7, &mut oracle_rng);
            let mut uniq = batch.clone();
            uniq.sort_unstable();
            uniq.dedup();
            assert_eq!(uniq.len(), 7);
            let g = obj.loss.batch_gradient(d, &theta, &batch).unwrap();
            theta = theta.iter().zip(&g).map(|(t, g)| t - 0.1 * g).collect();
        }
        for ((dl, t), t0) in delta.iter().zip(&theta).zip(&theta0) {
            assert!((dl - (t - t0)).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_guard_trips() {
        let (data, obj) = problem(ObjectiveKind::LeastSquares, 0.1, 0.0);
        let seed = SeedMaterial::new(1, "r");
        let mut rng = StreamRng::new(&seed, 0, 0);
        let mut p = params(50, 10.0, 30);
        p.divergence_ceiling = 1e3;
        let out = local_rounds(&obj.loss, &data.datasets[0], &vec![1.0; 5], &p, &mut rng).unwrap();
        assert!(matches!(out, LocalOutcome::Diverged { .. }));
        assert!(local_rounds(&obj.loss, &data.datasets[0], &vec![1.0; 5], &params(0, 0.1, 1), &mut rng).is_err());
    }
}
