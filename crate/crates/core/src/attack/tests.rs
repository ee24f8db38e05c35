use super::*;
use crate::model::{Dense, Layer};
use crate::tensor::Shape;

/// Two-class linear net on a 1×1×n image with logits `W u + b`.
fn linear(w: &[[f64; 2]; 2], b: [f64; 2]) -> Network {
    let weights = w.iter().flatten().copied().collect();
    Network::new(
        Shape::new(1, 1, 2),
        vec![
            Layer::Flatten,
            Layer::Dense(Dense::new(2, 2, weights, b.to_vec()).unwrap()),
        ],
    )
    .unwrap()
}

/// Boundary `u0 + u1 = 1`, class 1 above it.
fn diagonal() -> Network {
    linear(&[[-4.0, -4.0], [4.0, 4.0]], [4.0, -4.0])
}

fn img(v: &[f64]) -> Image {
    Image::from_vec(v.to_vec()).unwrap()
}

fn margin(net: &Network, u: &Image, y: usize) -> f64 {
    barrier_value(&net.forward(u).unwrap(), y, 1, false).unwrap().value
}

#[test]
fn defaults_and_presets() {
    let c = AttackConfig::new(Metric::L2);
    assert_eq!(
        (c.lambda0, c.beta, c.step, c.mu, c.iterations, c.inner),
        (0.1, 0.75, 0.1, 1.0, 900, 30)
    );
    assert_eq!(c.init_noise, InitNoise::gaussian());
    assert_eq!(AttackConfig::new(Metric::Linf).init_noise, InitNoise::uniform());
    assert_eq!(AttackConfig::new(Metric::L0).init_noise, InitNoise::uniform());
    let tv = AttackConfig::tv();
    assert_eq!((tv.mu, tv.iterations, tv.inner, tv.metric), (5.0, 200, 20, Metric::Tv));
    assert_eq!(AttackConfig::preset(Metric::Tv), tv);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = AttackConfig::new(Metric::L2);
    for bad in [
        AttackConfig {
            beta: 1.0,
            ..base.clone()
        },
        AttackConfig {
            lambda0: 0.0,
            ..base.clone()
        },
        AttackConfig {
            mu: -1.0,
            ..base.clone()
        },
        AttackConfig {
            inner: 0,
            ..base.clone()
        },
        AttackConfig {
            init_noise: InitNoise::Gaussian(vec![]),
            ..base.clone()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn lambda_schedule_steps_every_period() {
    let c = AttackConfig::new(Metric::L2);
    assert_eq!(c.lambda_at(0), 0.1);
    assert_eq!(c.lambda_at(29), 0.1);
    assert!((c.lambda_at(30) - 0.075).abs() < 1e-15);
    assert!((c.lambda_at(899) - 0.1 * 0.75f64.powi(29)).abs() < 1e-18);
    for k in 1..900 {
        assert!(c.lambda_at(k) <= c.lambda_at(k - 1));
    }
}

#[test]
fn misclassified_input_is_its_own_start() {
    let net = diagonal();
    let x = img(&[0.9, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let u = initialize_misclassified(&net, &x, 0, &AttackConfig::new(Metric::L2), &mut rng).unwrap();
    assert_eq!(u, x);
    let r = prox_log_barrier_attack(&net, &x, 0, &AttackConfig::new(Metric::L2)).unwrap();
    assert!(r.success);
    assert_eq!(r.distances.l2, 0.0);
}

#[test]
fn noise_start_succeeds_on_linear_model() {
    // Monte Carlo over 1000 seeds: a clean point close to the boundary is
    // flipped by noise often enough that the ladder essentially never runs out.
    let net = diagonal();
    let x = img(&[0.4, 0.4]);
    for noise in [InitNoise::gaussian(), InitNoise::uniform()] {
        let cfg = AttackConfig {
            init_noise: noise,
            ..AttackConfig::new(Metric::L2)
        };
        let mut ok = 0;
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = initialize_misclassified(&net, &x, 0, &cfg, &mut rng).unwrap();
            assert!(u.in_unit_box());
            assert!(margin(&net, &u, 0) > 0.0);
            ok += 1;
        }
        assert_eq!(ok, 1000);
    }
}

#[test]
fn initialization_is_deterministic_and_can_fail() {
    let net = diagonal();
    let x = img(&[0.4, 0.4]);
    let cfg = AttackConfig::new(Metric::L2);
    let a = initialize_misclassified(&net, &x, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = initialize_misclassified(&net, &x, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);

    // class 0 everywhere in the box
    let never = linear(&[[0.0, 0.0], [0.0, 0.0]], [10.0, 0.0]);
    let err = initialize_misclassified(&never, &x, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap_err();
    assert!(matches!(err, Error::InitializationFailed { tries } if tries > 50));
    let r = prox_log_barrier_attack(&never, &x, 0, &cfg).unwrap();
    assert!(!r.success);
}

#[test]
fn ascent_rescues_noise_resistant_images() {
    // class 1 needs u0 > 0.9 and u1 < 0.1; isotropic noise around (0.5, 0.5)
    // lands there rarely, the ascent reaches it directly
    let net = linear(&[[0.0, 0.0], [10.0, -10.0]], [8.0, 0.0]);
    let x = img(&[0.5, 0.5]);
    let cfg = AttackConfig {
        max_init_tries: 1,
        init_noise: InitNoise::Uniform(vec![0.01]),
        ..AttackConfig::new(Metric::Linf)
    };
    let u = initialize_misclassified(&net, &x, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(margin(&net, &u, 0) > 0.0);
    assert!(u.in_unit_box());
    let off = AttackConfig {
        init_ascent_steps: 0,
        ..cfg
    };
    assert!(initialize_misclassified(&net, &x, 0, &off, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn ascent_init_skips_noise_and_is_deterministic() {
    let net = diagonal();
    let x = img(&[0.3, 0.4]);
    let cfg = AttackConfig {
        init_method: InitMethod::Ascent,
        ..AttackConfig::new(Metric::L2)
    };
    let a = initialize_misclassified(&net, &x, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = initialize_misclassified(&net, &x, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert!(margin(&net, &a, 0) > 0.0);
    // normalized steps along (1, 1)/sqrt2 overshoot the boundary by at most one step
    let d = metric_eval(Metric::L2, &a, &x).unwrap();
    let exact = 0.3 / 2f64.sqrt();
    assert!(d >= exact && d < exact + cfg.init_ascent_step_size + 1e-12, "{d}");
    let r = prox_log_barrier_attack(&net, &x, 0, &cfg).unwrap();
    assert!(r.success);
    assert!((r.distances.l2 - exact).abs() < 0.05 * exact);

    let none = AttackConfig {
        init_ascent_steps: 0,
        ..cfg
    };
    assert!(none.validate().is_err());
    assert_eq!("ascent".parse::<InitMethod>().unwrap(), InitMethod::Ascent);
    assert_eq!(InitMethod::Noise.to_string(), "noise");
}

#[test]
fn backtracking_cases() {
    let net = diagonal();
    let prev = img(&[0.8, 0.8]);
    // already misclassified
    let (u, t) = backtrack_to_feasible(&img(&[0.7, 0.9]), &prev, &net, 0, 1, false).unwrap();
    assert_eq!((u, t), (img(&[0.7, 0.9]), 1.0));
    // identical points
    let (u, t) = backtrack_to_feasible(&prev, &prev, &net, 0, 1, false).unwrap();
    assert_eq!((u, t), (prev.clone(), 0.0));
    // along prev -> 0 the boundary is crossed at t* = 0.375: first accepted t is 0.25
    let (u, t) = backtrack_to_feasible(&img(&[0.0, 0.0]), &prev, &net, 0, 1, false).unwrap();
    assert_eq!(t, 0.25);
    assert!((u.as_slice()[0] - 0.6).abs() < 1e-15);
    assert!(margin(&net, &u, 0) > 0.0);
    // crossing too close to prev for 2^-10 -> fallback
    let near = img(&[0.5000001, 0.5000001]);
    let (u, t) = backtrack_to_feasible(&img(&[0.0, 0.0]), &near, &net, 0, 1, false).unwrap();
    assert_eq!((u, t), (near, 0.0));
}

#[test]
fn backtracking_lands_on_misclassified_side_of_linear_boundary() {
    let net = diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let prev = img(&[rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)]);
        if margin(&net, &prev, 0) <= 0.0 {
            continue;
        }
        let new = img(&[rng.gen(), rng.gen()]);
        let (u, t) = backtrack_to_feasible(&new, &prev, &net, 0, 1, false).unwrap();
        assert!(margin(&net, &u, 0) > 0.0);
        // closed-form crossing parameter for s(t) = s_prev + t (s_new - s_prev)
        let s = |v: &Image| v.as_slice()[0] + v.as_slice()[1] - 1.0;
        let (sp, sn) = (s(&prev), s(&new));
        let t_star = if sn > 0.0 { f64::INFINITY } else { sp / (sp - sn) };
        if t > 0.0 {
            assert!(t < t_star);
            assert!(t == 1.0 || 2.0 * t >= t_star);
        } else {
            assert!(t_star <= 2f64.powi(-10));
        }
    }
}

fn check_invariants(net: &Network, x: &Image, y: usize, r: &AttackResult, cfg: &AttackConfig) {
    assert!(r.success);
    assert!(r.adversarial.in_unit_box());
    assert!(net.predict(&r.adversarial).unwrap() != y);
    let trace = r.trace.as_ref().unwrap();
    assert_eq!(trace.len(), cfg.iterations);
    let mut prev = r.init_distance;
    for (k, e) in trace.iter().enumerate() {
        assert!(e.barrier > 0.0);
        assert!(e.best_distance <= prev);
        assert!(e.best_distance <= e.distance);
        assert_eq!(e.lambda, cfg.lambda_at(k));
        prev = e.best_distance;
    }
    let d = metric_eval(cfg.metric, &r.adversarial, x).unwrap();
    assert_eq!(d, r.distances.get(cfg.metric));
    assert_eq!(d, prev);
    assert!(d <= r.init_distance);
}

fn sample_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Image> {
    (0..n)
        .map(|_| img(&[rng.gen_range(0.05..0.45), rng.gen_range(0.05..0.45)]))
        .collect()
}

#[test]
fn linear_l2_matches_hyperplane_distance() {
    let net = diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut within = 0;
    let points = sample_points(&mut rng, 40);
    for (i, x) in points.iter().enumerate() {
        let cfg = AttackConfig {
            seed: i as u64,
            record_trace: true,
            ..AttackConfig::new(Metric::L2)
        };
        let r = prox_log_barrier_attack(&net, x, 0, &cfg).unwrap();
        check_invariants(&net, x, 0, &r, &cfg);
        let exact = -margin(&net, x, 0) / (8.0 * 2f64.sqrt());
        assert!(r.distances.l2 >= exact * (1.0 - 1e-9));
        within += usize::from(r.distances.l2 <= 1.05 * exact);
    }
    assert!(within >= 38, "{within}/40 within 5%");
}

#[test]
fn linear_linf_matches_dual_norm_distance() {
    let net = linear(&[[-3.0, -1.0], [3.0, 1.0]], [2.0, -2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut within = 0;
    let points = sample_points(&mut rng, 40);
    for (i, x) in points.iter().enumerate() {
        let cfg = AttackConfig {
            seed: i as u64,
            record_trace: true,
            ..AttackConfig::new(Metric::Linf)
        };
        let r = prox_log_barrier_attack(&net, x, 0, &cfg).unwrap();
        check_invariants(&net, x, 0, &r, &cfg);
        let exact = -margin(&net, x, 0) / 8.0;
        assert!(r.distances.linf >= exact * (1.0 - 1e-9));
        within += usize::from(r.distances.linf <= 1.05 * exact);
    }
    assert!(within >= 38, "{within}/40 within 5%");
}

/// Small CNN trained so that its class depends on which band of rows is
/// brightest.
fn banded_cnn(rng: &mut ChaCha8Rng) -> Network {
    let shape = Shape::new(1, 6, 6);
    let data: Vec<_> = (0..300)
        .map(|_| {
            let x = Image::from_fn(shape, |_, _, _| rng.gen()).unwrap();
            let band = |r: std::ops::Range<usize>| {
                r.flat_map(|i| (0..6).map(move |j| (i, j)))
                    .map(|(i, j)| x.get(0, i, j))
                    .sum::<f64>()
            };
            let sums = [band(0..2), band(2..4), band(4..6)];
            let label = (0..3).fold(0, |b, i| if sums[i] > sums[b] { i } else { b });
            crate::tensor::LabeledExample::new(x, label)
        })
        .collect();
    let net = crate::model::parse_arch("cnn:4x3s1;8")
        .unwrap()
        .build(shape, 3, rng)
        .unwrap();
    let cfg = crate::model::TrainConfig {
        epochs: 40,
        learning_rate: 0.1,
        ..Default::default()
    };
    let (net, report) = crate::model::train(&net, &data, &[], &cfg).unwrap();
    assert!(report.train_accuracy > 0.8, "{report:?}");
    net
}

#[test]
fn every_metric_keeps_invariants_on_small_net() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = banded_cnn(&mut rng);
    let mut attacked = 0;
    for trial in 0..12 {
        let x = Image::from_fn(net.input_shape(), |_, _, _| rng.gen()).unwrap();
        let y = net.predict(&x).unwrap();
        for metric in Metric::ALL {
            let cfg = AttackConfig {
                iterations: 60,
                seed: trial,
                record_trace: true,
                ..AttackConfig::preset(metric)
            };
            let r = prox_log_barrier_attack(&net, &x, y, &cfg).unwrap();
            if r.init_distance.is_nan() {
                continue;
            }
            attacked += 1;
            check_invariants(&net, &x, y, &r, &cfg);
            assert_eq!(r, prox_log_barrier_attack(&net, &x, y, &cfg).unwrap());
        }
    }
    assert!(attacked >= 50, "{attacked}");
}

#[test]
fn l1_substitute_still_reports_l0() {
    let net = diagonal();
    let x = img(&[0.3, 0.35]);
    let cfg = AttackConfig {
        l1_substitute: true,
        mu: 0.05,
        record_trace: true,
        ..AttackConfig::new(Metric::L0)
    };
    let r = prox_log_barrier_attack(&net, &x, 0, &cfg).unwrap();
    check_invariants(&net, &x, 0, &r, &cfg);
    assert_eq!(
        r.distances.get(Metric::L0),
        metric_eval(Metric::L0, &r.adversarial, &x).unwrap()
    );
}

#[test]
fn pgd_zero_budget_returns_clean_image() {
    let net = diagonal();
    let x = img(&[0.3, 0.3]);
    let cfg = PgdConfig {
        epsilon: 0.0,
        steps: 10,
        step_size: 0.1,
        metric: Metric::L2,
    };
    let r = pgd_attack(&net, &x, 0, &cfg).unwrap();
    assert_eq!(r.adversarial, x);
    assert!(!r.success);
    let r = pgd_attack(&net, &x, 1, &cfg).unwrap();
    assert!(r.success);
}

#[test]
fn single_sign_step_is_fgsm() {
    let net = linear(&[[1.0, -2.0], [-1.0, 0.5]], [0.0, 0.0]);
    let x = img(&[0.5, 0.5]);
    assert_eq!(net.predict(&x).unwrap(), 1);
    let g = cross_entropy_gradient(&net, &x, 1).unwrap();
    let r = pgd_attack(
        &net,
        &x,
        1,
        &PgdConfig {
            epsilon: 0.1,
            steps: 1,
            step_size: 0.1,
            metric: Metric::Linf,
        },
    )
    .unwrap();
    for (a, gi) in r.adversarial.as_slice().iter().zip(&g) {
        assert_eq!(*a, 0.5 + 0.1 * gi.signum());
    }
}

#[test]
fn pgd_succeeds_beyond_linear_distance_and_bisection_brackets_it() {
    let net = diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for x in sample_points(&mut rng, 30) {
        let exact = -margin(&net, &x, 0) / (8.0 * 2f64.sqrt());
        let r = pgd_attack(
            &net,
            &x,
            0,
            &PgdConfig {
                epsilon: exact * 1.01,
                steps: 100,
                step_size: exact * 0.05,
                metric: Metric::L2,
            },
        )
        .unwrap();
        assert!(r.success);
        let (eps, res) = pgd_minimal_epsilon(&net, &x, 0, &PgdSearch::new(Metric::L2, 2.0))
            .unwrap()
            .unwrap();
        assert!(res.success);
        assert!(eps >= exact * (1.0 - 1e-9) && eps <= exact * 1.01, "{eps} vs {exact}");
    }
}

#[test]
fn plb_is_no_worse_than_pgd_bisection_on_linear_model() {
    let net = diagonal();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut plb = Vec::new();
    let mut pgd = Vec::new();
    for (i, x) in sample_points(&mut rng, 30).iter().enumerate() {
        let cfg = AttackConfig {
            seed: i as u64,
            ..AttackConfig::new(Metric::L2)
        };
        plb.push(prox_log_barrier_attack(&net, x, 0, &cfg).unwrap().distances.l2);
        pgd.push(
            pgd_minimal_epsilon(&net, x, 0, &PgdSearch::new(Metric::L2, 2.0))
                .unwrap()
                .unwrap()
                .0,
        );
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    // PGD on a linear model finds the exact boundary up to bisection
    // resolution, so the two can only tie up to PLB's final accuracy.
    let (a, b) = (median(&mut plb), median(&mut pgd));
    assert!(a <= b * (1.0 + 1e-3), "plb {a} pgd {b}");
}
