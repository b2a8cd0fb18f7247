use super::*;
use crate::envs::test_util::{ks_critical_1pct, ks_statistic_uniform};
use crate::nn::{GradientSet, MlpNetwork, OptimizerState};
use crate::policy::{log_prob, map_net_output};
use crate::replay::Transition;
use crate::rng::stream_rng;
use rand::Rng;

fn spec_like(obs_dim: usize, action_dim: usize) -> crate::envs::EnvSpec {
    crate::envs::EnvSpec {
        id: "pendulum-swingup",
        obs_dim,
        action_dim,
        action_bound: 2.0,
        max_steps: 100,
        noise_scale: 0.01,
    }
}

fn random_batch(
    n: usize,
    obs_dim: usize,
    action_dim: usize,
    rng: &mut impl Rng,
) -> Vec<Transition> {
    (0..n)
        .map(|k| Transition {
            obs: (0..obs_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            action: (0..action_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            next_obs: (0..obs_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            reward: rng.random::<f64>() * 2.0 - 1.0,
            done: k % 7 == 6,
            behavior_log_density: -1.2 + rng.random::<f64>() * 0.4,
        })
        .collect()
}

mod gain_derivation {
    use super::*;

    #[test]
    fn reference_values_to_1e10() {
        let cfg = L2c2Config::derive(1.0, 0.01, 1.0, 0.1).unwrap();
        // High-precision oracle: the reduced fractions 1/99 and 1/990.
        assert!((cfg.epsilon - 1.0 / 99.0).abs() < 1e-10);
        assert!((cfg.lambda_policy - 1.0 / 99.0).abs() < 1e-10);
        assert!((cfg.lambda_value - 1.0 / 990.0).abs() < 1e-10);
    }

    #[test]
    fn zero_beta_disables_value_regularization() {
        let cfg = L2c2Config::derive(1.0, 0.01, 1.0, 0.0).unwrap();
        assert_eq!(cfg.lambda_value, 0.0);
        assert!(cfg.lambda_policy > 0.0);
    }

    #[test]
    fn constraint_violations_are_rejected() {
        assert!(L2c2Config::derive(1.0, 0.01, 0.005, 0.1).is_err());
        assert!(L2c2Config::derive(1.0, 0.0, 1.0, 0.1).is_err());
        assert!(L2c2Config::derive(2.0, 0.5, 1.0, 0.1).is_err());
        assert!(L2c2Config::derive(1.0, 0.01, 1.0, -0.1).is_err());
    }
}

mod neighbor_sampling {
    use super::*;

    #[test]
    fn unit_sigma_interval_is_exactly_unit() {
        let cfg = L2c2Config::derive(1.0, 0.01, 1.0, 0.1).unwrap();
        assert_eq!(cfg.neighbor_halfwidth(), 1.0);
    }

    #[test]
    fn unmoved_dimensions_stay_fixed() {
        let cfg = L2c2Config::default();
        let s = [0.4, -1.0, 2.0];
        let s_next = [0.4, 0.5, 2.0];
        let mut rng = stream_rng(60, 0);
        for _ in 0..200 {
            let tilde = sample_neighbor_state(&s, &s_next, &cfg, &mut rng);
            assert_eq!(tilde[0], 0.4);
            assert_eq!(tilde[2], 2.0);
        }
    }

    #[test]
    fn travel_fraction_is_uniform_on_the_interval() {
        let cfg = L2c2Config::derive(1.5, 0.01, 1.0, 0.1).unwrap();
        let half = cfg.neighbor_halfwidth();
        let s = [0.0];
        let s_next = [2.0];
        let mut rng = stream_rng(61, 0);
        let mut us: Vec<f64> = (0..100_000)
            .map(|_| {
                let t = sample_neighbor_state(&s, &s_next, &cfg, &mut rng);
                (t[0] - s[0]) / (s_next[0] - s[0])
            })
            .collect();
        let stat = ks_statistic_uniform(&mut us, -half, half);
        assert!(stat < ks_critical_1pct(100_000), "KS statistic {stat}");
    }

    #[test]
    fn samples_stay_inside_the_box() {
        let cfg = L2c2Config::derive(2.0, 0.01, 1.0, 0.1).unwrap();
        let half = cfg.neighbor_halfwidth();
        let mut rng = stream_rng(62, 0);
        for _ in 0..10_000 {
            let s: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let s_next: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let tilde = sample_neighbor_state(&s, &s_next, &cfg, &mut rng);
            for i in 0..3 {
                let travel = (s_next[i] - s[i]).abs();
                assert!((tilde[i] - s[i]).abs() <= half * travel * (1.0 + 1e-12));
            }
        }
    }
}

mod distances {
    use super::*;

    #[test]
    fn zero_numerator_collapses_to_epsilon() {
        let eps = 0.25;
        let s = [1.0, -2.0];
        assert_eq!(transition_distance(&s, &s, &[3.0, 4.0], eps), eps);
    }

    #[test]
    fn worked_example_midpoint() {
        let eps = 1.0 / 99.0;
        let d = transition_distance(&[0.0, 0.0], &[0.5, 1.0], &[1.0, 2.0], eps);
        assert!((d - (0.5 + eps)).abs() < 1e-15);
    }

    #[test]
    fn box_corner_distance_is_sigma_times_one_plus_epsilon() {
        for sigma in [1.0, 1.5, 2.0] {
            let cfg = L2c2Config::derive(sigma, 0.01, 1.0, 0.1).unwrap();
            let half = cfg.neighbor_halfwidth();
            let s = [0.3, -1.1];
            let s_next = [1.3, 0.4];
            let tilde: Vec<f64> = s
                .iter()
                .zip(s_next.iter())
                .map(|(&a, &b)| a + (b - a) * half)
                .collect();
            let d = transition_distance(&s, &tilde, &s_next, cfg.epsilon);
            let expected = sigma * (1.0 + cfg.epsilon);
            assert!(
                (d - expected).abs() < 1e-10,
                "sigma {sigma}: d {d} vs {expected}"
            );
        }
    }
}

mod penalties {
    use super::*;
    use crate::policy::GaussianPolicyOutput;

    fn pol(mean: &[f64], std: &[f64]) -> GaussianPolicyOutput {
        GaussianPolicyOutput {
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    #[test]
    fn identical_inputs_give_zero_terms() {
        let cfg = L2c2Config::default();
        let p = pol(&[0.1, 0.2], &[0.5, 0.5]);
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (pt, vt) = l2c2_penalties(&p, &p, &v, &v, cfg.epsilon, &cfg);
        assert_eq!((pt, vt), (0.0, 0.0));
    }

    #[test]
    fn effective_gain_hits_the_upper_bound_at_zero_travel() {
        // At s~ = s the distance is epsilon and lambda_policy / epsilon must
        // equal lambda_upper exactly.
        for (sigma, lower, upper) in [(1.0, 0.01, 1.0), (1.5, 0.02, 0.9), (2.0, 0.001, 0.8)] {
            let cfg = L2c2Config::derive(sigma, lower, upper, 0.1).unwrap();
            let gain = cfg.lambda_policy / cfg.epsilon;
            assert!(
                (gain - upper).abs() < 1e-10,
                "gain {gain} vs upper {upper}"
            );
        }
    }

    #[test]
    fn effective_gain_hits_the_lower_bound_at_the_corner() {
        for (sigma, lower, upper) in [(1.0, 0.01, 1.0), (1.5, 0.02, 0.9), (2.0, 0.001, 0.8)] {
            let cfg = L2c2Config::derive(sigma, lower, upper, 0.1).unwrap();
            let corner_d = sigma * (1.0 + cfg.epsilon);
            let gain = cfg.lambda_policy / corner_d;
            assert!(
                (gain - lower).abs() < 1e-10,
                "gain {gain} vs lower {lower}"
            );
        }
    }

    #[test]
    fn caps_zero_when_all_means_agree() {
        let cfg = CapsConfig::default();
        let mu = [0.3, -0.3];
        assert_eq!(caps_penalty(&mu, &mu, &mu, &cfg), 0.0);
    }

    #[test]
    fn caps_worked_example() {
        let cfg = CapsConfig {
            sigma: 0.2,
            lambda_temporal: 1.0,
            lambda_spatial: 0.0,
        };
        let v = caps_penalty(&[0.0, 0.0], &[1.0, 1.0], &[9.0, 9.0], &cfg);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn caps_temporal_part_is_linear_in_its_gain() {
        let base = CapsConfig {
            sigma: 0.2,
            lambda_temporal: 0.01,
            lambda_spatial: 0.0,
        };
        let doubled = CapsConfig {
            lambda_temporal: 0.02,
            ..base.clone()
        };
        let a = caps_penalty(&[0.0], &[0.7], &[0.0], &base);
        let b = caps_penalty(&[0.0], &[0.7], &[0.0], &doubled);
        assert!((b - 2.0 * a).abs() < 1e-15);
    }

    /// Effective gain stays within `[lambda_lower, lambda_upper]` for every
    /// sampled perturbation; exact at the center and the corner.
    #[test]
    fn gain_bounds_hold_over_random_triples() {
        let mut rng = stream_rng(63, 0);
        for cfg in [
            L2c2Config::derive(1.0, 0.01, 1.0, 0.1).unwrap(),
            L2c2Config::derive(1.5, 0.01, 1.0, 0.1).unwrap(),
        ] {
            for _ in 0..10_000 {
                let dim = rng.random_range(1..=4usize);
                let s: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
                let s_next: Vec<f64> =
                    (0..dim).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
                let tilde = sample_neighbor_state(&s, &s_next, &cfg, &mut rng);
                let d = transition_distance(&s, &tilde, &s_next, cfg.epsilon);
                let gain = cfg.lambda_policy / d;
                assert!(gain <= cfg.lambda_upper * (1.0 + 1e-10));
                assert!(gain >= cfg.lambda_lower * (1.0 - 1e-10));
            }
        }
    }
}

mod scalar_losses {
    use super::*;

    #[test]
    fn td_target_examples() {
        assert_eq!(td_target(2.5, true, 0.99, 10.0), 2.5);
        assert_eq!(td_target(2.5, false, 0.0, 10.0), 2.5);
        assert!((td_target(1.0, false, 0.99, 10.0) - 10.9).abs() < 1e-12);
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(3.0, 3.0, 1.0), 0.0);
        assert!((value_loss(5.0, 3.0, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(value_loss(5.0, 3.0, 0.0), 0.0);
    }

    #[test]
    fn zero_advantage_means_zero_policy_loss() {
        assert_eq!(policy_loss(0.0, -0.5, -0.7, Some(0.2), 1.0), 0.0);
    }

    #[test]
    fn ratio_clipping_worked_example() {
        // ratio = exp(ln 2) = 2.0, clipped to 1.2 at c = 0.2.
        let behavior = -1.0;
        let current = behavior + (2.0f64).ln();
        let rho = clipped_importance_ratio(current, behavior, Some(0.2));
        assert!((rho - 1.2).abs() < 1e-12);
        let unclipped = clipped_importance_ratio(current, behavior, None);
        assert!((unclipped - 2.0).abs() < 1e-12);
        let loss = policy_loss(1.0, current, behavior, Some(0.2), 1.0);
        assert!((loss - (-1.2 * current)).abs() < 1e-12);
    }

    /// For a positive advantage, one optimizer step on the policy loss must
    /// increase the log-density of the taken action.
    #[test]
    fn ascent_direction_on_frozen_batch() {
        let spec = spec_like(2, 1);
        let mut rng = stream_rng(64, 0);
        let policy = {
            let mut net = MlpNetwork::new(&[2, 6, 6, 2], &mut rng).unwrap();
            net.scale_output_layer(0.01);
            net
        };
        let value = MlpNetwork::new(&[2, 6, 6, 5], &mut rng).unwrap();
        let target_value = value.clone();
        let caps = CapsConfig::default();
        let l2c2 = L2c2Config::default();
        let settings = ObjectiveSettings {
            mode: Mode::Vanilla,
            caps: &caps,
            l2c2: &l2c2,
            gamma: 0.99,
            clip_ratio: Some(0.2),
            action_bound: spec.action_bound,
        };
        let obs = vec![0.3, -0.6];
        let action = vec![0.4];
        let transitions = vec![Transition {
            obs: obs.clone(),
            action: action.clone(),
            next_obs: vec![0.1, 0.1],
            reward: 5.0, // strongly positive advantage against a near-zero value net
            done: true,
            behavior_log_density: -1.0,
        }];
        let weights = vec![1.0];
        let mut reg_rng = stream_rng(64, 1);
        let (plan, forwards) = prepare_step(
            &policy,
            &value,
            &target_value,
            &transitions,
            &weights,
            &settings,
            &mut reg_rng,
        )
        .unwrap();
        assert!(plan.advantages[0] > 0.0);

        let before = {
            let (raw, _) = policy.forward(&obs).unwrap();
            let p = map_net_output(&raw, spec.action_bound).unwrap();
            log_prob(&p, &action)
        };
        let mut scratch = StepScratch::new(&policy, &value);
        objective_gradients(
            &policy,
            &value,
            &transitions,
            &plan,
            &forwards,
            &settings,
            &mut scratch,
        )
        .unwrap();
        let mut policy = policy;
        let mut opt = OptimizerState::new(&policy);
        opt.step(&mut policy, &scratch.grad_policy).unwrap();
        let after = {
            let (raw, _) = policy.forward(&obs).unwrap();
            let p = map_net_output(&raw, spec.action_bound).unwrap();
            log_prob(&p, &action)
        };
        assert!(after > before, "log-density moved {before} -> {after}");
    }
}

mod target_updates {
    use super::*;

    #[test]
    fn full_rate_copies_the_online_network() {
        let mut rng = stream_rng(65, 0);
        let online = MlpNetwork::new(&[2, 4, 1], &mut rng).unwrap();
        let mut target = MlpNetwork::new(&[2, 4, 1], &mut rng).unwrap();
        soft_update(&mut target, &online, 1.0).unwrap();
        for ((_, a), (_, b)) in target.parameters().iter().zip(online.parameters().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scalar_example_at_tau_point_one() {
        // theta_bar = 0, theta = 1 -> 0.1 after one update.
        let mut rng = stream_rng(66, 0);
        let mut online = MlpNetwork::new(&[2, 3, 1], &mut rng).unwrap();
        let ones: Vec<Vec<f64>> = online
            .parameters()
            .iter()
            .map(|(_, p)| vec![1.0; p.len()])
            .collect();
        online.set_param_chunks(&ones).unwrap();
        let mut target = online.clone();
        let zeros: Vec<Vec<f64>> = ones.iter().map(|c| vec![0.0; c.len()]).collect();
        target.set_param_chunks(&zeros).unwrap();
        soft_update(&mut target, &online, 0.1).unwrap();
        for (_, p) in target.parameters() {
            for v in p {
                assert!((v - 0.1).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn repeated_updates_converge_geometrically() {
        let mut rng = stream_rng(67, 0);
        let online = MlpNetwork::new(&[3, 5, 2], &mut rng).unwrap();
        let mut target = MlpNetwork::new(&[3, 5, 2], &mut rng).unwrap();
        for _ in 0..200 {
            soft_update(&mut target, &online, 0.1).unwrap();
        }
        let worst = target
            .parameters()
            .iter()
            .zip(online.parameters().iter())
            .flat_map(|((_, a), (_, b))| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-6, "max target gap {worst}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = stream_rng(68, 0);
        let online = MlpNetwork::new(&[2, 4, 1], &mut rng).unwrap();
        let mut target = MlpNetwork::new(&[2, 5, 1], &mut rng).unwrap();
        assert!(soft_update(&mut target, &online, 0.1).is_err());
    }
}

mod acting {
    use super::*;

    fn agent(seed: u64) -> Agent {
        Agent::with_hidden(
            &spec_like(3, 1),
            AgentConfig::default(),
            CapsConfig::default(),
            L2c2Config::default(),
            &[8, 8],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_actions_repeat() {
        let agent = agent(70);
        let obs = [0.5, -0.5, 0.1];
        let a = agent.act(&obs, true, &mut stream_rng(1, 0)).unwrap();
        let b = agent.act(&obs, true, &mut stream_rng(2, 0)).unwrap();
        assert_eq!(a.action, b.action);
        assert_eq!(a.action, a.mean);
    }

    #[test]
    fn actions_respect_the_bounds_under_fuzz() {
        let agent = agent(71);
        let mut rng = stream_rng(72, 0);
        for _ in 0..10_000 {
            let obs: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect();
            let d = agent.act(&obs, false, &mut rng).unwrap();
            assert!(d.action[0].abs() <= 2.0);
            assert!(d.log_density.is_finite());
        }
    }

    #[test]
    fn stochastic_with_floor_std_hugs_the_mean() {
        // Build an agent whose std head is driven to the floor clamp.
        let mut agent = agent(73);
        let mut chunks: Vec<Vec<f64>> = agent
            .policy
            .parameters()
            .iter()
            .map(|(_, p)| p.to_vec())
            .collect();
        // Final layer bias: [mean_raw, std_raw]; a very negative std head
        // softplus-saturates under the floor.
        let last = chunks.len() - 1;
        chunks[last] = vec![0.3, -30.0];
        let n_weights = chunks[last - 1].len();
        chunks[last - 1] = vec![0.0; n_weights];
        agent.policy.set_param_chunks(&chunks).unwrap();

        let p = agent.policy_at(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(p.std[0], crate::policy::STD_FLOOR);
        let mut rng = stream_rng(74, 0);
        let mut hits = 0;
        let n = 10_000;
        for _ in 0..n {
            let d = agent.act(&[0.1, 0.2, 0.3], false, &mut rng).unwrap();
            if (d.action[0] - p.mean[0]).abs() < 1e-2 {
                hits += 1;
            }
        }
        assert!(hits as f64 / n as f64 > 0.999);
    }
}

mod training_step {
    use super::*;
    use crate::replay::PerBuffer;

    fn make_agent(mode: Mode, seed: u64) -> Agent {
        let cfg = AgentConfig {
            mode,
            ..AgentConfig::default()
        };
        Agent::with_hidden(
            &spec_like(3, 1),
            cfg,
            CapsConfig::default(),
            L2c2Config::default(),
            &[8, 8],
            seed,
        )
        .unwrap()
    }

    fn fill_buffer(seed: u64) -> PerBuffer {
        let mut buffer = PerBuffer::new(256, 8, 1.0, 0.5);
        let mut rng = stream_rng(seed, 100);
        for t in random_batch(64, 3, 1, &mut rng) {
            buffer.push(t, None).unwrap();
        }
        buffer
    }

    #[test]
    fn vanilla_reports_exactly_zero_regularizers() {
        let mut agent = make_agent(Mode::Vanilla, 80);
        let mut buffer = fill_buffer(80);
        let terms = agent
            .train_step(&mut buffer, &mut stream_rng(80, 1), &mut stream_rng(80, 2))
            .unwrap();
        assert_eq!(terms.policy_reg, 0.0);
        assert_eq!(terms.value_reg, 0.0);
        assert!(terms.value.is_finite() && terms.policy.is_finite());
    }

    #[test]
    fn target_drift_is_bounded_by_tau() {
        let mut agent = make_agent(Mode::L2c2, 81);
        let mut buffer = fill_buffer(81);
        let tau = agent.config().tau;
        let before_target: Vec<f64> = agent
            .target_value_net()
            .parameters()
            .iter()
            .flat_map(|(_, p)| p.to_vec())
            .collect();
        agent
            .train_step(&mut buffer, &mut stream_rng(81, 1), &mut stream_rng(81, 2))
            .unwrap();
        let after_target: Vec<f64> = agent
            .target_value_net()
            .parameters()
            .iter()
            .flat_map(|(_, p)| p.to_vec())
            .collect();
        let online: Vec<f64> = agent
            .value_net()
            .parameters()
            .iter()
            .flat_map(|(_, p)| p.to_vec())
            .collect();
        let drift = before_target
            .iter()
            .zip(after_target.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let gap = before_target
            .iter()
            .zip(online.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(drift <= tau * gap + 1e-12, "drift {drift} vs tau*gap {}", tau * gap);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let mut agent = make_agent(Mode::Vanilla, 82);
        let mut buffer = PerBuffer::new(64, 8, 1.0, 0.5);
        let mut rng = stream_rng(82, 100);
        for mut t in random_batch(16, 3, 1, &mut rng) {
            t.reward = 1e308;
            buffer.push(t, None).unwrap();
        }
        let err = agent.train_step(&mut buffer, &mut stream_rng(82, 1), &mut stream_rng(82, 2));
        assert!(matches!(err, Err(LearnerError::NonFiniteLoss { .. })));
    }

    /// With every regularization gain forced to zero, caps and l2c2 perform
    /// bit-identical updates to vanilla under identical streams.
    #[test]
    fn zero_gain_modes_match_vanilla_bitwise() {
        let run = |mode: Mode| -> Vec<u64> {
            let cfg = AgentConfig {
                mode,
                ..AgentConfig::default()
            };
            let caps = CapsConfig {
                lambda_temporal: 0.0,
                lambda_spatial: 0.0,
                ..CapsConfig::default()
            };
            let l2c2 = L2c2Config::default().with_gain_overrides(Some(0.0), Some(0.0));
            let mut agent =
                Agent::with_hidden(&spec_like(3, 1), cfg, caps, l2c2, &[8, 8], 900).unwrap();
            let mut buffer = fill_buffer(900);
            let mut replay_rng = stream_rng(900, 1);
            let mut reg_rng = stream_rng(900, 2);
            for _ in 0..5 {
                agent
                    .train_step(&mut buffer, &mut replay_rng, &mut reg_rng)
                    .unwrap();
            }
            agent
                .policy_net()
                .parameters()
                .iter()
                .chain(agent.value_net().parameters().iter())
                .flat_map(|(_, p)| p.iter().map(|v| v.to_bits()))
                .collect()
        };
        let vanilla = run(Mode::Vanilla);
        assert_eq!(run(Mode::Caps), vanilla);
        assert_eq!(run(Mode::L2c2), vanilla);
    }

    /// Analytic gradients of the full combined objective match central finite
    /// differences for every mode on a small network.
    #[test]
    fn full_objective_gradient_check() {
        let mut rng = stream_rng(83, 0);
        for &mode in &[Mode::Vanilla, Mode::Caps, Mode::L2c2] {
            let policy = MlpNetwork::new(&[3, 4, 4, 2], &mut rng).unwrap();
            let value = MlpNetwork::new(&[3, 4, 4, 5], &mut rng).unwrap();
            let target_value = MlpNetwork::new(&[3, 4, 4, 5], &mut rng).unwrap();
            let caps = CapsConfig::default();
            let l2c2 = L2c2Config::default();
            let settings = ObjectiveSettings {
                mode,
                caps: &caps,
                l2c2: &l2c2,
                gamma: 0.99,
                clip_ratio: Some(0.2),
                action_bound: 2.0,
            };
            let transitions = random_batch(3, 3, 1, &mut rng);
            let weights = vec![1.0, 0.7, 0.4];
            let mut reg_rng = stream_rng(83, 1);
            let (plan, forwards) = prepare_step(
                &policy,
                &value,
                &target_value,
                &transitions,
                &weights,
                &settings,
                &mut reg_rng,
            )
            .unwrap();
            let mut scratch = StepScratch::new(&policy, &value);
            objective_gradients(
                &policy,
                &value,
                &transitions,
                &plan,
                &forwards,
                &settings,
                &mut scratch,
            )
            .unwrap();

            let h = 1e-5;
            let check = |net: &MlpNetwork, grads: &GradientSet, is_policy: bool| {
                let base: Vec<Vec<f64>> =
                    net.parameters().iter().map(|(_, p)| p.to_vec()).collect();
                for ci in 0..base.len() {
                    for pi in 0..base[ci].len() {
                        let mut cp = base.clone();
                        cp[ci][pi] += h;
                        let mut plus = net.clone();
                        plus.set_param_chunks(&cp).unwrap();
                        cp[ci][pi] -= 2.0 * h;
                        let mut minus = net.clone();
                        minus.set_param_chunks(&cp).unwrap();
                        let (lp, lm) = if is_policy {
                            (
                                objective_value(&plus, &value, &transitions, &plan, &settings)
                                    .unwrap()
                                    .total(),
                                objective_value(&minus, &value, &transitions, &plan, &settings)
                                    .unwrap()
                                    .total(),
                            )
                        } else {
                            (
                                objective_value(&policy, &plus, &transitions, &plan, &settings)
                                    .unwrap()
                                    .total(),
                                objective_value(&policy, &minus, &transitions, &plan, &settings)
                                    .unwrap()
                                    .total(),
                            )
                        };
                        let fd = (lp - lm) / (2.0 * h);
                        let a = grads.flat()
                            [base[..ci].iter().map(|c| c.len()).sum::<usize>() + pi];
                        let denom = (fd.abs() + a.abs()).max(1e-6);
                        assert!(
                            (fd - a).abs() / denom < 1e-4,
                            "mode {mode}: chunk {ci} param {pi}: fd {fd} analytic {a}"
                        );
                    }
                }
            };
            check(&policy, &scratch.grad_policy, true);
            check(&value, &scratch.grad_value, false);
        }
    }
}
