use mrrlvr_core::corpus::{MaskedInstance, ReorderInstance};
use mrrlvr_core::eval::pass_at_k;
use mrrlvr_core::grpo::*;
use mrrlvr_core::mathtext::{math_equivalent, normalize};
use mrrlvr_core::rewards::*;
use proptest::prelude::*;

fn group_with(rewards: Vec<f64>, seed: u64) -> (ToyPolicy, RolloutGroup) {
    let cfg = ToyPolicyConfig::default();
    let mut policy = ToyPolicy::new(cfg);
    for (i, w) in policy.parameters_mut().iter_mut().enumerate() {
        *w = ((i as f64 + seed as f64) * 0.618).sin();
    }
    let mut old = policy.clone();
    for (i, w) in old.parameters_mut().iter_mut().enumerate() {
        *w += ((i * 31 + seed as usize) as f64).cos() * 0.3;
    }
    let reference = ToyPolicy::new(cfg);
    let task = SyntheticTask::Reorder(SyntheticReorderTask {
        id: "q".into(),
        shown: vec![2, 0, 3, 1],
    });
    let mut g = sample_group(&old, &reference, &task, rewards.len(), seed);
    g.rewards = rewards;
    (policy, g)
}

fn pop_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn k3_is_nonnegative(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        prop_assert!(kl_k3(a, b) >= 0.0);
        prop_assert_eq!(kl_k3(a, a), 0.0);
    }

    #[test]
    fn advantages_are_standardised(r in prop::collection::vec(0.0f64..1.0, 2..32)) {
        let a = normalize_rewards(&r, 1e-6).unwrap();
        if pop_std(&r) >= 1e-6 {
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(mean.abs() <= 1e-9);
            prop_assert!((pop_std(&a) - 1.0).abs() <= 1e-6);
        } else {
            prop_assert!(a.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn objective_invariant_under_affine_rewards(
        r in prop::collection::vec(0.0f64..1.0, 2..10),
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
        seed in 0u64..1000,
    ) {
        prop_assume!(pop_std(&r) >= 1e-3);
        let (policy, g) = group_with(r.clone(), seed);
        let config = GrpoConfig::default();
        let base = grpo_objective(&g, &policy, &config).unwrap();
        let mut moved = g.clone();
        moved.rewards = r.iter().map(|x| scale * x + shift).collect();
        let after = grpo_objective(&moved, &policy, &config).unwrap();
        prop_assert!((base - after).abs() <= 1e-9, "{base} vs {after}");
    }

    #[test]
    fn huge_epsilon_is_the_unclipped_surrogate(
        r in prop::collection::vec(0.0f64..1.0, 2..8),
        seed in 0u64..1000,
    ) {
        let (policy, g) = group_with(r, seed);
        let config = GrpoConfig { clip_eps: 1e6, kl_coef: 0.0, ..GrpoConfig::default() };
        let j = grpo_objective(&g, &policy, &config).unwrap();
        let adv = normalize_rewards(&g.rewards, config.std_floor).unwrap();
        let mut direct = 0.0;
        for (i, seq) in g.sequences.iter().enumerate() {
            for (t, &tok) in seq.iter().enumerate() {
                let rho = (policy.token_logprobs(&g.prompt, &seq[..t])[tok] - g.old_logprobs[i][t]).exp();
                direct += rho * adv[i] / (g.sequences.len() * seq.len()) as f64;
            }
        }
        prop_assert!((j - direct).abs() <= 1e-9);
    }

    #[test]
    fn clip_fraction_in_unit_interval(r in prop::collection::vec(0.0f64..1.0, 2..8), seed in 0u64..1000) {
        let (policy, g) = group_with(r, seed);
        let e = evaluate_group(&g, &policy, &GrpoConfig::default(), false).unwrap();
        prop_assert!((0.0..=1.0).contains(&e.clip_fraction));
        let mut same = g.clone();
        same.old_logprobs = same
            .sequences
            .iter()
            .map(|seq| (0..seq.len()).map(|t| policy.token_logprobs(&same.prompt, &seq[..t])[seq[t]]).collect())
            .collect();
        let e = evaluate_group(&same, &policy, &GrpoConfig::default(), false).unwrap();
        prop_assert_eq!(e.clip_fraction, 0.0);
    }

    #[test]
    fn equivalence_is_reflexive_and_symmetric(a in "[0-9a-z+*/^(){}. -]{0,12}", b in "[0-9a-z+*/^(){}. -]{0,12}") {
        prop_assert!(math_equivalent(&a, &a).equivalent);
        prop_assert_eq!(math_equivalent(&a, &b).equivalent, math_equivalent(&b, &a).equivalent);
    }

    #[test]
    fn normalisation_is_idempotent(s in "[ -~]{0,24}") {
        let once = normalize(&s).canonical;
        prop_assert_eq!(normalize(&once).canonical, once);
    }

    #[test]
    fn fractions_match_their_decimals(p in -500i64..500, q in 1i64..500) {
        let frac = format!("\\frac{{{p}}}{{{q}}}");
        let dec = format!("{:.12}", p as f64 / q as f64);
        prop_assert!(math_equivalent(&frac, &dec).equivalent, "{} vs {}", frac, dec);
    }

    #[test]
    fn rewards_stay_in_unit_interval(raw in "[ -~]{0,40}", n in 3usize..7) {
        let mask = MaskedInstance {
            instance_id: "m".into(),
            problem_id: "m".into(),
            masked_text: String::new(),
            ground_truths: vec!["x".into(), "2".into()],
            mask_count: 2,
        };
        let cfg = ProcessRewardConfig::default();
        let v = process_reward(ProcessTaskKind::Mask, ProcessInstance::Mask(&mask), &raw, &cfg).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
        let reorder = ReorderInstance {
            instance_id: "r".into(),
            problem_id: "r".into(),
            shuffled_steps: vec![String::new(); n],
            true_order: (0..n).rev().collect(),
            n,
        };
        let v = process_reward(ProcessTaskKind::Reorder, ProcessInstance::Reorder(&reorder), &raw, &cfg).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
        let f = final_reward("3", &raw).value;
        prop_assert!(f == 0.0 || f == 1.0);
    }

    #[test]
    fn reorder_render_parse_round_trip(order in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
        let parsed = parse_reorder_response(&render_reorder_answer(&order), 6).unwrap();
        prop_assert_eq!(parsed.order, order);
    }

    #[test]
    fn mask_render_parse_round_trip(fills in prop::collection::vec("[a-z0-9+=]{1,6}|\\\\frac\\{[0-9]\\}\\{[0-9];[0-9]\\}", 1..6)) {
        let parsed = parse_mask_response(&render_mask_answer(&fills), fills.len()).unwrap();
        prop_assert_eq!(parsed.fills, fills);
    }

    #[test]
    fn verbatim_fills_score_one(truths in prop::collection::vec("[a-z0-9+=^]{1,6}", 1..10), seed in 0u64..100) {
        let positions = select_eval_positions(truths.len(), DEFAULT_EVAL_POSITIONS, seed);
        let fills = MaskFillResponse { fills: truths.clone() };
        prop_assert_eq!(mask_reward(&fills, &truths, &positions, MaskScoring::default()).value, 1.0);
    }

    #[test]
    fn pass_at_k_is_monotone(n in 1u64..70, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
        let c = ((n as f64) * c_frac).floor() as u64;
        let k = 1 + (((n - 1) as f64) * k_frac).floor() as u64;
        let v = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= v);
        }
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= v);
        }
        if c == n { prop_assert_eq!(v, 1.0); }
        if c == 0 { prop_assert_eq!(v, 0.0); }
    }
}

#[test]
fn k3_fuzz_hundred_thousand() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100_000 {
        let (a, b): (f64, f64) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let k = kl_k3(a, b);
        assert!(k >= 0.0);
        if a != b {
            assert!(k > 0.0 || (a - b).abs() < 1e-7, "{a} {b}");
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn misplaced_count_never_one() {
    for n in 1..=7 {
        let truth: Vec<usize> = (0..n).collect();
        for perm in permutations(n) {
            let pred = ReorderResponse { order: perm.clone() };
            let d = position_distance(&pred, &truth).unwrap();
            let misplaced = (d * n as f64).round() as usize;
            assert_ne!(misplaced, 1, "{perm:?}");
            let r = order_reward(&pred, &truth).unwrap().value;
            if perm == truth {
                assert_eq!(r, 1.0);
            }
            if perm.iter().enumerate().all(|(i, &v)| i != v) {
                assert_eq!(r, 0.0);
            }
        }
    }
}

#[test]
fn malformed_scores_zero() {
    let reorder = ReorderInstance {
        instance_id: "r".into(),
        problem_id: "r".into(),
        shuffled_steps: vec![String::new(); 3],
        true_order: vec![2, 0, 1],
        n: 3,
    };
    let cfg = ProcessRewardConfig::default();
    for raw in ["no box", "\\boxed{0, 0, 1}", "\\boxed{0, 1}", "\\boxed{a, b, c}", "\\boxed{0, 1, 9}", "\\boxed{0, 1"] {
        let v = process_reward(ProcessTaskKind::Reorder, ProcessInstance::Reorder(&reorder), raw, &cfg).unwrap();
        assert_eq!(v.value, 0.0, "{raw}");
        assert!(v.breakdown.malformed.is_some(), "{raw}");
    }
}
