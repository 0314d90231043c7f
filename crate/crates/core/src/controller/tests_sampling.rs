use super::*;
use crate::expr::fixtures::pair;
use crate::expr::{Affine, Branch, ExpressionTree, Leaf, Unary};
use crate::grammar::{Context, Role, Token};
use crate::priors::{build_hc1, estimate_conditional, EstimateOptions, PriorModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg(topology: Topology) -> ControllerConfig {
    ControllerConfig {
        hidden: 6,
        topology,
        ..Default::default()
    }
}

fn params(cfg: &ControllerConfig, seed: u64) -> ControllerParams {
    ControllerParams::init(cfg.hidden, cfg.max_depth, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn fixed_seed_repeats() {
    let cfg = small_cfg(Topology::Tree);
    let p = params(&cfg, 1);
    let prior = PriorModel::uniform(cfg.max_depth);
    let a = sample(&p, &prior, &cfg, 2, &mut ChaCha8Rng::seed_from_u64(9));
    let b = sample(&p, &prior, &cfg, 2, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

#[test]
fn degenerate_support_gives_one_shape() {
    // id root, add connector, sin leaves under id sequences.
    let t = ExpressionTree::connected(
        Affine::new(Unary::Id),
        crate::expr::Binary::Add,
        vec![
            Branch::leaf(vec![Affine::new(Unary::Id)], Leaf::new(Unary::Sin, vec![0])),
            Branch::leaf(vec![Affine::new(Unary::Id)], Leaf::new(Unary::Sin, vec![0])),
        ],
    );
    let prior = estimate_conditional(
        &[t],
        &EstimateOptions {
            epsilon: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = small_cfg(Topology::Tree);
    let p = params(&cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let keys: std::collections::BTreeSet<String> = (0..100)
        .map(|_| sample(&p, &prior, &cfg, 1, &mut rng).tree.skeleton_key())
        .collect();
    assert_eq!(keys.len(), 1, "{keys:?}");
    assert_eq!(keys.into_iter().next().unwrap(), "id[add](id>sin{0},id>sin{0})");
}

#[test]
fn samples_respect_caps_and_hard_constraints() {
    let hc = build_hc1();
    for topology in [Topology::Tree, Topology::Chain] {
        let cfg = ControllerConfig {
            max_depth: 6,
            max_width: 3,
            max_leaves: 5,
            ..small_cfg(topology)
        };
        let p = params(&cfg, 3);
        let prior = PriorModel::uniform(cfg.max_depth);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let s = sample(&p, &prior, &cfg, 2, &mut rng);
            s.tree.validate().unwrap();
            assert!(s.tree.depth() <= 6 && s.tree.leaf_count() <= 5);
            let mut widest = s.tree.width();
            fn widths(t: &crate::expr::Tail, w: &mut usize) {
                if let crate::expr::Tail::Connector(c) = t {
                    *w = (*w).max(c.branches.len());
                    c.branches.iter().for_each(|b| widths(&b.tail, w));
                }
            }
            widths(&s.tree.body, &mut widest);
            assert!(widest <= 3);
            for path in s.tree.subsequences() {
                assert_eq!(hc.path_violation(&path), None, "{}", s.tree);
            }
        }
    }
}

#[test]
fn sibling_conditioning_follows_prior() {
    let corpus = vec![pair(Unary::Sin, 0, Unary::Cos, 0), pair(Unary::Cos, 0, Unary::Exp, 0)];
    let prior = estimate_conditional(
        &corpus,
        &EstimateOptions {
            epsilon: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    let ctx = Context {
        role: Role::Sibling,
        parent: Some(Token::Binary(crate::expr::Binary::Add)),
        siblings: vec![Unary::Sin],
        level: 1,
    };
    assert_eq!(prior.probability(&ctx, Token::Unary(Unary::Cos)), 1.0);
    let cfg = small_cfg(Topology::Tree);
    let p = params(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = 0;
    for _ in 0..300 {
        let s = sample(&p, &prior, &cfg, 1, &mut rng);
        if let crate::expr::Tail::Connector(c) = &s.tree.body {
            if c.branches[0].ops[0].op == Unary::Sin {
                seen += 1;
                assert_eq!(c.branches[1].ops[0].op, Unary::Cos);
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn outputs_are_distributions() {
    let cfg = small_cfg(Topology::Tree);
    let p = params(&cfg, 5);
    let prior = PriorModel::uniform(cfg.max_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let s = sample(&p, &prior, &cfg, 3, &mut rng);
        let e = evaluate(&p, &s).unwrap();
        for (y, st) in e.outputs.iter().zip(&s.steps) {
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..y.len() {
                assert!(y[i] >= 0.0);
                if !st.mask[i] {
                    assert_eq!(y[i], 0.0);
                }
            }
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn fd_check(f: impl Fn(&ControllerParams) -> f64, p: &ControllerParams, g: &[f64]) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut a = p.clone();
        let mut b = p.clone();
        a.weights[i] += h;
        b.weights[i] -= h;
        let fd = (f(&a) - f(&b)) / (2.0 * h);
        if fd.abs() < 1e-7 && g[i].abs() < 1e-7 {
            continue;
        }
        worst = worst.max(rel_err(fd, g[i]));
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for (k, topology) in [Topology::Tree, Topology::Chain].into_iter().enumerate() {
        let cfg = ControllerConfig {
            hidden: 4,
            max_depth: 5,
            ..small_cfg(topology)
        };
        let p = params(&cfg, 7 + k as u64);
        let prior = estimate_conditional(
            &[pair(Unary::Sin, 0, Unary::Cos, 0), crate::expr::fixtures::fig4_right()],
            &EstimateOptions::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = (0..50)
            .map(|_| sample(&p, &prior, &cfg, 1, &mut rng))
            .find(|s| s.tree.depth() >= 3)
            .unwrap();
        let (_, g) = log_prob_and_grad(&p, &s).unwrap();
        assert!(fd_check(|q| evaluate(q, &s).unwrap().log_prob, &p, &g) < 1e-4);
        let (_, g) = kl_and_grad(&p, &s, &prior).unwrap();
        assert!(fd_check(|q| kl_and_grad(q, &s, &prior).unwrap().0, &p, &g) < 1e-4);
    }
}

#[test]
fn uniform_single_decision_log_prob() {
    let p = ControllerParams::zeros(3, 8);
    let mut mask = [false; crate::grammar::N_TOKENS];
    mask[..4].iter_mut().for_each(|m| *m = true);
    let step = Step {
        context: Context {
            role: Role::Root,
            parent: None,
            siblings: vec![],
            level: 0,
        },
        input: p.layout.encode(None, None, 0),
        source: None,
        mask,
        prior: std::array::from_fn(|i| if i < 4 { 0.25 } else { 0.0 }),
        token: Token::Unary(Unary::Sin),
    };
    let s = SampledSkeleton {
        steps: vec![step],
        tree: ExpressionTree::bare(Affine::new(Unary::Sin), Leaf::new(Unary::Id, vec![0])),
        prior_bias: false,
    };
    let (lp, _) = log_prob_and_grad(&p, &s).unwrap();
    assert!((lp - 0.25f64.ln()).abs() < 1e-15);
    assert_eq!(evaluate(&p, &s).unwrap().kl_avg, 0.0);
    let mut bad = s.clone();
    bad.steps[0].token = Token::Leaf;
    assert!(log_prob_and_grad(&p, &bad).is_err());
}
