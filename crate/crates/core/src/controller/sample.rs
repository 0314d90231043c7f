//! Grammar-driven sampling of skeletons.

use super::grad::{cell, head_logits, masked_softmax};
use super::{ControllerConfig, ControllerParams, Topology};
use crate::expr::{Affine, Binary, Branch, Connector, ExpressionTree, Leaf, PathSymbol, Tail, Unary};
use crate::grammar::{sibling_context, Context, Mask, Role, Token, MAX_SEQUENCE, N_TOKENS};
use crate::priors::PriorModel;
use rand::Rng;

/// One recorded decision. Decisions with a single structurally legal
/// option are forced and not recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub context: Context,
    /// Active one-hot input slots.
    pub input: [usize; 3],
    /// Step whose hidden state feeds this one; `None` starts from zeros.
    pub source: Option<usize>,
    /// Tokens the policy could emit here.
    pub mask: Mask,
    /// Prior for this context renormalized over `mask`.
    pub prior: [f64; N_TOKENS],
    pub token: Token,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledSkeleton {
    pub steps: Vec<Step>,
    pub tree: ExpressionTree,
    /// Whether outputs include the `ln P*` logit offset.
    pub prior_bias: bool,
}

/// Renormalizes `p` over `mask`, or uniform over `mask` if it has no mass
/// there.
pub(crate) fn restrict(p: &[f64; N_TOKENS], mask: &Mask) -> [f64; N_TOKENS] {
    let total: f64 = (0..N_TOKENS).filter(|&i| mask[i]).map(|i| p[i]).sum();
    let count = mask.iter().filter(|&&m| m).count() as f64;
    std::array::from_fn(|i| {
        if !mask[i] {
            0.0
        } else if total > 0.0 {
            p[i] / total
        } else {
            1.0 / count
        }
    })
}

struct Sampler<'a, R: Rng> {
    params: &'a ControllerParams,
    prior: &'a PriorModel,
    cfg: &'a ControllerConfig,
    rng: &'a mut R,
    n_vars: usize,
    steps: Vec<Step>,
    hidden: Vec<Vec<f64>>,
    path: Vec<PathSymbol>,
    /// Leaves placed plus branches still open; each open branch ends in at
    /// least one leaf.
    reserved_leaves: usize,
}

impl<R: Rng> Sampler<'_, R> {
    fn unary_mask(&self, allow_id: bool) -> Mask {
        let mut m = [false; N_TOKENS];
        for u in Unary::ALL {
            m[u.index()] = (allow_id || u != Unary::Id) && !self.prior.hc1.blocks(&self.path, u);
        }
        m
    }

    /// Makes one decision. `legal` is the structural support; when it has
    /// a single option the decision is forced and no step is recorded.
    fn decide(
        &mut self,
        context: Context,
        legal: Mask,
        sibling: Option<Token>,
        tree_source: Option<usize>,
    ) -> (Token, Option<usize>) {
        let legal: Mask = std::array::from_fn(|i| legal[i] && context.support()[i]);
        let options = legal.iter().filter(|&&b| b).count();
        if options == 1 {
            let only = legal.iter().position(|&b| b).unwrap();
            return (Token::from_index(only), None);
        }
        let raw = self.prior.lookup(&context).0;
        let mut mask: Mask = std::array::from_fn(|i| legal[i] && raw[i] > 0.0);
        if !mask.iter().any(|&b| b) {
            log::debug!(
                "prior gives no mass to the legal tokens at {}:{}; ignoring it there",
                context.role.name(),
                context.key()
            );
            mask = legal;
        }
        if !mask.iter().any(|&b| b) {
            let fallback = match context.role {
                Role::Connector => Token::Leaf,
                Role::Sibling | Role::Continuation if context.support()[Token::STOP] => Token::Stop,
                _ => Token::Unary(Unary::Id),
            };
            log::warn!(
                "every token masked at {}:{}; emitting {}",
                context.role.name(),
                context.key(),
                fallback.name()
            );
            mask = [false; N_TOKENS];
            mask[fallback.index()] = true;
        }
        let prior = restrict(&raw, &mask);
        let source = match self.cfg.topology {
            Topology::Tree => tree_source,
            Topology::Chain => self.steps.len().checked_sub(1),
        };
        let input = self.params.layout.encode(
            context.parent.map(Token::index),
            sibling.map(Token::index),
            context.level,
        );
        let zero;
        let hp: &[f64] = match source {
            Some(j) => &self.hidden[j],
            None => {
                zero = vec![0.0; self.params.layout.hidden];
                &zero
            }
        };
        let out = cell(self.params, &input, hp);
        let logits = head_logits(self.params, context.role.head(), &out.h);
        let y = masked_softmax(&logits, &mask, self.cfg.prior_logit_bias.then_some(&prior));
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &p) in y.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                pick = Some(i);
                if u < acc {
                    break;
                }
            }
        }
        let token = Token::from_index(pick.expect("mask is non-empty"));
        self.hidden.push(out.h);
        self.steps.push(Step {
            context,
            input,
            source,
            mask,
            prior,
            token,
        });
        (token, Some(self.steps.len() - 1))
    }

    fn leaf(&self, op: Unary) -> Leaf {
        Leaf::new(op, (0..self.n_vars).collect())
    }

    /// Below the unary `parent`: a leaf or a connector with its branches.
    fn tail(&mut self, parent: Unary, level: usize, source: Option<usize>) -> Tail {
        let mut legal = [false; N_TOKENS];
        legal[Token::LEAF] = true;
        // A connector needs room for itself, one unary and a leaf.
        if self.path.len() + 3 <= self.cfg.max_depth && self.reserved_leaves < self.cfg.max_leaves {
            for b in Binary::ALL {
                legal[Token::Binary(b).index()] = true;
            }
        }
        let ctx = Context {
            role: Role::Connector,
            parent: Some(Token::Unary(parent)),
            siblings: vec![],
            level,
        };
        let (tok, conn_step) = self.decide(ctx, legal, None, source);
        let conn_step = conn_step.or(source);
        match tok {
            Token::Binary(op) => Tail::Connector(self.connector(op, level, conn_step)),
            _ => {
                let ctx = Context {
                    role: Role::Leaf,
                    parent: Some(Token::Unary(parent)),
                    siblings: vec![],
                    level,
                };
                let legal = self.unary_mask(true);
                let (tok, _) = self.decide(ctx, legal, None, conn_step);
                match tok {
                    Token::Unary(u) => Tail::Leaf(self.leaf(u)),
                    _ => unreachable!("leaf decisions emit unaries"),
                }
            }
        }
    }

    fn connector(&mut self, op: Binary, level: usize, conn_step: Option<usize>) -> Connector {
        self.path.push(PathSymbol::Binary(op));
        self.reserved_leaves += 1;
        let child_level = level + 1;
        let mut branches = Vec::new();
        let mut firsts: Vec<Unary> = Vec::new();
        let mut prev_first_step = conn_step;
        loop {
            let i = branches.len();
            let must_stop = (op == Binary::Div && i == 2) || i >= self.cfg.max_width;
            if must_stop {
                break;
            }
            let may_stop = i >= 2;
            let may_add = i < 2 || self.reserved_leaves < self.cfg.max_leaves;
            let mut legal = if may_add { self.unary_mask(true) } else { [false; N_TOKENS] };
            legal[Token::STOP] = may_stop;
            let ctx = Context {
                role: Role::Sibling,
                parent: Some(Token::Binary(op)),
                siblings: sibling_context(&firsts, &self.prior.sibling_rank),
                level: child_level,
            };
            let sibling = firsts.last().map(|&u| Token::Unary(u));
            let (tok, step) = self.decide(ctx, legal, sibling, prev_first_step);
            let first = match tok {
                Token::Unary(u) => u,
                _ => break,
            };
            if i >= 2 {
                self.reserved_leaves += 1;
            }
            prev_first_step = step.or(prev_first_step);
            let mut last_step = step.or(prev_first_step);
            self.path.push(PathSymbol::Unary(first));
            let mut ops = vec![Affine::new(first)];
            while first != Unary::Id && ops.len() < MAX_SEQUENCE {
                let mut legal = [false; N_TOKENS];
                legal[Token::STOP] = true;
                // Another unary still has to leave room for the leaf.
                if self.path.len() + 2 <= self.cfg.max_depth {
                    let m = self.unary_mask(false);
                    legal[..8].copy_from_slice(&m[..8]);
                }
                let prev = ops.last().unwrap().op;
                let ctx = Context {
                    role: Role::Continuation,
                    parent: Some(Token::Unary(prev)),
                    siblings: vec![],
                    level: child_level,
                };
                let (tok, step) = self.decide(ctx, legal, None, last_step);
                last_step = step.or(last_step);
                match tok {
                    Token::Unary(u) => {
                        self.path.push(PathSymbol::Unary(u));
                        ops.push(Affine::new(u));
                    }
                    _ => break,
                }
            }
            let last = ops.last().unwrap().op;
            let tail = self.tail(last, child_level, last_step);
            self.path.truncate(self.path.len() - ops.len());
            firsts.push(first);
            branches.push(Branch::new(ops, tail));
        }
        self.path.pop();
        Connector { op, branches }
    }
}

/// Samples one skeleton. Leaves reference all `n_vars` variables with unit
/// coefficients; affine nodes start at `alpha = 1, beta = 0`.
pub fn sample(
    params: &ControllerParams,
    prior: &PriorModel,
    cfg: &ControllerConfig,
    n_vars: usize,
    rng: &mut impl Rng,
) -> SampledSkeleton {
    let mut s = Sampler {
        params,
        prior,
        cfg,
        rng,
        n_vars,
        steps: Vec::new(),
        hidden: Vec::new(),
        path: Vec::new(),
        reserved_leaves: 1,
    };
    let ctx = Context {
        role: Role::Root,
        parent: None,
        siblings: vec![],
        level: 0,
    };
    let legal = s.unary_mask(true);
    let (tok, step) = s.decide(ctx, legal, None, None);
    let root = match tok {
        Token::Unary(u) => u,
        _ => unreachable!("root decisions emit unaries"),
    };
    s.path.push(PathSymbol::Unary(root));
    let body = s.tail(root, 0, step);
    SampledSkeleton {
        steps: s.steps,
        tree: ExpressionTree::new(Affine::new(root), body),
        prior_bias: cfg.prior_logit_bias,
    }
}
