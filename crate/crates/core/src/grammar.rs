//! The decision grammar shared by prior tables and the controller.
//!
//! A tree is produced by a pre-order series of categorical decisions over
//! a fixed 13-token registry. Each decision has a role that fixes its
//! support:
//!
//! * `Root`: the root unary.
//! * `Connector`: below a unary, either a binary connector or `leaf`.
//! * `Sibling`: first unary of the next branch under a connector, or `stop`
//!   to close the connector (legal once two branches exist).
//! * `Continuation`: next unary of the current sequence, or `stop`.
//! * `Leaf`: the unary applied inside a leaf.
//!
//! The context of a decision is its parent symbol, the first symbols of
//! earlier siblings (truncated to three), and its level, i.e. the number of
//! connectors above it.

use crate::expr::{Binary, ExpressionTree, Tail, Unary};
use std::collections::BTreeMap;

pub const N_TOKENS: usize = 13;
/// Longest unary sequence inside one branch.
pub const MAX_SEQUENCE: usize = 3;
/// Sibling contexts keep at most this many earlier siblings.
pub const SIBLING_CONTEXT: usize = 3;
/// Parent name used for the root decision.
pub const TOP: &str = "^";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Unary(Unary),
    Binary(Binary),
    Stop,
    Leaf,
}

pub type Mask = [bool; N_TOKENS];

impl Token {
    pub const STOP: usize = 11;
    pub const LEAF: usize = 12;

    pub fn all() -> [Token; N_TOKENS] {
        std::array::from_fn(Token::from_index)
    }

    pub fn index(self) -> usize {
        match self {
            Token::Unary(u) => u.index(),
            Token::Binary(b) => 8 + b.index(),
            Token::Stop => Self::STOP,
            Token::Leaf => Self::LEAF,
        }
    }

    pub fn from_index(i: usize) -> Token {
        match i {
            0..=7 => Token::Unary(Unary::ALL[i]),
            8..=10 => Token::Binary(Binary::ALL[i - 8]),
            11 => Token::Stop,
            12 => Token::Leaf,
            _ => panic!("token index {i} out of range"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Token::Unary(u) => u.name(),
            Token::Binary(b) => b.name(),
            Token::Stop => "stop",
            Token::Leaf => "leaf",
        }
    }

    pub fn from_name(name: &str) -> Option<Token> {
        match name {
            "stop" => Some(Token::Stop),
            "leaf" => Some(Token::Leaf),
            _ => Unary::from_name(name)
                .map(Token::Unary)
                .or_else(|| Binary::from_name(name).map(Token::Binary)),
        }
    }
}

/// Registry names in index order.
pub fn registry() -> Vec<&'static str> {
    Token::all().iter().map(|t| t.name()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Root,
    Connector,
    Sibling,
    Continuation,
    Leaf,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Root,
        Role::Connector,
        Role::Sibling,
        Role::Continuation,
        Role::Leaf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Root => "root",
            Role::Connector => "connector",
            Role::Sibling => "sibling",
            Role::Continuation => "continuation",
            Role::Leaf => "leaf",
        }
    }

    pub fn from_name(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Controller output head: root, connector, sequence (both sibling and
    /// continuation decisions), leaf.
    pub fn head(self) -> usize {
        match self {
            Role::Root => 0,
            Role::Connector => 1,
            Role::Sibling | Role::Continuation => 2,
            Role::Leaf => 3,
        }
    }

    /// Tokens this role may ever emit. `siblings` is the number of branches
    /// already opened under the connector (sibling decisions only).
    pub fn support(self, siblings: usize) -> Mask {
        let mut m = [false; N_TOKENS];
        match self {
            Role::Root | Role::Leaf => m[..8].iter_mut().for_each(|b| *b = true),
            Role::Connector => {
                m[8..=10].iter_mut().for_each(|b| *b = true);
                m[Token::LEAF] = true;
            }
            Role::Sibling => {
                m[..8].iter_mut().for_each(|b| *b = true);
                m[Token::STOP] = siblings >= 2;
            }
            Role::Continuation => {
                m[1..8].iter_mut().for_each(|b| *b = true);
                m[Token::STOP] = true;
            }
        }
        m
    }
}

/// Where a decision sits in the tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Context {
    pub role: Role,
    /// `None` only for the root decision.
    pub parent: Option<Token>,
    /// Truncated earlier-sibling set, sorted by name.
    pub siblings: Vec<Unary>,
    pub level: usize,
}

impl Context {
    /// Canonical `parent|s1,s2,s3|level` key.
    pub fn key(&self) -> String {
        let parent = self.parent.map_or(TOP, Token::name);
        let sibs: Vec<&str> = self.siblings.iter().map(|u| u.name()).collect();
        format!("{parent}|{}|{}", sibs.join(","), self.level)
    }

    /// The same role and level with parent and siblings dropped.
    pub fn fallback_key(&self) -> String {
        format!("*||{}", self.level)
    }

    /// Support of this decision before any path or size constraint.
    pub fn support(&self) -> Mask {
        self.role.support(self.siblings.len())
    }
}

/// Parses a `parent|s1,s2|level` key back into its parts.
pub fn parse_key(role: Role, key: &str) -> Option<Context> {
    let mut parts = key.split('|');
    let (p, s, l) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let parent = if p == TOP { None } else { Some(Token::from_name(p)?) };
    let siblings = if s.is_empty() {
        Vec::new()
    } else {
        s.split(',').map(Unary::from_name).collect::<Option<Vec<_>>>()?
    };
    Some(Context {
        role,
        parent,
        siblings,
        level: l.parse().ok()?,
    })
}

/// Corpus-wide normalized counts used to rank siblings; higher is more
/// frequent. Missing symbols rank as zero.
pub type SiblingRank = BTreeMap<Unary, f64>;

/// Keeps the three most frequent earlier siblings (ties broken by name),
/// returned sorted by name so the key ignores order.
pub fn sibling_context(previous: &[Unary], rank: &SiblingRank) -> Vec<Unary> {
    let score = |u: &Unary| rank.get(u).copied().unwrap_or(0.0);
    let mut picked = previous.to_vec();
    picked.sort_by(|a, b| {
        score(b)
            .total_cmp(&score(a))
            .then_with(|| a.name().cmp(b.name()))
    });
    picked.truncate(SIBLING_CONTEXT);
    picked.sort_by(|a, b| a.name().cmp(b.name()));
    picked
}

/// One decision of a tree's derivation. `weight` is the number of
/// variables a leaf decision applies to, one for every other decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub context: Context,
    pub token: Token,
    pub weight: f64,
}

/// Derivation of a tree as decisions, skipping forced ones: the end of a
/// sequence after `id` or at [`MAX_SEQUENCE`], and closing a `div` after its
/// two branches. Levels above `max_level` collapse into `max_level`.
pub fn derivation(tree: &ExpressionTree, rank: &SiblingRank, max_level: usize) -> Vec<Event> {
    let mut out = Vec::new();
    let ev = |role, parent, siblings, level: usize, token, weight| Event {
        context: Context {
            role,
            parent,
            siblings,
            level: level.min(max_level),
        },
        token,
        weight,
    };
    out.push(ev(Role::Root, None, vec![], 0, Token::Unary(tree.root.op), 1.0));
    walk_tail(&tree.body, tree.root.op, 0, rank, max_level, &mut out);
    out
}

fn walk_tail(
    tail: &Tail,
    parent: Unary,
    level: usize,
    rank: &SiblingRank,
    max_level: usize,
    out: &mut Vec<Event>,
) {
    let mk = |role, parent: Option<Token>, siblings: Vec<Unary>, level: usize, token, weight| Event {
        context: Context {
            role,
            parent,
            siblings,
            level: level.min(max_level),
        },
        token,
        weight,
    };
    let up = Some(Token::Unary(parent));
    match tail {
        Tail::Leaf(l) => {
            out.push(mk(Role::Connector, up, vec![], level, Token::Leaf, 1.0));
            out.push(mk(Role::Leaf, up, vec![], level, Token::Unary(l.op), l.vars.len() as f64));
        }
        Tail::Connector(c) => {
            out.push(mk(Role::Connector, up, vec![], level, Token::Binary(c.op), 1.0));
            let child_level = level + 1;
            let bin = Some(Token::Binary(c.op));
            let mut firsts: Vec<Unary> = Vec::new();
            for b in &c.branches {
                let sibs = sibling_context(&firsts, rank);
                out.push(mk(Role::Sibling, bin, sibs, child_level, Token::Unary(b.ops[0].op), 1.0));
                firsts.push(b.ops[0].op);
                let mut prev = b.ops[0].op;
                if prev != Unary::Id {
                    for k in 1..=b.ops.len().min(MAX_SEQUENCE) {
                        if k == MAX_SEQUENCE {
                            break;
                        }
                        let tok = b.ops.get(k).map_or(Token::Stop, |a| Token::Unary(a.op));
                        out.push(mk(Role::Continuation, Some(Token::Unary(prev)), vec![], child_level, tok, 1.0));
                        match tok {
                            Token::Unary(u) => prev = u,
                            _ => break,
                        }
                    }
                }
                let last = b.ops.last().expect("non-empty sequence").op;
                walk_tail(&b.tail, last, child_level, rank, max_level, out);
            }
            if c.op != Binary::Div {
                let sibs = sibling_context(&firsts, rank);
                out.push(mk(Role::Sibling, bin, sibs, child_level, Token::Stop, 1.0));
            }
        }
    }
}
