//! Hard constraints: path patterns that are never sampled.

use crate::expr::{PathSymbol, Unary};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hc1Pattern {
    /// `outer` applied directly to `inner` with no connector between them.
    Adjacent(Unary, Unary),
    /// More than `max` trigonometric symbols on one root-to-leaf path.
    TrigNesting { max: usize },
    /// `id` in a branch sequence holding other operators.
    IdentityInSequence,
}

impl fmt::Display for Hc1Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hc1Pattern::Adjacent(a, b) => write!(f, "adjacent:{a}>{b}"),
            Hc1Pattern::TrigNesting { max } => write!(f, "trig-nesting:{max}"),
            Hc1Pattern::IdentityInSequence => f.write_str("identity-in-sequence"),
        }
    }
}

impl FromStr for Hc1Pattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "identity-in-sequence" {
            return Ok(Hc1Pattern::IdentityInSequence);
        }
        if let Some(n) = s.strip_prefix("trig-nesting:") {
            return n
                .parse()
                .map(|max| Hc1Pattern::TrigNesting { max })
                .map_err(|e| format!("{s:?}: {e}"));
        }
        if let Some(pair) = s.strip_prefix("adjacent:") {
            if let Some((a, b)) = pair.split_once('>') {
                if let (Some(a), Some(b)) = (Unary::from_name(a), Unary::from_name(b)) {
                    return Ok(Hc1Pattern::Adjacent(a, b));
                }
            }
        }
        Err(format!("unknown hard-constraint pattern {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Hc1Set {
    pub patterns: Vec<Hc1Pattern>,
}

/// The default hard-constraint set: no self- or mutual nesting of exp and
/// log, at most two trigonometric levels per path, and no `id` inside a
/// multi-operator sequence.
pub fn build_hc1() -> Hc1Set {
    use Unary::{Exp, Log};
    Hc1Set {
        patterns: vec![
            Hc1Pattern::Adjacent(Exp, Exp),
            Hc1Pattern::Adjacent(Log, Log),
            Hc1Pattern::Adjacent(Exp, Log),
            Hc1Pattern::Adjacent(Log, Exp),
            Hc1Pattern::TrigNesting { max: 2 },
            Hc1Pattern::IdentityInSequence,
        ],
    }
}

impl Hc1Set {
    pub fn forbids_adjacent(&self, outer: Unary, inner: Unary) -> bool {
        self.patterns.contains(&Hc1Pattern::Adjacent(outer, inner))
    }

    fn trig_cap(&self) -> Option<usize> {
        self.patterns.iter().find_map(|p| match p {
            Hc1Pattern::TrigNesting { max } => Some(*max),
            _ => None,
        })
    }

    /// First pattern matched by a complete root-to-leaf path (as returned by
    /// [`crate::ExpressionTree::subsequence`]).
    pub fn path_violation(&self, path: &[PathSymbol]) -> Option<Hc1Pattern> {
        for w in path.windows(2) {
            if let [PathSymbol::Unary(a), PathSymbol::Unary(b)] = w {
                if self.forbids_adjacent(*a, *b) {
                    return Some(Hc1Pattern::Adjacent(*a, *b));
                }
            }
        }
        if let Some(max) = self.trig_cap() {
            let trig = path
                .iter()
                .filter(|s| matches!(s, PathSymbol::Unary(u) if u.is_trig()))
                .count();
            if trig > max {
                return Some(Hc1Pattern::TrigNesting { max });
            }
        }
        if self.patterns.contains(&Hc1Pattern::IdentityInSequence) && path.len() > 2 {
            // Branch sequences are the unary runs strictly after a connector
            // and before the leaf symbol.
            let inner = &path[1..path.len() - 1];
            let mut run: Vec<Unary> = Vec::new();
            let mut after_connector = false;
            for s in inner.iter().chain(std::iter::once(&PathSymbol::Binary(crate::expr::Binary::Add))) {
                match s {
                    PathSymbol::Unary(u) if after_connector => run.push(*u),
                    PathSymbol::Unary(_) => {}
                    PathSymbol::Binary(_) => {
                        if run.len() > 1 && run.contains(&Unary::Id) {
                            return Some(Hc1Pattern::IdentityInSequence);
                        }
                        run.clear();
                        after_connector = true;
                    }
                }
            }
        }
        None
    }

    /// Whether appending `next` to a legal partial path would match a
    /// pattern. Only adjacency and trig nesting depend on the path; identity
    /// placement is enforced by the grammar.
    pub fn blocks(&self, path: &[PathSymbol], next: Unary) -> bool {
        if let Some(PathSymbol::Unary(last)) = path.last() {
            if self.forbids_adjacent(*last, next) {
                return true;
            }
        }
        if next.is_trig() {
            if let Some(max) = self.trig_cap() {
                let trig = path
                    .iter()
                    .filter(|s| matches!(s, PathSymbol::Unary(u) if u.is_trig()))
                    .count();
                return trig + 1 > max;
            }
        }
        false
    }
}
