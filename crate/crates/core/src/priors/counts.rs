//! Normalized counts: each expression's raw count of a combination is
//! divided by its number of distinct variables, and the corpus value is
//! the mean over expressions.

use crate::expr::{ExpressionTree, Tail, Unary};
use crate::grammar::{derivation, Role, SiblingRank, Token, N_TOKENS};
use crate::par::{self, Execution};
use std::collections::BTreeMap;

/// Raw count of every registry token in one expression. Leaf operators
/// count once per variable they apply to.
pub fn symbol_counts(tree: &ExpressionTree) -> [f64; N_TOKENS] {
    let mut c = [0.0; N_TOKENS];
    c[Token::Unary(tree.root.op).index()] += 1.0;
    fn walk(t: &Tail, c: &mut [f64; N_TOKENS]) {
        match t {
            Tail::Leaf(l) => c[Token::Unary(l.op).index()] += l.vars.len() as f64,
            Tail::Connector(k) => {
                c[Token::Binary(k.op).index()] += 1.0;
                for b in &k.branches {
                    for a in &b.ops {
                        c[Token::Unary(a.op).index()] += 1.0;
                    }
                    walk(&b.tail, c);
                }
            }
        }
    }
    walk(&tree.body, &mut c);
    c
}

fn variable_count(tree: &ExpressionTree) -> f64 {
    tree.variables().len() as f64
}

/// Corpus-level normalized count of `token` (Def. 4).
pub fn normalized_count(corpus: &[ExpressionTree], token: Token) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let total: f64 = corpus
        .iter()
        .map(|t| symbol_counts(t)[token.index()] / variable_count(t))
        .sum();
    total / corpus.len() as f64
}

/// Per-context sums of per-expression normalized counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountTable {
    pub expressions: usize,
    /// Sum over expressions of normalized symbol counts.
    pub symbols: [f64; N_TOKENS],
    /// `(role, context key)` to per-token sums of normalized counts.
    pub contexts: BTreeMap<(Role, String), [f64; N_TOKENS]>,
    /// Level-only aggregates per role, keyed by level.
    pub levels: BTreeMap<(Role, usize), [f64; N_TOKENS]>,
}

impl CountTable {
    /// Counts a corpus. Per-expression work runs under `exec`; the merge
    /// walks expressions in order so the sums do not depend on scheduling.
    pub fn build(corpus: &[ExpressionTree], max_level: usize, exec: Execution) -> CountTable {
        let n = corpus.len();
        let mut symbols = [0.0; N_TOKENS];
        let per_symbol = par::map(exec, corpus, |t| {
            let v = variable_count(t);
            symbol_counts(t).map(|c| c / v)
        });
        for s in &per_symbol {
            for (acc, x) in symbols.iter_mut().zip(s) {
                *acc += x;
            }
        }
        let rank = rank_from_symbols(&symbols, n);
        let partials = par::map(exec, corpus, |t| {
            let v = variable_count(t);
            derivation(t, &rank, max_level)
                .into_iter()
                .map(|e| {
                    let level = e.context.level;
                    ((e.context.role, e.context.key()), level, e.token, e.weight / v)
                })
                .collect::<Vec<_>>()
        });
        let mut table = CountTable {
            expressions: n,
            symbols,
            ..Default::default()
        };
        for p in partials {
            for ((role, key), level, token, w) in p {
                table.contexts.entry((role, key)).or_insert([0.0; N_TOKENS])[token.index()] += w;
                table.levels.entry((role, level)).or_insert([0.0; N_TOKENS])[token.index()] += w;
            }
        }
        table
    }

    /// Mean normalized count of a token over the corpus.
    pub fn normalized_count(&self, token: Token) -> f64 {
        if self.expressions == 0 {
            0.0
        } else {
            self.symbols[token.index()] / self.expressions as f64
        }
    }

    /// Mean normalized count of `token` in a context.
    pub fn context_count(&self, role: Role, key: &str, token: Token) -> f64 {
        self.contexts
            .get(&(role, key.to_string()))
            .map_or(0.0, |c| c[token.index()] / self.expressions as f64)
    }

    /// Unsmoothed conditional `sum NC(s, ctx) / sum NC(ctx)`, if the context
    /// was observed.
    pub fn conditional(&self, role: Role, key: &str, token: Token) -> Option<f64> {
        let c = self.contexts.get(&(role, key.to_string()))?;
        let total: f64 = c.iter().sum();
        (total > 0.0).then(|| c[token.index()] / total)
    }

    /// Ranking used to truncate sibling contexts.
    pub fn sibling_rank(&self) -> SiblingRank {
        rank_from_symbols(&self.symbols, self.expressions)
    }
}

fn rank_from_symbols(symbols: &[f64; N_TOKENS], n: usize) -> SiblingRank {
    let n = n.max(1) as f64;
    Unary::ALL
        .into_iter()
        .filter(|u| symbols[u.index()] > 0.0)
        .map(|u| (u, symbols[u.index()] / n))
        .collect()
}
