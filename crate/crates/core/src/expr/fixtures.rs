//! Small reference trees used across tests and examples.

use super::{Affine, Binary, Branch, ExpressionTree, Leaf, Unary};

/// `tan(exp(x0^2) + exp(x1^2 + exp(x2^2)))` in multi-branch form: width 2, depth 7.
pub fn fig4_left() -> ExpressionTree {
    let id_leaf = |v| Leaf::new(Unary::Id, vec![v]);
    ExpressionTree::connected(
        Affine::new(Unary::Tan),
        Binary::Add,
        vec![
            Branch::leaf(
                vec![Affine::new(Unary::Exp), Affine::new(Unary::Square)],
                id_leaf(0),
            ),
            Branch::connector(
                vec![Affine::new(Unary::Exp)],
                Binary::Add,
                vec![
                    Branch::leaf(vec![Affine::new(Unary::Square)], id_leaf(1)),
                    Branch::leaf(
                        vec![Affine::new(Unary::Exp), Affine::new(Unary::Square)],
                        id_leaf(2),
                    ),
                ],
            ),
        ],
    )
}

/// `sqrt(x0^2 + x1^2 + x2^2)`: width 3, depth 4.
pub fn fig4_right() -> ExpressionTree {
    ExpressionTree::connected(
        Affine::new(Unary::Sqrt),
        Binary::Add,
        (0..3)
            .map(|v| Branch::leaf(vec![Affine::new(Unary::Square)], Leaf::new(Unary::Id, vec![v])))
            .collect(),
    )
}

/// `sum_{i<n} cos(x_i)` with one branch per variable.
pub fn cos_sum(n: usize) -> ExpressionTree {
    ExpressionTree::connected(
        Affine::new(Unary::Id),
        Binary::Add,
        (0..n)
            .map(|v| Branch::leaf(vec![Affine::new(Unary::Cos)], Leaf::new(Unary::Id, vec![v])))
            .collect(),
    )
}

/// `a(x_i) + b(x_j)` with one unary per branch.
pub fn pair(a: Unary, i: usize, b: Unary, j: usize) -> ExpressionTree {
    ExpressionTree::connected(
        Affine::new(Unary::Id),
        Binary::Add,
        vec![
            Branch::leaf(vec![Affine::new(a)], Leaf::new(Unary::Id, vec![i])),
            Branch::leaf(vec![Affine::new(b)], Leaf::new(Unary::Id, vec![j])),
        ],
    )
}
