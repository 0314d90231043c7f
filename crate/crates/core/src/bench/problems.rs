//! Built-in ground-truth problems and the problem file format.

use crate::error::BenchError;
use crate::expr::text::from_value;
use crate::expr::{canonical_serialize, Affine, Binary, Branch, Connector, ExpressionTree, Leaf, Tail, Unary};
use serde_json::{json, Value};

pub const DEFAULT_N_TRAIN: usize = 2000;
pub const DEFAULT_N_TEST: usize = 1000;

/// A ground-truth expression with sampling ranges per input column.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub name: String,
    pub variables: Vec<String>,
    pub tree: ExpressionTree,
    /// Inclusive `(low, high)` per variable.
    pub ranges: Vec<(f64, f64)>,
    pub n_train: usize,
    pub n_test: usize,
}

impl Problem {
    pub fn new(name: &str, variables: &[&str], tree: ExpressionTree, ranges: Vec<(f64, f64)>) -> Problem {
        Problem {
            name: name.to_string(),
            variables: variables.iter().map(|s| s.to_string()).collect(),
            tree,
            ranges,
            n_train: DEFAULT_N_TRAIN,
            n_test: DEFAULT_N_TEST,
        }
    }

    fn invalid(&self, message: impl Into<String>) -> BenchError {
        BenchError::Problem {
            name: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.ranges.is_empty() {
            return Err(self.invalid("no variable ranges"));
        }
        if self.variables.len() != self.ranges.len() {
            return Err(self.invalid(format!(
                "{} variable names for {} ranges",
                self.variables.len(),
                self.ranges.len()
            )));
        }
        for (i, &(lo, hi)) in self.ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(self.invalid(format!("range {i} is not a finite interval")));
            }
        }
        if self.n_train < 2 || self.n_test < 2 {
            return Err(self.invalid("n_train and n_test must be at least 2"));
        }
        self.tree.validate()?;
        self.tree.check_variables(self.ranges.len())?;
        Ok(())
    }

    /// Reads `{"name", "tree", "ranges", "n_train", "n_test"}` plus an
    /// optional `variables` list of column names.
    pub fn from_json(v: &Value) -> Result<Problem, BenchError> {
        let name = v["name"].as_str().unwrap_or("").to_string();
        let fail = |m: &str| BenchError::Problem {
            name: name.clone(),
            message: m.to_string(),
        };
        if name.is_empty() {
            return Err(fail("missing name"));
        }
        let tree = from_value(&v["tree"])?;
        let ranges = v["ranges"]
            .as_array()
            .ok_or_else(|| fail("ranges must be an array of [low, high] pairs"))?
            .iter()
            .map(|r| match r.as_array().map(|a| a.as_slice()) {
                Some([lo, hi]) => lo.as_f64().zip(hi.as_f64()),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| fail("ranges must be an array of [low, high] pairs"))?;
        let count = |key: &str, default: usize| match &v[key] {
            Value::Null => Ok(default),
            x => x
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| fail(&format!("{key} must be a non-negative integer"))),
        };
        let variables = match &v["variables"] {
            Value::Null => (0..ranges.len()).map(|i| format!("x{i}")).collect(),
            x => x
                .as_array()
                .and_then(|a| a.iter().map(|s| s.as_str().map(String::from)).collect())
                .ok_or_else(|| fail("variables must be an array of strings"))?,
        };
        let p = Problem {
            n_train: count("n_train", DEFAULT_N_TRAIN)?,
            n_test: count("n_test", DEFAULT_N_TEST)?,
            name: name.clone(),
            variables,
            tree,
            ranges,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Value {
        let tree: Value = serde_json::from_str(&canonical_serialize(&self.tree)).expect("serializer emits valid JSON");
        json!({
            "name": self.name,
            "variables": self.variables,
            "tree": tree,
            "ranges": self.ranges.iter().map(|&(a, b)| json!([a, b])).collect::<Vec<_>>(),
            "n_train": self.n_train,
            "n_test": self.n_test,
        })
    }
}

/// Named constants of the built-in problems.
pub const HAMILTONIAN_CONSTANTS: [(&str, f64); 3] = [("A_hat", 2.0), ("m_N", 1.5), ("g", 0.8)];
pub const BIOLOGY_CONSTANTS: [(&str, f64); 8] = [
    ("b", 0.5),
    ("gamma_B", 0.1),
    ("mu_B", 0.3),
    ("K2", 1.0),
    ("d_B", 0.05),
    ("s", 2.0),
    ("k", 0.8),
    ("omega_B", 0.2),
];
pub const CHEMISTRY_CONSTANTS: [(&str, f64); 3] = [("V_max", 1.0), ("K_m", 0.5), ("K_i", 0.3)];
pub const ENGINEERING_CONSTANTS: [(&str, f64); 9] = [
    ("alpha", 1.2),
    ("beta", 0.8),
    ("gamma", 2.0),
    ("delta", 0.5),
    ("epsilon", 0.1),
    ("eta", 1.5),
    ("theta", 0.3),
    ("zeta", 0.05),
    ("lambda", 0.01),
];

pub const BUILTIN_NAMES: [&str; 4] = ["hamiltonian", "biology", "chemistry", "engineering"];

fn constant(table: &[(&str, f64)], name: &str) -> f64 {
    table.iter().find(|(n, _)| *n == name).expect("known constant").1
}

fn id() -> Affine {
    Affine::new(Unary::Id)
}

fn var(i: usize) -> Leaf {
    Leaf::new(Unary::Id, vec![i])
}

/// `alpha * 0 + beta`: a constant branch over any leaf.
fn constant_branch(value: f64, over: usize) -> Branch {
    Branch::leaf(vec![Affine::with(Unary::Id, 0.0, value)], var(over))
}

/// `x_i / x_j` below one identity per side.
fn ratio(i: usize, j: usize) -> Tail {
    Tail::Connector(Connector {
        op: Binary::Div,
        branches: vec![Branch::leaf(vec![id()], var(i)), Branch::leaf(vec![id()], var(j))],
    })
}

fn product(i: usize, j: usize) -> Branch {
    Branch::connector(vec![id()], Binary::Mul, vec![Branch::leaf(vec![id()], var(i)), Branch::leaf(vec![id()], var(j))])
}

/// Kinetic terms, pair couplings and `g / r_ij` potentials over momenta
/// `p1..p3` (columns 0-2) and distances `r12, r13, r23` (columns 3-5).
pub fn hamiltonian() -> Problem {
    let c = &HAMILTONIAN_CONSTANTS;
    let (a, m, g) = (constant(c, "A_hat"), constant(c, "m_N"), constant(c, "g"));
    let kinetic = (a - 1.0) / a / (2.0 * m);
    let coupling = 1.0 / (m * a);
    let potential = |r: usize| {
        Branch::connector(
            vec![id()],
            Binary::Div,
            vec![constant_branch(g, r), Branch::leaf(vec![id()], var(r))],
        )
    };
    let tree = ExpressionTree::connected(
        id(),
        Binary::Add,
        vec![
            Branch::leaf(vec![id()], Leaf::with_gamma(Unary::Square, vec![0, 1, 2], vec![kinetic; 3])),
            Branch::connector(
                vec![Affine::with(Unary::Id, -coupling, 0.0)],
                Binary::Add,
                vec![product(0, 1), product(0, 2), product(1, 2)],
            ),
            Branch::connector(vec![id()], Binary::Add, vec![potential(3), potential(4), potential(5)]),
        ],
    );
    Problem::new(
        "hamiltonian",
        &["p1", "p2", "p3", "r12", "r13", "r23"],
        tree,
        vec![(0.5, 2.0); 6],
    )
}

/// Bystander-cell growth rate over `B, C, Ts, Tr`.
pub fn biology() -> Problem {
    let c = &BIOLOGY_CONSTANTS;
    let k = |n| constant(c, n);
    let (b_idx, c_idx, ts, tr) = (0, 1, 2, 3);
    let hill = Branch::connector(
        vec![id()],
        Binary::Div,
        vec![
            Branch::new(
                vec![Affine::new(Unary::Square), Affine::with(Unary::Square, k("s"), k("d_B"))],
                ratio(b_idx, ts),
            ),
            Branch::new(
                vec![Affine::with(Unary::Square, 1.0, k("k")), Affine::with(Unary::Square, k("s"), k("d_B"))],
                ratio(b_idx, ts),
            ),
        ],
    );
    let tree = ExpressionTree::connected(
        id(),
        Binary::Add,
        vec![
            Branch::leaf(vec![Affine::with(Unary::Id, -k("gamma_B"), k("b"))], var(b_idx)),
            Branch::leaf(
                vec![Affine::with(Unary::Log, -k("mu_B"), k("mu_B") * k("K2").ln())],
                Leaf::new(Unary::Id, vec![b_idx, c_idx]),
            ),
            Branch::connector(vec![id()], Binary::Mul, vec![hill, Branch::leaf(vec![id()], var(b_idx))]),
            Branch::connector(
                vec![Affine::with(Unary::Id, -k("omega_B"), 0.0)],
                Binary::Mul,
                vec![
                    Branch::leaf(vec![id()], var(b_idx)),
                    Branch::leaf(vec![id()], Leaf::new(Unary::Id, vec![ts, tr])),
                ],
            ),
        ],
    );
    Problem::new("biology", &["B", "C", "Ts", "Tr"], tree, vec![(0.5, 2.0); 4])
}

/// Three-substrate reaction rate with an inhibitor over `S1, S2, S3, I`.
pub fn chemistry() -> Problem {
    let c = &CHEMISTRY_CONSTANTS;
    let (vmax, km, ki) = (constant(c, "V_max"), constant(c, "K_m"), constant(c, "K_i"));
    let tree = ExpressionTree::connected(
        id(),
        Binary::Div,
        vec![
            Branch::connector(
                vec![Affine::with(Unary::Id, vmax, 0.0)],
                Binary::Mul,
                (0..3).map(|i| Branch::leaf(vec![id()], var(i))).collect(),
            ),
            Branch::connector(
                vec![id()],
                Binary::Mul,
                vec![
                    Branch::leaf(vec![Affine::with(Unary::Id, 1.0, km)], Leaf::new(Unary::Id, vec![0, 1, 2])),
                    Branch::leaf(
                        vec![Affine::with(Unary::Id, 1.0, 1.0)],
                        Leaf::with_gamma(Unary::Id, vec![3], vec![1.0 / ki]),
                    ),
                ],
            ),
        ],
    );
    Problem::new("chemistry", &["S1", "S2", "S3", "I"], tree, vec![(0.1, 2.0); 4])
}

/// Nested log, trig, root and exponential terms in one variable.
pub fn engineering() -> Problem {
    let c = &ENGINEERING_CONSTANTS;
    let k = |n| constant(c, n);
    let scaled = |op, g| Branch::leaf(vec![id()], Leaf::with_gamma(op, vec![0], vec![g]));
    let phase = Branch::connector(
        vec![Affine::with(Unary::Sin, k("beta"), 0.0)],
        Binary::Add,
        vec![scaled(Unary::Id, k("gamma")), constant_branch(k("delta"), 0)],
    );
    let first = Branch::connector(
        vec![Affine::new(Unary::Log)],
        Binary::Add,
        vec![scaled(Unary::Sqrt, k("alpha")), phase],
    );
    let denominator = Branch::connector(
        vec![id()],
        Binary::Add,
        vec![
            Branch::connector(
                vec![Affine::new(Unary::Cos)],
                Binary::Add,
                vec![scaled(Unary::Sqrt, k("eta")), scaled(Unary::Log, k("theta"))],
            ),
            Branch::leaf(
                vec![Affine::with(Unary::Exp, k("zeta"), 0.0)],
                Leaf::with_gamma(Unary::Square, vec![0], vec![-k("lambda")]),
            ),
        ],
    );
    let second = Branch::connector(vec![id()], Binary::Div, vec![constant_branch(k("epsilon"), 0), denominator]);
    let tree = ExpressionTree::connected(id(), Binary::Add, vec![first, second]);
    Problem::new("engineering", &["x"], tree, vec![(1.0, 10.0)])
}

pub fn builtin(name: &str) -> Option<Problem> {
    match name {
        "hamiltonian" => Some(hamiltonian()),
        "biology" => Some(biology()),
        "chemistry" => Some(chemistry()),
        "engineering" => Some(engineering()),
        _ => None,
    }
}

