use std::fmt;

/// Smallest argument accepted by `log`.
pub const LOG_FLOOR: f64 = 1e-12;
/// Smallest denominator magnitude accepted by `div`.
pub const DIV_FLOOR: f64 = 1e-12;
/// Smallest `|cos(u)|` accepted by `tan`.
pub const TAN_COS_FLOOR: f64 = 1e-8;

/// Elementary functions usable at the root, inside sequences, and at leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unary {
    Id,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Square,
}

impl Unary {
    pub const ALL: [Unary; 8] = [
        Unary::Id,
        Unary::Sin,
        Unary::Cos,
        Unary::Tan,
        Unary::Exp,
        Unary::Log,
        Unary::Sqrt,
        Unary::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Unary::Id => "id",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Tan => "tan",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
        }
    }

    /// Accepts canonical names plus a few common spellings.
    pub fn from_name(name: &str) -> Option<Unary> {
        let lower = name.to_ascii_lowercase();
        Some(match lower.as_str() {
            "id" | "identity" => Unary::Id,
            "sin" => Unary::Sin,
            "cos" => Unary::Cos,
            "tan" => Unary::Tan,
            "exp" => Unary::Exp,
            "log" | "ln" => Unary::Log,
            "sqrt" | "√" => Unary::Sqrt,
            "square" | "sq" | "pow2" | "(·)^2" => Unary::Square,
            _ => return None,
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_trig(self) -> bool {
        matches!(self, Unary::Sin | Unary::Cos | Unary::Tan)
    }

    /// Guarded evaluation; returns NaN outside the operator's domain.
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Unary::Id => u,
            Unary::Sin => u.sin(),
            Unary::Cos => u.cos(),
            Unary::Tan => {
                let c = u.cos();
                if c.abs() > TAN_COS_FLOOR {
                    u.sin() / c
                } else {
                    f64::NAN
                }
            }
            Unary::Exp => u.exp(),
            Unary::Log => {
                if u > LOG_FLOOR {
                    u.ln()
                } else {
                    f64::NAN
                }
            }
            Unary::Sqrt => {
                if u >= 0.0 {
                    u.sqrt()
                } else {
                    f64::NAN
                }
            }
            Unary::Square => u * u,
        }
    }

    /// Derivative at `u`, given `value = self.apply(u)`.
    #[inline]
    pub fn derivative(self, u: f64, value: f64) -> f64 {
        match self {
            Unary::Id => 1.0,
            Unary::Sin => u.cos(),
            Unary::Cos => -u.sin(),
            Unary::Tan => 1.0 + value * value,
            Unary::Exp => value,
            Unary::Log => 1.0 / u,
            Unary::Sqrt => 0.5 / value,
            Unary::Square => 2.0 * u,
        }
    }
}

impl fmt::Display for Unary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Connectors joining two or more branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Binary {
    Add,
    Mul,
    Div,
}

impl Binary {
    pub const ALL: [Binary; 3] = [Binary::Add, Binary::Mul, Binary::Div];

    pub fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    pub fn from_name(name: &str) -> Option<Binary> {
        Some(match name.to_ascii_lowercase().as_str() {
            "add" | "+" => Binary::Add,
            "mul" | "*" | "×" => Binary::Mul,
            "div" | "/" | "÷" => Binary::Div,
            _ => return None,
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Add and mul fold over any number of children; div is strictly binary.
    pub fn is_associative(self) -> bool {
        !matches!(self, Binary::Div)
    }

    pub fn infix(self) -> &'static str {
        match self {
            Binary::Add => " + ",
            Binary::Mul => " * ",
            Binary::Div => " / ",
        }
    }
}

impl fmt::Display for Binary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One element of a root-to-leaf subsequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathSymbol {
    Unary(Unary),
    Binary(Binary),
}

impl fmt::Display for PathSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathSymbol::Unary(u) => u.fmt(f),
            PathSymbol::Binary(b) => b.fmt(f),
        }
    }
}
