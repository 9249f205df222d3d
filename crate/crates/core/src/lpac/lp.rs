use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    /// Sparse row as (variable, coefficient).
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (zero when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => (a - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - a).max(0.0),
            Sense::Eq => (a - self.rhs).abs(),
        }
    }
}

/// `min c'x` subject to linear rows and variable bounds. Bounds may be
/// infinite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub names: Vec<String>,
    pub cost: Vec<f64>,
    #[serde(with = "inf_vec")]
    pub lower: Vec<f64>,
    #[serde(with = "inf_vec")]
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: f64) -> usize {
        self.names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.push(cost);
        self.names.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs,
            sense,
            rhs,
        });
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Largest violation of any row or bound.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(x));
        let bounds = (0..self.n_vars()).map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.cost.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension {
                what: "linear program columns",
                expected: n,
                got: self.cost.len().min(self.lower.len()).min(self.upper.len()),
            });
        }
        for j in 0..n {
            if !self.cost[j].is_finite() || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite data for {}",
                    self.names[j]
                )));
            }
            if self.lower[j] > self.upper[j]
                || self.lower[j] == f64::INFINITY
                || self.upper[j] == f64::NEG_INFINITY
            {
                return Err(Error::Infeasible);
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite rhs in {}", c.name)));
            }
            for &(j, a) in &c.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(Error::InvalidArgument(format!("bad coefficient in {}", c.name)));
                }
            }
        }
        Ok(())
    }

    /// CPLEX-style LP text.
    pub fn to_lp_text(&self) -> String {
        let mut s = String::from("\\ generated by pfrestore\nMinimize\n obj:");
        write_expr(&mut s, self.cost.iter().copied().enumerate(), &self.names);
        s.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(s, " c{i}:");
            write_expr(&mut s, c.coeffs.iter().copied(), &self.names);
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {}", fmt_num(c.rhs));
        }
        s.push_str("Bounds\n");
        for j in 0..self.n_vars() {
            let (lo, hi, name) = (self.lower[j], self.upper[j], &self.names[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) if lo == hi => {
                    let _ = writeln!(s, " {name} = {}", fmt_num(lo));
                }
                (true, true) => {
                    let _ = writeln!(s, " {} <= {name} <= {}", fmt_num(lo), fmt_num(hi));
                }
                (true, false) => {
                    let _ = writeln!(s, " {name} >= {}", fmt_num(lo));
                }
                (false, true) => {
                    let _ = writeln!(s, " -inf <= {name} <= {}", fmt_num(hi));
                }
                (false, false) => {
                    let _ = writeln!(s, " {name} free");
                }
            }
        }
        s.push_str("End\n");
        s
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

fn write_expr(s: &mut String, terms: impl Iterator<Item = (usize, f64)>, names: &[String]) {
    let mut any = false;
    for (j, a) in terms {
        if a == 0.0 {
            continue;
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        let _ = write!(s, " {sign} {} {}", fmt_num(a.abs()), names[j]);
        any = true;
    }
    if !any {
        s.push_str(" 0");
    }
}

/// JSON has no infinities; encode them as null.
mod inf_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        // null in a lower bound means -inf, in an upper bound +inf; the sign
        // is restored by the caller via `fix_infinities`
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

impl LinearProgram {
    /// Parses the JSON produced by `serde_json::to_string(&lp)`.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut lp: LinearProgram = serde_json::from_str(text)?;
        for v in &mut lp.lower {
            if v.is_nan() {
                *v = f64::NEG_INFINITY;
            }
        }
        for v in &mut lp.upper {
            if v.is_nan() {
                *v = f64::INFINITY;
            }
        }
        lp.validate()?;
        Ok(lp)
    }
}
