//! Two-sided comparisons with a tolerance, shared by audits and checks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "=")]
    Eq,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Ge => ">=",
            Relation::Gt => ">",
            Relation::Le => "<=",
            Relation::Lt => "<",
            Relation::Eq => "=",
        }
    }

    pub fn parse(s: &str) -> Option<Relation> {
        Some(match s {
            ">=" => Relation::Ge,
            ">" => Relation::Gt,
            "<=" => Relation::Le,
            "<" => Relation::Lt,
            "=" => Relation::Eq,
            _ => return None,
        })
    }

    /// Signed slack: positive when the relation holds with room to spare.
    pub fn margin(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            Relation::Ge | Relation::Gt => lhs - rhs,
            Relation::Le | Relation::Lt => rhs - lhs,
            Relation::Eq => -(lhs - rhs).abs(),
        }
    }

    /// Non-strict relations accept `margin >= -tol`, strict ones `margin > -tol`.
    pub fn passes(self, margin: f64, tol: f64) -> bool {
        if margin.is_nan() || tol.is_nan() {
            return false;
        }
        match self {
            Relation::Gt | Relation::Lt => margin > -tol,
            _ => margin >= -tol,
        }
    }
}

/// One evaluated inequality or identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: Relation,
    pub tol: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Comparison {
    pub fn new(name: impl Into<String>, lhs: f64, relation: Relation, rhs: f64, tol: f64) -> Self {
        let margin = relation.margin(lhs, rhs);
        Comparison {
            name: name.into(),
            lhs,
            rhs,
            relation,
            tol,
            margin,
            pass: relation.passes(margin, tol),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margins_and_pass_rules() {
        assert_eq!(Relation::Ge.margin(3.0, 1.0), 2.0);
        assert_eq!(Relation::Le.margin(3.0, 1.0), -2.0);
        assert_eq!(Relation::Eq.margin(1.0, 1.5), -0.5);
        assert!(Relation::Ge.passes(-1e-9, 1e-8));
        assert!(!Relation::Gt.passes(0.0, 0.0));
        assert!(Relation::Gt.passes(1e-12, 0.0));
        assert!(Relation::Eq.passes(0.0, 0.0));
        assert!(!Relation::Ge.passes(f64::NAN, 1.0));
        for r in [Relation::Ge, Relation::Gt, Relation::Le, Relation::Lt, Relation::Eq] {
            assert_eq!(Relation::parse(r.symbol()), Some(r));
        }
        let c = Comparison::new("x", 1.0, Relation::Ge, 2.0, 0.5);
        assert!(!c.pass);
        assert_eq!(c.margin, -1.0);
    }
}
