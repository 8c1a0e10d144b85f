//! Basis functions `q(y)` of the density ratio model. The first component
//! is always the constant 1.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type ComponentFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Component {
    pub name: String,
    pub f: ComponentFn,
}

#[derive(Clone)]
enum Kind {
    /// (1, y)
    Linear,
    /// (1, y, y^2)
    LinearQuadratic,
    /// (1, y, log y)
    LinearLog,
    /// (1, log y)
    Log,
    /// (1, log y, log^2 y)
    LogLogSquare,
    Custom {
        name: String,
        components: Vec<Component>,
        requires_positive: bool,
    },
}

#[derive(Clone)]
pub struct BasisFunction {
    kind: Kind,
}

impl fmt::Debug for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BasisFunction({})", self.describe())
    }
}

impl PartialEq for BasisFunction {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name() && self.dim() == other.dim()
    }
}

impl BasisFunction {
    pub fn linear() -> Self {
        Self { kind: Kind::Linear }
    }

    pub fn linear_quadratic() -> Self {
        Self { kind: Kind::LinearQuadratic }
    }

    pub fn linear_log() -> Self {
        Self { kind: Kind::LinearLog }
    }

    pub fn log() -> Self {
        Self { kind: Kind::Log }
    }

    pub fn log_log_square() -> Self {
        Self { kind: Kind::LogLogSquare }
    }

    /// A basis `(1, f_1(y), ..., f_p(y))`. The constant is prepended; pass
    /// only the non-constant components.
    pub fn custom(name: impl Into<String>, components: Vec<Component>, requires_positive: bool) -> Self {
        Self { kind: Kind::Custom { name: name.into(), components, requires_positive } }
    }

    /// Parse the short names used on the command line.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "y" => Ok(Self::linear()),
            "y2" => Ok(Self::linear_quadratic()),
            "ylogy" => Ok(Self::linear_log()),
            "logy" => Ok(Self::log()),
            "logy2" => Ok(Self::log_log_square()),
            other => Err(Error::InvalidArgument(format!(
                "unknown basis {other:?} (expected one of y, y2, ylogy, logy, logy2)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            Kind::Linear => "y",
            Kind::LinearQuadratic => "y2",
            Kind::LinearLog => "ylogy",
            Kind::Log => "logy",
            Kind::LogLogSquare => "logy2",
            Kind::Custom { name, .. } => name,
        }
    }

    /// Human-readable component list, e.g. `(1, y, log y)`.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = match &self.kind {
            Kind::Linear => vec!["1".into(), "y".into()],
            Kind::LinearQuadratic => vec!["1".into(), "y".into(), "y^2".into()],
            Kind::LinearLog => vec!["1".into(), "y".into(), "log y".into()],
            Kind::Log => vec!["1".into(), "log y".into()],
            Kind::LogLogSquare => vec!["1".into(), "log y".into(), "log^2 y".into()],
            Kind::Custom { components, .. } => {
                std::iter::once("1".to_string()).chain(components.iter().map(|c| c.name.clone())).collect()
            }
        };
        format!("({})", parts.join(", "))
    }

    /// Dimension `q`, including the constant.
    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::Linear | Kind::Log => 2,
            Kind::LinearQuadratic | Kind::LinearLog | Kind::LogLogSquare => 3,
            Kind::Custom { components, .. } => components.len() + 1,
        }
    }

    /// Whether the basis takes logarithms (observations must be positive).
    pub fn requires_positive(&self) -> bool {
        match &self.kind {
            Kind::Linear | Kind::LinearQuadratic => false,
            Kind::LinearLog | Kind::Log | Kind::LogLogSquare => true,
            Kind::Custom { requires_positive, .. } => *requires_positive,
        }
    }

    /// Write `q(y)` into `out[..dim]`.
    #[inline]
    pub fn eval_into(&self, y: f64, out: &mut [f64]) {
        out[0] = 1.0;
        match &self.kind {
            Kind::Linear => out[1] = y,
            Kind::LinearQuadratic => {
                out[1] = y;
                out[2] = y * y;
            }
            Kind::LinearLog => {
                out[1] = y;
                out[2] = y.ln();
            }
            Kind::Log => out[1] = y.ln(),
            Kind::LogLogSquare => {
                let l = y.ln();
                out[1] = l;
                out[2] = l * l;
            }
            Kind::Custom { components, .. } => {
                for (o, c) in out[1..].iter_mut().zip(components) {
                    *o = (c.f)(y);
                }
            }
        }
    }

    pub fn eval(&self, y: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(y, &mut out);
        out
    }

    /// Check that the basis applies to every value (positivity and finite
    /// component values).
    pub fn check_applicable(&self, values: &[f64]) -> Result<()> {
        if self.requires_positive() {
            if let Some(v) = values.iter().find(|&&v| v <= 0.0) {
                return Err(Error::InvalidData(format!(
                    "basis {} requires positive observations, found {v}",
                    self.describe()
                )));
            }
        }
        let mut buf = vec![0.0; self.dim()];
        for &v in values {
            self.eval_into(v, &mut buf);
            if buf.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { context: format!("basis {} at y = {v}", self.describe()) });
            }
        }
        Ok(())
    }

    /// Linear independence of the non-constant components on `values`: the
    /// covariance (centered Gram) matrix must have smallest eigenvalue above
    /// `1e-10` times its largest.
    pub fn check_independence(&self, values: &[f64]) -> Result<()> {
        let q = self.dim();
        if q == 1 {
            return Ok(());
        }
        if values.len() < q {
            return Err(Error::DegenerateBasis(format!(
                "{} observations cannot identify a {q}-dimensional basis",
                values.len()
            )));
        }
        let p = q - 1;
        let mut buf = vec![0.0; q];
        let mut mean = vec![0.0; p];
        let rows: Vec<Vec<f64>> = values
            .iter()
            .map(|&v| {
                self.eval_into(v, &mut buf);
                buf[1..].to_vec()
            })
            .collect();
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = values.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for r in &rows {
            for a in 0..p {
                for b in 0..=a {
                    gram[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let eig = gram.symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min <= 1e-10 * max {
            return Err(Error::DegenerateBasis(format!(
                "components of {} are linearly dependent on the data (eigenvalues {min:.3e} .. {max:.3e})",
                self.describe()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_bases_start_with_one() {
        for name in ["y", "y2", "ylogy", "logy", "logy2"] {
            let b = BasisFunction::from_name(name).unwrap();
            assert_eq!(b.name(), name);
            let q = b.eval(2.0);
            assert_eq!(q.len(), b.dim());
            assert_eq!(q[0], 1.0);
        }
        assert!(BasisFunction::from_name("cubic").is_err());
    }

    #[test]
    fn component_values() {
        assert_eq!(BasisFunction::linear_quadratic().eval(3.0), vec![1.0, 3.0, 9.0]);
        let l = 5f64.ln();
        assert_eq!(BasisFunction::log_log_square().eval(5.0), vec![1.0, l, l * l]);
        assert_eq!(BasisFunction::linear_log().eval(5.0), vec![1.0, 5.0, l]);
    }

    #[test]
    fn custom_basis_prepends_constant() {
        let b =
            BasisFunction::custom("cube", vec![Component { name: "y^3".into(), f: Arc::new(|y| y * y * y) }], false);
        assert_eq!(b.dim(), 2);
        assert_eq!(b.eval(2.0), vec![1.0, 8.0]);
        assert_eq!(b.describe(), "(1, y^3)");
    }

    #[test]
    fn independence_check() {
        let vals: Vec<f64> = (1..=20).map(|i| i as f64 * 0.7).collect();
        BasisFunction::linear_quadratic().check_independence(&vals).unwrap();
        assert!(BasisFunction::linear().check_independence(&[2.0; 10]).is_err());
        let dup = BasisFunction::custom(
            "dup",
            vec![
                Component { name: "y".into(), f: Arc::new(|y| y) },
                Component { name: "2y".into(), f: Arc::new(|y| 2.0 * y) },
            ],
            false,
        );
        assert!(dup.check_independence(&vals).is_err());
    }

    #[test]
    fn positivity() {
        assert!(BasisFunction::log().check_applicable(&[1.0, 0.0]).is_err());
        BasisFunction::linear().check_applicable(&[-1.0, 0.0]).unwrap();
    }
}
