use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How to build a candidate-function library. The concrete terms depend on
/// the number of state variables, see [`CandidateLibrary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub poly_max_degree: usize,
    pub include_trig: bool,
    pub include_constant: bool,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            poly_max_degree: 5,
            include_trig: true,
            include_constant: true,
        }
    }
}

impl LibraryConfig {
    pub fn new(poly_max_degree: usize, include_trig: bool, include_constant: bool) -> Self {
        Self {
            poly_max_degree,
            include_trig,
            include_constant,
        }
    }

    pub fn for_states(&self, n_states: usize) -> Result<CandidateLibrary> {
        CandidateLibrary::new(*self, n_states)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Constant,
    /// Exponent per state variable.
    Monomial(Vec<u32>),
    Sin(usize),
    Cos(usize),
}

impl Term {
    pub fn name(&self) -> String {
        match self {
            Term::Constant => "1".to_string(),
            Term::Monomial(exps) => exps
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| match e {
                    1 => format!("x{i}"),
                    _ => format!("x{i}^{e}"),
                })
                .collect::<Vec<_>>()
                .join("*"),
            Term::Sin(i) => format!("sin(x{i})"),
            Term::Cos(i) => format!("cos(x{i})"),
        }
    }

    fn eval<T: Scalar>(&self, state: &[T]) -> T {
        match self {
            Term::Constant => T::one(),
            Term::Monomial(exps) => exps
                .iter()
                .zip(state)
                .filter(|(&e, _)| e > 0)
                .fold(T::one(), |acc, (&e, &x)| acc * x.powi(e as i32)),
            Term::Sin(i) => state[*i].sin(),
            Term::Cos(i) => state[*i].cos(),
        }
    }
}

/// Concrete term list for a given state dimension.
///
/// Order: constant, monomials by total degree then lexicographic variable
/// index, all `sin`, all `cos`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateLibrary {
    pub config: LibraryConfig,
    pub n_states: usize,
    terms: Vec<Term>,
}

impl CandidateLibrary {
    pub fn new(config: LibraryConfig, n_states: usize) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::invalid("library needs at least one state variable"));
        }
        if config.poly_max_degree == 0 {
            return Err(Error::invalid("poly_max_degree must be at least 1"));
        }
        let mut terms = Vec::new();
        if config.include_constant {
            terms.push(Term::Constant);
        }
        for degree in 1..=config.poly_max_degree {
            let mut combo = vec![0usize; degree];
            push_combinations(n_states, &mut combo, 0, 0, &mut terms);
        }
        if config.include_trig {
            terms.extend((0..n_states).map(Term::Sin));
            terms.extend((0..n_states).map(Term::Cos));
        }
        Ok(Self {
            config,
            n_states,
            terms,
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term_names(&self) -> Vec<String> {
        self.terms.iter().map(Term::name).collect()
    }
}

// non-decreasing index tuples = monomials of a fixed degree
fn push_combinations(n: usize, combo: &mut [usize], pos: usize, start: usize, out: &mut Vec<Term>) {
    if pos == combo.len() {
        let mut exps = vec![0u32; n];
        for &i in combo.iter() {
            exps[i] += 1;
        }
        out.push(Term::Monomial(exps));
        return;
    }
    for i in start..n {
        combo[pos] = i;
        push_combinations(n, combo, pos + 1, i, out);
    }
}

/// Evaluates every library term on every row of `trajectory` (`T x S`),
/// giving the `T x L` design matrix.
pub fn build_library<T: Scalar>(
    trajectory: ArrayView2<T>,
    library: &CandidateLibrary,
) -> Result<Array2<T>> {
    let (steps, states) = trajectory.dim();
    if states != library.n_states {
        return Err(Error::DimensionMismatch {
            expected: library.n_states,
            found: states,
        });
    }
    if steps < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: steps,
        });
    }
    let mut design = Array2::<T>::zeros((steps, library.len()));
    let mut state = vec![T::zero(); states];
    for (t, row) in trajectory.outer_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "trajectory".into(),
                row: t,
            });
        }
        state.iter_mut().zip(row.iter()).for_each(|(s, &v)| *s = v);
        for (j, term) in library.terms.iter().enumerate() {
            design[[t, j]] = term.eval(&state);
        }
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Number of monomials of `s` variables with total degree in 1..=d,
    /// counted by brute force over every exponent vector.
    fn brute_monomial_count(s: usize, d: usize) -> usize {
        let mut count = 0;
        let total = (d + 1).pow(s as u32);
        for code in 0..total {
            let mut c = code;
            let mut deg = 0;
            for _ in 0..s {
                deg += c % (d + 1);
                c /= d + 1;
            }
            if deg >= 1 && deg <= d {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn one_variable_degree_two() {
        let lib = LibraryConfig::new(2, false, true).for_states(1).unwrap();
        assert_eq!(lib.term_names(), vec!["1", "x0", "x0^2"]);
        let design = build_library(array![[1.0], [2.0]].view(), &lib).unwrap();
        assert_eq!(design, array![[1.0, 1.0, 1.0], [1.0, 2.0, 4.0]]);
    }

    #[test]
    fn trig_at_zero() {
        let lib = LibraryConfig::new(1, true, false).for_states(1).unwrap();
        assert_eq!(lib.term_names(), vec!["x0", "sin(x0)", "cos(x0)"]);
        let design = build_library(array![[0.0], [0.5]].view(), &lib).unwrap();
        assert_eq!(design[[0, 1]], 0.0);
        assert_eq!(design[[0, 2]], 1.0);
    }

    #[test]
    fn two_variable_degree_two_order() {
        let lib = LibraryConfig::new(2, false, true).for_states(2).unwrap();
        assert_eq!(lib.len(), brute_monomial_count(2, 2) + 1);
        assert_eq!(lib.len(), 6);
        assert_eq!(
            lib.term_names(),
            vec!["1", "x0", "x1", "x0^2", "x0*x1", "x1^2"]
        );
    }

    #[test]
    fn term_count_formula_matches_enumeration() {
        for s in 1..=4 {
            for d in 1..=5 {
                for trig in [false, true] {
                    for constant in [false, true] {
                        let lib = LibraryConfig::new(d, trig, constant).for_states(s).unwrap();
                        let want = brute_monomial_count(s, d)
                            + if trig { 2 * s } else { 0 }
                            + usize::from(constant);
                        assert_eq!(lib.len(), want, "s={s} d={d}");
                        let names = lib.term_names();
                        let unique: std::collections::HashSet<_> = names.iter().collect();
                        assert_eq!(unique.len(), names.len());
                        assert_eq!(names, lib.term_names());
                    }
                }
            }
        }
    }

    #[test]
    fn cross_term_evaluation() {
        let lib = LibraryConfig::new(3, false, false).for_states(2).unwrap();
        let names = lib.term_names();
        let design = build_library(array![[2.0, 3.0], [1.0, 1.0]].view(), &lib).unwrap();
        let col = |n: &str| names.iter().position(|x| x == n).unwrap();
        assert_eq!(design[[0, col("x0^2*x1")]], 12.0);
        assert_eq!(design[[0, col("x0*x1^2")]], 18.0);
        assert_eq!(design[[0, col("x1^3")]], 27.0);
    }

    #[test]
    fn rejects_nonfinite_with_row() {
        let lib = LibraryConfig::new(2, false, true).for_states(1).unwrap();
        let err = build_library(array![[1.0], [2.0], [f64::NAN]].view(), &lib).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 2, .. }));
    }
}
