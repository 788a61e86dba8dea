//! Butcher tableaus for explicit Runge-Kutta schemes and their symplectic
//! conjugates.
//!
//! A tableau `(A, β, c)` drives the forward propagation of an RK network. The
//! conjugate `(Ã, β̃, c̃)` is the unique tableau with
//!
//! ```text
//! β̃ = β,   c̃ = c,   β_i ã_ij + β̃_j a_ji − β_i β̃_j = 0
//! ```
//!
//! for which the discrete adjoint of the forward scheme is itself an RK
//! discretization of the continuous adjoint equation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Coefficients `(A, β, c)` of an explicit Runge-Kutta method.
///
/// `c` is carried along for completeness; with a single control per layer the
/// scheme is autonomous and the nodes never enter the propagation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableauSpec", into = "TableauSpec")]
pub struct ButcherTableau {
    a: Matrix,
    beta: Vector,
    c: Vector,
}

/// JSON encoding `{"s": .., "A": [[..]], "beta": [..], "c": [..]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableauSpec {
    pub s: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub c: Vec<f64>,
}

impl TryFrom<TableauSpec> for ButcherTableau {
    type Error = Error;

    fn try_from(spec: TableauSpec) -> Result<Self> {
        if spec.a.len() != spec.s {
            return Err(Error::InvalidTableau(format!(
                "A has {} rows but s = {}",
                spec.a.len(),
                spec.s
            )));
        }
        let a = Matrix::from_rows(&spec.a)
            .map_err(|_| Error::InvalidTableau("A rows have unequal length".into()))?;
        ButcherTableau::new(a, spec.beta, spec.c)
    }
}

impl From<ButcherTableau> for TableauSpec {
    fn from(t: ButcherTableau) -> Self {
        TableauSpec {
            s: t.stages(),
            a: t.a.row_iter().map(<[f64]>::to_vec).collect(),
            beta: t.beta,
            c: t.c,
        }
    }
}

impl ButcherTableau {
    /// Validates shape, finiteness and explicitness (`a_ij = 0` for `j ≥ i`).
    ///
    /// Zero weights are accepted here because forward propagation does not
    /// care; [`ButcherTableau::conjugate`] and the adjoint reject them.
    pub fn new(a: Matrix, beta: Vector, c: Vector) -> Result<Self> {
        let s = beta.len();
        if s == 0 {
            return Err(Error::InvalidTableau("at least one stage is required".into()));
        }
        if a.shape() != (s, s) {
            return Err(Error::InvalidTableau(format!(
                "A is {}x{}, expected {s}x{s}",
                a.rows(),
                a.cols()
            )));
        }
        if c.len() != s {
            return Err(Error::InvalidTableau(format!(
                "c has {} entries, expected {s}",
                c.len()
            )));
        }
        if !(a.is_finite() && beta.iter().chain(&c).all(|x| x.is_finite())) {
            return Err(Error::InvalidTableau("non-finite coefficient".into()));
        }
        for i in 0..s {
            for j in i..s {
                if a.get(i, j) != 0.0 {
                    return Err(Error::InvalidTableau(format!(
                        "a[{i}][{j}] = {} makes the method implicit",
                        a.get(i, j)
                    )));
                }
            }
        }
        Ok(ButcherTableau { a, beta, c })
    }

    /// Forward Euler: `s = 1`, `A = [[0]]`, `β = [1]`, `c = [0]`.
    pub fn euler() -> Self {
        ButcherTableau {
            a: Matrix::zeros(1, 1),
            beta: vec![1.0],
            c: vec![0.0],
        }
    }

    /// The classic four-stage Runge-Kutta method.
    pub fn rk4() -> Self {
        let a = Matrix::from_rows(&[
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ])
        .expect("static shape");
        ButcherTableau {
            a,
            beta: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
        }
    }

    #[inline]
    pub fn stages(&self) -> usize {
        self.beta.len()
    }

    #[inline]
    pub fn a(&self) -> &Matrix {
        &self.a
    }

    #[inline]
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    #[inline]
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Largest `|c_i − Σ_j a_ij|`.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.stages())
            .map(|i| (self.c[i] - self.a.row(i).iter().sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_nonzero_weights(&self) -> Result<()> {
        match self.beta.iter().position(|&b| b == 0.0) {
            Some(index) => Err(Error::ZeroWeight { index }),
            None => Ok(()),
        }
    }

    /// Solves the symplectic condition for `Ã`: `ã_ij = β_j − β_j a_ji / β_i`.
    pub fn conjugate(&self) -> Result<ConjugateTableau> {
        self.check_nonzero_weights()?;
        let s = self.stages();
        let mut a_tilde = Matrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                let bj = self.beta[j];
                a_tilde.set(i, j, bj - bj * self.a.get(j, i) / self.beta[i]);
            }
        }
        Ok(ConjugateTableau {
            a_tilde,
            beta_tilde: self.beta.clone(),
            c_tilde: self.c.clone(),
        })
    }

    /// Coefficients `a_ji β_j / β_i` of the adjoint stage recursion
    /// `p_i = p⁺ + h Σ_j coeff[i][j] · f_yᵀ(y_j) p_j`.
    ///
    /// For explicit `A` this matrix is strictly upper triangular, so stage `i`
    /// only needs stages `j > i` and the recursion runs in descending order.
    pub fn adjoint_stage_coefficients(&self) -> Result<Matrix> {
        self.check_nonzero_weights()?;
        let s = self.stages();
        let mut m = Matrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                m.set(i, j, self.a.get(j, i) * self.beta[j] / self.beta[i]);
            }
        }
        Ok(m)
    }
}

/// Symplectic partner `(Ã, β̃, c̃)` of an RK tableau.
#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateTableau {
    a_tilde: Matrix,
    beta_tilde: Vector,
    c_tilde: Vector,
}

impl ConjugateTableau {
    pub fn stages(&self) -> usize {
        self.beta_tilde.len()
    }

    pub fn a_tilde(&self) -> &Matrix {
        &self.a_tilde
    }

    pub fn beta_tilde(&self) -> &[f64] {
        &self.beta_tilde
    }

    pub fn c_tilde(&self) -> &[f64] {
        &self.c_tilde
    }
}

/// Largest entry of `|β_i ã_ij + β̃_j a_ji − β_i β̃_j|`, plus any violation of
/// `β̃ = β` and `c̃ = c`.
pub fn symplectic_residual(t: &ButcherTableau, ct: &ConjugateTableau) -> f64 {
    let s = t.stages();
    assert_eq!(s, ct.stages(), "tableau and conjugate differ in stage count");
    let mut worst = 0.0f64;
    for i in 0..s {
        worst = worst
            .max((t.beta[i] - ct.beta_tilde[i]).abs())
            .max((t.c[i] - ct.c_tilde[i]).abs());
        for j in 0..s {
            let r = t.beta[i] * ct.a_tilde.get(i, j) + ct.beta_tilde[j] * t.a.get(j, i)
                - t.beta[i] * ct.beta_tilde[j];
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// The same residual with the roles of `(A, β)` and `(Ã, β̃)` exchanged:
/// `|β̃_i a_ij + β_j ã_ji − β̃_i β_j|`.
pub fn swapped_symplectic_residual(t: &ButcherTableau, ct: &ConjugateTableau) -> f64 {
    let s = t.stages();
    let mut worst = 0.0f64;
    for i in 0..s {
        for j in 0..s {
            let r = ct.beta_tilde[i] * t.a.get(i, j) + t.beta[j] * ct.a_tilde.get(j, i)
                - ct.beta_tilde[i] * t.beta[j];
            worst = worst.max(r.abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_coefficients() {
        let t = ButcherTableau::euler();
        assert_eq!(t.stages(), 1);
        assert_eq!(t.beta(), &[1.0]);
        assert_eq!(t.a().get(0, 0), 0.0);
        assert_eq!(t.row_sum_defect(), 0.0);
    }

    #[test]
    fn conjugate_of_euler_is_one() {
        // s = 1: β ã + β a − β² = 0 with a = 0, β = 1 gives ã = 1.
        let ct = ButcherTableau::euler().conjugate().unwrap();
        assert_eq!(ct.a_tilde().get(0, 0), 1.0);
        assert_eq!(ct.beta_tilde(), &[1.0]);
    }

    #[test]
    fn rk4_coefficients() {
        let t = ButcherTableau::rk4();
        assert_eq!(t.stages(), 4);
        assert!((t.beta().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t.c(), &[0.0, 0.5, 0.5, 1.0]);
        assert_eq!(t.row_sum_defect(), 0.0);
        for i in 0..4 {
            for j in i..4 {
                assert_eq!(t.a().get(i, j), 0.0);
            }
        }
        assert_eq!(t.a().get(1, 0), 0.5);
        assert_eq!(t.a().get(2, 1), 0.5);
        assert_eq!(t.a().get(3, 2), 1.0);
    }

    #[test]
    fn shipped_tableaus_satisfy_symplectic_condition() {
        for t in [ButcherTableau::euler(), ButcherTableau::rk4()] {
            let ct = t.conjugate().unwrap();
            assert!(symplectic_residual(&t, &ct) <= 1e-14);
            assert!(swapped_symplectic_residual(&t, &ct) <= 1e-14);
            assert_eq!(ct.beta_tilde(), t.beta());
            assert_eq!(ct.c_tilde(), t.c());
        }
    }

    #[test]
    fn zero_weight_is_rejected_by_conjugate() {
        let t = ButcherTableau::new(
            Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap(),
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        )
        .unwrap();
        assert!(matches!(t.conjugate(), Err(Error::ZeroWeight { index: 1 })));
    }

    #[test]
    fn implicit_tableau_is_rejected() {
        let backward_euler = ButcherTableau::new(
            Matrix::from_rows(&[[1.0]]).unwrap(),
            vec![1.0],
            vec![1.0],
        );
        assert!(matches!(backward_euler, Err(Error::InvalidTableau(_))));
    }

    #[test]
    fn adjoint_coefficients_are_strictly_upper_triangular() {
        for t in [ButcherTableau::euler(), ButcherTableau::rk4()] {
            let m = t.adjoint_stage_coefficients().unwrap();
            for i in 0..t.stages() {
                for j in 0..=i {
                    assert_eq!(m.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn json_encoding_round_trips_and_validates() {
        let json = r#"{"s":2,"A":[[0,0],[0.5,0]],"beta":[0.0,1.0],"c":[0,0.5]}"#;
        let t: ButcherTableau = serde_json::from_str(json).unwrap();
        assert_eq!(t.stages(), 2);
        let back: ButcherTableau = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);

        let implicit = r#"{"s":1,"A":[[0.5]],"beta":[1],"c":[0.5]}"#;
        assert!(serde_json::from_str::<ButcherTableau>(implicit).is_err());
        let bad_s = r#"{"s":3,"A":[[0]],"beta":[1],"c":[0]}"#;
        assert!(serde_json::from_str::<ButcherTableau>(bad_s).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonzero() -> impl Strategy<Value = f64> {
            prop_oneof![-2.0f64..-0.05, 0.05f64..2.0]
        }

        fn explicit_tableau() -> impl Strategy<Value = ButcherTableau> {
            (1usize..6).prop_flat_map(|s| {
                (
                    prop::collection::vec(-1.0f64..1.0, s * s),
                    prop::collection::vec(nonzero(), s),
                )
                    .prop_map(move |(a, beta)| {
                        let mut m = Matrix::zeros(s, s);
                        for i in 0..s {
                            for j in 0..i {
                                m.set(i, j, a[i * s + j]);
                            }
                        }
                        let c = (0..s).map(|i| m.row(i).iter().sum()).collect();
                        ButcherTableau::new(m, beta, c).unwrap()
                    })
            })
        }

        proptest! {
            #[test]
            fn conjugate_solves_condition(t in explicit_tableau()) {
                let ct = t.conjugate().unwrap();
                prop_assert!(symplectic_residual(&t, &ct) <= 1e-14);
                prop_assert!(swapped_symplectic_residual(&t, &ct) <= 1e-14);
                prop_assert_eq!(ct.beta_tilde(), t.beta());
            }

            #[test]
            fn stage_recursion_only_looks_ahead(t in explicit_tableau()) {
                let m = t.adjoint_stage_coefficients().unwrap();
                for i in 0..t.stages() {
                    for j in 0..=i {
                        prop_assert_eq!(m.get(i, j), 0.0);
                    }
                }
            }
        }
    }
}
