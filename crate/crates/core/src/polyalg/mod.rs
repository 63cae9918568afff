//! Multivariate polynomials over indexed plant and noise symbols.

mod matrix;
mod monomial;
mod poly;
mod var;

pub use matrix::{packed_index, PolyMatrix, PolyRect};
pub use monomial::{binomial, homogeneous_monomials, monomial_basis, Monomial};
pub use poly::{Poly, PRUNE_TOL};
pub use var::{VarId, VarKind, VarRegistry};

use std::collections::HashMap;

use crate::error::Result;

pub fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    a * b
}

pub fn evaluate(p: &Poly, at: &HashMap<VarId, f64>) -> Result<f64> {
    p.evaluate(at)
}

pub fn substitute(p: &Poly, bindings: &HashMap<VarId, Poly>) -> Poly {
    p.substitute(bindings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> VarId {
        VarId::a(0, 0)
    }

    #[test]
    fn basis_sizes_match_binomials() {
        let six: Vec<VarId> = VarRegistry::new(2, 1, 1).plant_vars(0);
        assert_eq!(monomial_basis(&six, 1).unwrap().len(), 7);
        assert_eq!(monomial_basis(&six, 0).unwrap(), vec![Monomial::one()]);
        let mut fourteen = six.clone();
        for i in 0..2 {
            for t in 0..4 {
                fourteen.push(VarId::dx(i, t));
            }
        }
        assert_eq!(monomial_basis(&fourteen, 2).unwrap().len(), 120);
    }

    #[test]
    fn basis_rejects_duplicates() {
        assert!(monomial_basis(&[x(), x()], 2).is_err());
    }

    #[test]
    fn basis_is_graded() {
        let v = [VarId::a(0, 0), VarId::a(0, 1)];
        let b = monomial_basis(&v, 2).unwrap();
        let shown: Vec<String> = b.iter().map(|m| m.to_string()).collect();
        assert_eq!(shown, ["1", "A[1,1]", "A[1,2]", "A[1,1]^2", "A[1,1]*A[1,2]", "A[1,2]^2"]);
    }

    #[test]
    fn difference_of_squares() {
        let p = Poly::var(x()) + Poly::constant(1.0);
        let q = Poly::var(x()) - Poly::constant(1.0);
        let r = poly_mul(&p, &q);
        let expect = Poly::var(x()).pow(2) - Poly::constant(1.0);
        assert_eq!(r, expect);
        assert!(poly_mul(&p, &Poly::zero()).is_zero());
    }

    #[test]
    fn binomial_square() {
        let a = Poly::var(VarId::a(0, 0));
        let b = Poly::var(VarId::b(0, 0));
        let sq = (&a + &b).pow(2);
        let expect = a.pow(2) + (&a * &b).scale(2.0) + b.pow(2);
        assert_eq!(sq, expect);
    }

    #[test]
    fn evaluation() {
        let p = Poly::var(x()) + Poly::constant(2.0);
        let at: HashMap<_, _> = [(x(), 0.6863)].into_iter().collect();
        assert!((evaluate(&p, &at).unwrap() - 2.6863).abs() < 1e-15);
        assert_eq!(Poly::constant(3.5).evaluate(&HashMap::new()).unwrap(), 3.5);
        assert!(p.evaluate(&HashMap::new()).is_err());
    }

    #[test]
    fn constant_substitution() {
        let a12 = VarId::a(0, 1);
        let dx = VarId::dx(1, 0);
        let p = Poly::var(a12) * Poly::var(dx);
        let b: HashMap<_, _> = [(a12, Poly::constant(0.3968))].into_iter().collect();
        assert_eq!(substitute(&p, &b), Poly::var(dx).scale(0.3968));
    }

    #[test]
    fn closed_loop_entry_with_known_b_is_affine_in_a() {
        // A_11 + B_11 K_11 + B_12 K_21 with B known
        let k = [0.3, -0.7];
        let p = Poly::var(VarId::a(0, 0))
            + Poly::var(VarId::b(0, 0)).scale(k[0])
            + Poly::var(VarId::b(0, 1)).scale(k[1]);
        let b: HashMap<_, _> =
            [(VarId::b(0, 0), Poly::constant(0.5)), (VarId::b(0, 1), Poly::constant(2.0))].into_iter().collect();
        let s = substitute(&p, &b);
        assert_eq!(s.degree(), 1);
        assert!(s.vars().iter().all(|v| v.kind == VarKind::A));
        assert!((s.constant_term() - (0.15 - 1.4)).abs() < 1e-15);
    }

    #[test]
    fn symbolic_matrix_square() {
        let a = PolyRect::symbols(2, 2, VarId::a);
        let a2 = a.pow(2);
        let expect = Poly::var(VarId::a(0, 0)).pow(2) + Poly::var(VarId::a(0, 1)) * Poly::var(VarId::a(1, 0));
        assert_eq!(a2[(0, 0)], expect);
    }

    #[test]
    fn text_round_trip() {
        let p = Poly::var(VarId::a(1, 0)).scale(1.0 / 3.0) - Poly::var(VarId::dx(0, 3)).pow(2).scale(2.5e-7)
            + Poly::constant(-4.0);
        let s = p.to_string();
        let q: Poly = s.parse().unwrap();
        assert_eq!(p, q);
        assert_eq!(q.to_string(), s);
    }

    #[test]
    fn polymatrix_is_symmetric_by_storage() {
        let mut m = PolyMatrix::zeros(3);
        m.set(2, 0, Poly::var(x()));
        assert_eq!(m.get(0, 2), m.get(2, 0));
        assert_eq!(m.degree(), 1);
    }
}
