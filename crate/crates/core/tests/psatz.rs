use eivsos::conic::{min_eig, ConicProgram, SolveStatus, Tolerances};
use eivsos::polyalg::{Poly, VarId};
use eivsos::psatz::*;
use eivsos::semialg::{build_eiv_set, SemiAlgSet};
use eivsos::sysdata::*;
use nalgebra::{DMatrix, DVector};

fn x() -> VarId {
    VarId::a(0, 0)
}

fn line() -> SemiAlgSet {
    SemiAlgSet::new("line", vec![x()])
}

fn scalar(p: Poly) -> AffMatrix {
    AffMatrix::scalar(AffPoly::from_poly(&p))
}

fn solve(c: &SosConstraint) -> (SolveStatus, Option<(Compiled, Vec<f64>)>, eivsos::conic::SolveResult) {
    let mut prog = ConicProgram::new("t");
    let comp = compile(&mut prog, c).unwrap();
    let r = prog.solve(&Tolerances::default()).unwrap();
    let status = r.status;
    let x = r.x.clone();
    (status, Some((comp, x)), r)
}

#[test]
fn explicit_sos_is_found() {
    let p = Poly::var(x()).pow(2) + Poly::constant(1.0);
    let c = SosConstraint::new(scalar(p), line(), 1).with_eps_shift(0.0);
    let (st, comp, r) = solve(&c);
    assert_eq!(st, SolveStatus::Feasible);
    let (comp, xs) = comp.unwrap();
    let g = r.psd_value(&comp.wsos.sigma0.block);
    assert!((g - DMatrix::<f64>::identity(2, 2)).amax() < 1e-6);
    assert!(comp.reconstruction_error(&xs) < 1e-6);
}

#[test]
fn constraint_itself_is_a_certificate() {
    let mut k = line();
    k.ineqs.push(Poly::var(x()));
    let c = SosConstraint::new(scalar(Poly::var(x())), k, 1).with_eps_shift(0.0);
    assert_eq!(solve(&c).0, SolveStatus::Feasible);
    let free = SosConstraint::new(scalar(Poly::var(x())), line(), 1).with_eps_shift(0.0);
    assert_eq!(solve(&free).0, SolveStatus::Infeasible);
}

#[test]
fn degree_too_small_is_rejected() {
    let c = SosConstraint::new(scalar(Poly::var(x()).pow(4)), line(), 1);
    let mut prog = ConicProgram::new("t");
    assert!(compile(&mut prog, &c).is_err());
}

#[test]
fn decision_variables_flow_affinely() {
    // maximize c such that x^2 - 2x + 3 - c is SOS: c* = 2
    let mut prog = ConicProgram::new("t");
    let cv = prog.add_free(1, None)[0];
    let mut t = AffPoly::from_poly(&(Poly::var(x()).pow(2) - Poly::var(x()).scale(2.0) + Poly::constant(3.0)));
    t.add_term(eivsos::polyalg::Monomial::one(), &Affine::var(cv), -1.0);
    let c = SosConstraint::new(AffMatrix::scalar(t), line(), 1).with_eps_shift(0.0);
    let comp = compile(&mut prog, &c).unwrap();
    prog.add_objective(cv, -1.0);
    let r = prog.solve(&Tolerances::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.x[cv] - 2.0).abs() < 1e-6);
    assert!(comp.reconstruction_error(&r.x) < 1e-6);
}

fn clean_traj(t: usize) -> Trajectory {
    let p = presets::single_input();
    let u = uniform_inputs(1, t, NoiseStream::new(1, 0));
    simulate(&p, &DVector::from_vec(vec![1.0, 0.0]), &u, &NoiseBounds::state_only(0.05), 1).unwrap()
}

#[test]
fn full_superstability_table_sizes() {
    for (t, want) in [(4, [3060, 120, 15, 120]), (6, [7315, 190, 19, 190]), (8, [14950, 276, 23, 276])] {
        let set = build_eiv_set(&clean_traj(t)).unwrap();
        let c = SosConstraint::new(scalar(Poly::constant(1.0)), set, 2);
        assert_eq!(gram_report(&c).unwrap().headline(), want, "T={t}");
    }
}

#[test]
fn full_quadratic_table_sizes() {
    let set = build_eiv_set(&clean_traj(4)).unwrap();
    let c = SosConstraint::new(AffMatrix::zeros(4), set, 2);
    let r = gram_report(&c).unwrap();
    assert_eq!(r.headline(), [30600, 480, 60, 1200]);
    assert_eq!(r.count(Role::SigmaI), 16);
    assert_eq!(r.count(Role::Mu), 6);
    let csv = r.to_csv().unwrap();
    assert!(csv.starts_with("role,count,size\n"));
    assert!(csv.contains("sigma0,1,480"));
}

#[test]
fn compiled_sizes_match_the_report() {
    let set = build_eiv_set(&clean_traj(3)).unwrap();
    let c = SosConstraint::new(scalar(Poly::constant(1.0)), set, 1);
    let mut prog = ConicProgram::new("t");
    let comp = compile(&mut prog, &c).unwrap();
    let rep = gram_report(&c).unwrap();
    assert_eq!(comp.wsos.sigma0.block.size, rep.size(Role::Sigma0));
    assert_eq!(comp.wsos.sigmas.len(), rep.count(Role::SigmaI));
    assert!(comp.rows.len() <= rep.size(Role::Target));
    assert_eq!(comp.wsos.phis[0].0.vars.len(), rep.size(Role::Mu));
}

#[test]
fn scherer_of_size_one_equals_putinar() {
    let set = build_eiv_set(&clean_traj(3)).unwrap();
    let p = SosConstraint::new(scalar(Poly::constant(1.0)), set.clone(), 2);
    let s = p.clone().with_kind(CertificateKind::SchererMatrix);
    assert_eq!(gram_report(&p).unwrap(), gram_report(&s).unwrap());
}

#[test]
fn constant_identity_with_degree_zero() {
    let m = AffMatrix::from_poly_matrix(&eivsos::polyalg::PolyMatrix::identity(3));
    let c = SosConstraint::new(m, line(), 0);
    let (st, comp, r) = solve(&c);
    assert_eq!(st, SolveStatus::Feasible);
    let (comp, xs) = comp.unwrap();
    let g = r.psd_value(&comp.wsos.sigma0.block);
    assert!((g - DMatrix::<f64>::identity(3, 3) * (1.0 - 1e-6)).amax() < 1e-6);
    assert!(comp.reconstruction_error(&xs) < 1e-6);
}

fn const_matrix(m: &DMatrix<f64>) -> AffMatrix {
    let rows: Vec<Vec<Poly>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| Poly::constant(m[(i, j)])).collect()).collect();
    AffMatrix::from_poly_matrix(&eivsos::polyalg::PolyMatrix::from_rows(rows).unwrap())
}

#[test]
fn scalarized_and_scherer_agree_on_constant_targets() {
    let mats = [
        DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0]),
        DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0, 1.0]),
    ];
    let mut k = line();
    k.ineqs.push(Poly::constant(1.0) - Poly::var(x()).pow(2));
    for m in &mats {
        let a = solve(&SosConstraint::new(const_matrix(m), k.clone(), 1)).0;
        let b = solve(&SosConstraint::new(const_matrix(m), k.clone(), 1).with_kind(CertificateKind::ScalarizedPmi)).0;
        let pd = min_eig(m) > 0.0;
        assert_eq!(a.is_solved(), pd);
        assert_eq!(b.is_solved(), pd, "{m}");
    }
}

#[test]
fn scalarized_gram_size() {
    let vars: Vec<VarId> = (0..6).map(|k| VarId::a(k / 3, k % 3)).collect();
    let set = SemiAlgSet::new("six", vars);
    let c = SosConstraint::new(AffMatrix::zeros(4), set, 1);
    assert_eq!(gram_report(&c).unwrap().size(Role::Sigma0), 28);
    let s = c.with_kind(CertificateKind::ScalarizedPmi);
    assert_eq!(gram_report(&s).unwrap().size(Role::Sigma0), 11);
}

#[test]
fn scalarized_polynomial_diagonal() {
    let mut m = eivsos::polyalg::PolyMatrix::zeros(2);
    m.set(0, 0, Poly::var(x()).pow(2));
    m.set(1, 1, Poly::constant(1.0));
    let c = SosConstraint::new(AffMatrix::from_poly_matrix(&m), line(), 2)
        .with_kind(CertificateKind::ScalarizedPmi)
        .with_eps_shift(0.0);
    let (st, comp, r) = solve(&c);
    assert!(st.is_solved());
    let (comp, xs) = comp.unwrap();
    assert!(comp.reconstruction_error(&xs) < 1e-6);
    for g in comp.grams(&r) {
        assert!(min_eig(&g) > -1e-7);
    }
}

#[test]
fn plain_lmi_helper() {
    let mut prog = ConicProgram::new("lmi");
    let v = prog.add_free(1, None)[0];
    // [[1, v], [v, 1]] >= 0 and maximize v: v = 1
    let d = DecisionMatrix::from_fn(1, 1, |_, _| Affine::var(v));
    let one = DecisionMatrix::constant(&DMatrix::from_element(1, 1, 1.0));
    let m = block_lmi(&[vec![Some(&one), Some(&d)], vec![None, Some(&one)]]).unwrap();
    add_lmi(&mut prog, &m, None).unwrap();
    prog.add_objective(v, -1.0);
    let r = prog.solve(&Tolerances::default()).unwrap();
    assert!((r.x[v] - 1.0).abs() < 1e-6);
}
