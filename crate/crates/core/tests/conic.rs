use eivsos::conic::{min_eig, ConicProgram, SolveStatus, Tolerances};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn tol() -> Tolerances {
    Tolerances::default()
}

#[test]
fn lp_with_free_variable() {
    // min x1 + 2 x2  s.t. x1 + x2 = 3, x1 - f = 1, x >= 0, f free, f >= -5 via slack
    let mut p = ConicProgram::new("lp");
    let x = p.add_nonneg(2);
    let f = p.add_free(1, None)[0];
    p.add_row(vec![(x[0], 1.0), (x[1], 1.0)], 3.0, None).unwrap();
    p.add_row(vec![(x[0], 1.0), (f, -1.0)], 1.0, None).unwrap();
    p.add_objective(x[0], 1.0);
    p.add_objective(x[1], 2.0);
    let r = p.solve(&tol()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.value(x[0]) - 3.0).abs() < 1e-6);
    assert!((r.value(f) - 2.0).abs() < 1e-6);
    assert!((r.primal_objective - 3.0).abs() < 1e-6);
    assert!((r.dual_objective - 3.0).abs() < 1e-6);
}

#[test]
fn sdp_min_trace_with_off_diagonal() {
    let mut p = ConicProgram::new("sdp");
    let b = p.add_psd(2);
    p.add_row(vec![(b.var(0, 1), 1.0)], 1.0, None).unwrap();
    p.add_objective(b.var(0, 0), 1.0);
    p.add_objective(b.var(1, 1), 1.0);
    let r = p.solve(&tol()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    let x = r.psd_value(&b);
    assert!((x - DMatrix::from_element(2, 2, 1.0)).amax() < 1e-6);
    assert!((r.primal_objective - 2.0).abs() < 1e-7);
}

#[test]
fn contradictory_rows_give_certificate() {
    let mut p = ConicProgram::new("bad");
    let x = p.add_nonneg(1)[0];
    p.add_row(vec![(x, 1.0)], -1.0, None).unwrap();
    let r = p.solve(&tol()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
    let y = r.farkas.unwrap();
    // b'y = 1 and A'y <= 0 on the nonnegative variable
    assert!((-y[0] - 1.0).abs() < 1e-9);
    assert!(y[0] <= 1e-8);
}

#[test]
fn infeasible_psd_system() {
    // X psd 2x2 with X11 = -1 is impossible
    let mut p = ConicProgram::new("bad-sdp");
    let b = p.add_psd(2);
    p.add_row(vec![(b.var(0, 0), 1.0)], -1.0, None).unwrap();
    p.add_row(vec![(b.var(0, 1), 1.0)], 3.0, None).unwrap();
    let r = p.solve(&tol()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
}

#[test]
fn unbounded_program() {
    let mut p = ConicProgram::new("unb");
    let x = p.add_nonneg(2);
    p.add_row(vec![(x[0], 1.0), (x[1], -1.0)], 0.0, None).unwrap();
    p.add_objective(x[0], -1.0);
    let r = p.solve(&tol()).unwrap();
    assert_eq!(r.status, SolveStatus::Unbounded);
}

#[test]
fn empty_program_is_feasible() {
    let p = ConicProgram::new("empty");
    assert_eq!(p.solve(&tol()).unwrap().status, SolveStatus::Feasible);
}

#[test]
fn json_round_trip() {
    let mut p = ConicProgram::new("rt");
    let b = p.add_psd(3);
    let t = p.new_tag();
    p.add_row(vec![(b.var(2, 0), 0.5), (b.var(1, 1), 1.0)], 2.0, Some(t)).unwrap();
    let q = ConicProgram::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(q.num_vars(), p.num_vars());
    assert_eq!(q.rows()[0].coeffs, p.rows()[0].coeffs);
}

#[test]
fn tagged_groups_do_not_change_the_answer() {
    // two identical chains of blocks coupled by a shared free variable
    let build = |tagged: bool| {
        let mut p = ConicProgram::new("chain");
        let f = p.add_free(1, if tagged { Some(100) } else { None })[0];
        let mut diag = Vec::new();
        for k in 0..4 {
            let b = p.add_psd(3);
            let t = if tagged { Some(k) } else { None };
            p.add_row(vec![(b.var(0, 1), 1.0), (f, 1.0)], 0.5, t).unwrap();
            p.add_row(vec![(b.var(1, 2), 1.0)], 0.2 * k as f64, t).unwrap();
            for i in 0..3 {
                diag.push(b.var(i, i));
            }
        }
        p.add_row(vec![(f, 1.0), (diag[0], 1.0)], 1.0, if tagged { Some(100) } else { None }).unwrap();
        for d in diag {
            p.add_objective(d, 1.0);
        }
        p.solve(&Tolerances { verbose: std::env::var("V").is_ok(), ..tol() }).unwrap()
    };
    let a = build(true);
    let b = build(false);
    assert_eq!(a.status, SolveStatus::Optimal);
    assert_eq!(b.status, SolveStatus::Optimal);
    assert!((a.primal_objective - b.primal_objective).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // min <C, X> s.t. trace X = 1 equals the smallest eigenvalue of C
    #[test]
    fn trace_one_sdp_finds_min_eigenvalue(vals in proptest::collection::vec(-2.0f64..2.0, 10)) {
        let n = 4;
        let mut c = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                c[(i, j)] = vals[k];
                c[(j, i)] = vals[k];
                k += 1;
            }
        }
        let mut p = ConicProgram::new("eig");
        let b = p.add_psd(n);
        p.add_row((0..n).map(|i| (b.var(i, i), 1.0)).collect(), 1.0, None).unwrap();
        for i in 0..n {
            for j in i..n {
                let w = if i == j { 1.0 } else { 2.0 };
                p.add_objective(b.var(i, j), w * c[(i, j)]);
            }
        }
        let r = p.solve(&tol()).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        prop_assert!((r.primal_objective - min_eig(&c)).abs() < 1e-6);
        prop_assert!(min_eig(&r.psd_value(&b)) > -1e-8);
        prop_assert!(p.max_row_residual(&r.x) < 1e-7);
    }
}
