//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! `cargo test -p eivsos --test acceptance` runs everything; numbers after
//! `--` select criteria (`-- 1 3 6`). `EIVSOS_SLOW=1` adds the Full-method
//! rate minimization to criterion 2.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use eivsos::bench::{run_cell, run_montecarlo, ExperimentConfig, Sweep, TableRow};
use eivsos::conic::{min_eig, ConicProgram, Tolerances};
use eivsos::polyalg::{Poly, PolyMatrix, VarId};
use eivsos::psatz::{compile, AffMatrix, AffPoly, CertificateKind, SosConstraint, Wsos};
use eivsos::robustalt::{build_alt_allnoise, build_alt_psatz, AltBundle, AltOptions};
use eivsos::semialg::{build_eiv_set, sample_consistent_plants, PiSpec, PlantSymbols, SemiAlgSet};
use eivsos::synth::*;
use eivsos::sysdata::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMBDA_TRUE: f64 = 0.4427;
const GAMMA_2: f64 = 1.9084;
const ORDER_TOL: f64 = 1e-6;
const MC_SEED: u64 = 1;
const MC_TRIALS: usize = 50;
const MC_BAND: f64 = 15.0;
/// A step against the expected trend of at most one trial in 50.
const TREND_SLACK: f64 = 2.0;
/// QS may trail SS by at most this many points in a cell.
const QS_SLACK: f64 = 10.0;

type Verdict = (bool, String);

fn e1(n: usize) -> DVector<f64> {
    let mut x = DVector::zeros(n);
    x[0] = 1.0;
    x
}

fn traj(p: &Plant, t: usize, bounds: NoiseBounds, seed: u64) -> Trajectory {
    let u = uniform_inputs(p.m(), t, NoiseStream::new(seed, 0));
    simulate(p, &e1(p.n()), &u, &bounds, seed).unwrap()
}

fn controller(o: Outcome) -> Result<Controller, String> {
    match o {
        Outcome::Feasible(c) => Ok(*c),
        other => Err(format!("expected a controller, got {}", other.label())),
    }
}

fn model_based() -> Verdict {
    let start = Instant::now();
    let (lam, _) = model_based_benchmark(&presets::single_input()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = (lam - LAMBDA_TRUE).abs() <= 1e-3 && secs < 1.0;
    (ok, format!("lambda_true = {lam:.6} (target {LAMBDA_TRUE} +- 1e-3), {secs:.3} s (limit 1 s)"))
}

fn no_conservatism() -> Verdict {
    let tr = traj(&presets::single_input(), 4, NoiseBounds::zero(), 0);
    let start = Instant::now();
    let c = match controller(rate_minimize(Certifier::Alt, &tr, 1).unwrap()) {
        Ok(c) => c,
        Err(e) => return (false, e),
    };
    let lam = c.lambda.unwrap();
    let mut ok = (lam - LAMBDA_TRUE).abs() <= 5e-3;
    let mut msg = format!(
        "alternatives d=1: lambda = {lam:.6} (target {LAMBDA_TRUE} +- 5e-3), {:.2} s",
        start.elapsed().as_secs_f64()
    );
    if std::env::var("EIVSOS_SLOW").is_ok_and(|v| v == "1") {
        let start = Instant::now();
        match controller(rate_minimize(Certifier::Full, &tr, 2).unwrap()) {
            Ok(c) => {
                let lf = c.lambda.unwrap();
                let secs = start.elapsed().as_secs_f64();
                ok &= (lf - LAMBDA_TRUE).abs() <= 5e-3 && secs < 3600.0;
                msg += &format!("; full d=2: lambda = {lf:.6}, {secs:.0} s (limit 3600 s)");
            }
            Err(e) => {
                ok = false;
                msg += &format!("; full d=2: {e}");
            }
        }
    } else {
        msg += "; full d=2 skipped (set EIVSOS_SLOW=1)";
    }
    (ok, msg)
}

fn eigenvalues() -> Verdict {
    let mut ev: Vec<f64> = open_loop_eigs(&presets::single_input()).iter().map(|z| z.re).collect();
    let im = open_loop_eigs(&presets::single_input()).iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    ev.sort_by(f64::total_cmp);
    let ok = ev.len() == 2 && (ev[0] - 0.4524).abs() <= 1e-3 && (ev[1] - 1.2727).abs() <= 1e-3 && im <= 1e-12;
    (ok, format!("eigenvalues {:.4}, {:.4} (targets 0.4524, 1.2727 +- 1e-3)", ev[0], ev[1]))
}

fn h2_benchmark() -> Verdict {
    match controller(h2_known(&presets::two_input(), &H2Channels::standard(2, 2)).unwrap()) {
        Ok(c) => {
            let g = c.gamma.unwrap();
            ((g - GAMMA_2).abs() <= 1e-3, format!("gamma_2 = {g:.6} (target {GAMMA_2} +- 1e-3)"))
        }
        Err(e) => (false, e),
    }
}

fn superstabilizability_gap() -> Verdict {
    let tr = traj(&presets::spring_mass_damper(), 8, NoiseBounds::state_only(0.05), 1);
    let mut ok = true;
    let mut parts = Vec::new();
    for d in [1, 2] {
        let o = ss_alt(&tr, d, 1e-3, PiSpec::None).unwrap();
        ok &= matches!(o, Outcome::Infeasible);
        parts.push(format!("ss-alt d={d}: {}", o.label()));
    }
    let o = qs_alt(&tr, 1, PiSpec::None).unwrap();
    ok &= o.is_feasible();
    parts.push(format!("qs-alt d=1: {}", o.label()));
    (ok, format!("{} (T=8, eps=0.05)", parts.join(", ")))
}

fn size_tables() -> Verdict {
    let cases: [(Method, usize, u32, [usize; 4]); 6] = [
        (Method::SsAlt, 8, 1, [28, 7, 7, 7]),
        (Method::SsFull, 4, 2, [3060, 120, 15, 120]),
        (Method::SsFull, 6, 2, [7315, 190, 19, 190]),
        (Method::SsFull, 8, 2, [14950, 276, 23, 276]),
        (Method::QsAlt, 8, 1, [280, 28, 28, 70]),
        (Method::QsFull, 4, 2, [30600, 480, 60, 1200]),
    ];
    let mut bad = Vec::new();
    for (m, t, d, want) in cases {
        let got = method_report(m, 2, 1, t, d).unwrap().headline();
        if got != want {
            bad.push(format!("{} T={t}: {got:?} != {want:?}", m.name()));
        }
    }
    // the compiled Full certificate agrees with the closed form
    let set = build_eiv_set(&traj(&presets::single_input(), 4, NoiseBounds::state_only(0.05), 1)).unwrap();
    let c = SosConstraint::new(AffMatrix::scalar(AffPoly::from_poly(&Poly::constant(1.0))), set, 2);
    let compiled = eivsos::psatz::gram_report(&c).unwrap().headline();
    if compiled != [3060, 120, 15, 120] {
        bad.push(format!("compiled Full T=4: {compiled:?}"));
    }
    (bad.is_empty(), if bad.is_empty() { "6 rows exact, zero tolerance".into() } else { bad.join("; ") })
}

fn rate_ordering(cfg: &ExperimentConfig, lam_true: f64) -> (usize, usize, Vec<String>) {
    let plant = cfg.plant.resolve().unwrap();
    let mut checked = 0;
    let mut feas = 0;
    let mut bad = Vec::new();
    for cell in cfg.cells() {
        for r in run_cell(cfg, &plant, &cell) {
            checked += 1;
            if !r.is_feasible() {
                continue;
            }
            feas += 1;
            let (clp, worst) = (r.lambda_clp.unwrap(), r.lambda.unwrap());
            if !(lam_true <= clp + ORDER_TOL && clp <= worst + ORDER_TOL) {
                bad.push(format!("eps {} trial {}: {lam_true:.4} {clp:.4} {worst:.4}", cell.value, r.trial));
            }
        }
    }
    (checked, feas, bad)
}

fn orderings() -> Verdict {
    let (lam_true, _) = model_based_benchmark(&presets::single_input()).unwrap();
    let mut cfg = ExperimentConfig::new("single-input", Method::RateMin, 8, NoiseBounds::zero());
    cfg.trials = 10;
    cfg.seed = 7;
    cfg.sweep = Some(Sweep::Eps(vec![0.02, 0.05]));
    let (n_l, f_l, mut bad) = rate_ordering(&cfg, lam_true);

    let g2 = controller(h2_known(&presets::two_input(), &H2Channels::standard(2, 2)).unwrap()).unwrap().gamma.unwrap();
    let mut h = ExperimentConfig::new("two-input", Method::H2, 8, NoiseBounds::state_only(0.03));
    h.trials = 3;
    h.seed = 7;
    let plant = h.plant.resolve().unwrap();
    let recs = run_cell(&h, &plant, &h.cells()[0]);
    let mut f_g = 0;
    for r in recs.iter().filter(|r| r.is_feasible()) {
        f_g += 1;
        let (clp, worst) = (r.gamma_clp.unwrap(), r.gamma_worst.unwrap());
        if !(g2 <= clp + ORDER_TOL && clp <= worst + ORDER_TOL) {
            bad.push(format!("h2 trial {}: {g2:.4} {clp:.4} {worst:.4}", r.trial));
        }
    }
    let ok = bad.is_empty() && f_l > 0 && f_g > 0;
    let msg = format!(
        "lambda ordered on {f_l}/{n_l} feasible noisy trials, gamma ordered on {f_g}/{} (tol {ORDER_TOL:e}){}",
        recs.len(),
        if bad.is_empty() { String::new() } else { format!("; violations: {}", bad.join(", ")) }
    );
    (ok, msg)
}

fn mc_rows(method: Method) -> Vec<TableRow> {
    let mut eps = ExperimentConfig::new("two-input", method, 8, NoiseBounds::zero());
    eps.trials = MC_TRIALS;
    eps.seed = MC_SEED;
    eps.sweep = Some(Sweep::Eps(vec![0.05, 0.08, 0.11, 0.14]));
    let (a, _) = run_montecarlo(&eps).unwrap();
    let mut hor = ExperimentConfig::new("two-input", method, 8, NoiseBounds::state_only(0.14));
    hor.trials = MC_TRIALS;
    hor.seed = MC_SEED;
    hor.sweep = Some(Sweep::Horizon(vec![10, 12, 14]));
    let (b, _) = run_montecarlo(&hor).unwrap();
    a.rows.into_iter().chain(b.rows).collect()
}

fn trend(rates: &[f64], increasing: bool) -> bool {
    let sign = if increasing { 1.0 } else { -1.0 };
    rates.windows(2).all(|w| sign * (w[1] - w[0]) >= -TREND_SLACK) && sign * (rates[rates.len() - 1] - rates[0]) > 0.0
}

fn montecarlo() -> Verdict {
    // eps = 0.05, 0.08, 0.11, 0.14 at T = 8, then T = 10, 12, 14 at eps = 0.14
    let paper_ss = [100.0, 84.0, 66.0, 34.0, 54.0, 70.0, 86.0];
    let paper_qs = [100.0, 100.0, 80.0, 58.0, 72.0, 90.0, 98.0];
    let ss = mc_rows(Method::SsAlt);
    let qs = mc_rows(Method::QsAlt);
    let rate = |rows: &[TableRow]| rows.iter().map(|r| r.success_rate).collect::<Vec<_>>();
    let (rs, rq) = (rate(&ss), rate(&qs));
    let mut bad = Vec::new();
    for (name, got, want) in [("SS", &rs, &paper_ss), ("QS", &rq, &paper_qs)] {
        if !trend(&got[..4], false) {
            bad.push(format!("{name} not decreasing in eps"));
        }
        let by_t = [got[3], got[4], got[5], got[6]];
        if !trend(&by_t, true) {
            bad.push(format!("{name} not increasing in T"));
        }
        for (k, (g, w)) in got.iter().zip(want.iter()).enumerate() {
            if (g - w).abs() > MC_BAND {
                bad.push(format!("{name} cell {k}: {g} vs {w}"));
            }
        }
    }
    for (k, (s, q)) in rs.iter().zip(&rq).enumerate() {
        if q + QS_SLACK < *s {
            bad.push(format!("cell {k}: QS {q} < SS {s}"));
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.0}")).collect::<Vec<_>>().join("/");
    let unknown: usize = ss.iter().chain(&qs).map(|r| r.unknown).sum();
    let wall: f64 = ss.iter().chain(&qs).map(|r| r.wall_seconds).sum();
    let msg = format!(
        "eps 0.05/0.08/0.11/0.14 @T=8 then T=10/12/14 @eps=0.14: SS {} QS {} ({MC_TRIALS} trials, seed {MC_SEED}, band +-{MC_BAND}, \
         trend slack {TREND_SLACK}, QS slack {QS_SLACK}, {unknown} unknown, {wall:.0} s){}",
        fmt(&rs),
        fmt(&rq),
        if bad.is_empty() { String::new() } else { format!("; {}", bad.join(", ")) }
    );
    (bad.is_empty(), msg)
}

fn wsos_vars(w: &Wsos, out: &mut Vec<VarId>) {
    for g in w.gram_blocks() {
        out.extend(g.basis.monomials.iter().flat_map(|m| m.vars().collect::<Vec<_>>()));
    }
    for (_, p) in &w.sigmas {
        out.extend(p.vars());
    }
    for (f, p) in &w.phis {
        out.extend(f.basis.monomials.iter().flat_map(|m| m.vars().collect::<Vec<_>>()));
        out.extend(p.vars());
    }
}

fn bundle_vars(b: &AltBundle) -> Vec<VarId> {
    let mut out = Vec::new();
    for (p, m) in b.zeta.iter().chain(&b.mu_pm).chain(&b.psi) {
        wsos_vars(p, &mut out);
        wsos_vars(m, &mut out);
    }
    wsos_vars(&b.sigma, &mut out);
    for f in &b.mu {
        out.extend(f.basis.monomials.iter().flat_map(|m| m.vars().collect::<Vec<_>>()));
    }
    out
}

fn scalar(p: Poly) -> AffMatrix {
    AffMatrix::scalar(AffPoly::from_poly(&p))
}

fn identity_residuals() -> Result<String, String> {
    let p = presets::single_input();
    let sym = PlantSymbols::new(2, 1);
    let tr = traj(&p, 6, NoiseBounds::state_only(0.02), 11);
    let q = scalar(&sym.a[(0, 0)] - &Poly::constant(p.a[(0, 0)] - 0.5));
    let mut prog = ConicProgram::new("alt");
    let b = build_alt_psatz(&mut prog, &q, &tr, &sym, &AltOptions::new(1)).unwrap();
    let r = prog.solve(&Tolerances::default()).unwrap();
    if !r.status.is_solved() {
        return Err(format!("alternatives certificate: {:?}", r.status));
    }
    let alt = b.linking_residual(&prog, &r).max(b.q_residual(&prog, &r));
    // scalar plant: the Full program stays small
    let p1 = Plant::new(DMatrix::from_element(1, 1, 0.8), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let tr = traj(&p1, 4, NoiseBounds::state_only(0.02), 11);
    let q = scalar(&PlantSymbols::new(1, 1).a[(0, 0)] - &Poly::constant(0.5));
    let mut prog = ConicProgram::new("full");
    let c = compile(&mut prog, &SosConstraint::new(q, build_eiv_set(&tr).unwrap(), 2)).unwrap();
    let r = prog.solve(&Tolerances::default()).unwrap();
    if !r.status.is_solved() {
        return Err(format!("full certificate: {:?}", r.status));
    }
    let full = c.reconstruction_error(&r.x);
    if alt <= 1e-6 && full <= 1e-6 {
        Ok(format!("identity residual alt {alt:.1e}, full {full:.1e} (<= 1e-6)"))
    } else {
        Err(format!("identity residual alt {alt:.1e}, full {full:.1e} exceeds 1e-6"))
    }
}

fn soundness() -> Result<String, String> {
    let mut worst = f64::INFINITY;
    for (plant, method, seed) in [(presets::single_input(), Method::SsAlt, 3), (presets::two_input(), Method::QsAlt, 2)] {
        let tr = traj(&plant, 8, NoiseBounds::state_only(0.05), seed);
        let o = match method {
            Method::SsAlt => ss_alt(&tr, 1, 1e-3, PiSpec::None),
            _ => qs_alt(&tr, 1, PiSpec::None),
        };
        let c = controller(o.unwrap())?;
        let samples = sample_consistent_plants(&build_eiv_set(&tr).unwrap(), &plant, 200, 17).unwrap();
        let v = verify(&c, &plant, &samples).unwrap();
        let cert = v.certified_min_eig.ok_or("no certified targets")?;
        if !(cert > 0.0 && v.passed(c.class)) {
            return Err(format!("{}: min eig {cert:.3e}, radius {:?}", method.name(), v.sampled_max_radius));
        }
        worst = worst.min(cert);
    }
    Ok(format!("200 sampled plants per controller, smallest certified eigenvalue {worst:.2e} > 0"))
}

fn noise_absence() -> Result<String, String> {
    let sym1 = PlantSymbols::new(2, 1);
    let tr = traj(&presets::single_input(), 5, NoiseBounds::state_only(0.05), 4);
    let mut bundles = Vec::new();
    for s in [1, 4] {
        let mut prog = ConicProgram::new("alt");
        let q = AffMatrix::from_poly_matrix(&PolyMatrix::identity(s));
        bundles.push(build_alt_psatz(&mut prog, &q, &tr, &sym1, &AltOptions::new(1)).unwrap());
    }
    let tr2 = traj(&presets::two_input(), 5, NoiseBounds::new(0.03, 0.02, 0.05), 4);
    let mut prog = ConicProgram::new("allnoise");
    bundles.push(build_alt_allnoise(&mut prog, &scalar(Poly::constant(1.0)), &tr2, &PlantSymbols::new(2, 2), &AltOptions::new(1)).unwrap());
    let mut total = 0;
    for b in &bundles {
        let vars = bundle_vars(b);
        total += vars.len();
        if let Some(v) = vars.iter().find(|v| v.kind.is_noise()) {
            return Err(format!("noise symbol {v} in an alternatives bundle"));
        }
    }
    // the same data does carry noise symbols in the uneliminated set
    let set: SemiAlgSet = build_eiv_set(&tr).unwrap();
    if set.noise_vars().is_empty() {
        return Err("consistency set has no noise symbols to eliminate".into());
    }
    Ok(format!("{} bundles, {total} multiplier symbols, none of them noise", bundles.len()))
}

fn full_alt_agreement() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sym = PlantSymbols::new(1, 1);
    let mut positive = 0;
    for k in 0..20u64 {
        let a: f64 = rng.random_range(-1.5..1.5);
        let b: f64 = rng.random_range(0.5..1.5);
        let off: f64 = rng.random_range(0.1..0.5);
        let c = if rng.random_bool(0.5) { a - off } else { a + off };
        let p = Plant::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap();
        let tr = traj(&p, 4, NoiseBounds::zero(), k);
        let q = scalar(&sym.a[(0, 0)] - &Poly::constant(c));
        let mut full = ConicProgram::new("full");
        compile(&mut full, &SosConstraint::new(q.clone(), build_eiv_set(&tr).unwrap(), 2)).unwrap();
        let f = full.solve(&Tolerances::default()).unwrap().status.is_solved();
        let mut alt = ConicProgram::new("alt");
        build_alt_psatz(&mut alt, &q, &tr, &sym, &AltOptions::new(1)).unwrap();
        let g = alt.solve(&Tolerances::default()).unwrap().status.is_solved();
        if f != g || f != (c < a) {
            return Err(format!("instance {k}: a={a:.3} c={c:.3} full {f} alt {g}"));
        }
        positive += f as usize;
    }
    Ok(format!("20 clean scalar instances agree ({positive} certified, {} refuted)", 20 - positive))
}

fn scalarized_vs_scherer() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = VarId::a(0, 0);
    let mut k = SemiAlgSet::new("interval", vec![x]);
    k.ineqs.push(Poly::constant(1.0) - Poly::var(x).pow(2));
    let mut pd = 0;
    for t in 0..8 {
        let s = 2 + t % 2;
        let m = loop {
            let g = DMatrix::from_fn(s, s, |_, _| rng.random_range(-1.0..1.0));
            let m = (&g + g.transpose()) * 0.5 + DMatrix::identity(s, s) * 0.6;
            if min_eig(&m).abs() > 0.05 {
                break m;
            }
        };
        let rows: Vec<Vec<Poly>> = (0..s).map(|i| (0..s).map(|j| Poly::constant(m[(i, j)])).collect()).collect();
        let target = AffMatrix::from_poly_matrix(&PolyMatrix::from_rows(rows).unwrap());
        let solve = |kind: CertificateKind| {
            let mut prog = ConicProgram::new("pmi");
            compile(&mut prog, &SosConstraint::new(target.clone(), k.clone(), 1).with_kind(kind)).unwrap();
            prog.solve(&Tolerances::default()).unwrap().status.is_solved()
        };
        let a = solve(CertificateKind::SchererMatrix);
        let b = solve(CertificateKind::ScalarizedPmi);
        let want = min_eig(&m) > 0.0;
        if a != want || b != want {
            return Err(format!("matrix {t}: min eig {:.3}, scherer {a}, scalarized {b}", min_eig(&m)));
        }
        pd += want as usize;
    }
    Ok(format!("8 constant PMIs agree ({pd} definite)"))
}

fn properties() -> Verdict {
    let parts: [(&str, fn() -> Result<String, String>); 5] = [
        ("identity", identity_residuals),
        ("soundness", soundness),
        ("noise-free bundles", noise_absence),
        ("full/alt", full_alt_agreement),
        ("scalarized/scherer", scalarized_vs_scherer),
    ];
    let mut ok = true;
    let mut msgs = Vec::new();
    for (name, f) in parts {
        let r = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        ok &= r.is_ok();
        msgs.push(format!("{name}: {}", r.unwrap_or_else(|e| format!("FAIL {e}"))));
    }
    (ok, msgs.join("; "))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 9] = [
        (1, "model-based benchmark", model_based),
        (2, "no conservatism on clean data", no_conservatism),
        (3, "open-loop eigenvalues", eigenvalues),
        (4, "H2 benchmark", h2_benchmark),
        (5, "superstabilizability gap", superstabilizability_gap),
        (6, "certificate size tables", size_tables),
        (7, "ordering on noisy trials", orderings),
        (8, "Monte Carlo success rates", montecarlo),
        (9, "property suites", properties),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (ok, msg) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let s = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", s.unwrap_or_default()))
        });
        failed += !ok as usize;
        println!(
            "criterion {id} [{}] {name}: {msg} [{:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
