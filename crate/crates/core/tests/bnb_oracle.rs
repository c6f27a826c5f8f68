mod common;

use trigger_ocp::logic::unpolished_indices;
use trigger_ocp::minlp::{enumerate_exhaustive, solve_bnb, BnbOptions, MinlpStatus};

/// Node solves tight enough that a 1e-6 objective comparison is meaningful.
fn tight() -> BnbOptions {
    let mut o = BnbOptions::default();
    o.ipm.tol = 1e-9;
    o.ipm.constr_viol_tol = 1e-9;
    o
}

#[test]
fn bnb_matches_exhaustive_enumeration_on_convex_instances() {
    let mut r = common::rng(29);
    let opts = tight();
    for case in 0..20 {
        let (p, guess) = common::random_convex_minlp(&mut r);
        let e = enumerate_exhaustive(&p, &guess, 8, &opts).unwrap();
        let b = solve_bnb(&p, &guess, &opts).unwrap();
        assert_eq!(b.status, MinlpStatus::OptimalWithinTree, "case {case}");
        let (eo, bo) = (e.objective().unwrap(), b.objective().unwrap());
        assert!((eo - bo).abs() <= 1e-6, "case {case}: enumerate {eo} vs bnb {bo}");
        let best = b.best.unwrap();
        assert!(best.binaries.iter().all(|v| *v == 0.0 || *v == 1.0));
        assert!(p.nlp.max_violation(&best.x).unwrap() <= 1e-6);
        assert!(b.nodes <= 1 << (p.integer_vars.len() + 1));
    }
}

#[test]
fn incumbent_history_is_monotone() {
    let mut r = common::rng(31);
    let opts = BnbOptions::default();
    for _ in 0..5 {
        let (p, guess) = common::random_convex_minlp(&mut r);
        let b = solve_bnb(&p, &guess, &opts).unwrap();
        for w in b.incumbent_history.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
    }
}

#[test]
fn returned_indicator_solutions_are_polished() {
    let mut r = common::rng(37);
    let opts = BnbOptions::default();
    for case in 0..10 {
        let inst = common::random_indicator_instance(&mut r);
        let mut p = trigger_ocp::minlp::MinlpProblem::new(inst.nlp.clone(), inst.deltas.clone()).unwrap();
        p.indicators = indicator_records(&inst);
        let mut guess = vec![0.0; inst.nx];
        guess.extend(vec![0.5; inst.deltas.len()]);
        let b = solve_bnb(&p, &guess, &opts).unwrap();
        let x = b.best.expect("instances are feasible").x;
        assert!(unpolished_indices(&x, &p.indicators, 1e-6).is_empty(), "case {case}");
    }
}

fn indicator_records(inst: &common::IndicatorInstance) -> Vec<trigger_ocp::logic::IndicatorRecord> {
    use trigger_ocp::logic::{IndicatorRecord, LogicMode};
    inst.deltas
        .iter()
        .zip(&inst.big_m_rows)
        .zip(&inst.big_m)
        .map(|((&d, row), &m)| IndicatorRecord {
            delta: d,
            // G = row + M(1 - δ)
            consequence: vec![row + &(1.0 - &trigger_ocp::Expr::var(d)).scale(m)],
            weight: 1.0,
            mode: LogicMode::IndicatorBigM,
            node: 0,
            group: None,
            trigger: None,
            epsilon: 0.0,
        })
        .collect()
}
