use trigger_ocp::homotopy::{simulated_schedule, solve_homotopy, HomotopyParams, HomotopyStatus, RelaxableProblem};
use trigger_ocp::{Expr, IpmOptions, NlpProblem, NlpStatus};

/// `min (x-1)² - δ` with the vanishing row `δ (x - 0.5) ≤ τ`; every
/// relaxation is feasible.
fn always_feasible() -> RelaxableProblem {
    let (x, d) = (Expr::var(0), Expr::var(1));
    let obj = (&x - 1.0).square() - d.clone();
    let nlp = NlpProblem::new(2, vec![-2.0, 0.0], vec![2.0, 1.0], obj, vec![], vec![&d * (&x - 0.5)]).unwrap();
    RelaxableProblem {
        nlp,
        relaxable: vec![0],
        indicators: vec![1],
    }
}

#[test]
fn all_success_run_follows_the_simulated_schedule() {
    let params = HomotopyParams::default();
    let s = solve_homotopy(&always_feasible(), &params, &[0.0, 1.0], &IpmOptions::default()).unwrap();
    assert_eq!(s.status, HomotopyStatus::Converged);
    assert!(s.trace.rows.iter().all(|r| r.status == NlpStatus::Optimal && r.accepted));
    assert_eq!(s.trace.accepted_taus(), simulated_schedule(&params));
    let t = s.trace.attempted_taus();
    let head = [60.0, 30.0, 12.5, 4.340_277_8, 1.255_867_4];
    for (a, b) in t.iter().zip(head) {
        assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
    }
    assert!(s.tau <= params.tau_min);
}

#[test]
fn infeasible_first_attempt_backs_off_to_96() {
    // 70 - x ≤ τ with x ∈ [0, 1] needs τ ≥ 69.
    let x = Expr::var(0);
    let nlp = NlpProblem::new(1, vec![0.0], vec![1.0], x.square(), vec![], vec![70.0 - &x]).unwrap();
    let p = RelaxableProblem {
        nlp,
        relaxable: vec![0],
        indicators: vec![],
    };
    let s = solve_homotopy(&p, &HomotopyParams::default(), &[0.5], &IpmOptions::default()).unwrap();
    let rows = &s.trace.rows;
    assert!((rows[0].tau - 60.0).abs() < 1e-12);
    assert_ne!(rows[0].status, NlpStatus::Optimal);
    assert!(!rows[0].accepted);
    assert!((rows[1].tau - 96.0).abs() < 1e-9, "second attempt {}", rows[1].tau);
    assert!(rows[1].accepted);
    let acc = s.trace.accepted_taus();
    assert!(acc.windows(2).all(|w| w[1] < w[0]));
    assert!(acc.iter().all(|t| *t >= 69.0));
    assert_ne!(s.status, HomotopyStatus::Converged);
    assert!(rows.len() <= HomotopyParams::default().max_outer);
}

#[test]
fn no_relaxable_rows_means_a_single_solve() {
    let x = Expr::var(0);
    let nlp = NlpProblem::new(1, vec![-1.0], vec![1.0], (&x - 0.25).square(), vec![], vec![]).unwrap();
    let p = RelaxableProblem {
        nlp,
        relaxable: vec![],
        indicators: vec![],
    };
    let s = solve_homotopy(&p, &HomotopyParams::default(), &[0.0], &IpmOptions::default()).unwrap();
    assert_eq!(s.trace.rows.len(), 1);
    assert!((s.x().unwrap()[0] - 0.25).abs() < 1e-6);
}

#[test]
fn final_point_respects_the_final_relaxation() {
    let s = solve_homotopy(&always_feasible(), &HomotopyParams::default(), &[0.0, 1.0], &IpmOptions::default()).unwrap();
    let x = s.x().unwrap();
    let v = x[1] * (x[0] - 0.5);
    assert!(v <= s.tau + 1e-6);
    // δ = 1 with x = 0.5 is optimal at τ = 0.
    assert!((x[1] - 1.0).abs() < 1e-2);
}
