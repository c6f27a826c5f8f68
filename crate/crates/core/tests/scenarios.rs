mod common;

use trigger_ocp::homotopy::{solve_homotopy, HomotopyParams, HomotopyStatus, RelaxableProblem};
use trigger_ocp::scenarios::docking::{build_docking_ocp, DockingParams};
use trigger_ocp::scenarios::pdg::{build_pdg_ocp, default_pyramids, LanderParams};
use trigger_ocp::scenarios::ugv::{build_ugv_ocp, default_regions, UgvParams};
use trigger_ocp::scenarios::{load_polytopes, pyramid_regions, save_polytopes, Formulation};
use trigger_ocp::{solve_nlp, IpmOptions, NlpStatus};

fn homotopy(nlp: &trigger_ocp::transcription::TranscribedNlp, tau_min: f64, guess: &[f64]) -> trigger_ocp::homotopy::HomotopySolution {
    let hp = HomotopyParams {
        tau_min,
        ..HomotopyParams::default()
    };
    solve_homotopy(&RelaxableProblem::from(nlp), &hp, guess, &IpmOptions::default()).unwrap()
}

#[test]
fn ugv_homotopy_visits_every_region() {
    let prm = UgvParams::default();
    let p = build_ugv_ocp(&prm, &default_regions(), Formulation::Mpvc).unwrap();
    let s = homotopy(&p.nlp, prm.tau_min, &p.initial_guess().unwrap());
    assert_eq!(s.status, HomotopyStatus::Converged);
    let sol = s.solution.unwrap();
    let b = p.breakdown(&sol.x);
    assert!((sol.objective - (b.control_effort + b.indicator)).abs() <= 1e-6);
    assert!((b.indicator - prm.w * b.sum_delta).abs() <= 1e-9);
    assert!(b.per_region.iter().all(|c| *c >= 1.0 - 1e-5), "{:?}", b.per_region);
    assert!((10.0..=16.0).contains(&b.sum_delta.round()), "sum delta {}", b.sum_delta);
    // An indicator at 1 means the relaxed point is inside its region.
    for (k, row) in p.delta_matrix(&sol.x).iter().enumerate() {
        let pos = &p.nlp.state(&sol.x, k)[..2];
        for (i, d) in row.iter().enumerate() {
            if *d >= 1.0 - 1e-5 {
                assert!(p.regions[i].contains(pos, 2.0 * s.tau), "node {k} region {i}");
            }
        }
    }
}

#[test]
fn ugv_formulations_coincide_without_regions() {
    let prm = UgvParams::default();
    let a = build_ugv_ocp(&prm, &[], Formulation::Minlp).unwrap();
    let b = build_ugv_ocp(&prm, &[], Formulation::Mpvc).unwrap();
    assert_eq!(a.nlp.num_vars(), b.nlp.num_vars());
    let mut r = common::rng(41);
    for _ in 0..5 {
        let x = common::random_point(&a.nlp.problem, 2.0, &mut r);
        let (ea, eb) = (a.nlp.problem.evaluate(&x).unwrap(), b.nlp.problem.evaluate(&x).unwrap());
        assert_eq!(ea.objective, eb.objective);
        assert_eq!(ea.eq, eb.eq);
        assert_eq!(ea.ineq, eb.ineq);
    }
}

#[test]
fn docking_homotopy_meets_the_triggered_limits() {
    let prm = DockingParams::default();
    let p = build_docking_ocp(&prm, Formulation::Mpvc).unwrap();
    let s = homotopy(&p.nlp, prm.tau_min, &p.initial_guess().unwrap());
    assert_eq!(s.status, HomotopyStatus::Converged);
    let x = s.x().unwrap();
    assert!(p.triggered_violation(x) <= 1e-4, "{}", p.triggered_violation(x));
    let last = p.nlp.state(x, prm.n);
    let vf = prm.final_velocity();
    for j in 0..3 {
        assert!((last[j] - prm.geometry.p_f[j]).abs() < 1e-6);
        assert!((last[3 + j] - vf[j]).abs() < 1e-6);
    }
    // The trigger switches on once, inside the radius.
    let inside: Vec<bool> = p.node_report(x).iter().map(|n| n.h > 0.0).collect();
    let first = inside.iter().position(|b| *b).expect("reaches the radius");
    assert!(inside[first..].iter().all(|b| *b));
}

#[test]
fn pdg_without_regions_respects_the_path_constraints() {
    let prm = LanderParams {
        n: 20,
        ..LanderParams::default()
    };
    let p = build_pdg_ocp(&prm, &[], Formulation::Mpvc).unwrap();
    let s = solve_nlp(&p.nlp.problem, &p.initial_guess().unwrap(), &IpmOptions::default()).unwrap();
    assert_eq!(s.status, NlpStatus::Optimal);
    assert!(p.constraint_report(&s.x).max() <= 1e-6, "{:?}", p.constraint_report(&s.x));
    let masses: Vec<f64> = (0..=prm.n).map(|k| p.lander_state(&s.x, k)[6]).collect();
    assert!(masses.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    let b = p.breakdown(&s.x);
    assert!(b.final_mass >= prm.m_dry && b.final_mass <= prm.m_wet);
    assert!((b.total() - s.objective).abs() <= 1e-6 * s.objective.abs().max(1.0));
    for k in 0..prm.n {
        let a = p.pointing_angles_deg(&s.x)[k];
        assert!(a <= prm.gamma_p_deg + 1e-6, "node {k}: pointing {a}");
    }
}

#[test]
fn pdg_counts_match_the_grid() {
    let p = build_pdg_ocp(&LanderParams::default(), &default_pyramids(), Formulation::Minlp).unwrap();
    assert_eq!(p.nlp.indicators.len(), 3 * 51);
    assert_eq!(p.nlp.integer_vars.len(), 3 * 51);
    assert!(p.big_m.iter().all(|m| *m > 0.0 && m.is_finite()));
}

#[test]
fn pyramid_file_round_trip() {
    let regions = pyramid_regions(70.0, &[[2000.0, 400.0, 0.0], [1000.0, 250.0, 0.0], [100.0, -100.0, 0.0]], [1.0; 4]).unwrap();
    let path = std::env::temp_dir().join(format!("pyramids-{}.json", std::process::id()));
    save_polytopes(&path, &regions).unwrap();
    let back = load_polytopes(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back, regions);
    for r in &back {
        assert_eq!(r.rows(), 4);
    }
}
