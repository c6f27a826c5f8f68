mod common;

use rand::Rng;
use common::{derivative_models, fd_check, random_point, rel_err, rng, FdReport};

#[test]
fn scenario_jacobians_match_central_differences() {
    for (name, p) in derivative_models() {
        let mut r = rng(11);
        let mut rep = FdReport::default();
        for _ in 0..100 {
            let x = random_point(&p, 2.0, &mut r);
            rep.merge(fd_check(&p, &x));
        }
        assert!(rep.max_rel <= 1e-5, "{name}: max relative error {:.3e}", rep.max_rel);
        assert_eq!(rep.outside_pattern, 0, "{name}: nonzeros outside the sparsity pattern");
    }
}

#[test]
fn lagrangian_hessian_matches_gradient_differences() {
    for (name, p) in derivative_models() {
        let mut r = rng(5);
        for _ in 0..3 {
            let x = random_point(&p, 2.0, &mut r);
            let lam: Vec<f64> = (0..p.num_eq()).map(|_| r.gen_range(-1.0..1.0)).collect();
            let nu: Vec<f64> = (0..p.num_ineq()).map(|_| r.gen_range(0.0..1.0)).collect();
            let h = p.lagrangian_hessian(&x, 1.0, &lam, &nu).unwrap().to_dense();
            let grad_l = |z: &[f64]| {
                let d = p.derivatives(z).unwrap();
                let mut g = d.gradient.clone();
                d.jac_eq.transpose_mul_add(&lam, &mut g);
                d.jac_ineq.transpose_mul_add(&nu, &mut g);
                g
            };
            let mut xp = x.clone();
            let mut worst: f64 = 0.0;
            for j in 0..x.len() {
                let step = 1e-6 * x[j].abs().max(1.0);
                xp[j] = x[j] + step;
                let gp = grad_l(&xp);
                xp[j] = x[j] - step;
                let gm = grad_l(&xp);
                xp[j] = x[j];
                for i in 0..x.len() {
                    worst = worst.max(rel_err(h[i][j], (gp[i] - gm[i]) / (2.0 * step)));
                }
            }
            assert!(worst <= 1e-5, "{name}: Hessian relative error {worst:.3e}");
        }
    }
}
