//! Per-node data series for trajectory and indicator plots.

use std::fmt::Write as _;

use crate::run::Built;

/// Tab-separated state series (N+1 rows) and control series (N rows).
pub struct PlotData {
    pub states: String,
    pub controls: String,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn line(out: &mut String, cols: &[f64]) {
    let cells: Vec<String> = cols.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{}", cells.join("\t"));
}

fn header(out: &mut String, cols: &[String]) {
    let _ = writeln!(out, "{}", cols.join("\t"));
}

fn names(fixed: &[&str], regions: usize) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).chain((0..regions).map(|i| format!("delta_{i}"))).collect()
}

pub fn emit_plot_data(built: &Built, z: &[f64]) -> PlotData {
    let nlp = built.nlp();
    let n = nlp.nodes.len() - 1;
    let t_d = nlp.t_d(z);
    let mut states = String::new();
    let mut controls = String::new();
    match built {
        Built::Ugv(p) => {
            let d = p.delta_matrix(z);
            header(&mut states, &names(&["k", "t", "p_x", "p_y", "theta_deg", "v", "phi_deg"], p.regions.len()));
            for k in 0..=n {
                let x = nlp.state(z, k);
                let mut row = vec![k as f64, k as f64 * t_d, x[0], x[1], x[2].to_degrees(), x[3], x[4].to_degrees()];
                row.extend(&d[k]);
                line(&mut states, &row);
            }
            header(&mut controls, &names(&["k", "t", "a", "psi_deg", "norm"], 0));
            for k in 0..n {
                let u = nlp.control(z, k);
                line(&mut controls, &[k as f64, k as f64 * t_d, u[0], u[1].to_degrees(), norm(&u)]);
            }
        }
        Built::Pdg(p) => {
            let d = p.delta_matrix(z);
            let glide = p.glide_slope_angles_deg(z);
            let pointing = p.pointing_angles_deg(z);
            header(
                &mut states,
                &names(&["k", "t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "speed", "mass", "glide_slope_deg"], p.regions.len()),
            );
            for k in 0..=n {
                let x = p.lander_state(z, k);
                let mut row = vec![k as f64, k as f64 * t_d];
                row.extend(&x[0..6]);
                row.extend([norm(&x[3..6]), x[6], glide[k]]);
                row.extend(&d[k]);
                line(&mut states, &row);
            }
            header(&mut controls, &names(&["k", "t", "u_x", "u_y", "u_z", "thrust", "pointing_deg", "mu_x", "mu_y", "mu_z"], 0));
            for k in 0..n {
                let u = p.thrust(z, k);
                let mut row = vec![k as f64, k as f64 * t_d];
                row.extend(u);
                row.extend([norm(&u), pointing[k]]);
                row.extend(p.thrust_rate(z, k));
                line(&mut controls, &row);
            }
        }
        Built::Docking(p) => {
            let report = p.node_report(z);
            header(&mut states, &names(&["k", "t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "speed", "distance", "trigger"], 0));
            for k in 0..=n {
                let x = nlp.state(z, k);
                let mut row = vec![k as f64, k as f64 * t_d];
                row.extend(&x[0..6]);
                let dist = norm(&(0..3).map(|j| x[j] - p.params.geometry.p_f[j]).collect::<Vec<_>>());
                let h = report.get(k).map_or(p.params.geometry.r - dist, |r| r.h);
                row.extend([norm(&x[3..6]), dist, h]);
                line(&mut states, &row);
            }
            header(&mut controls, &names(&["k", "t", "u_x", "u_y", "u_z", "norm"], 0));
            for k in 0..n {
                let u = nlp.control(z, k);
                let mut row = vec![k as f64, k as f64 * t_d];
                row.extend(&u);
                row.push(norm(&u));
                line(&mut controls, &row);
            }
        }
    }
    PlotData { states, controls }
}
