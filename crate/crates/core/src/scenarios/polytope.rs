//! Half-space polytopes `A ξ + b ≤ 0` and their JSON file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::expr::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolytopeDim {
    /// 2D position (planar vehicles).
    Position2,
    /// 3D position only.
    Position3,
    /// 3D position and 3D velocity.
    PositionVelocity6,
}

impl PolytopeDim {
    pub fn len(self) -> usize {
        match self {
            PolytopeDim::Position2 => 2,
            PolytopeDim::Position3 => 3,
            PolytopeDim::PositionVelocity6 => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub name: String,
    pub dim: PolytopeDim,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum PolytopeFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse polytope file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

impl Polytope {
    pub fn new(name: impl Into<String>, dim: PolytopeDim, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Polytope, ModelError> {
        let p = Polytope {
            name: name.into(),
            dim,
            a,
            b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.a.is_empty() {
            return Err(ModelError::Dimension(format!("polytope {} has no rows", self.name)));
        }
        if self.a.len() != self.b.len() {
            return Err(ModelError::Dimension(format!(
                "polytope {}: A has {} rows but b has length {}",
                self.name,
                self.a.len(),
                self.b.len()
            )));
        }
        let d = self.dim.len();
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != d {
                return Err(ModelError::Dimension(format!(
                    "polytope {}: row {i} has {} entries, expected {d}",
                    self.name,
                    row.len()
                )));
            }
            if row.iter().chain(std::iter::once(&self.b[i])).any(|v| !v.is_finite()) {
                return Err(ModelError::InvalidParameter(format!("polytope {}: non-finite entry in row {i}", self.name)));
            }
            if row.iter().all(|v| *v == 0.0) {
                return Err(ModelError::InvalidParameter(format!("polytope {}: row {i} is zero", self.name)));
            }
        }
        Ok(())
    }

    /// `A ξ + b`, row by row.
    pub fn residuals(&self, xi: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(xi).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }

    pub fn contains(&self, xi: &[f64], tol: f64) -> bool {
        self.residuals(xi).iter().all(|r| *r <= tol)
    }

    /// Symbolic rows `A ξ + b` over the given expressions.
    pub fn rows_expr(&self, xi: &[Expr]) -> Vec<Expr> {
        self.a.iter().zip(&self.b).map(|(row, b)| Expr::affine(row, xi, *b)).collect()
    }

    /// Axis-aligned rectangle `[lo, hi]` in the plane.
    pub fn rectangle(name: impl Into<String>, lo: [f64; 2], hi: [f64; 2]) -> Result<Polytope, ModelError> {
        Polytope::new(
            name,
            PolytopeDim::Position2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
            vec![-hi[0], -hi[1], lo[0], lo[1]],
        )
    }
}

pub fn load_polytopes(path: impl AsRef<Path>) -> Result<Vec<Polytope>, PolytopeFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PolytopeFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_polytopes(&text)
}

/// Accepts a single polytope object or an array of them.
pub fn parse_polytopes(text: &str) -> Result<Vec<Polytope>, PolytopeFileError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<Polytope>),
        One(Polytope),
    }
    let list = match serde_json::from_str::<OneOrMany>(text)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(p) => vec![p],
    };
    for p in &list {
        p.validate()?;
    }
    Ok(list)
}

pub fn polytopes_to_json(list: &[Polytope]) -> String {
    serde_json::to_string_pretty(list).expect("polytopes serialize")
}

pub fn save_polytopes(path: impl AsRef<Path>, list: &[Polytope]) -> std::io::Result<()> {
    fs::write(path, polytopes_to_json(list) + "\n")
}

/// Inverted pyramids `C (r - c_i) + d ≤ 0` with apex at each center.
pub fn pyramid_regions(beta_deg: f64, centers: &[[f64; 3]], d: [f64; 4]) -> Result<Vec<Polytope>, ModelError> {
    if !(beta_deg > 0.0 && beta_deg < 90.0) {
        return Err(ModelError::InvalidParameter(format!("pyramid angle must lie in (0, 90) degrees, got {beta_deg}")));
    }
    let (s, c) = beta_deg.to_radians().sin_cos();
    let rows = vec![vec![c, 0.0, -s], vec![0.0, c, -s], vec![-c, 0.0, -s], vec![0.0, -c, -s]];
    centers
        .iter()
        .enumerate()
        .map(|(i, ctr)| {
            let b = rows
                .iter()
                .zip(d)
                .map(|(row, di)| di - row.iter().zip(ctr).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            Polytope::new(format!("pyramid_{}", i + 1), PolytopeDim::Position3, rows.clone(), b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_pyramids() -> Vec<Polytope> {
        pyramid_regions(70.0, &[[2000.0, 400.0, 0.0], [1000.0, 250.0, 0.0], [100.0, -100.0, 0.0]], [1.0; 4]).unwrap()
    }

    #[test]
    fn pyramid_membership() {
        let p = reference_pyramids();
        assert_eq!(p.len(), 3);
        for (poly, c) in p.iter().zip([[2000.0, 400.0, 0.0], [1000.0, 250.0, 0.0], [100.0, -100.0, 0.0]]) {
            assert_eq!(poly.rows(), 4);
            let above = [c[0], c[1], 100.0];
            for r in poly.residuals(&above) {
                let expect = 1.0 - 70f64.to_radians().sin() * 100.0;
                assert!((r - expect).abs() < 1e-9);
                assert!((r + 92.969_262_1).abs() < 1e-6);
            }
            assert!(poly.contains(&above, 0.0));
            assert!(poly.residuals(&c).iter().all(|r| (r - 1.0).abs() < 1e-9));
            assert!(!poly.contains(&c, 0.0));
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let p = reference_pyramids();
        let back = parse_polytopes(&polytopes_to_json(&p)).unwrap();
        assert_eq!(p, back);
        for (a, b) in p.iter().zip(&back) {
            for (x, y) in a.b.iter().zip(&b.b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn file_validation() {
        let ok = r#"{"name":"p","dim":"position3","A":[[1,0,0],[0,1,0],[0,0,1],[-1,-1,-1]],"b":[-1,-1,-1,0]}"#;
        assert_eq!(parse_polytopes(ok).unwrap().len(), 1);
        let bad = r#"{"name":"p","dim":"position3","A":[[1,0,0],[0,1,0]],"b":[1]}"#;
        assert!(parse_polytopes(bad).is_err());
        let wrong_dim = r#"[{"name":"p","dim":"position2","A":[[1,0,0]],"b":[1]}]"#;
        assert!(parse_polytopes(wrong_dim).is_err());
    }

    #[test]
    fn rectangle_rows() {
        let r = Polytope::rectangle("r", [1.0, 2.0], [3.0, 4.0]).unwrap();
        assert!(r.contains(&[2.0, 3.0], 0.0));
        assert!(!r.contains(&[0.5, 3.0], 0.0));
    }
}
