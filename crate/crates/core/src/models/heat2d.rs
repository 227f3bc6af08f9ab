//! Porous-media diffusion on `[0, 2]²` discretised by finite differences.
//!
//! Nodes form an `(m+1) × (m+1)` grid ordered row-major (`index = iy·(m+1) + ix`).
//! The mass matrix is `diag(φ)`, so every impermeable node (`φ = 0`) becomes
//! an algebraic equation. The left edge `x = 0` carries the Dirichlet value 1
//! and is also algebraic: its mass row is zero, its `B` row is the identity
//! row and `f = -1` there, so the constraint reads `Y = 1`. The remaining
//! edges are homogeneous Neumann, realised by reflecting ghost nodes.
//!
//! Interior rows use `B = D·L` (5-point Laplacian) and `f = Y - φ`. Coupling
//! of a node next to the Dirichlet edge to the known boundary value is moved
//! into `f` as a constant source, which keeps the Dirichlet columns of the
//! iteration matrix trivial and the boundary values exact.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::SdaeProblem;
use crate::projector::MatrixFn;

pub const NAME: &str = "heat2d";
/// Side length of the square domain.
pub const DOMAIN: f64 = 2.0;

/// Per-node porosity in `[0, 1]` on an `(m+1) × (m+1)` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PorosityField {
    pub m: usize,
    pub phi: Vec<f64>,
}

impl PorosityField {
    pub fn new(m: usize, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != (m + 1) * (m + 1) {
            return Err(Error::InvalidSpec(format!(
                "porosity has {} values, expected {}",
                phi.len(),
                (m + 1) * (m + 1)
            )));
        }
        if let Some(bad) = phi.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidSpec(format!(
                "porosity value {bad} outside [0, 1]"
            )));
        }
        Ok(PorosityField { m, phi })
    }

    pub fn uniform(m: usize, value: f64) -> Result<Self> {
        Self::new(m, vec![value; (m + 1) * (m + 1)])
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.phi[node_index(self.m, ix, iy)]
    }

    /// First line `m`, then `m+1` rows of `m+1` comma-separated values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.m)?;
        write_grid(&self.phi, self.m, &mut out)
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty porosity file".into()))??;
        let m: usize = first
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("grid size '{}': {e}", first.trim())))?;
        let mut phi = Vec::with_capacity((m + 1) * (m + 1));
        let mut rows = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::Parse(format!("porosity row {}: {e}", rows + 1)))?;
            if row.len() != m + 1 {
                return Err(Error::Parse(format!(
                    "porosity row {} has {} values, expected {}",
                    rows + 1,
                    row.len(),
                    m + 1
                )));
            }
            phi.extend(row);
            rows += 1;
        }
        if rows != m + 1 {
            return Err(Error::Parse(format!(
                "porosity has {rows} rows, expected {}",
                m + 1
            )));
        }
        Self::new(m, phi)
    }
}

pub fn node_index(m: usize, ix: usize, iy: usize) -> usize {
    iy * (m + 1) + ix
}

/// Writes `m+1` lines of `m+1` values, row `iy` per line.
pub fn write_grid<W: Write>(values: &[f64], m: usize, mut out: W) -> Result<()> {
    for iy in 0..=m {
        let row: Vec<String> = (0..=m)
            .map(|ix| format!("{:.16e}", values[node_index(m, ix, iy)]))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Impermeable blocks, as fractions of the domain: `(x0, x1, y0, y1)`.
const ROCKS: [(f64, f64, f64, f64); 3] = [
    (0.25, 0.40, 0.20, 0.45),
    (0.55, 0.75, 0.55, 0.80),
    (0.60, 0.80, 0.15, 0.30),
];

/// `φ = 1` with a few rectangular `φ = 0` blocks strictly inside the domain.
pub fn default_porosity(m: usize) -> Result<PorosityField> {
    if m < 8 {
        return Err(Error::InvalidSpec(format!(
            "default porosity needs m >= 8, got {m}"
        )));
    }
    let mut phi = vec![1.0; (m + 1) * (m + 1)];
    let mf = m as f64;
    for &(x0, x1, y0, y1) in &ROCKS {
        let ix0 = ((x0 * mf).ceil() as usize).max(2);
        let ix1 = ((x1 * mf).floor() as usize).min(m - 1);
        let iy0 = ((y0 * mf).ceil() as usize).max(1);
        let iy1 = ((y1 * mf).floor() as usize).min(m - 1);
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                phi[node_index(m, ix, iy)] = 0.0;
            }
        }
    }
    PorosityField::new(m, phi)
}

#[derive(Clone, Debug)]
pub struct Heat2dSpec {
    pub m: usize,
    pub diffusion: f64,
    pub noise_amp: f64,
    pub porosity: PorosityField,
    pub horizon: f64,
}

impl Heat2dSpec {
    /// Defaults: `D = 100`, noise amplitude `1e-4`, `T = 1`, default porosity.
    pub fn new(m: usize) -> Result<Self> {
        Ok(Heat2dSpec {
            m,
            diffusion: 100.0,
            noise_amp: 1e-4,
            porosity: default_porosity(m)?,
            horizon: 1.0,
        })
    }

    pub fn with_porosity(mut self, porosity: PorosityField) -> Self {
        self.porosity = porosity;
        self
    }

    pub fn with_noise_amp(mut self, amp: f64) -> Self {
        self.noise_amp = amp;
        self
    }

    fn check(&self) -> Result<()> {
        if self.m < 4 {
            return Err(Error::InvalidSpec(format!(
                "m = {} must be at least 4",
                self.m
            )));
        }
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "diffusion {} must be positive",
                self.diffusion
            )));
        }
        if !(self.noise_amp >= 0.0 && self.noise_amp.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "noise amplitude {} must be non-negative",
                self.noise_amp
            )));
        }
        if self.porosity.m != self.m {
            return Err(Error::InvalidSpec(format!(
                "porosity grid has m = {}, spec has m = {}",
                self.porosity.m, self.m
            )));
        }
        Ok(())
    }
}

/// Neighbours of `(ix, iy)` with their Laplacian weights after ghost-node
/// reflection on the Neumann edges. Only called for `ix >= 1`.
fn stencil(m: usize, ix: usize, iy: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(4);
    let mut push = |jx: usize, jy: usize, w: f64| {
        if let Some(e) = out
            .iter_mut()
            .find(|e: &&mut (usize, usize, f64)| e.0 == jx && e.1 == jy)
        {
            e.2 += w;
        } else {
            out.push((jx, jy, w));
        }
    };
    push(ix - 1, iy, 1.0);
    if ix < m {
        push(ix + 1, iy, 1.0);
    } else {
        push(ix - 1, iy, 1.0);
    }
    if iy > 0 {
        push(ix, iy - 1, 1.0);
    } else {
        push(ix, iy + 1, 1.0);
    }
    if iy < m {
        push(ix, iy + 1, 1.0);
    } else {
        push(ix, iy - 1, 1.0);
    }
    out
}

pub fn build_heat2d(spec: &Heat2dSpec) -> Result<SdaeProblem> {
    spec.check()?;
    let m = spec.m;
    let d = (m + 1) * (m + 1);
    let dx = DOMAIN / m as f64;
    let k = spec.diffusion / (dx * dx);

    let mut mass = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, d);
    let mut source = vec![0.0; d];
    let mut dirichlet = vec![false; d];
    let mut zeta = DVector::zeros(d);
    let phi = spec.porosity.phi.clone();

    for iy in 0..=m {
        for ix in 0..=m {
            let j = node_index(m, ix, iy);
            if ix == 0 {
                dirichlet[j] = true;
                b[(j, j)] = 1.0;
                zeta[j] = 1.0;
                continue;
            }
            mass[(j, j)] = phi[j];
            b[(j, j)] = -4.0 * k;
            for (jx, jy, w) in stencil(m, ix, iy) {
                if jx == 0 {
                    source[j] += k * w;
                } else {
                    b[(j, node_index(m, jx, jy))] += k * w;
                }
            }
        }
    }

    let f_phi = phi.clone();
    let f_dirichlet = dirichlet.clone();
    let f = move |_t: f64, y: &DVector<f64>| {
        DVector::from_iterator(
            d,
            (0..d).map(|j| {
                if f_dirichlet[j] {
                    -1.0
                } else {
                    y[j] - f_phi[j] + source[j]
                }
            }),
        )
    };
    let noise_diag = DVector::from_iterator(
        d,
        (0..d).map(|j| {
            if dirichlet[j] {
                0.0
            } else {
                spec.noise_amp * phi[j]
            }
        }),
    );
    let g = move |_t: f64, _y: &DVector<f64>| DMatrix::from_diagonal(&noise_diag);

    let zeros = phi
        .iter()
        .zip(&dirichlet)
        .filter(|(p, dir)| **p == 0.0 && !**dir)
        .count();
    Ok(SdaeProblem::new(
        NAME,
        MatrixFn::constant(mass),
        MatrixFn::constant(b),
        f,
        g,
        d,
        zeta,
        spec.horizon,
    )?
    .with_note(format!(
        "heat2d m = {m}, D = {}, noise = {:e}, {zeros} impermeable nodes, {} Dirichlet nodes",
        spec.diffusion,
        spec.noise_amp,
        m + 1
    )))
}

/// Indices of the algebraic interior nodes (`φ = 0`, not on the Dirichlet edge).
pub fn impermeable_nodes(spec: &Heat2dSpec) -> Vec<usize> {
    let m = spec.m;
    (0..=m)
        .flat_map(|iy| (1..=m).map(move |ix| node_index(m, ix, iy)))
        .filter(|&j| spec.porosity.phi[j] == 0.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pattern_small_grid() {
        let p = default_porosity(8).unwrap();
        assert!(p.phi.iter().all(|v| *v == 0.0 || *v == 1.0));
        assert!(p.phi.iter().filter(|v| **v == 0.0).count() >= 4);
        assert!((0..=8).all(|iy| p.at(0, iy) == 1.0));
        // no rock on any edge
        for i in 0..=8 {
            for (ix, iy) in [(0, i), (8, i), (i, 0), (i, 8)] {
                assert_eq!(p.at(ix, iy), 1.0);
            }
        }
        assert!(default_porosity(7).is_err());
    }

    #[test]
    fn porosity_csv_round_trip() {
        let p = default_porosity(10).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = PorosityField::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn porosity_csv_rejects_bad_input() {
        let bad = "2\n1,1,1\n1,2,1\n1,1,1\n";
        assert!(PorosityField::read_csv(std::io::Cursor::new(bad)).is_err());
        let short = "2\n1,1,1\n1,1\n1,1,1\n";
        assert!(PorosityField::read_csv(std::io::Cursor::new(short)).is_err());
    }

    #[test]
    fn stencil_weights_sum_to_four() {
        let m = 6;
        for iy in 0..=m {
            for ix in 1..=m {
                let w: f64 = stencil(m, ix, iy).iter().map(|e| e.2).sum();
                assert_eq!(w, 4.0);
            }
        }
        assert_eq!(stencil(m, m, 0), vec![(m - 1, 0, 2.0), (m, 1, 2.0)]);
    }

    #[test]
    fn uniform_porosity_has_identity_mass_off_the_boundary() {
        let spec = Heat2dSpec::new(8)
            .unwrap()
            .with_porosity(PorosityField::uniform(8, 1.0).unwrap());
        let p = build_heat2d(&spec).unwrap();
        let a = p.a.eval(0.0);
        for iy in 0..=8 {
            for ix in 0..=8 {
                let j = node_index(8, ix, iy);
                assert_eq!(a[(j, j)], if ix == 0 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = Heat2dSpec::new(8).unwrap();
        spec.diffusion = 0.0;
        assert!(matches!(build_heat2d(&spec), Err(Error::InvalidSpec(_))));
        let spec = Heat2dSpec::new(8).unwrap().with_noise_amp(-1.0);
        assert!(build_heat2d(&spec).is_err());
        let spec = Heat2dSpec::new(8)
            .unwrap()
            .with_porosity(PorosityField::uniform(9, 1.0).unwrap());
        assert!(build_heat2d(&spec).is_err());
    }

    #[test]
    fn impermeable_row_is_laplacian_plus_reaction() {
        let spec = Heat2dSpec::new(12).unwrap();
        let p = build_heat2d(&spec).unwrap();
        let j = impermeable_nodes(&spec)[0];
        let (ix, iy) = (j % 13, j / 13);
        assert!(ix >= 2);
        let k = 100.0 / (2.0f64 / 12.0).powi(2);
        let y = DVector::from_fn(p.d, |i, _| (i as f64 * 0.37).sin());
        let mu = p.total_drift(0.0, &y);
        let lap = y[node_index(12, ix - 1, iy)]
            + y[node_index(12, ix + 1, iy)]
            + y[node_index(12, ix, iy - 1)]
            + y[node_index(12, ix, iy + 1)]
            - 4.0 * y[j];
        assert!((mu[j] - (k * lap + y[j])).abs() < 1e-9 * k);
    }
}
