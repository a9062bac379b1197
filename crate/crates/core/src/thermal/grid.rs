use thiserror::Error;

use super::sparse::{pcg, Csr, SolveInfo};
use super::stack::{LayerKind, StackDescription};

pub const SOLVER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ThermalError {
    #[error("invalid stack: {0}")]
    InvalidStack(String),
    #[error("no boundary heat path: conductance matrix is singular")]
    Singular,
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("solver stalled at relative residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Finite-volume model of the stack. Cells are indexed layer-major, then
/// row, then column. Temperatures passed in and out are absolute (°C);
/// internally the solver works on the rise above ambient.
#[derive(Debug, Clone)]
pub struct ThermalGrid {
    pub resolution: usize,
    pub layers: usize,
    pub ambient_c: f64,
    /// Diagonal of the capacitance matrix, J/K.
    pub c: Vec<f64>,
    /// Conductance matrix including the boundary terms, W/K.
    pub g: Csr,
}

/// Capacitance diagonal and conductance matrix of `stack` at `resolution`
/// cells per side.
pub fn build_matrices(stack: &StackDescription, resolution: usize) -> Result<(Vec<f64>, Csr), ThermalError> {
    let mut v = Vec::new();
    stack.violations(&mut v);
    if resolution == 0 {
        return Err(ThermalError::InvalidStack("resolution must be ≥ 1".into()));
    }
    if let Some(first) = v.first() {
        if first.field == "thermal_stack.htc" {
            return Err(ThermalError::Singular);
        }
        return Err(ThermalError::InvalidStack(first.to_string()));
    }
    let n = resolution;
    let nl = stack.layers.len();
    let dx = stack.footprint_m2.sqrt() / n as f64;
    let area = dx * dx;
    let idx = |l: usize, r: usize, c: usize| (l * n + r) * n + c;
    let mut cap = vec![0.0; nl * n * n];
    let mut t = Vec::with_capacity(nl * n * n * 7);
    let couple = |t: &mut Vec<(usize, usize, f64)>, a: usize, b: usize, g: f64| {
        t.push((a, a, g));
        t.push((b, b, g));
        t.push((a, b, -g));
        t.push((b, a, -g));
    };
    for (l, layer) in stack.layers.iter().enumerate() {
        // face area dx·thickness over centre distance dx
        let lateral = layer.conductivity * layer.thickness_m;
        let half = layer.thickness_m / (2.0 * layer.conductivity * area);
        for r in 0..n {
            for c in 0..n {
                let i = idx(l, r, c);
                cap[i] = layer.heat_capacity * area * layer.thickness_m;
                if c + 1 < n {
                    couple(&mut t, i, idx(l, r, c + 1), lateral);
                }
                if r + 1 < n {
                    couple(&mut t, i, idx(l, r + 1, c), lateral);
                }
                if let Some(up) = stack.layers.get(l + 1) {
                    let up_half = up.thickness_m / (2.0 * up.conductivity * area);
                    couple(&mut t, i, idx(l + 1, r, c), 1.0 / (half + up_half));
                }
                if l + 1 == nl && stack.htc > 0.0 {
                    t.push((i, i, 1.0 / (half + 1.0 / (stack.htc * area))));
                }
                if l == 0 && stack.bottom_htc > 0.0 {
                    t.push((i, i, 1.0 / (half + 1.0 / (stack.bottom_htc * area))));
                }
            }
        }
    }
    Ok((cap, Csr::from_triplets(nl * n * n, t)))
}

impl ThermalGrid {
    pub fn new(stack: &StackDescription) -> Result<Self, ThermalError> {
        Self::with_resolution(stack, stack.resolution)
    }

    pub fn with_resolution(stack: &StackDescription, resolution: usize) -> Result<Self, ThermalError> {
        let (c, g) = build_matrices(stack, resolution)?;
        Ok(Self {
            resolution,
            layers: stack.layers.len(),
            ambient_c: stack.ambient_c,
            c,
            g,
        })
    }

    /// A grid from explicit matrices, for hand-built networks.
    pub fn from_matrices(c: Vec<f64>, g: Csr, ambient_c: f64) -> Self {
        assert_eq!(c.len(), g.n);
        Self {
            resolution: 0,
            layers: 1,
            ambient_c,
            c,
            g,
        }
    }

    pub fn cells(&self) -> usize {
        self.c.len()
    }

    pub fn index(&self, layer: usize, row: usize, col: usize) -> usize {
        (layer * self.resolution + row) * self.resolution + col
    }

    /// Ambient temperature everywhere.
    pub fn ambient(&self) -> Vec<f64> {
        vec![self.ambient_c; self.cells()]
    }

    fn check_len(&self, v: &[f64]) -> Result<(), ThermalError> {
        if v.len() != self.cells() {
            return Err(ThermalError::Length {
                expected: self.cells(),
                got: v.len(),
            });
        }
        Ok(())
    }

    fn solve(a: &Csr, b: &[f64], x: &mut [f64]) -> Result<SolveInfo, ThermalError> {
        pcg(a, b, x, SOLVER_TOLERANCE, 20 * a.n + 100).map_err(|i| ThermalError::NoConvergence {
            iterations: i.iterations,
            residual: i.relative_residual,
        })
    }

    /// One backward-Euler step: `(C/dt + G) T' = P + (C/dt) T`.
    pub fn step(&self, t: &[f64], p: &[f64], dt: f64) -> Result<Vec<f64>, ThermalError> {
        if !(dt > 0.0) {
            return Err(ThermalError::TimeStep(dt));
        }
        self.check_len(t)?;
        self.check_len(p)?;
        let cdt: Vec<f64> = self.c.iter().map(|c| c / dt).collect();
        let a = self.g.add_diag(&cdt);
        let theta: Vec<f64> = t.iter().map(|t| t - self.ambient_c).collect();
        let b: Vec<f64> = (0..self.cells()).map(|i| p[i] + cdt[i] * theta[i]).collect();
        let mut x = theta;
        Self::solve(&a, &b, &mut x)?;
        Ok(x.into_iter().map(|v| v + self.ambient_c).collect())
    }

    /// Solves `G T = P`.
    pub fn steady_state(&self, p: &[f64]) -> Result<Vec<f64>, ThermalError> {
        self.check_len(p)?;
        let mut x = vec![0.0; self.cells()];
        Self::solve(&self.g, p, &mut x)?;
        Ok(x.into_iter().map(|v| v + self.ambient_c).collect())
    }

    pub fn peak(t: &[f64]) -> f64 {
        t.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Long-format dump: `layer,row,col,temperature_c`.
    pub fn to_csv(&self, t: &[f64], stack: &StackDescription) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "row", "col", "temperature_c"]).expect("in-memory write");
        let n = self.resolution;
        for (l, layer) in stack.layers.iter().enumerate().take(self.layers) {
            for r in 0..n {
                for c in 0..n {
                    w.write_record([
                        layer.name.clone(),
                        r.to_string(),
                        c.to_string(),
                        format!("{:.4}", t[self.index(l, r, c)]),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
    }
}

/// Spreads per-core logic power uniformly over each core's footprint on the
/// logic die and per-core DRAM power evenly over the DRAM dies above it.
/// Cores tile the die as a `rows × cols` grid.
pub fn power_map(
    stack: &StackDescription,
    resolution: usize,
    (rows, cols): (u32, u32),
    logic_w: &[f64],
    dram_w: &[f64],
) -> Vec<f64> {
    let n = resolution;
    let mut p = vec![0.0; stack.layers.len() * n * n];
    let dram_layers: Vec<usize> = stack
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind == LayerKind::Dram)
        .map(|(i, _)| i)
        .collect();
    let logic = stack.layers.iter().position(|l| l.kind == LayerKind::Logic).unwrap_or(0);
    let owner = |r: usize, c: usize| {
        let cr = (r * rows as usize / n).min(rows as usize - 1);
        let cc = (c * cols as usize / n).min(cols as usize - 1);
        cr * cols as usize + cc
    };
    let mut cells_of = vec![0usize; (rows * cols) as usize];
    for r in 0..n {
        for c in 0..n {
            cells_of[owner(r, c)] += 1;
        }
    }
    for r in 0..n {
        for c in 0..n {
            let k = owner(r, c);
            let share = cells_of[k] as f64;
            p[(logic * n + r) * n + c] += logic_w.get(k).copied().unwrap_or(0.0) / share;
            if !dram_layers.is_empty() {
                let per = dram_w.get(k).copied().unwrap_or(0.0) / share / dram_layers.len() as f64;
                for &l in &dram_layers {
                    p[(l * n + r) * n + c] += per;
                }
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::Layer;

    fn two_cell(k0: f64, k1: f64, t0: f64, t1: f64) -> StackDescription {
        let mut s = StackDescription::with_dram_dies(0);
        s.layers = vec![
            Layer { conductivity: k0, thickness_m: t0, ..Layer::silicon("a", LayerKind::Logic, t0) },
            Layer { conductivity: k1, thickness_m: t1, ..Layer::silicon("b", LayerKind::Dram, t1) },
        ];
        s.footprint_m2 = 1e-4;
        s
    }

    #[test]
    fn two_cells_series_conductance() {
        let s = two_cell(100.0, 2.0, 1e-4, 2e-5);
        let (_, g) = build_matrices(&s, 1).unwrap();
        let a = 1e-4;
        let want = 1.0 / (1e-4 / (2.0 * 100.0 * a) + 2e-5 / (2.0 * 2.0 * a));
        assert!((-g.get(0, 1) - want).abs() < 1e-9 * want);
        let top = 1.0 / (2e-5 / (2.0 * 2.0 * a) + 1.0 / (s.htc * a));
        assert!((g.get(1, 1) - want - top).abs() < 1e-9 * top);
    }

    #[test]
    fn halving_thickness_doubles_vertical_conductance() {
        let (_, g1) = build_matrices(&two_cell(50.0, 50.0, 2e-4, 2e-4), 1).unwrap();
        let (_, g2) = build_matrices(&two_cell(50.0, 50.0, 1e-4, 1e-4), 1).unwrap();
        assert!((g2.get(0, 1) / g1.get(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stack_matrices_are_symmetric_with_nonnegative_row_sums() {
        let s = StackDescription::with_dram_dies(2);
        let (c, g) = build_matrices(&s, 6).unwrap();
        assert!(g.is_symmetric(1e-12));
        assert!(c.iter().all(|&c| c > 0.0));
        for r in 0..g.n {
            assert!(g.row(r).map(|(_, v)| v).sum::<f64>() >= -1e-9);
        }
    }

    #[test]
    fn no_boundary_path_is_singular() {
        let mut s = StackDescription::with_dram_dies(1);
        s.htc = 0.0;
        assert_eq!(build_matrices(&s, 2).unwrap_err(), ThermalError::Singular);
    }

    #[test]
    fn equilibrium_input_is_a_fixed_point() {
        let s = StackDescription::with_dram_dies(1);
        let grid = ThermalGrid::with_resolution(&s, 3).unwrap();
        let t: Vec<f64> = (0..grid.cells()).map(|i| s.ambient_c + 1.0 + (i % 5) as f64).collect();
        let theta: Vec<f64> = t.iter().map(|t| t - s.ambient_c).collect();
        let mut p = vec![0.0; grid.cells()];
        grid.g.matvec(&theta, &mut p);
        let next = grid.step(&t, &p, 1e-3).unwrap();
        for (a, b) in next.iter().zip(&t) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(matches!(grid.step(&t, &p, 0.0), Err(ThermalError::TimeStep(_))));
    }

    #[test]
    fn power_map_conserves_power() {
        let s = StackDescription::with_dram_dies(3);
        let p = power_map(&s, 8, (2, 2), &[1.0, 2.0, 3.0, 4.0], &[0.5; 4]);
        assert!((p.iter().sum::<f64>() - 12.0).abs() < 1e-12);
        // DRAM power lands only on DRAM layers
        let bond: f64 = p[64..128].iter().sum();
        assert_eq!(bond, 0.0);
    }

    #[test]
    fn csv_has_one_line_per_cell() {
        let s = StackDescription::with_dram_dies(1);
        let g = ThermalGrid::with_resolution(&s, 2).unwrap();
        let csv = g.to_csv(&g.ambient(), &s);
        assert_eq!(csv.lines().count(), 1 + 3 * 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("logic,0,0,45.0000"));
    }
}
