use serde::{Deserialize, Serialize};

use super::grid::{ThermalError, ThermalGrid};
use crate::arch::ArchConfig;

pub const FREQUENCY_STEP_GHZ: f64 = 0.05;
pub const FREQUENCY_FLOOR_GHZ: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regulation {
    pub frequency_ghz: f64,
    /// `(frequency, steady-state peak °C)` for every frequency tried.
    pub trace: Vec<(f64, f64)>,
    pub feasible: bool,
}

impl Regulation {
    pub fn peak_c(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.1)
    }
}

/// Lowers the core frequency in fixed steps until the steady-state peak
/// temperature under `power_model(frequency)` is within the stack's limit.
/// Stops at the floor and flags the result infeasible if even that is too
/// hot.
pub fn regulate<F>(cfg: &ArchConfig, grid: &ThermalGrid, power_model: F) -> Result<(ArchConfig, Regulation), ThermalError>
where
    F: Fn(f64) -> Vec<f64>,
{
    let limit = cfg.thermal_stack.t_max_c;
    let f0 = cfg.core.frequency_ghz;
    let mut trace = Vec::new();
    let mut k = 0u32;
    let (f, feasible) = loop {
        let f = (f0 - FREQUENCY_STEP_GHZ * f64::from(k)).max(FREQUENCY_FLOOR_GHZ);
        let f = (f * 1e9).round() / 1e9;
        let peak = ThermalGrid::peak(&grid.steady_state(&power_model(f))?);
        trace.push((f, peak));
        if peak <= limit {
            break (f, true);
        }
        if f <= FREQUENCY_FLOOR_GHZ {
            break (f, false);
        }
        k += 1;
    };
    let mut out = cfg.clone();
    out.core.frequency_ghz = f;
    Ok((
        out,
        Regulation {
            frequency_ghz: f,
            trace,
            feasible,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::sparse::Csr;

    /// One cell with `g = 1 W/K`: peak rise equals the injected power.
    fn unit() -> ThermalGrid {
        ThermalGrid::from_matrices(vec![1.0], Csr::from_triplets(1, vec![(0, 0, 1.0)]), 45.0)
    }

    #[test]
    fn cool_design_is_unchanged() {
        let cfg = ArchConfig::reference_chip();
        let (out, r) = regulate(&cfg, &unit(), |_| vec![10.0]).unwrap();
        assert_eq!(out, cfg);
        assert!(r.feasible);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn stops_at_known_threshold() {
        let mut cfg = ArchConfig::reference_chip();
        cfg.core.frequency_ghz = 1.0;
        // rise = 50·f, feasible once 45 + 50f ≤ 85, i.e. f ≤ 0.8
        let (out, r) = regulate(&cfg, &unit(), |f| vec![50.0 * f]).unwrap();
        assert_eq!(out.core.frequency_ghz, 0.8);
        assert!(r.feasible);
        let fs: Vec<f64> = r.trace.iter().map(|t| t.0).collect();
        assert_eq!(fs, [1.0, 0.95, 0.9, 0.85, 0.8]);
    }

    #[test]
    fn infeasible_hits_floor() {
        let cfg = ArchConfig::reference_chip();
        let (out, r) = regulate(&cfg, &unit(), |f| vec![100.0 + f]).unwrap();
        assert!(!r.feasible);
        assert_eq!(out.core.frequency_ghz, FREQUENCY_FLOOR_GHZ);
        assert!(r.trace.windows(2).all(|w| w[1].0 < w[0].0));
        assert!(r.peak_c() > 85.0);
    }
}
