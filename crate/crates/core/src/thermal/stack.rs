use serde::{Deserialize, Serialize};

use crate::arch::Violation;

/// Role of a layer in the die stack. Power is only injected into logic and
/// DRAM layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Logic,
    Dram,
    Bond,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub thickness_m: f64,
    /// W/(m·K)
    pub conductivity: f64,
    /// J/(m³·K)
    pub heat_capacity: f64,
}

impl Layer {
    pub fn silicon(name: &str, kind: LayerKind, thickness_m: f64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            thickness_m,
            conductivity: SILICON_CONDUCTIVITY,
            heat_capacity: SILICON_HEAT_CAPACITY,
        }
    }

    pub fn bond(name: &str, thickness_m: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Bond,
            thickness_m,
            conductivity: BOND_CONDUCTIVITY,
            heat_capacity: SILICON_HEAT_CAPACITY,
        }
    }
}

pub const SILICON_CONDUCTIVITY: f64 = 120.0;
pub const SILICON_HEAT_CAPACITY: f64 = 1.6e6;
pub const BOND_CONDUCTIVITY: f64 = 2.0;
/// Liquid cold plate.
pub const CLOUD_HTC: f64 = 10_000.0;
/// Passive heat spreader.
pub const EDGE_HTC: f64 = 500.0;
/// DRAM retention limit.
pub const DEFAULT_T_MAX_C: f64 = 85.0;

/// Multi-layer die stack, ordered from the bottom (logic die) to the top.
/// The cooling solution attaches to the top layer with `htc`; `bottom_htc`
/// models a secondary path through the package and defaults to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackDescription {
    pub layers: Vec<Layer>,
    /// W/(m²·K)
    pub htc: f64,
    pub bottom_htc: f64,
    pub ambient_c: f64,
    pub footprint_m2: f64,
    /// Cells per side of every layer.
    pub resolution: usize,
    pub t_max_c: f64,
}

impl Default for StackDescription {
    fn default() -> Self {
        Self::with_dram_dies(4)
    }
}

impl StackDescription {
    /// Logic die at the bottom, then `dies` DRAM dies each on a bonding layer.
    pub fn with_dram_dies(dies: usize) -> Self {
        let mut layers = vec![Layer::silicon("logic", LayerKind::Logic, 100e-6)];
        for d in 0..dies {
            layers.push(Layer::bond(&format!("bond{d}"), 10e-6));
            layers.push(Layer::silicon(&format!("dram{d}"), LayerKind::Dram, 50e-6));
        }
        Self {
            layers,
            htc: CLOUD_HTC,
            bottom_htc: 0.0,
            ambient_c: 45.0,
            footprint_m2: 800e-6,
            resolution: 128,
            t_max_c: DEFAULT_T_MAX_C,
        }
    }

    pub fn dram_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind == LayerKind::Dram).count()
    }

    pub(crate) fn violations(&self, out: &mut Vec<Violation>) {
        if self.layers.len() < 2 {
            out.push(Violation::new("thermal_stack.layers", "at least 2 layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            for (what, v) in [
                ("thickness_m", l.thickness_m),
                ("conductivity", l.conductivity),
                ("heat_capacity", l.heat_capacity),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    out.push(Violation::new(
                        &format!("thermal_stack.layers[{i}].{what}"),
                        "must be > 0",
                    ));
                }
            }
        }
        if !(self.htc >= 0.0 && self.bottom_htc >= 0.0) || self.htc + self.bottom_htc <= 0.0 {
            out.push(Violation::new(
                "thermal_stack.htc",
                "needs a positive boundary heat-transfer path",
            ));
        }
        if !(self.footprint_m2 > 0.0) {
            out.push(Violation::new("thermal_stack.footprint_m2", "must be > 0"));
        }
        if self.resolution < 1 {
            out.push(Violation::new("thermal_stack.resolution", "must be ≥ 1"));
        }
    }
}
