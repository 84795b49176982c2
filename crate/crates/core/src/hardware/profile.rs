use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::DEFAULT_WIDTHS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceCost {
    pub luts: u64,
    pub dsps: u64,
    pub ffs: u64,
    pub brams: u64,
}

impl ResourceCost {
    pub const fn new(luts: u64, dsps: u64, ffs: u64, brams: u64) -> Self {
        Self {
            luts,
            dsps,
            ffs,
            brams,
        }
    }
}

impl Add for ResourceCost {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.luts + o.luts,
            self.dsps + o.dsps,
            self.ffs + o.ffs,
            self.brams + o.brams,
        )
    }
}

impl Sub for ResourceCost {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.luts - o.luts,
            self.dsps - o.dsps,
            self.ffs - o.ffs,
            self.brams - o.brams,
        )
    }
}

impl Mul<u64> for ResourceCost {
    type Output = Self;
    fn mul(self, k: u64) -> Self {
        Self::new(self.luts * k, self.dsps * k, self.ffs * k, self.brams * k)
    }
}

/// Board capacities. Defaults are the Alveo U250.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Board {
    pub name: String,
    pub luts: u64,
    pub dsps: u64,
    pub ffs: u64,
    pub brams: u64,
}

impl Default for Board {
    fn default() -> Self {
        Self {
            name: "Alveo U250".into(),
            luts: 1_700_000,
            dsps: 12_000,
            ffs: 3_400_000,
            brams: 2_600,
        }
    }
}

/// On-chip parameter storage: bytes per stored weight / bias and bytes per BRAM block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryModel {
    pub weight_bytes: u64,
    pub bias_bytes: u64,
    /// 36 Kib block = 4.5 KiB.
    pub bram_bytes: u64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        Self {
            weight_bytes: 1,
            bias_bytes: 4,
            bram_bytes: 4608,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareProfile {
    pub clock_mhz: f64,
    pub parallel_nodes: u64,
    pub cycles_per_node: u64,
    pub cycles_per_backprop_module: u64,
    /// Backward cycles of the calibration network at the calibration parallelism.
    pub backward_cycles_total: u64,
    pub calibration_widths: Vec<usize>,
    pub calibration_parallel_nodes: u64,
    pub node_unit_cost: ResourceCost,
    pub backprop_unit_cost: ResourceCost,
    pub memory: MemoryModel,
    pub pcie_cost: ResourceCost,
    pub board: Board,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        Self {
            clock_mhz: 200.0,
            parallel_nodes: 16,
            cycles_per_node: 4,
            cycles_per_backprop_module: 3,
            backward_cycles_total: 104,
            calibration_widths: DEFAULT_WIDTHS.to_vec(),
            calibration_parallel_nodes: 16,
            node_unit_cost: ResourceCost::new(7_000, 250, 7_250, 0),
            backprop_unit_cost: ResourceCost::new(33_000, 1_000, 30_000, 0),
            memory: MemoryModel::default(),
            pcie_cost: ResourceCost::new(83_000, 0, 148_000, 150),
            board: Board::default(),
        }
    }
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("hardware profile: {m}")));
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return bad("clock_mhz must be positive and finite");
        }
        let counts = [
            ("parallel_nodes", self.parallel_nodes),
            ("cycles_per_node", self.cycles_per_node),
            (
                "cycles_per_backprop_module",
                self.cycles_per_backprop_module,
            ),
            ("backward_cycles_total", self.backward_cycles_total),
            (
                "calibration_parallel_nodes",
                self.calibration_parallel_nodes,
            ),
            ("memory.bram_bytes", self.memory.bram_bytes),
            ("board.luts", self.board.luts),
            ("board.dsps", self.board.dsps),
            ("board.ffs", self.board.ffs),
            ("board.brams", self.board.brams),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(&format!("{name} must be >= 1"));
        }
        if self.calibration_widths.is_empty() || self.calibration_widths.contains(&0) {
            return bad("calibration_widths must be non-empty and positive");
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let hp: Self = serde_json::from_str(s)?;
        hp.validate()?;
        Ok(hp)
    }
}
