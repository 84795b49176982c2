use std::fmt::{self, Write as _};

use serde::Serialize;

use super::{check_config, Board, HardwareProfile, ResourceCost};
use crate::error::Result;
use crate::network::NetworkConfig;

/// Fractions of board capacity; values above 1 mean the design does not fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Utilization {
    pub luts: f64,
    pub dsps: f64,
    pub ffs: f64,
    pub brams: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceReport {
    pub core: ResourceCost,
    pub pcie: Option<ResourceCost>,
    pub total: ResourceCost,
    pub board: Board,
    pub utilization: Utilization,
    pub over_capacity: bool,
}

/// BRAM blocks holding all weights and biases.
pub fn memory_brams(cfg: &NetworkConfig, hp: &HardwareProfile) -> u64 {
    let bytes = cfg.weight_count() as u64 * hp.memory.weight_bytes
        + cfg.bias_count() as u64 * hp.memory.bias_bytes;
    bytes.div_ceil(hp.memory.bram_bytes)
}

pub fn estimate_resources(
    cfg: &NetworkConfig,
    hp: &HardwareProfile,
    include_pcie: bool,
) -> Result<ResourceReport> {
    check_config(cfg)?;
    hp.validate()?;
    let core = if cfg.layers.is_empty() {
        ResourceCost::default()
    } else {
        hp.node_unit_cost * hp.parallel_nodes
            + hp.backprop_unit_cost
            + ResourceCost::new(0, 0, 0, memory_brams(cfg, hp))
    };
    let pcie = include_pcie.then_some(hp.pcie_cost);
    let total = core + pcie.unwrap_or_default();
    let b = &hp.board;
    let frac = |used: u64, cap: u64| used as f64 / cap as f64;
    let utilization = Utilization {
        luts: frac(total.luts, b.luts),
        dsps: frac(total.dsps, b.dsps),
        ffs: frac(total.ffs, b.ffs),
        brams: frac(total.brams, b.brams),
    };
    let over_capacity = [
        utilization.luts,
        utilization.dsps,
        utilization.ffs,
        utilization.brams,
    ]
    .iter()
    .any(|&u| u > 1.0);
    Ok(ResourceReport {
        core,
        pcie,
        total,
        board: b.clone(),
        utilization,
        over_capacity,
    })
}

impl fmt::Display for ResourceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6}{:>10}{:>10}{:>12}{:>10}{:>9}",
            "", "core", "pcie", "total", "board", "util"
        );
        let pcie = self.pcie.unwrap_or_default();
        let u = &self.utilization;
        for (name, c, p, t, cap, frac) in [
            (
                "LUT",
                self.core.luts,
                pcie.luts,
                self.total.luts,
                self.board.luts,
                u.luts,
            ),
            (
                "DSP",
                self.core.dsps,
                pcie.dsps,
                self.total.dsps,
                self.board.dsps,
                u.dsps,
            ),
            (
                "FF",
                self.core.ffs,
                pcie.ffs,
                self.total.ffs,
                self.board.ffs,
                u.ffs,
            ),
            (
                "BRAM",
                self.core.brams,
                pcie.brams,
                self.total.brams,
                self.board.brams,
                u.brams,
            ),
        ] {
            let _ = writeln!(
                s,
                "{name:<6}{c:>10}{p:>10}{t:>12}{cap:>10}{:>8.1}%  (~{:.0}%)",
                100.0 * frac,
                100.0 * frac
            );
        }
        if self.over_capacity {
            let _ = writeln!(s, "WARNING: exceeds {} capacity", self.board.name);
        }
        f.write_str(s.trim_end())
    }
}
