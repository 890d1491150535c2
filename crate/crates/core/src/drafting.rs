//! Drag coefficients behind a leading competitor, drag force and the
//! cumulative energy ledger used for the drafting covariates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance behind the leader at which drag is back to clean air.
pub const FADE_BEHIND_M: f64 = 8.0;
/// Lateral offset from the leader at which drag is back to clean air.
pub const FADE_LATERAL_M: f64 = 1.0;

/// Drag coefficients on a 3x3 (behind x lateral) grid.
///
/// The default coefficients are calibration placeholders, not measured
/// values; load real ones from configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DragTable {
    /// Metres behind the leader, increasing.
    pub behind_grid: [f64; 3],
    /// Centre-to-centre lateral offset, increasing.
    pub lateral_grid: [f64; 3],
    /// `coefficients[b][l]` for `behind_grid[b]`, `lateral_grid[l]`.
    pub coefficients: [[f64; 3]; 3],
    pub clean_air: f64,
    /// kg/m³
    pub air_density: f64,
    /// m²
    pub frontal_area: f64,
}

impl Default for DragTable {
    fn default() -> Self {
        Self {
            behind_grid: [2.0, 3.5, 5.0],
            lateral_grid: [-0.5, 0.0, 0.5],
            coefficients: [[0.61, 0.55, 0.61], [0.76, 0.70, 0.76], [0.88, 0.82, 0.88]],
            clean_air: 0.90,
            air_density: 1.225,
            frontal_area: 1.0,
        }
    }
}

impl DragTable {
    pub fn validate(&self) -> Result<()> {
        let increasing = |g: &[f64; 3]| g[0] < g[1] && g[1] < g[2] && g.iter().all(|v| v.is_finite());
        if !increasing(&self.behind_grid) || self.behind_grid[0] <= 0.0 {
            return Err(Error::Config(
                "drag behind_grid must be positive and strictly increasing".into(),
            ));
        }
        if !increasing(&self.lateral_grid) {
            return Err(Error::Config(
                "drag lateral_grid must be strictly increasing".into(),
            ));
        }
        if self.behind_grid[2] >= FADE_BEHIND_M
            || self.lateral_grid[0] <= -FADE_LATERAL_M
            || self.lateral_grid[2] >= FADE_LATERAL_M
        {
            return Err(Error::Config(format!(
                "drag grid must lie inside the fade envelope ({FADE_BEHIND_M} m behind, ±{FADE_LATERAL_M} m lateral)"
            )));
        }
        if !(self.clean_air > 0.0 && self.air_density > 0.0 && self.frontal_area > 0.0) {
            return Err(Error::Config(
                "clean_air, air_density and frontal_area must be positive".into(),
            ));
        }
        let centre = 1;
        for b in 0..3 {
            for l in 0..3 {
                let c = self.coefficients[b][l];
                if !(c > 0.0 && c < self.clean_air) {
                    return Err(Error::Config(format!(
                        "drag coefficient {c} at grid node ({b}, {l}) must be in (0, clean_air)"
                    )));
                }
                if b > 0 && c < self.coefficients[b - 1][l] {
                    return Err(Error::Config(format!(
                        "drag coefficients must not decrease with distance behind (column {l})"
                    )));
                }
                if c < self.coefficients[b][centre] {
                    return Err(Error::Config(format!(
                        "offset drag coefficient at row {b} is below the directly-behind value"
                    )));
                }
            }
        }
        Ok(())
    }

    fn bilinear(&self, behind: f64, lateral: f64) -> f64 {
        let cell = |grid: &[f64; 3], v: f64| -> (usize, f64) {
            let v = v.clamp(grid[0], grid[2]);
            let i = if v <= grid[1] { 0 } else { 1 };
            (i, (v - grid[i]) / (grid[i + 1] - grid[i]))
        };
        let (b, tb) = cell(&self.behind_grid, behind);
        let (l, tl) = cell(&self.lateral_grid, lateral);
        let c = &self.coefficients;
        let lo = c[b][l] * (1.0 - tl) + c[b][l + 1] * tl;
        let hi = c[b + 1][l] * (1.0 - tl) + c[b + 1][l + 1] * tl;
        lo * (1.0 - tb) + hi * tb
    }
}

/// Drag coefficient of a competitor `rel_behind` metres behind and
/// `rel_lateral` metres to the side of its nearest leader.
///
/// Inside the grid hull this is bilinear. Beyond it the hull-edge value
/// fades linearly to clean air, reached at 8 m behind or 1 m lateral.
/// Closer than the first grid row the first row applies. A competitor that
/// is level with or ahead of the leader (`rel_behind <= 0`) is in clean air.
pub fn drag_coefficient(rel_behind: f64, rel_lateral: f64, table: &DragTable) -> f64 {
    if !(rel_behind > 0.0) || !rel_lateral.is_finite() {
        return table.clean_air;
    }
    let far_behind = table.behind_grid[2];
    let lat_lo = table.lateral_grid[0];
    let lat_hi = table.lateral_grid[2];
    let w_behind = if rel_behind > far_behind {
        ((rel_behind - far_behind) / (FADE_BEHIND_M - far_behind)).min(1.0)
    } else {
        0.0
    };
    let w_lateral = if rel_lateral > lat_hi {
        ((rel_lateral - lat_hi) / (FADE_LATERAL_M - lat_hi)).min(1.0)
    } else if rel_lateral < lat_lo {
        ((lat_lo - rel_lateral) / (lat_lo + FADE_LATERAL_M)).min(1.0)
    } else {
        0.0
    };
    let fade = 1.0 - (1.0 - w_behind) * (1.0 - w_lateral);
    if fade >= 1.0 {
        return table.clean_air;
    }
    let edge = table.bilinear(rel_behind, rel_lateral);
    edge + fade * (table.clean_air - edge)
}

/// `½ ρ v² c_d A` in newtons.
pub fn drag_force(v: f64, c_d: f64, table: &DragTable) -> f64 {
    0.5 * table.air_density * v * v * c_d * table.frontal_area
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Joules spent against the drag actually experienced.
    pub actual: f64,
    /// Joules that the same movement would have cost in clean air.
    pub clean_air: f64,
}

impl EnergyLedger {
    pub fn prop_energy_saved(&self) -> f64 {
        if self.clean_air > 0.0 {
            (1.0 - self.actual / self.clean_air).max(0.0)
        } else {
            0.0
        }
    }

    /// Adds one frame of movement covering `s` metres at speed `v` with drag
    /// coefficient `c_d`. Returns whether the frame counts as drafting.
    pub fn update(&mut self, v: f64, c_d: f64, s: f64, table: &DragTable) -> bool {
        if s > 0.0 {
            self.actual += drag_force(v, c_d, table) * s;
            self.clean_air += drag_force(v, table.clean_air, table) * s;
        }
        c_d < table.clean_air
    }
}

pub fn update_energy_ledger(
    ledger: EnergyLedger,
    v: f64,
    c_d: f64,
    s: f64,
    table: &DragTable,
) -> EnergyLedger {
    let mut next = ledger;
    next.update(v, c_d, s, table);
    next
}
