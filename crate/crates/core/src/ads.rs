//! Attention Dispersion Score.
//!
//! Per layer: normalize the head-averaged patch attention to unit mass, take
//! the top-x% patches as foreground, group them into 8-connected blobs, drop
//! blobs smaller than `tau` patches, and combine the mass `m` held by the
//! surviving blobs with the normalized entropy `Ĥ` of the renormalized
//! background: `ADS = (1 - m) * Ĥ`. Low values mean compact, grounded focus.

use serde::{Deserialize, Serialize};

use crate::config::LayerSelection;
use crate::error::{Error, Result};
use crate::grid::{connected_components, suppress_small, top_x_mask, ComponentSet, ForegroundMask};
use crate::trace::{LayerSlice, PatchGrid, TokenTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdsConfig {
    pub top_x_percent: f64,
    pub tau: usize,
    pub layers: LayerSelection,
}

impl Default for AdsConfig {
    fn default() -> Self {
        AdsConfig {
            top_x_percent: 10.0,
            tau: 3,
            layers: LayerSelection::All,
        }
    }
}

/// Intermediate quantities of one layer's score.
#[derive(Debug, Clone, PartialEq)]
pub struct AdsBreakdown {
    pub layer_index: u32,
    pub mask: ForegroundMask,
    pub components: ComponentSet,
    pub blob_mass: f64,
    pub background_entropy: f64,
    pub ads: f64,
}

/// Scales attention to unit total mass.
pub fn normalize_patch_attention(grid: &PatchGrid) -> Result<PatchGrid> {
    let total = grid.total();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "attention grid has total mass {total}"
        )));
    }
    Ok(grid.map(|v| v / total))
}

/// Mass captured by the valid components of `components`.
pub fn blob_mass(grid: &PatchGrid, components: &ComponentSet) -> f64 {
    let values = grid.values();
    let m: f64 = components
        .valid_components()
        .flat_map(|c| c.members.iter())
        .map(|&p| values[p])
        .sum();
    m.clamp(0.0, 1.0)
}

/// Shannon entropy of the background renormalized to a distribution,
/// divided by `ln |P|`. Zero background mass gives 0.
pub fn background_entropy(grid: &PatchGrid, mask: &ForegroundMask) -> Result<f64> {
    if grid.dims() != mask.dims() {
        return Err(Error::InvalidArgument(format!(
            "mask {:?} does not match grid {:?}",
            mask.dims(),
            grid.dims()
        )));
    }
    let n = grid.len();
    let background = || {
        grid.values()
            .iter()
            .zip(mask.members())
            .filter_map(|(&v, &fg)| (!fg).then_some(v))
    };
    let total: f64 = background().sum();
    if n < 2 || !(total > 0.0) {
        return Ok(0.0);
    }
    let h: f64 = background()
        .filter(|&v| v > 0.0)
        .map(|v| {
            let e = v / total;
            -e * e.ln()
        })
        .sum();
    let normalized = h / (n as f64).ln();
    Ok(if normalized <= 0.0 { 0.0 } else { normalized.min(1.0) })
}

/// Full pipeline for one normalized or raw attention grid.
pub fn ads_grid(attention: &PatchGrid, config: &AdsConfig) -> Result<AdsBreakdown> {
    let grid = normalize_patch_attention(attention)?;
    let mask = top_x_mask(&grid, config.top_x_percent)?;
    let components = suppress_small(&connected_components(&mask), config.tau)?;
    let m = blob_mass(&grid, &components);
    let h = background_entropy(&grid, &mask)?;
    Ok(AdsBreakdown {
        layer_index: 0,
        mask,
        components,
        blob_mass: m,
        background_entropy: h,
        ads: (1.0 - m) * h,
    })
}

pub fn ads_layer(slice: &LayerSlice, config: &AdsConfig) -> Result<AdsBreakdown> {
    let mut b = ads_grid(&slice.attention.to_f64(), config)?;
    b.layer_index = slice.layer_index;
    Ok(b)
}

/// One score per layer of `trace`, in layer order.
pub fn ads_vector(trace: &TokenTrace, config: &AdsConfig) -> Result<Vec<f64>> {
    trace
        .layers
        .iter()
        .map(|layer| {
            ads_layer(layer, config)
                .map(|b| b.ads)
                .map_err(|e| e.in_layer(layer.layer_index))
        })
        .collect()
}
