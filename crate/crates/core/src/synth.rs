//! Synthetic trace bundles with controllable grounded/hallucinated structure.
//!
//! Grounded tokens attend to a compact blob over a noisy background, plus
//! optional one-patch sinks, and their patch embeddings inside the blob point
//! towards the token embedding. Hallucinated tokens spread attention over the
//! grid with scattered two-patch micro-blobs, sinks and an optional weak decoy
//! blob, and none of their patch embeddings is deliberately aligned.
//!
//! Per-token latents (blob mass, alignment strength, decoy mass) are shared
//! across layers and jittered per layer, so populations overlap and adding
//! layers does not average the overlap away. Layers outside `signal_layers`
//! are drawn from one class-independent mixture.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ads::{normalize_patch_attention, AdsConfig};
use crate::classifiers::Hyperparams;
use crate::config::{LayerSelection, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, FamilyTrainer, Subject};
use crate::features::{build_features, FeatureSpec};
use crate::grid::{connected_components, suppress_small, top_x_mask};
use crate::rng::stream_rng;
use crate::trace::{Grid, Label, LabelMap, LayerSlice, PatchGrid, TokenTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundedParams {
    pub blob_count: usize,
    /// Disc radius in patches.
    pub blob_radius: f64,
    pub blob_mass_min: f64,
    pub blob_mass_max: f64,
    /// Log-normal sigma of the background field; 0 gives a uniform background.
    pub background_noise: f64,
    pub sink_count: usize,
    pub sink_mass: f64,
}

impl Default for GroundedParams {
    fn default() -> Self {
        GroundedParams {
            blob_count: 1,
            blob_radius: 2.5,
            blob_mass_min: 0.25,
            blob_mass_max: 0.8,
            background_noise: 0.5,
            sink_count: 1,
            sink_mass: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HallucinatedParams {
    /// Log-normal sigma of the background field.
    pub dispersion: f64,
    pub micro_blob_count: usize,
    /// Total mass over all two-patch micro-blobs.
    pub micro_blob_mass: f64,
    pub decoy_mass_min: f64,
    pub decoy_mass_max: f64,
    pub sink_count: usize,
    pub sink_mass: f64,
}

impl Default for HallucinatedParams {
    fn default() -> Self {
        HallucinatedParams {
            dispersion: 0.5,
            micro_blob_count: 10,
            micro_blob_mass: 0.2,
            decoy_mass_min: 0.0,
            decoy_mass_max: 0.4,
            sink_count: 2,
            sink_mass: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingParams {
    /// Range of the cosine towards the token embedding of grounded blob patches.
    pub alignment_min: f64,
    pub alignment_max: f64,
    /// Cosine component towards the token embedding of every hallucinated patch.
    pub misalignment: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams {
            alignment_min: 0.15,
            alignment_max: 0.7,
            misalignment: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub grid_height: usize,
    pub grid_width: usize,
    pub num_layers: usize,
    pub embed_dim: usize,
    pub n_tokens: usize,
    pub hallucinated_fraction: f64,
    /// Layers (1-based indices) whose data depends on the label.
    pub signal_layers: LayerSelection,
    /// Relative per-layer jitter of the token latents.
    pub layer_jitter: f64,
    pub grounded: GroundedParams,
    pub hallucinated: HallucinatedParams,
    pub embedding: EmbeddingParams,
    /// Overrides the run seed when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_height: 24,
            grid_width: 24,
            num_layers: 8,
            embed_dim: 32,
            n_tokens: 400,
            hallucinated_fraction: 0.5,
            signal_layers: LayerSelection::All,
            layer_jitter: 0.1,
            grounded: GroundedParams::default(),
            hallucinated: HallucinatedParams::default(),
            embedding: EmbeddingParams::default(),
            seed: None,
        }
    }
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_height < 2 || self.grid_width < 2 {
            return Err(Error::InvalidArgument("synthetic grid must be at least 2x2".into()));
        }
        if self.num_layers == 0 || self.embed_dim < 2 {
            return Err(Error::InvalidArgument("need at least one layer and embed_dim >= 2".into()));
        }
        in_unit("hallucinated_fraction", self.hallucinated_fraction)?;
        let g = &self.grounded;
        let h = &self.hallucinated;
        let e = &self.embedding;
        for (name, v) in [
            ("grounded.blob_mass_min", g.blob_mass_min),
            ("grounded.blob_mass_max", g.blob_mass_max),
            ("grounded.sink_mass", g.sink_mass),
            ("hallucinated.micro_blob_mass", h.micro_blob_mass),
            ("hallucinated.decoy_mass_min", h.decoy_mass_min),
            ("hallucinated.decoy_mass_max", h.decoy_mass_max),
            ("hallucinated.sink_mass", h.sink_mass),
            ("embedding.alignment_min", e.alignment_min),
            ("embedding.alignment_max", e.alignment_max),
            ("embedding.misalignment", e.misalignment),
        ] {
            in_unit(name, v)?;
        }
        if g.blob_mass_min > g.blob_mass_max || h.decoy_mass_min > h.decoy_mass_max || e.alignment_min > e.alignment_max {
            return Err(Error::InvalidArgument("synthetic range with min > max".into()));
        }
        if g.blob_mass_max + g.sink_mass > 1.0 || h.decoy_mass_max + h.micro_blob_mass + h.sink_mass >= 1.0 {
            return Err(Error::InvalidArgument("foreground masses leave no room for a background".into()));
        }
        if g.blob_count > 0 {
            let diameter = 2.0 * g.blob_radius.ceil() + 1.0;
            if g.blob_radius < 0.0 || diameter > self.grid_height.min(self.grid_width) as f64 {
                return Err(Error::InvalidArgument(format!(
                    "blob radius {} does not fit a {}x{} grid",
                    g.blob_radius, self.grid_height, self.grid_width
                )));
            }
        }
        Ok(())
    }

    fn patches(&self) -> usize {
        self.grid_height * self.grid_width
    }
}

/// Generated traces plus the labels the generator assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub traces: Vec<TokenTrace>,
    pub labels: LabelMap,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Per-token latent state shared across layers.
struct Latent {
    blob_centers: Vec<(usize, usize)>,
    blob_mass: f64,
    alignment: f64,
    decoy_center: (usize, usize),
    decoy_mass: f64,
}

fn disc(center: (usize, usize), radius: f64, cfg: &SynthConfig) -> Vec<(usize, f64)> {
    let r = radius.ceil() as i64;
    let sigma = (radius / 1.5).max(0.5);
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            let d2 = (dr * dr + dc * dc) as f64;
            if d2 > radius * radius {
                continue;
            }
            let (row, col) = (center.0 as i64 + dr, center.1 as i64 + dc);
            if row < 0 || col < 0 || row >= cfg.grid_height as i64 || col >= cfg.grid_width as i64 {
                continue;
            }
            out.push((row as usize * cfg.grid_width + col as usize, (-d2 / (2.0 * sigma * sigma)).exp()));
        }
    }
    out
}

fn random_center(rng: &mut ChaCha8Rng, radius: f64, cfg: &SynthConfig) -> (usize, usize) {
    let m = radius.ceil() as usize;
    let pick = |rng: &mut ChaCha8Rng, n: usize| {
        if 2 * m < n {
            rng.random_range(m..n - m)
        } else {
            n / 2
        }
    };
    (pick(rng, cfg.grid_height), pick(rng, cfg.grid_width))
}

fn jittered(rng: &mut ChaCha8Rng, value: f64, jitter: f64, max: f64) -> f64 {
    (value * (1.0 + jitter * normal(rng))).clamp(0.0, max)
}

/// Spreads `mass` over `cells` in proportion to their weights.
fn deposit(values: &mut [f64], cells: &[(usize, f64)], mass: f64) {
    let total: f64 = cells.iter().map(|c| c.1).sum();
    if total > 0.0 {
        for &(p, w) in cells {
            values[p] += mass * w / total;
        }
    }
}

enum Style {
    Grounded,
    Hallucinated,
}

fn attention_map(style: &Style, latent: &Latent, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cfg.patches();
    let mut values = vec![0.0; n];
    let (noise, mut used) = match style {
        Style::Grounded => {
            let g = &cfg.grounded;
            let blob_mass = jittered(rng, latent.blob_mass, cfg.layer_jitter, 1.0 - g.sink_mass);
            let cells: Vec<(usize, f64)> = latent
                .blob_centers
                .iter()
                .flat_map(|&c| disc(c, g.blob_radius, cfg))
                .collect();
            deposit(&mut values, &cells, blob_mass);
            for _ in 0..g.sink_count {
                values[rng.random_range(0..n)] += g.sink_mass / g.sink_count as f64;
            }
            (g.background_noise, blob_mass + if g.sink_count > 0 { g.sink_mass } else { 0.0 })
        }
        Style::Hallucinated => {
            let h = &cfg.hallucinated;
            let room = 1.0 - h.micro_blob_mass - h.sink_mass;
            let decoy = jittered(rng, latent.decoy_mass, cfg.layer_jitter, room.max(0.0));
            if decoy > 0.0 {
                deposit(&mut values, &disc(latent.decoy_center, cfg.grounded.blob_radius.min(1.5), cfg), decoy);
            }
            for _ in 0..h.micro_blob_count {
                let row = rng.random_range(0..cfg.grid_height);
                let col = rng.random_range(0..cfg.grid_width - 1);
                let p = row * cfg.grid_width + col;
                let share = h.micro_blob_mass / h.micro_blob_count as f64 / 2.0;
                values[p] += share;
                values[p + 1] += share;
            }
            for _ in 0..h.sink_count {
                values[rng.random_range(0..n)] += h.sink_mass / h.sink_count as f64;
            }
            let micro = if h.micro_blob_count > 0 { h.micro_blob_mass } else { 0.0 };
            let sinks = if h.sink_count > 0 { h.sink_mass } else { 0.0 };
            (h.dispersion, decoy + micro + sinks)
        }
    };
    used = used.min(1.0);
    let field: Vec<(usize, f64)> = (0..n).map(|p| (p, (noise * normal(rng)).exp())).collect();
    deposit(&mut values, &field, 1.0 - used);
    values
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Token embedding and patch embeddings; `aligned[p]` is the cosine component
/// of patch `p` towards the token direction.
fn embeddings(aligned: &[f64], d: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<f32>) {
    let scale = 1.0 + 4.0 * rng.random::<f64>();
    let h = unit_gaussian(rng, d);
    let token: Vec<f32> = h.iter().map(|&x| (x * scale) as f32).collect();
    let mut patches = Vec::with_capacity(aligned.len() * d);
    for &a in aligned {
        let a = a.clamp(-1.0, 1.0);
        let u = unit_gaussian(rng, d);
        let rest = (1.0 - a * a).sqrt();
        let norm = 0.5 + rng.random::<f64>();
        patches.extend(h.iter().zip(&u).map(|(&hi, &ui)| ((a * hi + rest * ui) * norm) as f32));
    }
    (token, patches)
}

fn alignment_profile(style: &Style, latent: &Latent, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cfg.patches();
    match style {
        Style::Grounded => {
            let a = jittered(rng, latent.alignment, cfg.layer_jitter, 1.0);
            let mut profile = vec![0.0; n];
            for &c in &latent.blob_centers {
                for (p, w) in disc(c, cfg.grounded.blob_radius, cfg) {
                    profile[p] = f64::max(profile[p], a * w.sqrt());
                }
            }
            profile
        }
        Style::Hallucinated => vec![cfg.embedding.misalignment; n],
    }
}

fn draw_latent(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Latent {
    let g = &cfg.grounded;
    let h = &cfg.hallucinated;
    let e = &cfg.embedding;
    let blob_centers = (0..g.blob_count).map(|_| random_center(rng, g.blob_radius, cfg)).collect();
    Latent {
        blob_centers,
        blob_mass: rng.random_range(g.blob_mass_min..=g.blob_mass_max),
        alignment: rng.random_range(e.alignment_min..=e.alignment_max),
        decoy_center: random_center(rng, 1.5, cfg),
        decoy_mass: rng.random_range(h.decoy_mass_min..=h.decoy_mass_max),
    }
}

fn generate_token(cfg: &SynthConfig, seed: u64, index: usize, label: Label) -> Result<TokenTrace> {
    let mut rng = stream_rng(seed, index as u64);
    let latent = draw_latent(cfg, &mut rng);
    // the class-independent style is chosen per token, never from the label
    let neutral_grounded = rng.random::<bool>();
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for layer in 1..=cfg.num_layers as u32 {
        let style = if cfg.signal_layers.contains(layer) {
            if label == Label::Hallucinated {
                Style::Hallucinated
            } else {
                Style::Grounded
            }
        } else if neutral_grounded {
            Style::Grounded
        } else {
            Style::Hallucinated
        };
        let values = attention_map(&style, &latent, cfg, &mut rng);
        let profile = alignment_profile(&style, &latent, cfg, &mut rng);
        let (token_embedding, patch_embeddings) = embeddings(&profile, cfg.embed_dim, &mut rng);
        layers.push(LayerSlice {
            layer_index: layer,
            attention: Grid::new(cfg.grid_height, cfg.grid_width, values.into_iter().map(|v| v as f32).collect())?,
            token_embedding,
            patch_embeddings,
        });
    }
    Ok(TokenTrace {
        token_id: format!("synth-{index:05}"),
        object_text: if label == Label::Hallucinated { "phantom".into() } else { "object".into() },
        label,
        layers,
    })
}

/// Deterministic in `(config, seed)`; each token draws from its own stream.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    cfg.validate()?;
    let seed = cfg.seed.unwrap_or(seed);
    let n_pos = (cfg.n_tokens as f64 * cfg.hallucinated_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..cfg.n_tokens)
        .map(|i| if i < n_pos { Label::Hallucinated } else { Label::Grounded })
        .collect();
    labels.shuffle(&mut stream_rng(seed, u64::MAX));
    let traces = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| generate_token(cfg, seed, i, label))
        .collect::<Result<Vec<_>>>()?;
    let labels = traces.iter().map(|t| (t.token_id.clone(), t.label)).collect();
    Ok(SynthOutput { traces, labels })
}

/// Moves `mass` of attention onto the single patch `patch`, taken in
/// proportion from every patch outside the blobs that survive suppression
/// under `config`. Blob patches keep their values.
pub fn inject_sink(attention: &PatchGrid, patch: usize, mass: f64, config: &AdsConfig) -> Result<PatchGrid> {
    let grid = normalize_patch_attention(attention)?;
    let mask = top_x_mask(&grid, config.top_x_percent)?;
    let components = suppress_small(&connected_components(&mask), config.tau)?;
    let mut in_blob = vec![false; grid.len()];
    for c in components.valid_components() {
        for &p in &c.members {
            in_blob[p] = true;
        }
    }
    if in_blob[patch] {
        return Err(Error::InvalidArgument(format!("patch {patch} lies inside a blob")));
    }
    let donors: f64 = (0..grid.len())
        .filter(|&p| !in_blob[p] && p != patch)
        .map(|p| grid.values()[p])
        .sum();
    if !(mass >= 0.0 && mass < donors) {
        return Err(Error::InvalidArgument(format!(
            "sink mass {mass} exceeds available non-blob mass {donors}"
        )));
    }
    let keep = (donors - mass) / donors;
    let values = grid
        .values()
        .iter()
        .enumerate()
        .map(|(p, &v)| {
            if p == patch {
                v + mass
            } else if in_blob[p] {
                v
            } else {
                v * keep
            }
        })
        .collect();
    let (h, w) = grid.dims();
    PatchGrid::attention(h, w, values)
}

/// generate, extract features, then k-fold evaluate the configured classifier.
pub fn benchmark(config: &RunConfig) -> Result<EvalReport> {
    let out = generate(&config.synth, config.seed)?;
    let spec = FeatureSpec {
        ads: config.ads.clone(),
        cgc: config.cgc.clone(),
        features: config.features.clone(),
    };
    let dataset = build_features(&out.traces, &out.labels, &spec)?;
    let trainer = FamilyTrainer {
        params: config.train.params_for(config.train.family),
        threshold: config.train.threshold,
    };
    evaluate(&Subject::Trained(&trainer), &dataset, &config.eval, config.seed, config.snapshot())
}

/// Same as [`benchmark`] with explicit classifier parameters.
pub fn benchmark_with(config: &RunConfig, params: Hyperparams) -> Result<EvalReport> {
    let mut c = config.clone();
    c.train.family = params.family();
    match params {
        Hyperparams::Lr(p) => c.train.lr = p,
        Hyperparams::Mlp(p) => c.train.mlp = p,
        Hyperparams::Rf(p) => c.train.rf = p,
        Hyperparams::Gbt(p) => c.train.gbt = p,
    }
    benchmark(&c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig {
            n_tokens: 20,
            num_layers: 2,
            grid_height: 8,
            grid_width: 8,
            embed_dim: 8,
            ..SynthConfig::default()
        };
        let a = generate(&cfg, 5).unwrap();
        let b = generate(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.traces, generate(&cfg, 6).unwrap().traces);
        let pos = a.labels.values().filter(|l| l.is_positive()).count();
        assert_eq!(pos, 10);
        for t in &a.traces {
            t.validate().unwrap();
            let total: f32 = t.layers[0].attention.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn infeasible_geometry() {
        let cfg = SynthConfig {
            grid_height: 4,
            grid_width: 4,
            grounded: GroundedParams {
                blob_radius: 3.0,
                ..GroundedParams::default()
            },
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg, 0), Err(Error::InvalidArgument(_))));
        let cfg = SynthConfig {
            grid_height: 1,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg, 0).is_err());
    }

    #[test]
    fn sink_injection_preserves_mass() {
        let g = PatchGrid::attention(3, 3, vec![5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        // with tau 1 the top patch is a blob and keeps its value
        let tau1 = AdsConfig {
            tau: 1,
            ..AdsConfig::default()
        };
        let s = inject_sink(&g, 8, 0.2, &tau1).unwrap();
        assert!((s.total() - 1.0).abs() < 1e-12);
        assert!((s.values()[8] - (1.0 / 13.0 + 0.2)).abs() < 1e-12);
        assert_eq!(s.values()[0], 5.0 / 13.0);
        assert!(inject_sink(&g, 8, 0.9, &tau1).is_err());
        assert!(inject_sink(&g, 0, 0.1, &tau1).is_err());
        // with the default tau the lone peak is suppressed and donates too
        let s = inject_sink(&g, 8, 0.9, &AdsConfig::default()).unwrap();
        assert!((s.total() - 1.0).abs() < 1e-12);
    }
}
