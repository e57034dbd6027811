use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One convolution of a dense dilated branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel_size: usize,
    pub dilation: usize,
    /// Output channels; falls back to the network's growth filters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
}

impl LayerSpec {
    pub fn new(kernel_size: usize, dilation: usize) -> Self {
        Self {
            kernel_size,
            dilation,
            filters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub layers: Vec<LayerSpec>,
    pub target_rf: usize,
}

impl BranchSpec {
    /// A 3×3 branch with the given dilation schedule; the target is the
    /// closed-form receptive field of that schedule.
    pub fn with_dilations(dilations: &[usize]) -> Self {
        let layers: Vec<LayerSpec> = dilations.iter().map(|d| LayerSpec::new(3, *d)).collect();
        let target_rf = rf_closed_form(&layers);
        Self { layers, target_rf }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Real and imaginary parts stacked as two real channels.
    Real,
    /// Complex convolution, whitening batch norm and CReLU throughout.
    Complex,
}

impl Mode {
    /// Channels that carry one complex image in this mode.
    pub fn image_channels(self) -> usize {
        match self {
            Mode::Real => 2,
            Mode::Complex => 1,
        }
    }
}

/// Declarative description of a cascade of ensemble denoisers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
    pub mode: Mode,
    pub branches: Vec<BranchSpec>,
    pub growth_filters: usize,
    pub cascade_depth: usize,
    pub inter_block_dense: bool,
    pub refinement_filters: usize,
    /// Overrides the mode's image channel count. Only useful for building
    /// shape twins of a model, e.g. for parameter comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_channels: Option<usize>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("NetworkSpec", detail));
        if self.cascade_depth == 0 {
            return bad("cascade_depth must be at least 1".into());
        }
        if self.branches.is_empty() {
            return bad("at least one branch is required".into());
        }
        if self.growth_filters == 0 || self.refinement_filters == 0 {
            return bad("filter counts must be positive".into());
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.layers.is_empty() {
                return bad(format!("branch {i} has no layers"));
            }
            for l in &b.layers {
                if l.kernel_size % 2 == 0 || l.dilation == 0 || l.filters == Some(0) {
                    return bad(format!(
                        "branch {i}: kernels must be odd, dilations and filters positive ({l:?})"
                    ));
                }
            }
            let rf = rf_closed_form(&b.layers);
            if rf != b.target_rf {
                return bad(format!(
                    "branch {i}: layers give a receptive field of {rf}, target is {}",
                    b.target_rf
                ));
            }
        }
        Ok(())
    }

    pub fn image_channels(&self) -> usize {
        self.image_channels.unwrap_or(self.mode.image_channels())
    }

    pub fn layer_filters(&self, layer: &LayerSpec) -> usize {
        layer.filters.unwrap_or(self.growth_filters)
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// The same network in real mode with every layer keeping the channel
    /// counts it has in this spec.
    pub fn real_twin(&self) -> Self {
        Self {
            mode: Mode::Real,
            image_channels: Some(self.image_channels()),
            ..self.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// A bundled configuration by name; see [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                Error::invalid("preset", format!("unknown preset {name:?}; known: {names:?}"))
            })?;
        Self::from_json(text)
    }
}

/// Bundled network presets, as `(name, JSON)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("c5ed", include_str!("../../presets/c5ed.json")),
    ("complex-c5ed", include_str!("../../presets/complex-c5ed.json")),
    ("ablation", include_str!("../../presets/ablation.json")),
    ("tiny", include_str!("../../presets/tiny.json")),
    ("tiny-ablation", include_str!("../../presets/tiny-ablation.json")),
    ("smoke", include_str!("../../presets/smoke.json")),
];

/// Receptive field of a stride-1 stack: `Σ α_l (k_l − 1) + 1`.
pub fn rf_closed_form(layers: &[LayerSpec]) -> usize {
    layers
        .iter()
        .map(|l| l.dilation * (l.kernel_size - 1))
        .sum::<usize>()
        + 1
}

/// Receptive field from the backward recurrence `r_{l−1} = r_l + α_l (k_l − 1)`
/// starting at `r_L = 1`.
pub fn rf_recurrence(layers: &[LayerSpec]) -> usize {
    layers
        .iter()
        .rev()
        .fold(1, |r, l| r + l.dilation * (l.kernel_size - 1))
}

/// Copy of `spec` with every dilation set to 1; targets follow the new
/// closed form.
pub fn make_ablation(spec: &NetworkSpec) -> NetworkSpec {
    let mut out = spec.clone();
    for b in &mut out.branches {
        b.layers.iter_mut().for_each(|l| l.dilation = 1);
        b.target_rf = rf_closed_form(&b.layers);
    }
    if !out.name.ends_with("-ablation") {
        out.name = format!("{}-ablation", out.name);
    }
    out
}
