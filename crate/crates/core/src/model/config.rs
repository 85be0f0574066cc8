use serde::{Deserialize, Serialize};

use crate::windowing::WindowGrid;
use crate::{Error, Result};

/// How `[0, 1]`-scaled pixels are presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// Pixels as they are.
    Unit,
    /// Each image's channels shifted to zero mean and scaled to unit
    /// variance.
    #[default]
    PerImage,
}

/// Architecture hyperparameters.
///
/// `depths[s]` counts block *pairs* (one W-MSA block followed by one SW-MSA
/// block) in stage `s`; channels double and the token grid halves per side
/// at every merge between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub heads: Vec<usize>,
    pub window: usize,
    /// Shift of the SW-MSA blocks; `None` means `⌊window / 2⌋`.
    pub shift: Option<usize>,
    pub mlp_ratio: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub use_pos_embed: bool,
    pub layer_norm_eps: f64,
    pub input_norm: InputNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Spatial extent and width of one stage, plus its effective window grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageDims {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub heads: usize,
    pub grid_w_msa: WindowGrid,
    pub grid_sw_msa: WindowGrid,
}

impl ModelConfig {
    /// 64×64 RGB, 4-pixel patches, two stages of two block pairs each.
    pub fn desk() -> Self {
        ModelConfig {
            image_size: 64,
            in_channels: 3,
            patch_size: 4,
            embed_dim: 32,
            depths: vec![2, 2],
            heads: vec![2, 4],
            window: 4,
            shift: None,
            mlp_ratio: 4,
            dropout_rate: 0.1,
            num_classes: 5,
            use_pos_embed: true,
            layer_norm_eps: 1e-5,
            input_norm: InputNorm::PerImage,
        }
    }

    /// 224×224 input with 16-pixel patches (a 14×14 token grid).
    pub fn full() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            embed_dim: 96,
            depths: vec![2, 2],
            heads: vec![3, 6],
            window: 7,
            ..Self::desk()
        }
    }

    /// 16×16 input, 4-pixel patches, C = 8, one block pair, M = 2. Small
    /// enough for full finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            depths: vec![1],
            heads: vec![2],
            window: 2,
            dropout_rate: 0.0,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::invalid(format!(
                "unknown model preset {other:?} (expected desk, full or tiny)"
            ))),
        }
    }

    pub fn tokens_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn shift_amount(&self) -> usize {
        self.shift.unwrap_or(self.window / 2)
    }

    pub fn final_channels(&self) -> usize {
        self.embed_dim << (self.depths.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.image_size == 0 || self.patch_size == 0 || self.in_channels == 0 {
            return bad("image_size, patch_size and in_channels must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.window == 0 || self.mlp_ratio == 0 {
            return bad("embed_dim, window and mlp_ratio must be positive".into());
        }
        if self.depths.is_empty() || self.depths.len() != self.heads.len() {
            return bad(format!(
                "depths ({}) and heads ({}) must be non-empty and of equal length",
                self.depths.len(),
                self.heads.len()
            ));
        }
        if self.depths.contains(&0) {
            return bad("every stage needs at least one block pair".into());
        }
        if self.shift_amount() >= self.window {
            return bad(format!(
                "shift {} must be smaller than the window {}",
                self.shift_amount(),
                self.window
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "dropout_rate {} is outside [0, 1)",
                self.dropout_rate
            ));
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if self.layer_norm_eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("layer_norm_eps must be positive".into());
        }
        let last = self.depths.len() - 1;
        let mut side = self.tokens_per_side();
        for (s, &heads) in self.heads.iter().enumerate() {
            let channels = self.embed_dim << s;
            if heads == 0 || !channels.is_multiple_of(heads) {
                return bad(format!(
                    "stage {s}: {channels} channels are not divisible by {heads} heads"
                ));
            }
            if s < last {
                if !side.is_multiple_of(2) || side < 2 {
                    return bad(format!(
                        "stage {s}: a {side}x{side} token grid cannot be merged 2x2"
                    ));
                }
                side /= 2;
            }
        }
        Ok(())
    }

    /// Per-stage shapes. When a stage's grid is no larger than the window,
    /// the window shrinks to the grid and the shift is dropped, since a
    /// single window already sees every token.
    pub fn stages(&self) -> Result<Vec<StageDims>> {
        self.validate()?;
        let mut side = self.tokens_per_side();
        let mut out = Vec::with_capacity(self.depths.len());
        for (s, &heads) in self.heads.iter().enumerate() {
            let (window, shift) = if side <= self.window {
                (side, 0)
            } else {
                (self.window, self.shift_amount())
            };
            out.push(StageDims {
                h: side,
                w: side,
                channels: self.embed_dim << s,
                heads,
                grid_w_msa: WindowGrid::new(side, side, window, 0)?,
                grid_sw_msa: WindowGrid::new(side, side, window, shift)?,
            });
            side /= 2;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["desk", "full", "tiny"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_err());
    }

    #[test]
    fn desk_stage_layout() {
        let st = ModelConfig::desk().stages().unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(
            (st[0].h, st[0].channels, st[0].grid_sw_msa.shift),
            (16, 32, 2)
        );
        assert_eq!(
            (st[1].h, st[1].channels, st[1].grid_sw_msa.window),
            (8, 64, 4)
        );
    }

    #[test]
    fn small_grids_clamp_the_window() {
        let cfg = ModelConfig {
            image_size: 16,
            patch_size: 4,
            window: 7,
            ..ModelConfig::desk()
        };
        let st = cfg.stages().unwrap();
        assert_eq!((st[0].grid_sw_msa.window, st[0].grid_sw_msa.shift), (4, 0));
        let full = ModelConfig::full().stages().unwrap();
        assert_eq!((full[0].h, full[0].grid_sw_msa.shift), (14, 3));
        assert_eq!(
            (
                full[1].h,
                full[1].grid_sw_msa.window,
                full[1].grid_sw_msa.shift
            ),
            (7, 7, 0)
        );
    }

    #[test]
    fn invalid_configs() {
        let base = ModelConfig::desk();
        let cases = [
            ModelConfig {
                image_size: 63,
                ..base.clone()
            },
            ModelConfig {
                heads: vec![3, 4],
                ..base.clone()
            },
            ModelConfig {
                num_classes: 1,
                ..base.clone()
            },
            ModelConfig {
                depths: vec![2],
                ..base.clone()
            },
            ModelConfig {
                shift: Some(4),
                ..base.clone()
            },
            ModelConfig {
                dropout_rate: 1.0,
                ..base.clone()
            },
            ModelConfig {
                image_size: 12,
                patch_size: 4,
                ..base.clone()
            },
        ];
        for cfg in cases {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn json_fills_missing_fields_from_defaults() {
        let cfg: ModelConfig = serde_json::from_str(r#"{"embed_dim": 16}"#).unwrap();
        assert_eq!(cfg.embed_dim, 16);
        assert_eq!(cfg.depths, vec![2, 2]);
        assert!(serde_json::from_str::<ModelConfig>(r#"{"embed": 16}"#).is_err());
    }
}
