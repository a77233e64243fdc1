use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::xqa::ProxyMode;

/// Architecture and inference hyperparameters.
///
/// Defaults follow the suggested architecture: 4 layers, width 128, 4 MHA
/// heads of width 64, FFN width 1024, 3 templates, 50 input frames, 10
/// output frames per pass, 18 joints at 25 FPS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PGformerConfig {
    /// Encoder/decoder layer count (L).
    pub layers: usize,
    /// Model width (D).
    pub width: usize,
    /// MHA heads (H).
    pub heads: usize,
    /// Width of each MHA head (d_h); heads concatenate to `heads * head_width`
    /// and an output projection maps back to `width`.
    pub head_width: usize,
    /// Feed-forward hidden width (d_ffn).
    pub ffn_width: usize,
    /// Template count (M).
    pub templates: usize,
    /// Frames squeezed into the decoder query vector (M_q).
    pub query_window: usize,
    /// Input frames per pass (T).
    pub history: usize,
    /// Output frames per pass (K).
    pub horizon: usize,
    /// Joints per person (J).
    pub joints: usize,
    pub fps: f64,
    /// Encode/decode poses through the temporal DCT.
    pub use_dct: bool,
    /// Enable the cross-query attention sub-layer.
    pub use_xqa: bool,
    /// Enable the proxy inside XQA (`proxy_mode` picks the combination).
    pub use_proxy: bool,
    pub proxy_mode: ProxyMode,
    /// Add the gravity terms to the training loss.
    pub use_gravity_loss: bool,
    /// Column blocks of the shared XQA map; 1 is the written form.
    pub xqa_heads: usize,
    /// Add the XQA output residually to its input (pre-norm); `false`
    /// replaces the stream with the raw module output.
    pub xqa_residual: bool,
    /// One query projection for both persons; `false` gives the follower
    /// its own projection (ablation).
    pub shared_query: bool,
    /// Millimeters per internal unit. Inputs are divided by this before
    /// entering the network and predictions multiplied back, keeping the
    /// residual streams at unit scale.
    pub input_scale: f64,
}

impl Default for PGformerConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 128,
            heads: 4,
            head_width: 64,
            ffn_width: 1024,
            templates: 3,
            query_window: 3,
            history: 50,
            horizon: 10,
            joints: 18,
            fps: 25.0,
            use_dct: true,
            use_xqa: true,
            use_proxy: true,
            proxy_mode: ProxyMode::Bilinear,
            use_gravity_loss: true,
            xqa_heads: 1,
            xqa_residual: true,
            shared_query: true,
            input_scale: 1000.0,
        }
    }
}

impl PGformerConfig {
    /// Small configuration for gradient checks and structural tests.
    pub fn tiny() -> Self {
        Self {
            layers: 2,
            width: 16,
            heads: 2,
            head_width: 8,
            ffn_width: 32,
            templates: 2,
            query_window: 3,
            history: 8,
            horizon: 4,
            joints: 4,
            fps: 25.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("width", self.width),
            ("heads", self.heads),
            ("head_width", self.head_width),
            ("ffn_width", self.ffn_width),
            ("templates", self.templates),
            ("query_window", self.query_window),
            ("history", self.history),
            ("horizon", self.horizon),
            ("joints", self.joints),
            ("xqa_heads", self.xqa_heads),
        ];
        for (name, v) in positives {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.fps <= 0.0 {
            return Err(Error::Config("fps must be positive".into()));
        }
        if self.input_scale <= 0.0 {
            return Err(Error::Config("input_scale must be positive".into()));
        }
        if self.query_window > self.history {
            return Err(Error::Config(format!(
                "query_window ({}) must not exceed history ({})",
                self.query_window, self.history
            )));
        }
        if self.width % self.xqa_heads != 0 {
            return Err(Error::Config(format!(
                "xqa_heads ({}) must divide width ({})",
                self.xqa_heads, self.width
            )));
        }
        Ok(())
    }

    /// The proxy mode after applying the `use_proxy` switch.
    pub fn effective_proxy_mode(&self) -> ProxyMode {
        if self.use_proxy {
            self.proxy_mode
        } else {
            ProxyMode::Off
        }
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joints
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PGformerConfig::default().validate().unwrap();
        PGformerConfig::tiny().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = PGformerConfig::tiny();
        c.query_window = 100;
        assert!(c.validate().is_err());
        let mut c = PGformerConfig::tiny();
        c.xqa_heads = 3;
        assert!(c.validate().is_err());
        let mut c = PGformerConfig::tiny();
        c.joints = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn proxy_switch_overrides_mode() {
        let mut c = PGformerConfig::tiny();
        c.proxy_mode = ProxyMode::Bilinear;
        c.use_proxy = false;
        assert_eq!(c.effective_proxy_mode(), ProxyMode::Off);
    }
}
