use std::path::Path;

use ris_core::beam::PhaseCodebook;
use ris_core::channel::{ArrayGeometry, PulseShape, WidebandParams, SPEED_OF_LIGHT};
use ris_core::geometry::Vec3;
use ris_core::net::TrainConfig;
use ris_core::protocol::ProtocolConfig;
use ris_core::scene::{CameraModel, DetectorNoise, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub scenes: usize,
    /// Fraction of each camera's records used for training.
    pub train_fraction: f64,
    /// Also store per-subcarrier arrays in `channels.jsonl`.
    pub store_freq: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenes: 2000,
            train_fraction: 0.8,
            store_freq: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            spacing: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub carrier_ghz: f64,
    pub bandwidth_mhz: f64,
    pub subcarriers: usize,
    pub max_delay_taps: usize,
    pub pulse_shape: PulseShape,
    pub reflection_gain: f64,
    /// Scatterers seen on the UE-RIS links.
    pub ue_reflectors: Vec<Vec3>,
    /// Scatterers seen on the BS-RIS link.
    pub bs_reflectors: Vec<Vec3>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            bandwidth_mhz: 50.0,
            subcarriers: 16,
            max_delay_taps: 16,
            pulse_shape: PulseShape::Sinc,
            reflection_gain: 0.3,
            ue_reflectors: vec![
                Vec3::new(-20.0, 0.0, 5.0),
                Vec3::new(20.0, 0.0, 5.0),
                Vec3::new(-35.0, 24.5, 2.0),
                Vec3::new(30.0, 24.5, 2.0),
            ],
            bs_reflectors: vec![Vec3::new(-6.0, -30.0, 10.0), Vec3::new(6.0, -20.0, 12.0)],
        }
    }
}

impl ChannelConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)
    }

    /// Wideband parameters with unit pathloss; each link sets its own.
    pub fn wideband(&self) -> WidebandParams {
        WidebandParams {
            subcarriers: self.subcarriers,
            sample_period_s: 1.0 / (self.bandwidth_mhz * 1e6),
            max_delay_taps: self.max_delay_taps,
            pathloss: 1.0,
            pulse_shape: self.pulse_shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub oversample: usize,
    pub phase_bits: Option<u32>,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            oversample: 1,
            phase_bits: Some(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Receive-SNR grid (dB) of the rate table.
    pub rx_snr_db: Vec<f64>,
    /// Receive SNR (dB) at which the top-k rate ratios are computed.
    pub topk_rx_snr_db: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rx_snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            topk_rx_snr_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolRunConfig {
    #[serde(flatten)]
    pub timing: ProtocolConfig,
    pub runs: usize,
    /// Sizes `B` of the top-B predicted-set policies.
    pub set_sizes: Vec<usize>,
    /// Receive SNR (dB) the link budget is calibrated to.
    pub rx_snr_db: f64,
}

impl Default for ProtocolRunConfig {
    fn default() -> Self {
        Self {
            timing: ProtocolConfig::default(),
            runs: 100,
            set_sizes: vec![3, 6, 12],
            rx_snr_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub scene: SceneConfig,
    pub detector: DetectorNoise,
    pub array: ArrayConfig,
    pub channel: ChannelConfig,
    pub codebook: CodebookConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub protocol: ProtocolRunConfig,
    pub datafrac: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            dataset: DatasetConfig::default(),
            scene: SceneConfig::default(),
            detector: DetectorNoise::default(),
            array: ArrayConfig::default(),
            channel: ChannelConfig::default(),
            codebook: CodebookConfig::default(),
            // 100 epochs underfits the wide camera at this dataset size
            train: TrainConfig {
                epochs: 300,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            protocol: ProtocolRunConfig::default(),
            datafrac: vec![0.1, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return Err(cfg_err("dataset.train_fraction must lie in (0, 1)"));
        }
        self.scene.validate()?;
        self.geometry()?;
        self.channel.wideband().validate()?;
        if !(self.channel.carrier_ghz > 0.0) {
            return Err(cfg_err("channel.carrier_ghz must be positive"));
        }
        self.train.validate()?;
        self.protocol.timing.validate()?;
        if self.protocol.set_sizes.contains(&0) {
            return Err(cfg_err("protocol.set_sizes must be positive"));
        }
        if self.datafrac.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(cfg_err("datafrac fractions must lie in (0, 1]"));
        }
        if self.scene.cameras.is_empty() {
            return Err(cfg_err("scene.cameras must list at least one camera"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        Ok(ArrayGeometry::new(
            self.array.rows,
            self.array.cols,
            self.array.spacing,
        )?)
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.scene.cameras
    }

    /// UE-side codebook; the BS side uses the same grid.
    pub fn codebook(&self) -> Result<PhaseCodebook> {
        Ok(PhaseCodebook::dft_upa(
            &self.geometry()?,
            self.codebook.oversample,
            self.codebook.phase_bits,
        )?)
    }
}

/// Independent stream seed for a named purpose.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finaliser over the combined key
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod streams {
    pub const DETECTOR: u64 = 1;
    pub const UE_CHANNEL: u64 = 2;
    pub const BS_CHANNEL: u64 = 3;
    pub const PROTOCOL: u64 = 4;
    pub const TRAIN: u64 = 5;
}
