//! The master configuration document: one JSON object with a section per
//! subsystem. Every section and every field is optional and falls back to
//! the library default, so `{}` is a complete, valid configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::failure::FailureConfig;
use crate::geometry::CameraIntrinsics;
use crate::losses::LossConfig;
use crate::pose_graph::{OptimizerSettings, PoseGraphConfig};
use crate::registration::RegistrationConfig;
use crate::synth::{NoiseSpec, SceneSpec, SynthSettings, TrajectorySpec};
use crate::tsdf::VolumeConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub volume: VolumeConfig,
    pub losses: LossConfig,
    pub failure: FailureConfig,
    pub pose_graph: PoseGraphConfig,
    pub optimizer: OptimizerSettings,
    pub registration: RegistrationConfig,
    pub synth: SynthConfig,
}

/// Settings for the synthetic sequence generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Scene preset name; currently only `"cavity"`.
    pub preset: String,
    /// Explicit scene, overriding the preset.
    pub scene: Option<SceneSpec>,
    /// Explicit trajectory, overriding the preset.
    pub trajectory: Option<TrajectorySpec>,
    pub noise: NoiseSpec,
    pub settings: SynthSettings,
    pub intrinsics: CameraIntrinsics,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            preset: "cavity".into(),
            scene: None,
            trajectory: None,
            noise: NoiseSpec::default(),
            settings: SynthSettings::default(),
            intrinsics: CameraIntrinsics::centered(80.0, 80.0, 96, 72)
                .expect("default intrinsics are valid"),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.volume.validate()?;
        self.losses.validate()?;
        self.failure.validate()?;
        self.pose_graph.validate()?;
        self.optimizer.validate()?;
        self.registration.validate()?;
        self.synth.noise.validate()?;
        self.synth.settings.validate()?;
        if let Some(scene) = &self.synth.scene {
            scene.validate()?;
        }
        if let Some(traj) = &self.synth.trajectory {
            traj.validate()?;
        }
        CameraIntrinsics::new(
            self.synth.intrinsics.fx,
            self.synth.intrinsics.fy,
            self.synth.intrinsics.cx,
            self.synth.intrinsics.cy,
            self.synth.intrinsics.width,
            self.synth.intrinsics.height,
        )?;
        Ok(())
    }
}
