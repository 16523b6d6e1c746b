use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network sizes and conditioning switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub joints: usize,
    pub root: usize,
    pub frames: usize,
    pub categories: usize,
    pub latent: usize,
    pub enc_hidden: usize,
    pub enc_feature: usize,
    pub traj_embed: usize,
    pub traj_hidden: usize,
    pub traj_feature: usize,
    pub motion_embed: usize,
    pub motion_hidden: usize,
    /// Depth of every recurrent stack except the encoder's single layer.
    pub layers: usize,
    /// Feed the target end point to the trajectory generator.
    pub endpoint_conditioning: bool,
}

impl ModelConfig {
    /// Sizes used for CPU training on the synthetic corpus.
    pub fn desk(joints: usize, root: usize, frames: usize, categories: usize) -> Self {
        Self {
            joints,
            root,
            frames,
            categories,
            latent: 20,
            enc_hidden: 64,
            enc_feature: 64,
            traj_embed: 32,
            traj_hidden: 48,
            traj_feature: 32,
            motion_embed: 64,
            motion_hidden: 64,
            layers: 2,
            endpoint_conditioning: true,
        }
    }

    /// Full-size layers: 64-unit encoder, 128-unit decoders.
    pub fn reference(joints: usize, root: usize, frames: usize, categories: usize) -> Self {
        Self {
            enc_hidden: 64,
            enc_feature: 64,
            traj_embed: 128,
            traj_hidden: 128,
            traj_feature: 128,
            motion_embed: 128,
            motion_hidden: 128,
            ..Self::desk(joints, root, frames, categories)
        }
    }

    /// Smallest configuration, used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            joints: 4,
            root: 0,
            frames: 8,
            categories: 2,
            latent: 4,
            enc_hidden: 5,
            enc_feature: 6,
            traj_embed: 5,
            traj_hidden: 4,
            traj_feature: 5,
            motion_embed: 6,
            motion_hidden: 5,
            layers: 2,
            endpoint_conditioning: true,
        }
    }

    pub fn pose_dim(&self) -> usize {
        self.joints * 3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("joints", self.joints),
            ("frames", self.frames),
            ("categories", self.categories),
            ("latent", self.latent),
            ("enc_hidden", self.enc_hidden),
            ("enc_feature", self.enc_feature),
            ("traj_embed", self.traj_embed),
            ("traj_hidden", self.traj_hidden),
            ("traj_feature", self.traj_feature),
            ("motion_embed", self.motion_embed),
            ("motion_hidden", self.motion_hidden),
            ("layers", self.layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model `{name}` must be positive")));
        }
        if self.root >= self.joints {
            return Err(Error::Config(format!(
                "root {} out of range for {} joints",
                self.root, self.joints
            )));
        }
        Ok(())
    }
}
