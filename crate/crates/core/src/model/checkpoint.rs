//! Model checkpoints: `model.txt` (config, parameter names and shapes,
//! payload digest) plus `params.bin` (parameters as little-endian `f64` in
//! manifest order).

use std::path::Path;

use super::{ModelConfig, MotionModel};
use crate::archive::{self, Manifest};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "model.txt";
const PARAMS_FILE: &str = "params.bin";

/// Training provenance stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub step: u64,
    /// Seed and word position of the training ChaCha stream.
    pub rng: Option<(u64, u128)>,
}

fn config_to_manifest(c: &ModelConfig, m: &mut Manifest) {
    m.set("joints", c.joints);
    m.set("root", c.root);
    m.set("frames", c.frames);
    m.set("categories", c.categories);
    m.set("latent", c.latent);
    m.set("enc_hidden", c.enc_hidden);
    m.set("enc_feature", c.enc_feature);
    m.set("traj_embed", c.traj_embed);
    m.set("traj_hidden", c.traj_hidden);
    m.set("traj_feature", c.traj_feature);
    m.set("motion_embed", c.motion_embed);
    m.set("motion_hidden", c.motion_hidden);
    m.set("layers", c.layers);
    m.set("endpoint_conditioning", c.endpoint_conditioning);
}

fn config_from_manifest(m: &Manifest) -> Result<ModelConfig> {
    Ok(ModelConfig {
        joints: m.parse("joints")?,
        root: m.parse("root")?,
        frames: m.parse("frames")?,
        categories: m.parse("categories")?,
        latent: m.parse("latent")?,
        enc_hidden: m.parse("enc_hidden")?,
        enc_feature: m.parse("enc_feature")?,
        traj_embed: m.parse("traj_embed")?,
        traj_hidden: m.parse("traj_hidden")?,
        traj_feature: m.parse("traj_feature")?,
        motion_embed: m.parse("motion_embed")?,
        motion_hidden: m.parse("motion_hidden")?,
        layers: m.parse("layers")?,
        endpoint_conditioning: m.parse("endpoint_conditioning")?,
    })
}

impl MotionModel {
    pub fn save(&self, dir: &Path, meta: &CheckpointMeta) -> Result<()> {
        archive::ensure_dir(dir)?;
        let mut man = Manifest::new();
        man.set("version", CHECKPOINT_VERSION);
        man.set("kind", "motion-model");
        config_to_manifest(&self.config, &mut man);
        man.set("step", meta.step);
        if let Some((seed, pos)) = meta.rng {
            man.set("rng_seed", seed);
            man.set("rng_word_pos", pos);
        }
        let bytes = archive::params_to_manifest(&self.store, &mut man);
        archive::write_bytes(&dir.join(PARAMS_FILE), &bytes)?;
        man.write(&dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let man = Manifest::read(&dir.join(MANIFEST_FILE))?;
        man.check_version(CHECKPOINT_VERSION)?;
        if man.require("kind")? != "motion-model" {
            return Err(Error::Data(format!("{} is not a motion model checkpoint", dir.display())));
        }
        let config = config_from_manifest(&man)?;
        let mut model = Self::new(config, 0)?;
        let bytes = archive::read_verified(&dir.join(PARAMS_FILE), &man, PARAMS_FILE)?;
        archive::params_from_manifest(&mut model.store, &man, &bytes)?;
        let rng = match (man.get("rng_seed"), man.get("rng_word_pos")) {
            (Some(_), Some(_)) => Some((man.parse("rng_seed")?, man.parse("rng_word_pos")?)),
            _ => None,
        };
        let meta = CheckpointMeta {
            step: man.parse("step")?,
            rng,
        };
        Ok((model, meta))
    }

    /// SHA-256 of the serialized parameters, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut man = Manifest::new();
        archive::params_to_manifest(&self.store, &mut man);
        man.get("sha256").unwrap_or_default().to_string()
    }

    /// Load a checkpoint and require its configuration to equal `expected`.
    pub fn load_expecting(dir: &Path, expected: &ModelConfig) -> Result<(Self, CheckpointMeta)> {
        let man = Manifest::read(&dir.join(MANIFEST_FILE))?;
        man.check_version(CHECKPOINT_VERSION)?;
        let found = config_from_manifest(&man)?;
        if &found != expected {
            return Err(Error::Shape(format!(
                "checkpoint configuration {found:?} does not match {expected:?}"
            )));
        }
        Self::load(dir)
    }
}
