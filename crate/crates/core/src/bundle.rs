//! A trained model together with the latent artifacts derived from it.
//!
//! Layout of a bundle directory: the model checkpoint files, `bank.*` with
//! the training-set posterior means and `catalog.*` with the discovered
//! modes, `skeleton.txt` with the joint hierarchy. The endpoint regressor
//! is rebuilt from the bank on load.

use std::path::Path;

use crate::archive::Manifest;
use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::kinematics::Skeleton;
use crate::latent::{CodeBank, KnnEndpointModel, ModeCatalog, SelectKOptions, KNN_K};
use crate::model::{CheckpointMeta, MotionModel};
use crate::training::extract_code_bank;

const BANK_STEM: &str = "bank";
const SKELETON_FILE: &str = "skeleton.txt";
const SKELETON_VERSION: u32 = 1;

pub struct ModelBundle {
    pub model: MotionModel,
    pub meta: CheckpointMeta,
    pub skeleton: Skeleton,
    pub bank: CodeBank,
    pub catalog: ModeCatalog,
    pub knn: KnnEndpointModel,
}

impl ModelBundle {
    /// Encode `corpus` and run mode discovery for a freshly trained model.
    pub fn build(
        model: MotionModel,
        meta: CheckpointMeta,
        corpus: &Corpus,
        seed: u64,
        opts: &SelectKOptions,
    ) -> Result<Self> {
        let bank = extract_code_bank(&model, corpus)?;
        let catalog = ModeCatalog::discover(&bank, &corpus.manifest.categories, seed, opts)?;
        Self::assemble(model, meta, corpus.manifest.skeleton.clone(), bank, catalog)
    }

    fn assemble(
        model: MotionModel,
        meta: CheckpointMeta,
        skeleton: Skeleton,
        bank: CodeBank,
        catalog: ModeCatalog,
    ) -> Result<Self> {
        if bank.dim() != model.config.latent || catalog.categories.len() != model.config.categories {
            return Err(Error::Shape("code bank or mode catalog does not match the model".into()));
        }
        if skeleton.joints() != model.config.joints || skeleton.root != model.config.root {
            return Err(Error::Shape("skeleton does not match the model".into()));
        }
        let knn = KnnEndpointModel::new(&bank, KNN_K)?;
        Ok(Self {
            model,
            meta,
            skeleton,
            bank,
            catalog,
            knn,
        })
    }

    /// Replace the catalog, e.g. after re-running discovery with other
    /// options.
    pub fn with_catalog(self, catalog: ModeCatalog) -> Result<Self> {
        Self::assemble(self.model, self.meta, self.skeleton, self.bank, catalog)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir, &self.meta)?;
        self.bank.save(dir, BANK_STEM)?;
        self.catalog.save(dir)?;
        let sk = &self.skeleton;
        let mut man = Manifest::new();
        man.set("version", SKELETON_VERSION);
        man.set("root", sk.root);
        let parents: Vec<String> = sk.parents.iter().map(|p| p.map_or("-".into(), |p| p.to_string())).collect();
        man.set("parents", parents.join(","));
        man.set("joint_names", sk.names.join(","));
        man.write(&dir.join(SKELETON_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (model, meta) = MotionModel::load(dir)?;
        let bank = CodeBank::load(dir, BANK_STEM)?;
        let catalog = ModeCatalog::load(dir)?;
        let man = Manifest::read(&dir.join(SKELETON_FILE))?;
        man.check_version(SKELETON_VERSION)?;
        let parents = man
            .parse_list::<String>("parents")?
            .into_iter()
            .map(|p| match p.as_str() {
                "-" => Ok(None),
                s => s.parse().map(Some).map_err(|_| Error::Data(format!("invalid parent `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let skeleton = Skeleton::new(man.parse("root")?, parents, man.parse_list("joint_names")?)?;
        Self::assemble(model, meta, skeleton, bank, catalog)
    }

    pub fn category_names(&self) -> Vec<String> {
        self.catalog.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.catalog.category_index(name).ok_or_else(|| Error::Unknown {
            what: "category",
            name: name.to_string(),
        })
    }
}
