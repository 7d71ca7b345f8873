//! Run directories, stage markers and prerequisite checks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use crate::config::RunConfig;

pub const CACHE_ENV: &str = "MCDM_CACHE";
pub const DEFAULT_CACHE: &str = "mcdm-cache";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    PhantomGen,
    TrainReid,
    GenFlow,
    TrainMafe,
    ExtractMotion,
    TrainVae,
    TrainLvdm,
    Sample,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::PhantomGen,
        Stage::TrainReid,
        Stage::GenFlow,
        Stage::TrainMafe,
        Stage::ExtractMotion,
        Stage::TrainVae,
        Stage::TrainLvdm,
        Stage::Sample,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PhantomGen => "phantom-gen",
            Stage::TrainReid => "train-reid",
            Stage::GenFlow => "gen-flow",
            Stage::TrainMafe => "train-mafe",
            Stage::ExtractMotion => "extract-motion",
            Stage::TrainVae => "train-vae",
            Stage::TrainLvdm => "train-lvdm",
            Stage::Sample => "sample",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose artifacts must exist first.
    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::PhantomGen => &[],
            Stage::TrainReid | Stage::GenFlow => &[Stage::PhantomGen],
            Stage::TrainMafe => &[Stage::PhantomGen, Stage::TrainReid, Stage::GenFlow],
            Stage::ExtractMotion => &[Stage::TrainMafe],
            Stage::TrainVae => &[Stage::PhantomGen],
            Stage::TrainLvdm => &[Stage::ExtractMotion, Stage::TrainVae],
            Stage::Sample => &[Stage::TrainLvdm],
            Stage::Evaluate => &[Stage::TrainMafe, Stage::Sample],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| anyhow!("unknown stage `{s}`"))
    }
}

/// Cache root: explicit `--out`, then `MCDM_CACHE`, then `./mcdm-cache`.
pub fn cache_root(out: Option<&Path>) -> PathBuf {
    if let Some(p) = out {
        return p.to_path_buf();
    }
    match std::env::var_os(CACHE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_CACHE),
    }
}

/// Paths of one run, all derived from the config hash.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: RunConfig,
    pub hash: String,
    pub dir: PathBuf,
    pub force: bool,
}

impl RunContext {
    pub fn new(config: RunConfig, cache: &Path) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let dir = cache.join(&hash);
        std::fs::create_dir_all(dir.join("stages")).with_context(|| format!("creating run directory {}", dir.display()))?;
        let cfg_path = dir.join("config.toml");
        if !cfg_path.exists() {
            std::fs::write(&cfg_path, toml::to_string_pretty(&config)?).with_context(|| format!("writing {}", cfg_path.display()))?;
        }
        Ok(Self { config, hash, dir, force: false })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.config.data.dataset_dir.clone().unwrap_or_else(|| self.dir.join("data"))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn marker(&self, stage: Stage) -> PathBuf {
        self.dir.join("stages").join(format!("{}.done", stage.name()))
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.marker(stage).exists()
    }

    pub fn mark_done(&self, stage: Stage) -> Result<()> {
        std::fs::write(self.marker(stage), format!("{}\n", self.hash)).with_context(|| format!("writing marker for {stage}"))
    }

    pub fn require(&self, stage: Stage) -> Result<()> {
        for &p in stage.prerequisites() {
            if p == Stage::PhantomGen && self.config.data.dataset_dir.is_some() {
                continue;
            }
            if !self.is_done(p) {
                bail!("stage `{stage}` needs the artifacts of `{p}`; run `mcdm {p}` first (run directory {})", self.dir.display());
            }
        }
        Ok(())
    }
}
