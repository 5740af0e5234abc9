//! Run configuration, read from a TOML document.
//!
//! Every section is optional; missing keys take the defaults below.
//!
//! ```toml
//! seed = 0
//! wav_format = "float32"            # or "pcm16"
//!
//! [stft]
//! window = 512
//! hop = 256
//!
//! [model]
//! sources = 2
//! components_per_source = 25
//!
//! [vem]
//! iterations = 100
//! jitter = 1e-7
//! init_noise_scale = 1000.0
//! init_posterior_cov_scale = 1000.0
//! init_evolution_cov_scale = 1.0
//! evolution_cov = "learned"         # or { pinned = 1e-10 }
//!
//! [init]
//! mode = "ones"                     # or { provided = "mixing.txt" }
//! nmf_source = { corrupted = 20.0 } # or "clean"
//! nmf_iterations = 200
//!
//! [paths]
//! manifest = "sim/manifest.toml"    # supplies mixture and references
//! mixture = "mixture.wav"
//! references = ["image_0.wav", "image_1.wav"]
//! estimates = ["estimate_0.wav", "estimate_1.wav"]
//! output_dir = "out"
//!
//! [scenario]
//! channels = 2
//! sources = 2
//! duration_s = 2.0
//! sample_rate = 16000
//! taps = 32
//! snr_db = inf
//!
//! [experiment]
//! runs = 1
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use tvmix::mixsim::{MovingScenario, StftParams};
use tvmix::vem::{EvolutionCovMode, VemConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    #[default]
    Float32,
    Pcm16,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        Self { window: 512, hop: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub sources: usize,
    pub components_per_source: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { sources: 2, components_per_source: 25 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvolutionCov {
    Learned,
    Pinned(f64),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VemSection {
    pub iterations: usize,
    pub jitter: f64,
    pub init_noise_scale: f64,
    pub init_posterior_cov_scale: f64,
    pub init_evolution_cov_scale: f64,
    pub evolution_cov: EvolutionCov,
}

impl Default for VemSection {
    fn default() -> Self {
        let d = VemConfig::default();
        Self {
            iterations: d.iterations,
            jitter: d.jitter,
            init_noise_scale: d.init_noise_scale,
            init_posterior_cov_scale: d.init_posterior_cov_scale,
            init_evolution_cov_scale: d.init_evolution_cov_scale,
            evolution_cov: EvolutionCov::Learned,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Ones,
    /// Text file of mixing means, one line per `(f, ℓ)`:
    /// `f ℓ re₁ im₁ … re_{IJ} im_{IJ}` (column-wise `vec(A)`).
    Provided(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmfSource {
    /// Each reference image as is.
    Clean,
    /// Each reference image plus the other references at this
    /// target-to-interference ratio in dB.
    Corrupted(f64),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub mode: InitMode,
    pub nmf_source: NmfSource,
    pub nmf_iterations: usize,
}

impl Default for InitSection {
    fn default() -> Self {
        Self { mode: InitMode::Ones, nmf_source: NmfSource::Corrupted(20.0), nmf_iterations: 200 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub manifest: Option<PathBuf>,
    pub mixture: Option<PathBuf>,
    pub references: Vec<PathBuf>,
    pub estimates: Vec<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub channels: usize,
    pub sources: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub taps: usize,
    pub snr_db: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let d = MovingScenario::default();
        Self {
            channels: d.channels,
            sources: d.sources,
            duration_s: d.duration_s,
            sample_rate: d.sample_rate,
            taps: d.taps,
            snr_db: d.snr_db,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub runs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { runs: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub wav_format: WavFormat,
    pub stft: StftSection,
    pub model: ModelSection,
    pub vem: VemSection,
    pub init: InitSection,
    pub paths: PathsSection,
    pub scenario: ScenarioSection,
    pub experiment: ExperimentSection,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid config")
    }

    /// Reads `path` (or the defaults when `None`), applies the overrides,
    /// resolves relative paths and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new("."));
                cfg.resolve_paths(base);
                cfg
            }
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(it) = overrides.iterations {
            cfg.vem.iterations = it;
        }
        if let Some(dir) = &overrides.output_dir {
            cfg.paths.output_dir = Some(dir.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        paths.manifest.iter_mut().for_each(fix);
        paths.mixture.iter_mut().for_each(fix);
        paths.output_dir.iter_mut().for_each(fix);
        paths.references.iter_mut().for_each(fix);
        paths.estimates.iter_mut().for_each(fix);
        if let InitMode::Provided(p) = &mut self.init.mode {
            fix(p);
        }
    }

    /// Checks numeric fields; file existence is checked by the commands
    /// that read them.
    pub fn validate(&self) -> Result<()> {
        let s = &self.stft;
        ensure!(s.window >= 2 && s.window % 2 == 0, "stft.window must be even and at least 2, got {}", s.window);
        ensure!(s.hop * 2 == s.window, "stft.hop must be half of stft.window ({}), got {}", s.window / 2, s.hop);
        ensure!(self.model.sources >= 1, "model.sources must be at least 1");
        ensure!(self.model.components_per_source >= 1, "model.components_per_source must be at least 1");
        ensure!(self.init.nmf_iterations >= 1, "init.nmf_iterations must be at least 1");
        if let NmfSource::Corrupted(r) = self.init.nmf_source {
            ensure!(!r.is_nan(), "init.nmf_source corrupted ratio must be a number");
        }
        ensure!(self.experiment.runs >= 1, "experiment.runs must be at least 1");
        let sc = &self.scenario;
        ensure!(sc.channels >= 1 && sc.sources >= 1, "scenario needs at least one channel and one source");
        ensure!(sc.taps >= 1, "scenario.taps must be at least 1");
        ensure!(sc.sample_rate > 0, "scenario.sample_rate must be positive");
        ensure!(sc.duration_s > 0.0 && sc.duration_s.is_finite(), "scenario.duration_s must be positive");
        ensure!(!sc.snr_db.is_nan() && sc.snr_db != f64::NEG_INFINITY, "scenario.snr_db must be a number or inf");
        let samples = (sc.duration_s * sc.sample_rate as f64).round() as usize;
        ensure!(samples >= self.stft.window, "scenario is shorter than one STFT window");
        self.vem_config().validate().context("invalid [vem] section")?;
        Ok(())
    }

    pub fn vem_config(&self) -> VemConfig {
        VemConfig {
            iterations: self.vem.iterations,
            components_per_source: self.model.components_per_source,
            jitter: self.vem.jitter,
            init_noise_scale: self.vem.init_noise_scale,
            init_posterior_cov_scale: self.vem.init_posterior_cov_scale,
            init_evolution_cov_scale: self.vem.init_evolution_cov_scale,
            evolution_cov_mode: match self.vem.evolution_cov {
                EvolutionCov::Learned => EvolutionCovMode::Learned,
                EvolutionCov::Pinned(v) => EvolutionCovMode::Pinned(v),
            },
            seed: self.seed,
        }
    }

    pub fn stft_params(&self, sample_rate: u32) -> StftParams {
        StftParams { sample_rate, window_size: self.stft.window, hop: self.stft.hop }
    }

    pub fn scenario(&self) -> MovingScenario {
        let s = &self.scenario;
        MovingScenario {
            channels: s.channels,
            sources: s.sources,
            duration_s: s.duration_s,
            sample_rate: s.sample_rate,
            taps: s.taps,
            snr_db: s.snr_db,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn require_mixture(&self) -> Result<&Path> {
        match &self.paths.mixture {
            Some(p) => Ok(p),
            None => bail!("no mixture: set paths.mixture or paths.manifest"),
        }
    }
}
