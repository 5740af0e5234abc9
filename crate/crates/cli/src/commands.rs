//! The four subcommands. Output files, all in the output directory:
//!
//! - `simulate`: `mixture.wav`, `image_<j>.wav`, `manifest.toml`
//! - `separate`: `estimate_<j>.wav`, `trace.txt`
//! - `evaluate`: `scores.txt`
//! - `experiment`: one `run_<r>/` directory per run with all of the above,
//!   and `gains.txt`
//!
//! Seeds: run `r` of an experiment uses `seed + r`. The scene is drawn from
//! that seed directly; the NMF initialization of source `j` uses
//! `child_seed(seed, "nmf<j>")`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use tvmix::eval::{bss_metrics, input_scores, BssScores, DEFAULT_PROJ_TAPS};
use tvmix::mixsim::{semi_blind_nmf_init, simulate_moving_scenario, TrajectorySpec};
use tvmix::numerics::CVec;
use tvmix::seeding::child_seed;
use tvmix::stft::frame_count;
use tvmix::vem::{separate_signals, write_trace, AInit};

use crate::config::{InitMode, NmfSource, RunConfig};
use crate::wav::{read_wav, write_wav, Audio};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MIXTURE_FILE: &str = "mixture.wav";
pub const TRACE_FILE: &str = "trace.txt";
pub const SCORES_FILE: &str = "scores.txt";
pub const GAINS_FILE: &str = "gains.txt";

pub fn image_file(j: usize) -> String {
    format!("image_{j}.wav")
}

pub fn estimate_file(j: usize) -> String {
    format!("estimate_{j}.wav")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub start: Vec<Vec<f64>>,
    pub end: Vec<Vec<f64>>,
}

/// Description of a simulated scene; file names are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub sample_rate: u32,
    pub channels: usize,
    pub sources: usize,
    pub duration_s: f64,
    pub taps: usize,
    pub snr_db: f64,
    pub mixture: String,
    pub images: Vec<String>,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        let m: Manifest = toml::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))?;
        ensure!(m.images.len() == m.sources, "manifest lists {} images for {} sources", m.images.len(), m.sources);
        Ok(m)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Renders a moving-source scene and writes its mixture, images and
/// manifest. Returns the manifest path.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    create_dir(&dir)?;
    let spec = cfg.scenario();
    let scene = simulate_moving_scenario(&spec, cfg.seed).context("invalid scenario")?;
    let sr = spec.sample_rate;
    write_wav(&dir.join(MIXTURE_FILE), &Audio { sample_rate: sr, channels: scene.mixture.clone() }, cfg.wav_format)?;
    for (j, img) in scene.images.iter().enumerate() {
        write_wav(&dir.join(image_file(j)), &Audio { sample_rate: sr, channels: img.clone() }, cfg.wav_format)?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        sample_rate: sr,
        channels: spec.channels,
        sources: spec.sources,
        duration_s: spec.duration_s,
        taps: spec.taps,
        snr_db: spec.snr_db,
        mixture: MIXTURE_FILE.into(),
        images: (0..spec.sources).map(image_file).collect(),
        trajectories: scene
            .trajectories
            .iter()
            .map(|t: &TrajectorySpec| TrajectoryRecord { start: t.start.clone(), end: t.end.clone() })
            .collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    write_text(&path, &toml::to_string(&manifest).context("cannot encode manifest")?)?;
    log::info!("simulated {} sources into {}", spec.sources, dir.display());
    Ok(path)
}

/// Mixture and reference paths, from the manifest when one is given.
pub fn resolve_inputs(cfg: &RunConfig) -> Result<(PathBuf, Vec<PathBuf>)> {
    if let Some(mpath) = &cfg.paths.manifest {
        let m = Manifest::read(mpath)?;
        let base = mpath.parent().unwrap_or(Path::new("."));
        let refs = m.images.iter().map(|f| base.join(f)).collect();
        let mixture = cfg.paths.mixture.clone().unwrap_or_else(|| base.join(&m.mixture));
        return Ok((mixture, refs));
    }
    Ok((cfg.require_mixture()?.to_path_buf(), cfg.paths.references.clone()))
}

fn read_references(paths: &[PathBuf], mixture: &Audio) -> Result<Vec<Vec<Vec<f64>>>> {
    paths
        .iter()
        .map(|p| {
            let a = read_wav(p)?;
            ensure!(
                a.channels.len() == mixture.channels.len() && a.channels[0].len() == mixture.channels[0].len(),
                "reference {} has {} channels of {} samples; the mixture has {} of {}",
                p.display(),
                a.channels.len(),
                a.channels[0].len(),
                mixture.channels.len(),
                mixture.channels[0].len()
            );
            Ok(a.channels)
        })
        .collect()
}

/// Parses a provided mixing-mean file (see `InitMode::Provided`).
pub fn read_mixing_means(path: &Path, bins: usize, frames: usize, dim: usize) -> Result<Vec<Vec<CVec>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read mixing means {}", path.display()))?;
    let mut out: Vec<Vec<Option<CVec>>> = vec![vec![None; frames]; bins];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        ensure!(
            fields.len() == 2 + 2 * dim,
            "{}:{}: expected f, l and {} numbers, found {} fields",
            path.display(),
            n + 1,
            2 * dim,
            fields.len()
        );
        let f: usize = fields[0].parse().with_context(|| format!("{}:{}: bad bin index", path.display(), n + 1))?;
        let l: usize = fields[1].parse().with_context(|| format!("{}:{}: bad frame index", path.display(), n + 1))?;
        ensure!(f < bins && l < frames, "{}:{}: ({f}, {l}) is outside {bins} bins x {frames} frames", path.display(), n + 1);
        let nums: Vec<f64> = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: bad number", path.display(), n + 1))?;
        ensure!(out[f][l].is_none(), "{}:{}: ({f}, {l}) given twice", path.display(), n + 1);
        out[f][l] = Some(CVec::from_fn(dim, |k, _| Complex64::new(nums[2 * k], nums[2 * k + 1])));
    }
    out.into_iter()
        .enumerate()
        .map(|(f, bin)| {
            bin.into_iter()
                .enumerate()
                .map(|(l, a)| a.with_context(|| format!("{}: no mixing mean for ({f}, {l})", path.display())))
                .collect()
        })
        .collect()
}

pub struct SeparateOutput {
    pub estimates: Vec<PathBuf>,
    pub trace: PathBuf,
}

/// Semi-blind NMF initialization from the references, VEM separation, and
/// one estimated image per source.
pub fn cmd_separate(cfg: &RunConfig) -> Result<SeparateOutput> {
    let (mixture_path, ref_paths) = resolve_inputs(cfg)?;
    let mixture = read_wav(&mixture_path)?;
    let j_n = cfg.model.sources;
    if ref_paths.len() != j_n {
        bail!(
            "the NMF initialization needs one reference image per source: model.sources = {j_n} but {} references \
             were given (set paths.references or paths.manifest)",
            ref_paths.len()
        );
    }
    let refs = read_references(&ref_paths, &mixture)?;
    let stft = cfg.stft_params(mixture.sample_rate);
    let len = mixture.channels[0].len();
    ensure!(len >= cfg.stft.window, "mixture has {len} samples, fewer than one STFT window");
    let r_db = match cfg.init.nmf_source {
        NmfSource::Clean => f64::INFINITY,
        NmfSource::Corrupted(r) => r,
    };
    let k = cfg.model.components_per_source;
    let blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..j_n)
        .map(|j| {
            let others: Vec<Vec<Vec<f64>>> = (0..j_n).filter(|&o| o != j).map(|o| refs[o].clone()).collect();
            let fit = semi_blind_nmf_init(&refs[j], &others, r_db, k, stft, cfg.init.nmf_iterations, child_seed(cfg.seed, &format!("nmf{j}")))
                .with_context(|| format!("NMF initialization of source {j}"))?;
            Ok((fit.w, fit.h))
        })
        .collect::<Result<_>>()?;
    let a_init = match &cfg.init.mode {
        InitMode::Ones => AInit::Ones,
        InitMode::Provided(p) => {
            let dim = mixture.channels.len() * j_n;
            AInit::Provided(read_mixing_means(p, cfg.stft.window / 2 + 1, frame_count(len, cfg.stft.hop), dim)?)
        }
    };
    let vem = cfg.vem_config();
    let result = separate_signals(&mixture.channels, stft, &blocks, a_init, &vem).context("separation failed")?;

    let dir = cfg.output_dir();
    create_dir(&dir)?;
    let mut estimates = Vec::with_capacity(j_n);
    for (j, img) in result.images.into_iter().enumerate() {
        let path = dir.join(estimate_file(j));
        write_wav(&path, &Audio { sample_rate: mixture.sample_rate, channels: img }, cfg.wav_format)?;
        estimates.push(path);
    }
    let trace = dir.join(TRACE_FILE);
    let mut buf = Vec::new();
    write_trace(&mut buf, &result.trace)?;
    std::fs::write(&trace, buf).with_context(|| format!("cannot write {}", trace.display()))?;
    if let Some(last) = result.trace.last() {
        log::info!("{} iterations, final free energy {:.6e}", last.iteration, last.free_energy);
    }
    Ok(SeparateOutput { estimates, trace })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRow {
    pub source: usize,
    pub output: BssScores,
    pub input: BssScores,
}

impl ScoreRow {
    pub fn gain(&self) -> BssScores {
        BssScores {
            sdr_db: self.output.sdr_db - self.input.sdr_db,
            sir_db: self.output.sir_db - self.input.sir_db,
            sar_db: self.output.sar_db - self.input.sar_db,
        }
    }
}

pub fn format_scores(rows: &[ScoreRow]) -> String {
    let mut s = String::from(
        "# source sdr_db sir_db sar_db input_sdr_db input_sir_db input_sar_db gain_sdr_db gain_sir_db gain_sar_db\n",
    );
    for r in rows {
        let g = r.gain();
        let _ = writeln!(
            s,
            "{} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
            r.source,
            r.output.sdr_db,
            r.output.sir_db,
            r.output.sar_db,
            r.input.sdr_db,
            r.input.sir_db,
            r.input.sar_db,
            g.sdr_db,
            g.sir_db,
            g.sar_db
        );
    }
    s
}

/// Scores the estimates against the references, and the mixture taken as
/// every source's estimate as the input baseline.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<ScoreRow>> {
    let (mixture_path, ref_paths) = resolve_inputs(cfg)?;
    ensure!(!ref_paths.is_empty(), "evaluation needs references (set paths.references or paths.manifest)");
    let mixture = read_wav(&mixture_path)?;
    let refs = read_references(&ref_paths, &mixture)?;
    let est_paths: Vec<PathBuf> = if cfg.paths.estimates.is_empty() {
        (0..refs.len()).map(|j| cfg.output_dir().join(estimate_file(j))).collect()
    } else {
        cfg.paths.estimates.clone()
    };
    ensure!(
        est_paths.len() == refs.len(),
        "{} estimates for {} references",
        est_paths.len(),
        refs.len()
    );
    let estimates: Vec<Vec<Vec<f64>>> =
        est_paths.iter().map(|p| read_wav(p).map(|a| a.channels)).collect::<Result<_>>()?;
    let output = bss_metrics(&estimates, &refs, DEFAULT_PROJ_TAPS).context("cannot score the estimates")?;
    let input = input_scores(&mixture.channels, &refs, DEFAULT_PROJ_TAPS).context("cannot score the mixture")?;
    let rows: Vec<ScoreRow> = output
        .into_iter()
        .zip(input)
        .enumerate()
        .map(|(source, (output, input))| ScoreRow { source, output, input })
        .collect();
    let dir = cfg.output_dir();
    create_dir(&dir)?;
    let text = format_scores(&rows);
    write_text(&dir.join(SCORES_FILE), &text)?;
    print!("{text}");
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainRow {
    pub run: usize,
    pub seed: u64,
    pub input: BssScores,
    pub output: BssScores,
}

fn mean_scores(rows: &[BssScores]) -> BssScores {
    let n = rows.len().max(1) as f64;
    BssScores {
        sdr_db: rows.iter().map(|s| s.sdr_db).sum::<f64>() / n,
        sir_db: rows.iter().map(|s| s.sir_db).sum::<f64>() / n,
        sar_db: rows.iter().map(|s| s.sar_db).sum::<f64>() / n,
    }
}

pub fn format_gains(rows: &[GainRow]) -> String {
    let mut s = String::from(
        "# run seed input_sdr_db output_sdr_db gain_sdr_db input_sir_db output_sir_db gain_sir_db\n",
    );
    let line = |s: &mut String, run: &str, seed: &str, i: &BssScores, o: &BssScores| {
        let _ = writeln!(
            s,
            "{run} {seed} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
            i.sdr_db,
            o.sdr_db,
            o.sdr_db - i.sdr_db,
            i.sir_db,
            o.sir_db,
            o.sir_db - i.sir_db
        );
    };
    for r in rows {
        line(&mut s, &r.run.to_string(), &r.seed.to_string(), &r.input, &r.output);
    }
    let ins: Vec<BssScores> = rows.iter().map(|r| r.input).collect();
    let outs: Vec<BssScores> = rows.iter().map(|r| r.output).collect();
    line(&mut s, "mean", "-", &mean_scores(&ins), &mean_scores(&outs));
    s
}

/// Simulate, separate and evaluate for `experiment.runs` consecutive seeds,
/// then write the table of source-averaged gains.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<Vec<GainRow>> {
    let root = cfg.output_dir();
    create_dir(&root)?;
    let mut rows = Vec::with_capacity(cfg.experiment.runs);
    for run in 0..cfg.experiment.runs {
        let mut sub = cfg.clone();
        sub.seed = cfg.seed + run as u64;
        sub.paths.output_dir = Some(root.join(format!("run_{run}")));
        sub.model.sources = sub.scenario.sources;
        sub.paths.mixture = None;
        sub.paths.references.clear();
        sub.paths.estimates.clear();
        log::info!("experiment run {run} (seed {})", sub.seed);
        sub.paths.manifest = Some(cmd_simulate(&sub)?);
        cmd_separate(&sub)?;
        let scores = cmd_evaluate(&sub)?;
        rows.push(GainRow {
            run,
            seed: sub.seed,
            input: mean_scores(&scores.iter().map(|r| r.input).collect::<Vec<_>>()),
            output: mean_scores(&scores.iter().map(|r| r.output).collect::<Vec<_>>()),
        });
    }
    let text = format_gains(&rows);
    write_text(&root.join(GAINS_FILE), &text)?;
    print!("{text}");
    Ok(rows)
}
