//! Experiment harness: runs a workload on any fabric variant or oracle and
//! produces deterministic, machine-readable reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{BaselineError, CerebraS};
use crate::codec::{active_inputs, decode_spikes, encode_sample, RngSeed, SpikeTrain, TrainFile, TrainFileError};
use crate::compiler::{CompileError, FabricImage, NetworkDescription};
use crate::dataset::{Dataset, DatasetError};
use crate::fabric::{Fabric, FabricConfig, FabricError, TimestepReport};
use crate::noc::SpikeNetConfig;
use crate::oracle::{behavioral_run, float_run, output_counts, Raster};
use crate::packet::SpikePacket;

pub const REPORT_SCHEMA: &str = "cerebra-run/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    CerebraH,
    CerebraS,
    BehavioralOracle,
    FloatOracle,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::CerebraH, Variant::CerebraS, Variant::BehavioralOracle, Variant::FloatOracle];

    pub fn is_cycle_level(self) -> bool {
        matches!(self, Variant::CerebraH | Variant::CerebraS)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::CerebraH => "cerebra-h",
            Variant::CerebraS => "cerebra-s",
            Variant::BehavioralOracle => "behavioral",
            Variant::FloatOracle => "float",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cerebra-h" | "cerebrah" | "h" => Ok(Variant::CerebraH),
            "cerebra-s" | "cerebras" | "s" => Ok(Variant::CerebraS),
            "behavioral" | "behavioraloracle" | "oracle" => Ok(Variant::BehavioralOracle),
            "float" | "floatoracle" => Ok(Variant::FloatOracle),
            _ => Err(format!("unknown variant {s:?} (expected cerebra-h, cerebra-s, behavioral or float)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("spike-train file {path}: {source}")]
    Trains { path: PathBuf, source: TrainFileError },
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("reports are not comparable: {0}")]
    Incompatible(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Report { path: PathBuf, reason: String },
}

/// Where input spikes come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StimulusSource {
    /// IDX image and label files, rate coded with the experiment seed.
    Idx { images: PathBuf, labels: PathBuf },
    /// Pre-encoded spike-train file; samples carry no labels.
    Trains(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentConfig {
    /// Network description (JSON) or compiled image directory.
    pub network: PathBuf,
    pub stimulus: StimulusSource,
    pub timesteps: u16,
    pub seed: u64,
    pub variant: Variant,
    pub fifo_capacity: usize,
    /// Only the first `limit` samples are run.
    pub limit: Option<usize>,
    /// Extra neurons whose spike trains go into the report, as (layer, index)
    /// with layer 1 the first non-input layer.
    pub watch: Vec<(usize, usize)>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.timesteps == 0 {
            return Err(HarnessError::Config("timesteps must be at least 1".into()));
        }
        if self.fifo_capacity == 0 {
            return Err(HarnessError::Config("FIFO capacity must be at least 1".into()));
        }
        let mut paths = vec![&self.network];
        match &self.stimulus {
            StimulusSource::Idx { images, labels } => paths.extend([images, labels]),
            StimulusSource::Trains(p) => paths.push(p),
        }
        for p in paths {
            if !p.exists() {
                return Err(HarnessError::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
                });
            }
        }
        Ok(())
    }
}

/// Network or image directory, compiled.
pub fn load_network(path: &Path) -> Result<FabricImage, HarnessError> {
    if path.is_dir() {
        Ok(FabricImage::read_dir(path)?)
    } else {
        Ok(FabricImage::compile(&NetworkDescription::load(path)?)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: u32,
    pub label: Option<u8>,
    pub trains: Vec<SpikeTrain>,
}

pub fn encode_dataset(data: &Dataset, steps: usize, seed: u64) -> Result<Vec<Sample>, HarnessError> {
    data.samples
        .par_iter()
        .zip(&data.labels)
        .enumerate()
        .map(|(i, (values, &label))| {
            let trains = encode_sample(values, steps, RngSeed(seed), i as u64)
                .map_err(|e| HarnessError::Config(format!("sample {i}: {e}")))?;
            Ok(Sample { id: i as u32, label: Some(label), trains })
        })
        .collect()
}

pub fn load_workload(cfg: &ExperimentConfig, inputs: usize) -> Result<Vec<Sample>, HarnessError> {
    let mut samples = match &cfg.stimulus {
        StimulusSource::Idx { images, labels } => {
            let mut data = Dataset::load(images, labels, inputs)?;
            if let Some(n) = cfg.limit {
                data.truncate(n);
            }
            encode_dataset(&data, cfg.timesteps as usize, cfg.seed)?
        }
        StimulusSource::Trains(path) => {
            let file = fs::File::open(path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
            let trains = TrainFile::read_from(std::io::BufReader::new(file))
                .map_err(|source| HarnessError::Trains { path: path.clone(), source })?;
            if trains.n_inputs as usize != inputs || trains.steps != cfg.timesteps {
                return Err(HarnessError::Config(format!(
                    "spike-train file has {} inputs x {} steps, experiment needs {inputs} x {}",
                    trains.n_inputs, trains.steps, cfg.timesteps
                )));
            }
            trains.samples.into_iter().map(|(id, trains)| Sample { id, label: None, trains }).collect()
        }
    };
    if let Some(n) = cfg.limit {
        samples.truncate(n);
    }
    Ok(samples)
}

/// A network prepared for repeated runs on one variant.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub image: FabricImage,
    pub variant: Variant,
    fabric: Option<Fabric>,
    baseline: Option<CerebraS>,
}

impl Prepared {
    pub fn new(image: FabricImage, variant: Variant, fifo_capacity: usize) -> Result<Self, HarnessError> {
        let (mut fabric, mut baseline) = (None, None);
        match variant {
            Variant::CerebraH => {
                let mut f = Fabric::new(FabricConfig {
                    spike_net: SpikeNetConfig::with_capacity(fifo_capacity),
                    ..Default::default()
                });
                f.load_model(&image.init)?;
                fabric = Some(f);
            }
            Variant::CerebraS => baseline = Some(CerebraS::from_image(&image.baseline)?),
            Variant::BehavioralOracle | Variant::FloatOracle => {}
        }
        Ok(Prepared { image, variant, fabric, baseline })
    }

    /// Full raster of every non-input neuron plus per-step counters.
    pub fn simulate(&self, trains: &[SpikeTrain]) -> Result<(Raster, Vec<TimestepReport>), HarnessError> {
        let stimulus = active_inputs(trains);
        let q = &self.image.quantized;
        let placement = &self.image.manifest.placement;
        match self.variant {
            Variant::CerebraH => {
                let mut fabric = self.fabric.clone().expect("prepared for this variant");
                fabric.clear_activity();
                let slots: Vec<_> =
                    placement.layers.iter().flatten().map(|&id| SpikePacket::unpack(id).expect("11-bit")).collect();
                let watch: Vec<_> = slots.iter().map(|p| (p.src_cluster, p.src_neuron)).collect();
                let mut raster = Vec::with_capacity(stimulus.len());
                let mut steps = Vec::with_capacity(stimulus.len());
                for active in &stimulus {
                    let packets: Vec<SpikePacket> = active.iter().map(|&i| placement.input_packet(i)).collect();
                    steps.push(fabric.run_timestep(&packets)?);
                    let flat = fabric.read_output_spikes(&watch)?;
                    raster.push(split_layers(&flat, &q.layers[1..]));
                }
                Ok((raster, steps))
            }
            Variant::CerebraS => {
                let mut s = self.baseline.clone().expect("prepared for this variant");
                s.clear_activity();
                let mut raster = Vec::with_capacity(stimulus.len());
                let mut steps = Vec::with_capacity(stimulus.len());
                for active in &stimulus {
                    steps.push(s.run_timestep(active)?);
                    raster
                        .push(placement.layers.iter().map(|ids| ids.iter().map(|&id| s.fired(id)).collect()).collect());
                }
                Ok((raster, steps))
            }
            Variant::BehavioralOracle => {
                let raster = behavioral_run(q, &stimulus);
                let steps = oracle_steps(&self.image, &stimulus, &raster);
                Ok((raster, steps))
            }
            Variant::FloatOracle => {
                let raster = float_run(&self.image.network, &stimulus);
                let steps = oracle_steps(&self.image, &stimulus, &raster);
                Ok((raster, steps))
            }
        }
    }
}

fn split_layers(flat: &[bool], sizes: &[usize]) -> Vec<Vec<bool>> {
    let mut at = 0;
    sizes
        .iter()
        .map(|&n| {
            let v = flat[at..at + n].to_vec();
            at += n;
            v
        })
        .collect()
}

/// Event counters for models without cycles: spikes entering the network,
/// neurons firing and nonzero weights integrated.
fn oracle_steps(image: &FabricImage, stimulus: &[Vec<usize>], raster: &Raster) -> Vec<TimestepReport> {
    let q = &image.quantized;
    let stages = q.layers.len() - 1;
    let mut out = Vec::with_capacity(stimulus.len());
    for (t, active) in stimulus.iter().enumerate() {
        let mut r = TimestepReport { index: t as u64, ..Default::default() };
        r.spikes_in = active.len() as u64;
        for &i in active {
            r.sops += q.weights[0].iter().filter(|row| !row[i].is_zero()).count() as u64;
        }
        if t > 0 {
            for l in 0..stages - 1 {
                for (i, _) in raster[t - 1][l].iter().enumerate().filter(|(_, f)| **f) {
                    r.spikes_in += 1;
                    r.sops += q.weights[l + 1].iter().filter(|row| !row[i].is_zero()).count() as u64;
                }
            }
        }
        r.spikes_out = raster[t].iter().flatten().filter(|f| **f).count() as u64;
        out.push(r);
    }
    out
}

fn bit_string(bits: impl Iterator<Item = bool>) -> String {
    bits.map(|b| if b { '1' } else { '0' }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    pub id: u32,
    #[serde(default)]
    pub label: Option<u8>,
    pub predicted: usize,
    pub counts: Vec<u32>,
    /// One string per output neuron, one character per timestep.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub watched: Vec<String>,
    /// Per timestep: cycles, spikes in, spikes out, SOPs.
    pub steps: Vec<[u64; 4]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub samples: usize,
    pub labelled: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub timesteps: u64,
    pub cycles: u64,
    pub spikes_in: u64,
    pub spikes_out: u64,
    pub sops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub variant: Variant,
    pub network_sha256: String,
    pub timesteps: u16,
    pub seed: u64,
    pub fifo_capacity: usize,
    pub samples: Vec<SampleReport>,
    pub totals: Totals,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
        let r = Self::from_json(&text)
            .map_err(|e| HarnessError::Report { path: path.to_path_buf(), reason: e.to_string() })?;
        if r.schema != REPORT_SCHEMA {
            return Err(HarnessError::Report {
                path: path.to_path_buf(),
                reason: format!("unknown schema {:?}", r.schema),
            });
        }
        Ok(r)
    }

    /// Checks that every aggregate equals the sum of its parts.
    pub fn is_consistent(&self) -> bool {
        let mut t = Totals { samples: self.samples.len(), ..Default::default() };
        for s in &self.samples {
            if let Some(l) = s.label {
                t.labelled += 1;
                t.correct += usize::from(l as usize == s.predicted);
            }
            t.timesteps += s.steps.len() as u64;
            for st in &s.steps {
                t.cycles += st[0];
                t.spikes_in += st[1];
                t.spikes_out += st[2];
                t.sops += st[3];
            }
        }
        t.accuracy = accuracy(t.correct, t.labelled);
        t == self.totals
    }
}

fn accuracy(correct: usize, labelled: usize) -> f64 {
    if labelled == 0 {
        0.0
    } else {
        correct as f64 / labelled as f64
    }
}

/// Runs already loaded samples. Samples run in parallel; the report is
/// ordered by sample index regardless.
pub fn run_samples(
    prepared: &Prepared,
    samples: &[Sample],
    timesteps: u16,
    seed: u64,
    fifo_capacity: usize,
    watch: &[(usize, usize)],
) -> Result<RunReport, HarnessError> {
    let layers = &prepared.image.quantized.layers;
    for &(l, i) in watch {
        if l == 0 || l >= layers.len() || i >= layers[l] {
            return Err(HarnessError::Config(format!("watch target {l}:{i} does not name a non-input neuron")));
        }
    }
    let reports = samples
        .par_iter()
        .enumerate()
        .map(|(index, sample)| {
            if sample.trains.len() != layers[0] {
                return Err(HarnessError::Config(format!(
                    "sample {} has {} input trains, network has {} inputs",
                    sample.id,
                    sample.trains.len(),
                    layers[0]
                )));
            }
            let (raster, steps) = prepared.simulate(&sample.trains)?;
            let counts = output_counts(&raster);
            let predicted = decode_spikes(&counts).expect("networks have at least one output");
            let last = layers.len() - 2;
            let outputs =
                (0..layers[layers.len() - 1]).map(|o| bit_string(raster.iter().map(|s| s[last][o]))).collect();
            let watched = watch.iter().map(|&(l, i)| bit_string(raster.iter().map(|s| s[l - 1][i]))).collect();
            Ok(SampleReport {
                index,
                id: sample.id,
                label: sample.label,
                predicted,
                counts,
                outputs,
                watched,
                steps: steps.iter().map(|r| [r.cycles_elapsed, r.spikes_in, r.spikes_out, r.sops]).collect(),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let mut report = RunReport {
        schema: REPORT_SCHEMA.to_string(),
        variant: prepared.variant,
        network_sha256: prepared.image.manifest.network_sha256.clone(),
        timesteps,
        seed,
        fifo_capacity,
        samples: reports,
        totals: Totals::default(),
    };
    let t = &mut report.totals;
    t.samples = report.samples.len();
    for s in &report.samples {
        if let Some(l) = s.label {
            t.labelled += 1;
            t.correct += usize::from(l as usize == s.predicted);
        }
        t.timesteps += s.steps.len() as u64;
        for st in &s.steps {
            t.cycles += st[0];
            t.spikes_in += st[1];
            t.spikes_out += st[2];
            t.sops += st[3];
        }
    }
    t.accuracy = accuracy(t.correct, t.labelled);
    Ok(report)
}

/// Loads everything named by the config and runs it.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let image = load_network(&cfg.network)?;
    let samples = load_workload(cfg, image.quantized.layers[0])?;
    let prepared = Prepared::new(image, cfg.variant, cfg.fifo_capacity)?;
    run_samples(&prepared, &samples, cfg.timesteps, cfg.seed, cfg.fifo_capacity, &cfg.watch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub sample: usize,
    pub output: usize,
    pub timestep: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variants: [Variant; 2],
    pub samples: usize,
    pub label_agreement: usize,
    pub accuracy: [f64; 2],
    /// First accuracy minus second.
    pub accuracy_delta: f64,
    pub divergent_samples: usize,
    pub first_divergence: Option<Divergence>,
    pub cycles: [u64; 2],
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b] = self.variants;
        writeln!(f, "{a} vs {b}: {} samples", self.samples)?;
        writeln!(f, "  predictions agree: {}/{}", self.label_agreement, self.samples)?;
        writeln!(
            f,
            "  accuracy: {:.2}% vs {:.2}% (delta {:+.2} points)",
            self.accuracy[0] * 100.0,
            self.accuracy[1] * 100.0,
            self.accuracy_delta * 100.0
        )?;
        writeln!(f, "  samples with divergent output spikes: {}", self.divergent_samples)?;
        match &self.first_divergence {
            Some(d) => {
                writeln!(f, "  first divergence: sample {} output {} timestep {}", d.sample, d.output, d.timestep)?
            }
            None => writeln!(f, "  output spike trains identical")?,
        }
        write!(f, "  total cycles: {} vs {}", self.cycles[0], self.cycles[1])
    }
}

pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison, HarnessError> {
    if a.network_sha256 != b.network_sha256 {
        return Err(HarnessError::Incompatible("reports were produced from different networks".into()));
    }
    if a.timesteps != b.timesteps {
        return Err(HarnessError::Incompatible(format!(
            "timestep windows differ ({} vs {})",
            a.timesteps, b.timesteps
        )));
    }
    if a.samples.len() != b.samples.len() || a.samples.iter().zip(&b.samples).any(|(x, y)| x.id != y.id) {
        return Err(HarnessError::Incompatible("reports cover different samples".into()));
    }
    let mut cmp = Comparison {
        variants: [a.variant, b.variant],
        samples: a.samples.len(),
        label_agreement: 0,
        accuracy: [a.totals.accuracy, b.totals.accuracy],
        accuracy_delta: a.totals.accuracy - b.totals.accuracy,
        divergent_samples: 0,
        first_divergence: None,
        cycles: [a.totals.cycles, b.totals.cycles],
    };
    for (x, y) in a.samples.iter().zip(&b.samples) {
        cmp.label_agreement += usize::from(x.predicted == y.predicted);
        let mut diverged = false;
        for (o, (tx, ty)) in x.outputs.iter().zip(&y.outputs).enumerate() {
            if let Some(t) = tx.bytes().zip(ty.bytes()).position(|(p, q)| p != q) {
                diverged = true;
                let d = Divergence { sample: x.index, output: o, timestep: t };
                let earlier = cmp
                    .first_divergence
                    .as_ref()
                    .is_none_or(|f| (d.sample, d.timestep, d.output) < (f.sample, f.timestep, f.output));
                if earlier {
                    cmp.first_divergence = Some(d);
                }
            }
        }
        cmp.divergent_samples += usize::from(diverged);
    }
    Ok(cmp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub variant: Variant,
    pub samples: usize,
    pub accuracy: f64,
    pub timesteps: u64,
    pub cycles: u64,
    pub cycles_per_timestep: f64,
    pub max_cycles_per_timestep: u64,
    pub sops: u64,
    pub sops_per_sample: f64,
    pub spikes_in: u64,
    pub spikes_out: u64,
    pub consistent: bool,
}

pub fn stats(report: &RunReport) -> Stats {
    let t = &report.totals;
    let per = |x: u64, n: u64| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    Stats {
        variant: report.variant,
        samples: t.samples,
        accuracy: t.accuracy,
        timesteps: t.timesteps,
        cycles: t.cycles,
        cycles_per_timestep: per(t.cycles, t.timesteps),
        max_cycles_per_timestep: report.samples.iter().flat_map(|s| s.steps.iter().map(|st| st[0])).max().unwrap_or(0),
        sops: t.sops,
        sops_per_sample: per(t.sops, t.samples as u64),
        spikes_in: t.spikes_in,
        spikes_out: t.spikes_out,
        consistent: report.is_consistent(),
    }
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant              {}", self.variant)?;
        writeln!(f, "samples              {}", self.samples)?;
        writeln!(f, "accuracy             {:.2}%", self.accuracy * 100.0)?;
        writeln!(f, "timesteps            {}", self.timesteps)?;
        writeln!(f, "cycles               {}", self.cycles)?;
        writeln!(f, "cycles/timestep      {:.2} (max {})", self.cycles_per_timestep, self.max_cycles_per_timestep)?;
        writeln!(f, "SOPs                 {} ({:.1} per sample)", self.sops, self.sops_per_sample)?;
        writeln!(f, "spikes in/out        {} / {}", self.spikes_in, self.spikes_out)?;
        write!(f, "counters consistent  {}", if self.consistent { "yes" } else { "NO" })
    }
}
