use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cerebra_core::codec::{TrainFile, TrainFileError};
use cerebra_core::compiler::{CompileError, FabricImage, NetworkDescription};
use cerebra_core::dataset::{Dataset, DatasetError};
use cerebra_core::harness::{
    self, compare, encode_dataset, ExperimentConfig, HarnessError, RunReport, StimulusSource, Variant,
};
use clap::{Args, Parser, Subcommand};

const IMAGES_FILE: &str = "test-images-idx3-ubyte";
const LABELS_FILE: &str = "test-labels-idx1-ubyte";

/// Exit statuses.
mod status {
    pub const USAGE: u8 = 2;
    pub const SCHEMA: u8 = 3;
    pub const CAPACITY: u8 = 4;
    pub const QUANTIZE: u8 = 5;
    pub const IO: u8 = 6;
    pub const FABRIC: u8 = 7;
    pub const INCOMPATIBLE: u8 = 8;
}

#[derive(Parser)]
#[command(name = "cerebra", version, about = "Compile and run spiking networks on simulated neuromorphic fabrics")]
#[command(after_help = "Exit status: 0 ok, 2 usage, 3 malformed input, 4 capacity exceeded, \
5 quantization overflow, 6 I/O, 7 fabric or mode error, 8 incompatible reports")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a network description into an image directory.
    Compile {
        network: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run a workload and emit a JSON report.
    Run(RunArgs),
    /// Compare two run reports.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Print the comparison as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Summarize a run report.
    Stats {
        report: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Rate-code a dataset into a spike-train file.
    Encode {
        #[command(flatten)]
        data: DataArgs,
        /// Network whose input count selects the image size.
        #[arg(long)]
        network: PathBuf,
        #[arg(short = 't', long, default_value_t = 50)]
        timesteps: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the IDX test images and labels.
    #[arg(long, env = "CEREBRA_FIXTURES")]
    data: Option<PathBuf>,
    /// IDX image file (overrides --data).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (overrides --data).
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl DataArgs {
    fn idx(&self) -> Result<(PathBuf, PathBuf), HarnessError> {
        let from_dir = |name: &str| self.data.as_ref().map(|d| d.join(name));
        match (
            self.images.clone().or_else(|| from_dir(IMAGES_FILE)),
            self.labels.clone().or_else(|| from_dir(LABELS_FILE)),
        ) {
            (Some(i), Some(l)) => Ok((i, l)),
            _ => {
                Err(HarnessError::Config("no dataset given: use --data, --images/--labels or CEREBRA_FIXTURES".into()))
            }
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Network description (JSON) or compiled image directory.
    #[arg(long)]
    network: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Pre-encoded spike-train file instead of a dataset.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    trains: Option<PathBuf>,
    #[arg(short = 't', long, default_value_t = 50)]
    timesteps: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// cerebra-h, cerebra-s, behavioral or float.
    #[arg(long, default_value = "cerebra-h")]
    variant: Variant,
    #[arg(long, default_value_t = 16)]
    fifo_capacity: usize,
    #[arg(long)]
    limit: Option<usize>,
    /// Extra neuron to record, as LAYER:INDEX (layer 1 is the first non-input layer).
    #[arg(long, value_parser = parse_watch)]
    watch: Vec<(usize, usize)>,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn parse_watch(s: &str) -> Result<(usize, usize), String> {
    let (l, i) = s.split_once(':').ok_or_else(|| format!("expected LAYER:INDEX, got {s:?}"))?;
    Ok((l.parse().map_err(|_| format!("bad layer {l:?}"))?, i.parse().map_err(|_| format!("bad index {i:?}"))?))
}

fn exit_status(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Compile(c) => match c {
            CompileError::Schema(_) | CompileError::Image { .. } => status::SCHEMA,
            CompileError::CapacityExceeded(_) => status::CAPACITY,
            CompileError::Quantize { .. } => status::QUANTIZE,
            CompileError::Io { .. } => status::IO,
        },
        HarnessError::Dataset(DatasetError::Io { .. }) | HarnessError::Io { .. } => status::IO,
        HarnessError::Dataset(_) | HarnessError::Report { .. } => status::SCHEMA,
        HarnessError::Trains { source: TrainFileError::Io(_), .. } => status::IO,
        HarnessError::Trains { .. } => status::SCHEMA,
        HarnessError::Fabric(_) | HarnessError::Baseline(_) => status::FABRIC,
        HarnessError::Config(_) => status::USAGE,
        HarnessError::Incompatible(_) => status::INCOMPATIBLE,
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| HarnessError::Io { path: p.to_path_buf(), source: e }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| HarnessError::Io { path: "<stdout>".into(), source: e }),
    }
}

fn compile(network: &Path, out: &Path) -> Result<(), HarnessError> {
    let image = FabricImage::compile(&NetworkDescription::load(network)?)?;
    image.write_dir(out)?;
    let m = &image.manifest;
    let rows: usize = m.rows_per_group.iter().sum();
    println!("compiled {} -> {}", network.display(), out.display());
    println!("  layers          {:?}", m.layers);
    println!("  clusters used   {}", m.clusters_used);
    println!("  groups used     {}", m.groups_used);
    println!("  weight rows     {rows} {:?}", m.rows_per_group);
    println!("  sha256          {}", m.network_sha256);
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), HarnessError> {
    let stimulus = match &args.trains {
        Some(t) => StimulusSource::Trains(t.clone()),
        None => {
            let (images, labels) = args.data.idx()?;
            StimulusSource::Idx { images, labels }
        }
    };
    let cfg = ExperimentConfig {
        network: args.network.clone(),
        stimulus,
        timesteps: args.timesteps,
        seed: args.seed,
        variant: args.variant,
        fifo_capacity: args.fifo_capacity,
        limit: args.limit,
        watch: args.watch.clone(),
    };
    let report = harness::run(&cfg)?;
    write_out(args.out.as_deref(), &report.to_json())?;
    if args.out.is_some() {
        let t = &report.totals;
        eprintln!("{}: {}/{} correct, {} cycles, {} SOPs", report.variant, t.correct, t.labelled, t.cycles, t.sops);
    }
    Ok(())
}

fn encode(
    data: &DataArgs,
    network: &Path,
    timesteps: u16,
    seed: u64,
    limit: Option<usize>,
    out: &Path,
) -> Result<(), HarnessError> {
    if timesteps == 0 {
        return Err(HarnessError::Config("timesteps must be at least 1".into()));
    }
    let inputs = harness::load_network(network)?.quantized.layers[0];
    let (images, labels) = data.idx()?;
    let mut ds = Dataset::load(&images, &labels, inputs)?;
    if let Some(n) = limit {
        ds.truncate(n);
    }
    let samples = encode_dataset(&ds, timesteps as usize, seed)?;
    let file = TrainFile {
        steps: timesteps,
        n_inputs: inputs as u16,
        samples: samples.into_iter().map(|s| (s.id, s.trains)).collect(),
    };
    let mut bytes = Vec::new();
    file.write_to(&mut bytes).expect("writing to memory");
    fs::write(out, bytes).map_err(|e| HarnessError::Io { path: out.to_path_buf(), source: e })?;
    eprintln!("encoded {} samples x {inputs} inputs x {timesteps} steps", file.samples.len());
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Compile { network, out } => compile(&network, &out),
        Cmd::Run(args) => run(&args),
        Cmd::Compare { a, b, json } => {
            let c = compare(&RunReport::load(&a)?, &RunReport::load(&b)?)?;
            if json {
                println!("{}", serde_json_pretty(&c));
            } else {
                println!("{c}");
            }
            Ok(())
        }
        Cmd::Stats { report, json } => {
            let s = harness::stats(&RunReport::load(&report)?);
            if json {
                println!("{}", serde_json_pretty(&s));
            } else {
                println!("{s}");
            }
            Ok(())
        }
        Cmd::Encode { data, network, timesteps, seed, limit, out } => {
            encode(&data, &network, timesteps, seed, limit, &out)
        }
    }
}

fn serde_json_pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}
