//! `pc2im` — command-line harness for the point-cloud CIM simulator.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pc2im_core::costmodel::{AccessCounters, EnergyParams, Report, Stage};
use pc2im_core::geometry::{ball_query, exact_fps, l2_sq, lattice_query, Metric, QueryConfig};
use pc2im_core::partition::{partition_tree, tiles_from_tree, utilization};
use pc2im_core::pipeline::{
    accel_fps_points, compare_baselines, fused_grouping, run_network_with, BaselineComparison,
    Execution, LayerConfig, NetworkConfig, PsaLayerConfig, RunOptions, SimResult,
};
use pc2im_core::pointcloud::{
    generate_cloud, load_cloud, write_cloud, CloudFormat, CloudKind, PointCloud, QuantPoint,
};
use pc2im_core::sccim::{verify_suite, VerifyOptions};
use pc2im_core::Error;
use serde::{Deserialize, Serialize};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pc2im",
    version,
    about = "Point-cloud compute-in-memory accelerator simulator"
)]
struct Cli {
    /// Network config JSON; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for synthetic clouds and random test vectors.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Output file; most commands default to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for per-tile simulation (1 runs sequentially).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic point cloud.
    Gen(GenArgs),
    /// Partition a cloud into capacity-bounded tiles with median splits.
    Partition(PartitionArgs),
    /// Run accelerator sampling and grouping only.
    Sample(SampleArgs),
    /// Simulate the full network and emit a JSON report.
    Simulate(SimulateArgs),
    /// Check the split-concatenate MAC against exact arithmetic.
    VerifyMac(VerifyArgs),
    /// Summarize a report written by `simulate`.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Uniform,
    Gaussian,
    Clustered,
}

impl From<Kind> for CloudKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Uniform => CloudKind::Uniform,
            Kind::Gaussian => CloudKind::Gaussian,
            Kind::Clustered => CloudKind::Clustered,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Xyz,
    Bin,
}

impl From<Format> for CloudFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Xyz => CloudFormat::XyzAscii,
            Format::Bin => CloudFormat::F32leBinary,
        }
    }
}

#[derive(Parser)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "uniform")]
    kind: Kind,

    /// Number of points.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,

    /// File format; inferred from the `--out` extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

/// A cloud file, or `KIND:N` (e.g. `uniform:16384`) to generate one with `--seed`.
#[derive(Parser)]
struct InputArg {
    input: String,

    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Parser)]
struct PartitionArgs {
    #[command(flatten)]
    input: InputArg,

    #[arg(long)]
    capacity: Option<usize>,
}

#[derive(Parser)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArg,

    #[arg(long)]
    capacity: Option<usize>,

    /// Centroids per tile.
    #[arg(long)]
    m: Option<usize>,

    /// Query radius in quantized units.
    #[arg(long)]
    radius: Option<u32>,

    /// Lattice range scale factor.
    #[arg(long)]
    scale: Option<f64>,

    /// Maximum neighbors per centroid.
    #[arg(long)]
    k: Option<usize>,

    /// Also run exact L2 sampling and report coverage and recall.
    #[arg(long)]
    compare_exact: bool,
}

#[derive(Parser)]
struct SimulateArgs {
    #[command(flatten)]
    input: InputArg,

    #[arg(long)]
    capacity: Option<usize>,

    /// Add the digital-baseline comparison.
    #[arg(long)]
    baselines: bool,

    /// Include output features in the report.
    #[arg(long)]
    features: bool,

    /// Energy parameter override, e.g. `--energy dram_pj_per_bit=5.0`.
    #[arg(long, value_name = "KEY=VALUE")]
    energy: Vec<String>,
}

#[derive(Parser)]
struct VerifyArgs {
    /// Random MAC vectors to check.
    #[arg(long, default_value_t = 100_000)]
    rand_n: usize,

    /// Corrupt results on purpose (negative control).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Parser)]
struct ReportArgs {
    /// JSON written by `simulate`.
    report: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize, Deserialize)]
struct SimulateOutput {
    #[serde(flatten)]
    simulation: SimResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baselines: Option<BaselineComparison>,
}

#[derive(Serialize)]
struct PartitionOutput {
    source: String,
    points: usize,
    capacity: usize,
    tile_sizes: Vec<usize>,
    utilization: f64,
    tree: pc2im_core::partition::PartitionTree,
}

#[derive(Serialize)]
struct SampleTile {
    tile: usize,
    points: usize,
    centroids: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quality: Option<Quality>,
}

#[derive(Serialize)]
struct Quality {
    coverage_radius_l1_fps: f64,
    coverage_radius_l2_fps: f64,
    coverage_ratio: f64,
    lattice_recall: f64,
}

#[derive(Serialize)]
struct SampleOutput {
    source: String,
    query: QueryConfig,
    cycles: u64,
    tiles: Vec<SampleTile>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Io(m) => (EXIT_IO, m),
                Failure::Verification(m) => (EXIT_VERIFY, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(&cli, a),
        Command::Partition(a) => cmd_partition(&cli, a),
        Command::Sample(a) => cmd_sample(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::VerifyMac(a) => cmd_verify_mac(&cli, a),
        Command::Report(a) => cmd_report(&cli, a),
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Failure::Io(e.to_string()))
        }
    }
}

/// Human-readable progress: stdout when the JSON goes to a file, stderr
/// otherwise so stdout stays parseable.
fn note(cli: &Cli, msg: &str) {
    if cli.out.is_some() {
        println!("{msg}");
    } else {
        eprintln!("{msg}");
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))
}

fn read_cloud(cli: &Cli, input: &InputArg) -> Result<PointCloud, Failure> {
    if let Some((kind, n)) = input.input.split_once(':') {
        let kind = Kind::from_str(kind, true)
            .map_err(|_| Failure::Usage(format!("unknown cloud kind in `{}`", input.input)))?;
        let n: usize = n
            .parse()
            .map_err(|_| Failure::Usage(format!("bad point count in `{}`", input.input)))?;
        return Ok(generate_cloud(kind.into(), n, cli.seed)?);
    }
    let path = Path::new(&input.input);
    let format = input
        .format
        .map_or_else(|| CloudFormat::from_path(path), Into::into);
    Ok(load_cloud(path, format)?)
}

fn network_config(cli: &Cli) -> Result<NetworkConfig, Failure> {
    match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Ok(NetworkConfig::from_json(&text)?)
        }
        None => Ok(NetworkConfig::default()),
    }
}

fn apply_energy_overrides(
    params: EnergyParams,
    overrides: &[String],
) -> Result<EnergyParams, Failure> {
    if overrides.is_empty() {
        return Ok(params);
    }
    let mut value = serde_json::to_value(params).map_err(|e| Failure::Usage(e.to_string()))?;
    for o in overrides {
        let (key, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("expected KEY=VALUE, got `{o}`")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| Failure::Usage(format!("`{v}` is not a number")))?;
        let slot = value
            .get_mut(key)
            .ok_or_else(|| Failure::Usage(format!("unknown energy parameter `{key}`")))?;
        *slot = serde_json::json!(v);
    }
    let params: EnergyParams =
        serde_json::from_value(value).map_err(|e| Failure::Usage(e.to_string()))?;
    params.validate()?;
    Ok(params)
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> CmdResult {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Failure::Usage("gen needs --out".into()))?;
    let cloud = generate_cloud(a.kind.into(), a.n as usize, cli.seed)?;
    let format = a
        .format
        .map_or_else(|| CloudFormat::from_path(out), Into::into);
    write_cloud(out, &cloud, format)?;
    println!("wrote {} points to {}", cloud.len(), out.display());
    Ok(())
}

fn cmd_partition(cli: &Cli, a: &PartitionArgs) -> CmdResult {
    let cloud = read_cloud(cli, &a.input)?;
    let capacity = a.capacity.unwrap_or(network_config(cli)?.capacity);
    let tree = partition_tree(&cloud, capacity)?;
    let tiles = tiles_from_tree(&tree, &cloud, capacity)?;
    let out = PartitionOutput {
        source: cloud.source.clone(),
        points: cloud.len(),
        capacity,
        tile_sizes: tiles.iter().map(|t| t.len()).collect(),
        utilization: utilization(&tiles, capacity),
        tree,
    };
    note(
        cli,
        &format!(
            "{} tiles, utilization {:.4}",
            out.tile_sizes.len(),
            out.utilization
        ),
    );
    emit(cli.out.as_deref(), &to_json(&out)?)
}

/// Largest distance from any point to its nearest centroid, in L2.
fn coverage_radius(points: &[QuantPoint], centroids: &[usize]) -> f64 {
    points
        .iter()
        .map(|&p| {
            centroids
                .iter()
                .map(|&c| l2_sq(p, points[c]))
                .min()
                .unwrap_or(0)
        })
        .max()
        .map_or(0.0, |d| (d as f64).sqrt())
}

fn lattice_recall(
    points: &[QuantPoint],
    centroids: &[usize],
    q: &QueryConfig,
) -> Result<f64, Failure> {
    let all = QueryConfig {
        max_neighbors_k: usize::MAX,
        ..*q
    };
    let (mut hit, mut total) = (0usize, 0usize);
    for &c in centroids {
        let ball = ball_query(points, c, q.radius_r, usize::MAX)?;
        let lattice = lattice_query(points, c, &all)?;
        total += ball.len();
        hit += ball.iter().filter(|i| lattice.contains(i)).count();
    }
    Ok(if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    })
}

fn first_psa(cfg: &NetworkConfig) -> PsaLayerConfig {
    cfg.layers
        .iter()
        .find_map(|l| match l {
            LayerConfig::Psa(p) => Some(p.clone()),
            LayerConfig::Pfp(_) => None,
        })
        .expect("validated config has a psa layer")
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> CmdResult {
    let cfg = network_config(cli)?;
    let psa = first_psa(&cfg);
    let capacity = a.capacity.unwrap_or(cfg.capacity);
    let m = a.m.unwrap_or(psa.samples_per_tile);
    let query = QueryConfig {
        radius_r: a.radius.unwrap_or(psa.radius_r),
        scale_factor: a.scale.unwrap_or(psa.scale_factor),
        max_neighbors_k: a.k.unwrap_or(psa.max_neighbors_k),
    };
    query.validate()?;
    let cloud = read_cloud(cli, &a.input)?;
    let tiles = pc2im_core::partition::msp_partition(&cloud, capacity)?;
    if let Some(t) = tiles.iter().find(|t| t.len() < m) {
        return Err(Failure::Usage(format!(
            "--m {m} exceeds a tile of {} points",
            t.len()
        )));
    }
    let mut cycles = 0;
    let mut out_tiles = Vec::with_capacity(tiles.len());
    for (ti, tile) in tiles.iter().enumerate() {
        let mut counters = AccessCounters::default();
        let run = accel_fps_points(&tile.points, m, cfg.fps_seed_index, &mut counters)?;
        let neighbors = run
            .centroids
            .iter()
            .zip(&run.batches)
            .map(|(&c, b)| fused_grouping(c, b, &query, &mut counters.preprocess))
            .collect::<Result<Vec<_>, _>>()?;
        cycles += counters.total().cycles;
        let quality = if a.compare_exact {
            let l2 = exact_fps(&tile.points, m, cfg.fps_seed_index, Metric::L2)?;
            let r1 = coverage_radius(&tile.points, &run.centroids);
            let r2 = coverage_radius(&tile.points, &l2);
            Some(Quality {
                coverage_radius_l1_fps: r1,
                coverage_radius_l2_fps: r2,
                coverage_ratio: if r2 == 0.0 { 1.0 } else { r1 / r2 },
                lattice_recall: lattice_recall(&tile.points, &run.centroids, &query)?,
            })
        } else {
            None
        };
        if let Some(q) = &quality {
            note(
                cli,
                &format!(
                    "tile {ti}: coverage ratio {:.4}, lattice recall {:.4}",
                    q.coverage_ratio, q.lattice_recall
                ),
            );
        }
        let global = |i: usize| tile.global_indices[i];
        out_tiles.push(SampleTile {
            tile: ti,
            points: tile.len(),
            centroids: run.centroids.iter().map(|&c| global(c)).collect(),
            neighbors: neighbors
                .iter()
                .map(|g| g.iter().map(|&i| global(i)).collect())
                .collect(),
            quality,
        });
    }
    let out = SampleOutput {
        source: cloud.source.clone(),
        query,
        cycles,
        tiles: out_tiles,
    };
    note(
        cli,
        &format!("{} tiles sampled, {} cycles", out.tiles.len(), out.cycles),
    );
    emit(cli.out.as_deref(), &to_json(&out)?)
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> CmdResult {
    let mut cfg = network_config(cli)?;
    if let Some(c) = a.capacity {
        cfg.capacity = c;
    }
    cfg.energy = apply_energy_overrides(cfg.energy, &a.energy)?;
    cfg.validate()?;
    let cloud = read_cloud(cli, &a.input)?;
    let opts = RunOptions {
        execution: if cli.threads == Some(1) {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        include_features: a.features,
        ..RunOptions::default()
    };
    let simulation = run_network_with(&cloud, &cfg, &opts)?;
    let baselines = if a.baselines {
        Some(compare_baselines(&cloud, &cfg)?.1)
    } else {
        None
    };
    let out = SimulateOutput {
        simulation,
        baselines,
    };
    if cli.out.is_some() {
        print_summary(&out.simulation.report, out.simulation.tiles.len());
        if let Some(b) = &out.baselines {
            print_baselines(b);
        }
    }
    emit(cli.out.as_deref(), &to_json(&out)?)
}

fn print_summary(r: &Report, tiles: usize) {
    println!("tiles: {tiles}");
    println!("{:<11} {:>14} {:>16}", "stage", "cycles", "energy (pJ)");
    for (name, s) in [
        ("load", Stage::Load),
        ("preprocess", Stage::Preprocess),
        ("feature", Stage::Feature),
    ] {
        let st = r.stage(s);
        println!(
            "{:<11} {:>14} {:>16.1}",
            name, st.cycles, st.energy_pj.total
        );
    }
    println!(
        "total cycles {} ({:.6} s), energy {:.1} pJ",
        r.total_cycles, r.latency_s, r.energy_pj
    );
}

fn print_baselines(b: &BaselineComparison) {
    println!(
        "vs local digital: preprocess energy x{:.4}, speedup {:.3}, efficiency {:.3}",
        b.preprocess_energy_ratio_vs_local, b.speedup_vs_local, b.energy_efficiency_vs_local
    );
    println!(
        "vs global digital: preprocess energy x{:.4}, speedup {:.3}, efficiency {:.3}, dram reduction {:.5}",
        b.preprocess_energy_ratio_vs_global, b.speedup_vs_global, b.energy_efficiency_vs_global, b.simulated_dram_reduction
    );
    println!(
        "feature cycles split-concat / bit-serial = {}",
        b.feature_cycle_ratio
    );
}

fn cmd_verify_mac(cli: &Cli, a: &VerifyArgs) -> CmdResult {
    let r = verify_suite(&VerifyOptions {
        rand_n: a.rand_n,
        seed: cli.seed,
        inject_fault: a.inject_fault,
    });
    println!(
        "{}/{} fused-add identities",
        r.fused_add_ok, r.fused_add_total
    );
    println!(
        "{}/{} input split round trips",
        r.input_split_ok, r.input_split_total
    );
    println!(
        "{}/{} weight split round trips",
        r.weight_split_ok, r.weight_split_total
    );
    println!("{}/{} MACs exact", r.mac_ok, r.mac_total);
    if let Some(p) = &cli.out {
        emit(Some(p), &to_json(&r)?)?;
    }
    if r.passed() {
        Ok(())
    } else {
        Err(Failure::Verification("mismatches found".into()))
    }
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> CmdResult {
    let text = fs::read_to_string(&a.report).map_err(|e| io_err(&a.report, e))?;
    let out: SimulateOutput = serde_json::from_str(&text)
        .map_err(|e| Failure::Io(format!("{}: {e}", a.report.display())))?;
    let r = out.simulation.report.recomputed();
    print_summary(&r, out.simulation.tiles.len());
    if let Some(b) = &out.baselines {
        print_baselines(b);
    }
    if let Some(p) = &cli.out {
        let mut csv =
            String::from("stage,cycles,dram_pj,sram_pj,cim_pj,cam_pj,mac_pj,total_pj,latency_s\n");
        for (name, s) in [
            ("load", Stage::Load),
            ("preprocess", Stage::Preprocess),
            ("feature", Stage::Feature),
        ] {
            let st = r.stage(s);
            let e = st.energy_pj;
            csv.push_str(&format!(
                "{name},{},{},{},{},{},{},{},{}\n",
                st.cycles, e.dram, e.sram, e.cim, e.cam, e.mac, e.total, st.latency_s
            ));
        }
        fs::write(p, csv).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}
