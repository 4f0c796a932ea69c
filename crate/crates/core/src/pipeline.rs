//! End-to-end layer simulation.
//!
//! A point set abstraction (PSA) layer samples centroids with the
//! APD-CIM/MAX-CAM loop, groups neighbors from the same streamed distances,
//! runs the MLP once per distinct grouped point (delayed aggregation) and
//! max-pools per neighborhood. A point feature propagation (PFP) layer
//! interpolates coarse features onto finer points and runs the MLP. A
//! network runs MSP on the host, then every tile through the PSA stack and
//! the PFP stack, with array-level ping-pong across consecutive tiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apdcim::{ApdCimArray, ApdCimGeometry, DistanceBatch};
use crate::costmodel::{
    baseline_global_fps_traffic, AccessCounters, BaselineModel, Counters, EnergyParams,
    GlobalFpsTraffic, Report, Stage,
};
use crate::error::{Error, Result};
use crate::geometry::{interpolate_weights, Distance19, QueryConfig};
use crate::maxcam::{
    sequential_schedule, CamArray, CamMode, PingPongCam, BIT_SEARCH_CYCLES, DATA_SEARCH_CYCLES,
};
use crate::partition::msp_partition;
use crate::pointcloud::{PointCloud, QuantPoint, Tile, POINT_BITS};
use crate::sccim::{mac_dot, MacEngine, ROWS};

/// Bits of one feature element.
const FEATURE_BITS: u64 = 16;
/// Bits of one buffered neighbor index.
const INDEX_BITS: u64 = 16;
/// Synthetic weights are drawn from `-WEIGHT_RANGE..WEIGHT_RANGE`.
const WEIGHT_RANGE: i16 = 64;
/// Columns computed in parallel by the weight slices.
const PARALLEL_COLUMNS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaLayerConfig {
    pub samples_per_tile: usize,
    pub radius_r: u32,
    #[serde(default = "default_scale")]
    pub scale_factor: f64,
    pub max_neighbors_k: usize,
    pub mlp_dims: Vec<usize>,
    #[serde(default)]
    pub weight_seed: u64,
}

fn default_scale() -> f64 {
    1.6
}

fn default_k() -> usize {
    3
}

impl PsaLayerConfig {
    pub fn query(&self) -> QueryConfig {
        QueryConfig {
            radius_r: self.radius_r,
            scale_factor: self.scale_factor,
            max_neighbors_k: self.max_neighbors_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfpLayerConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    pub mlp_dims: Vec<usize>,
    #[serde(default)]
    pub weight_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerConfig {
    Psa(PsaLayerConfig),
    Pfp(PfpLayerConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default)]
    pub fps_seed_index: usize,
    pub layers: Vec<LayerConfig>,
    #[serde(default)]
    pub energy: EnergyParams,
}

fn default_capacity() -> usize {
    2048
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            capacity: 2048,
            fps_seed_index: 0,
            layers: vec![
                LayerConfig::Psa(PsaLayerConfig {
                    samples_per_tile: 256,
                    radius_r: 6554,
                    scale_factor: 1.6,
                    max_neighbors_k: 32,
                    mlp_dims: vec![32, 64],
                    weight_seed: 1,
                }),
                LayerConfig::Psa(PsaLayerConfig {
                    samples_per_tile: 64,
                    radius_r: 13107,
                    scale_factor: 1.6,
                    max_neighbors_k: 32,
                    mlp_dims: vec![64, 128],
                    weight_seed: 2,
                }),
                LayerConfig::Pfp(PfpLayerConfig {
                    k: 3,
                    mlp_dims: vec![64],
                    weight_seed: 3,
                }),
                LayerConfig::Pfp(PfpLayerConfig {
                    k: 3,
                    mlp_dims: vec![32],
                    weight_seed: 4,
                }),
            ],
            energy: EnergyParams::default(),
        }
    }
}

impl NetworkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: NetworkConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn psa_layers(&self) -> impl Iterator<Item = &PsaLayerConfig> {
        self.layers.iter().filter_map(|l| match l {
            LayerConfig::Psa(p) => Some(p),
            LayerConfig::Pfp(_) => None,
        })
    }

    pub fn pfp_layers(&self) -> impl Iterator<Item = &PfpLayerConfig> {
        self.layers.iter().filter_map(|l| match l {
            LayerConfig::Pfp(p) => Some(p),
            LayerConfig::Psa(_) => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.energy.validate()?;
        if self.capacity == 0 || self.capacity > ApdCimGeometry::default().capacity() {
            return Err(Error::Config(format!(
                "capacity {} outside 1..={}",
                self.capacity,
                ApdCimGeometry::default().capacity()
            )));
        }
        let mut seen_pfp = false;
        for layer in &self.layers {
            match layer {
                LayerConfig::Psa(p) => {
                    if seen_pfp {
                        return Err(Error::Config("psa layer after pfp layer".into()));
                    }
                    if p.samples_per_tile == 0 || p.samples_per_tile > self.capacity {
                        return Err(Error::Config(format!(
                            "samples_per_tile {} outside 1..={}",
                            p.samples_per_tile, self.capacity
                        )));
                    }
                    p.query().validate()?;
                    validate_dims(&p.mlp_dims)?;
                }
                LayerConfig::Pfp(p) => {
                    seen_pfp = true;
                    if p.k == 0 {
                        return Err(Error::Config("pfp k must be at least 1".into()));
                    }
                    validate_dims(&p.mlp_dims)?;
                }
            }
        }
        let psa = self.psa_layers().count();
        if psa == 0 {
            return Err(Error::Config("network needs at least one psa layer".into()));
        }
        if self.pfp_layers().count() > psa {
            return Err(Error::Config("more pfp layers than psa layers".into()));
        }
        Ok(())
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config(format!("invalid mlp dims {dims:?}")));
    }
    Ok(())
}

/// Row-major signed 16-bit features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTensor {
    pub dim: usize,
    pub data: Vec<i16>,
}

impl FeatureTensor {
    pub fn new(dim: usize, data: Vec<i16>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[i16] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_mut(&mut self, i: usize) -> &mut [i16] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Quantized coordinates recentred into the signed range.
    pub fn from_points(points: &[QuantPoint]) -> Self {
        let data = points
            .iter()
            .flat_map(|p| p.coords().map(|c| (i32::from(c) - 32768) as i16))
            .collect();
        Self { dim: 3, data }
    }
}

/// One fully connected layer with a saturating arithmetic-shift output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim` rows of `in_dim` weights.
    pub weights: Vec<i16>,
    pub shift: u32,
}

impl MlpLayer {
    fn column(&self, o: usize) -> &[i16] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    /// Cycles for one input vector: `ceil(in/16)` tiles per column, columns
    /// spread over the weight slices.
    pub fn cycles(&self, engine: MacEngine) -> u64 {
        engine.cycles_per_tile()
            * self.in_dim.div_ceil(ROWS) as u64
            * self.out_dim.div_ceil(PARALLEL_COLUMNS) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

fn ceil_log2(n: usize) -> u32 {
    usize::BITS - (n.max(1) - 1).leading_zeros()
}

impl Mlp {
    /// Uniform weights in `-64..64` from `seed`; each layer shifts by
    /// `6 + ceil(log2(in)/2)` so activations stay near the input scale.
    pub fn seeded(in_dim: usize, dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len());
        let mut d_in = in_dim;
        for &d_out in dims {
            let weights = (0..d_in * d_out)
                .map(|_| rng.random_range(-WEIGHT_RANGE..WEIGHT_RANGE))
                .collect();
            layers.push(MlpLayer {
                in_dim: d_in,
                out_dim: d_out,
                weights,
                shift: 6 + ceil_log2(d_in).div_ceil(2),
            });
            d_in = d_out;
        }
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Runs one feature vector through every layer on the CIM MAC model.
    pub fn apply(&self, x: &[i16], engine: MacEngine, counters: &mut Counters) -> Vec<i16> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            debug_assert_eq!(cur.len(), layer.in_dim);
            let next: Vec<i16> = (0..layer.out_dim)
                .map(|o| {
                    let acc = mac_dot(&cur, layer.column(o), engine).sum;
                    (acc >> layer.shift).clamp(i64::from(i16::MIN), i64::from(i16::MAX)) as i16
                })
                .collect();
            counters.mac_ops_16b += 2 * (layer.in_dim * layer.out_dim) as u64;
            counters.sram_bits_read += layer.in_dim as u64 * FEATURE_BITS;
            counters.sram_bits_written += layer.out_dim as u64 * FEATURE_BITS;
            counters.cycles += layer.cycles(engine);
            cur = next;
        }
        cur
    }
}

/// Centroids picked on the accelerator and the distance batch streamed for
/// each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct FpsRun {
    pub centroids: Vec<usize>,
    pub batches: Vec<DistanceBatch>,
    pub cycles: u64,
}

/// Per-sample FPS cycles on `n` points: reference read, distance stream,
/// CAM pipeline fill, bit search and data search.
pub fn fps_sample_cycles(geometry: &ApdCimGeometry, n: usize) -> u64 {
    1 + geometry.distance_cycles(n)
        + crate::maxcam::STREAM_FILL_CYCLES
        + BIT_SEARCH_CYCLES
        + DATA_SEARCH_CYCLES
}

/// FPS through the APD-CIM and MAX-CAM loop. Both arrays must hold the same
/// tile; the CAM is switched to search mode.
pub fn accel_fps(
    array: &mut ApdCimArray,
    cam: &mut CamArray,
    m: usize,
    seed_index: usize,
    counters: &mut Counters,
) -> Result<FpsRun> {
    let n = array.loaded_count();
    if cam.len() != n {
        return Err(Error::MisalignedBatch {
            batch: n,
            pairs: cam.len(),
        });
    }
    if m == 0 {
        return Ok(FpsRun {
            centroids: vec![],
            batches: vec![],
            cycles: 0,
        });
    }
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "sample count {m} outside 1..={n}"
        )));
    }
    if seed_index >= n {
        return Err(Error::IndexOutOfRange {
            index: seed_index,
            len: n,
        });
    }
    cam.set_mode(CamMode::Search);
    let start = counters.cycles;
    let mut centroids = Vec::with_capacity(m);
    let mut batches = Vec::with_capacity(m);
    let mut current = seed_index;
    for _ in 0..m {
        centroids.push(current);
        array.set_reference(current, counters)?;
        let batch = array.compute_all(counters)?;
        cam.stream_update(&batch, counters)?;
        cam.set_search_enabled(current, false)?;
        if cam.enabled_count() > 0 {
            current = cam.find_centroid(counters)?.centroid_index;
        } else {
            // Exhausted: the search still occupies its fixed slot.
            let slot = BIT_SEARCH_CYCLES + DATA_SEARCH_CYCLES;
            counters.cam_search_cycles += slot;
            counters.cycles += slot;
        }
        batches.push(batch);
    }
    Ok(FpsRun {
        centroids,
        batches,
        cycles: counters.cycles - start,
    })
}

/// Loads `points` into fresh arrays (charged to `load`) and runs
/// [`accel_fps`] (charged to `preprocess`).
pub fn accel_fps_points(
    points: &[QuantPoint],
    m: usize,
    seed_index: usize,
    counters: &mut AccessCounters,
) -> Result<FpsRun> {
    let mut array =
        ApdCimArray::load_points(ApdCimGeometry::default(), points, &mut counters.load)?;
    let mut cam = CamArray::init_array(points.len(), &mut counters.load)?;
    accel_fps(
        &mut array,
        &mut cam,
        m,
        seed_index,
        &mut counters.preprocess,
    )
}

/// Nearest-K within the lattice range, read from the distances already
/// streamed for `centroid`. Sorting and buffering add no cycles.
pub fn fused_grouping(
    centroid: usize,
    batch: &DistanceBatch,
    cfg: &QueryConfig,
    counters: &mut Counters,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if batch.reference != Some(centroid) {
        return Err(Error::StaleBatch {
            batch: batch.reference.unwrap_or(usize::MAX),
            centroid,
        });
    }
    let range = cfg.lattice_range();
    let mut hits: Vec<(Distance19, usize)> = batch
        .distances
        .iter()
        .enumerate()
        .filter(|(_, d)| d.get() <= range)
        .map(|(i, &d)| (d, i))
        .collect();
    hits.sort_unstable();
    hits.truncate(cfg.max_neighbors_k);
    counters.sram_bits_written += hits.len() as u64 * INDEX_BITS;
    Ok(hits.into_iter().map(|(_, i)| i).collect())
}

/// Points of one tile at one level of the PSA hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct TileLevel {
    pub points: Vec<QuantPoint>,
    pub global_indices: Vec<usize>,
    pub features: FeatureTensor,
}

impl TileLevel {
    pub fn from_tile(tile: &Tile) -> Self {
        Self {
            points: tile.points.clone(),
            global_indices: tile.global_indices.clone(),
            features: FeatureTensor::from_points(&tile.points),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsaTileOutput {
    /// Local indices into the input level.
    pub centroids: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
    /// Distinct points pushed through the MLP.
    pub feature_computations: usize,
    pub next: TileLevel,
}

/// One PSA layer on one tile.
pub fn run_psa_tile(
    level: &TileLevel,
    cfg: &PsaLayerConfig,
    mlp: &Mlp,
    seed_index: usize,
    engine: MacEngine,
    counters: &mut AccessCounters,
) -> Result<PsaTileOutput> {
    if level.features.dim != mlp.in_dim() || level.features.rows() != level.points.len() {
        return Err(Error::Config(format!(
            "feature tensor {}x{} does not match {} points / mlp input {}",
            level.features.rows(),
            level.features.dim,
            level.points.len(),
            mlp.in_dim()
        )));
    }
    let query = cfg.query();
    let m = cfg.samples_per_tile.min(level.points.len());
    let fps = accel_fps_points(
        &level.points,
        m,
        seed_index.min(level.points.len().saturating_sub(1)),
        counters,
    )?;
    let neighbors = fps
        .centroids
        .iter()
        .zip(&fps.batches)
        .map(|(&c, b)| fused_grouping(c, b, &query, &mut counters.preprocess))
        .collect::<Result<Vec<_>>>()?;

    let mut computed: Vec<Option<Vec<i16>>> = vec![None; level.points.len()];
    let mut feature_computations = 0;
    for &p in neighbors.iter().flatten() {
        if computed[p].is_none() {
            computed[p] = Some(mlp.apply(level.features.row(p), engine, &mut counters.feature));
            feature_computations += 1;
        }
    }
    let out_dim = mlp.out_dim();
    let mut pooled = FeatureTensor::zeros(fps.centroids.len(), out_dim);
    for (ci, group) in neighbors.iter().enumerate() {
        let row = pooled.row_mut(ci);
        row.fill(i16::MIN);
        for &p in group {
            let f = computed[p].as_ref().expect("computed above");
            for (acc, &v) in row.iter_mut().zip(f) {
                *acc = (*acc).max(v);
            }
        }
    }
    counters.feature.sram_bits_written += pooled.data.len() as u64 * FEATURE_BITS;
    let next = TileLevel {
        points: fps.centroids.iter().map(|&c| level.points[c]).collect(),
        global_indices: fps
            .centroids
            .iter()
            .map(|&c| level.global_indices[c])
            .collect(),
        features: pooled,
    };
    Ok(PsaTileOutput {
        centroids: fps.centroids,
        neighbors,
        feature_computations,
        next,
    })
}

/// One PSA layer over every tile, sequentially.
pub fn run_psa_layer(
    tiles: &[TileLevel],
    cfg: &PsaLayerConfig,
    seed_index: usize,
    params: EnergyParams,
) -> Result<(Vec<PsaTileOutput>, Report)> {
    let in_dim = tiles.first().map_or(3, |t| t.features.dim);
    let mlp = Mlp::seeded(in_dim, &cfg.mlp_dims, cfg.weight_seed);
    let mut counters = AccessCounters::default();
    let outs = tiles
        .iter()
        .map(|t| {
            run_psa_tile(
                t,
                cfg,
                &mlp,
                seed_index,
                MacEngine::SplitConcat,
                &mut counters,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((outs, Report::sequential(params, counters)))
}

/// Feature propagation: each target takes the inverse-distance weighted
/// mean of its `k` nearest sources (L1, on the distance array), rounded
/// half up and saturated, then goes through the MLP.
pub fn run_pfp_layer(
    source_points: &[QuantPoint],
    source_features: &FeatureTensor,
    target_points: &[QuantPoint],
    cfg: &PfpLayerConfig,
    mlp: &Mlp,
    engine: MacEngine,
    counters: &mut AccessCounters,
) -> Result<FeatureTensor> {
    let ns = source_points.len();
    if cfg.k == 0 || cfg.k > ns {
        return Err(Error::InvalidArgument(format!(
            "k = {} outside 1..={ns}",
            cfg.k
        )));
    }
    if source_features.rows() != ns || source_features.dim != mlp.in_dim() {
        return Err(Error::Config(
            "source features do not match sources / mlp input".into(),
        ));
    }
    let mut array =
        ApdCimArray::load_points(ApdCimGeometry::default(), source_points, &mut counters.load)?;
    let dim = source_features.dim;
    let mut out = FeatureTensor::zeros(target_points.len(), mlp.out_dim());
    let mut acc = vec![0.0f64; dim];
    for (t, &target) in target_points.iter().enumerate() {
        array.set_reference_point(target, &mut counters.preprocess);
        let batch = array.compute_all(&mut counters.preprocess)?;
        let mut order: Vec<(Distance19, usize)> =
            batch.distances.iter().copied().zip(0..).collect();
        order.select_nth_unstable(cfg.k - 1);
        order.truncate(cfg.k);
        order.sort_unstable();
        let ds: Vec<Distance19> = order.iter().map(|&(d, _)| d).collect();
        let weights = interpolate_weights(&ds);
        acc.fill(0.0);
        for (&(_, s), w) in order.iter().zip(&weights) {
            for (a, &f) in acc.iter_mut().zip(source_features.row(s)) {
                *a += w * f64::from(f);
            }
        }
        counters.preprocess.sram_bits_read += (cfg.k * dim) as u64 * FEATURE_BITS;
        let interpolated: Vec<i16> = acc.iter().map(|&v| round_saturate(v)).collect();
        let y = mlp.apply(&interpolated, engine, &mut counters.feature);
        out.row_mut(t).copy_from_slice(&y);
    }
    Ok(out)
}

/// Round half up, then saturate to the signed 16-bit range.
pub fn round_saturate(v: f64) -> i16 {
    (v + 0.5)
        .floor()
        .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Execution {
    #[default]
    Sequential,
    /// One rayon task per tile.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub execution: Execution,
    pub engine: MacEngine,
    pub include_features: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            execution: Execution::Sequential,
            engine: MacEngine::SplitConcat,
            include_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaLevelResult {
    /// Global indices of the centroids, in sampling order.
    pub centroids: Vec<usize>,
    /// Global indices of each centroid's neighbors, nearest first.
    pub neighbors: Vec<Vec<usize>>,
    pub feature_computations: usize,
    /// Tile points entering this layer.
    pub input_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileResult {
    pub global_indices: Vec<usize>,
    pub psa: Vec<PsaLevelResult>,
    pub counters: AccessCounters,
    /// Cycles of the first DRAM-to-array load, which overlaps the previous tile.
    pub load_cycles: u64,
    /// Preprocess-stage share of the up-sampling layers.
    pub pfp_preprocess: Counters,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_features: Option<FeatureTensor>,
}

impl TileResult {
    pub fn report(&self, params: EnergyParams) -> Report {
        Report::sequential(params, self.counters)
    }

    fn process_cycles(&self) -> u64 {
        self.counters.total().cycles - self.load_cycles
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub pipelined_cycles: u64,
    pub sequential_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub source: String,
    pub points: usize,
    pub tiles: Vec<TileResult>,
    pub schedule: ScheduleSummary,
    pub report: Report,
}

impl SimResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn run_tile(
    tile: &Tile,
    cfg: &NetworkConfig,
    mlps: &NetworkMlps,
    opts: &RunOptions,
) -> Result<TileResult> {
    let mut counters = AccessCounters::default();
    counters.load.dram_bits_read += tile.len() as u64 * POINT_BITS;
    let mut levels = vec![TileLevel::from_tile(tile)];
    let mut psa = Vec::new();
    let mut first_load = None;
    for (layer, mlp) in cfg.psa_layers().zip(&mlps.psa) {
        let before = counters.load.cycles;
        let cur = levels.last().expect("level 0 exists");
        let out = run_psa_tile(
            cur,
            layer,
            mlp,
            cfg.fps_seed_index,
            opts.engine,
            &mut counters,
        )?;
        first_load.get_or_insert(counters.load.cycles - before);
        psa.push(PsaLevelResult {
            centroids: out
                .centroids
                .iter()
                .map(|&c| cur.global_indices[c])
                .collect(),
            neighbors: out
                .neighbors
                .iter()
                .map(|g| g.iter().map(|&i| cur.global_indices[i]).collect())
                .collect(),
            feature_computations: out.feature_computations,
            input_points: cur.points.len(),
        });
        levels.push(out.next);
    }
    let mut features = levels.last().expect("psa output").features.clone();
    let mut level = levels.len() - 1;
    let pre_before = counters.preprocess;
    for (layer, mlp) in cfg.pfp_layers().zip(&mlps.pfp) {
        let source = &levels[level];
        let target = &levels[level - 1];
        features = run_pfp_layer(
            &source.points,
            &features,
            &target.points,
            layer,
            mlp,
            opts.engine,
            &mut counters,
        )?;
        level -= 1;
    }
    Ok(TileResult {
        global_indices: tile.global_indices.clone(),
        psa,
        counters,
        load_cycles: first_load.unwrap_or(0),
        pfp_preprocess: counters.preprocess - pre_before,
        output_features: opts.include_features.then_some(features),
    })
}

struct NetworkMlps {
    psa: Vec<Mlp>,
    pfp: Vec<Mlp>,
}

impl NetworkMlps {
    fn build(cfg: &NetworkConfig) -> Self {
        let mut dims = vec![3];
        let psa: Vec<Mlp> = cfg
            .psa_layers()
            .map(|l| {
                let mlp = Mlp::seeded(*dims.last().unwrap(), &l.mlp_dims, l.weight_seed);
                dims.push(mlp.out_dim());
                mlp
            })
            .collect();
        let mut d = *dims.last().unwrap();
        let pfp = cfg
            .pfp_layers()
            .map(|l| {
                let mlp = Mlp::seeded(d, &l.mlp_dims, l.weight_seed);
                d = mlp.out_dim();
                mlp
            })
            .collect();
        Self { psa, pfp }
    }
}

pub fn run_network(cloud: &PointCloud, cfg: &NetworkConfig) -> Result<SimResult> {
    run_network_with(cloud, cfg, &RunOptions::default())
}

pub fn run_network_with(
    cloud: &PointCloud,
    cfg: &NetworkConfig,
    opts: &RunOptions,
) -> Result<SimResult> {
    cfg.validate()?;
    let tiles = msp_partition(cloud, cfg.capacity)?;
    let mlps = NetworkMlps::build(cfg);
    let results: Vec<TileResult> = match opts.execution {
        Execution::Sequential => tiles
            .iter()
            .map(|t| run_tile(t, cfg, &mlps, opts))
            .collect::<Result<_>>()?,
        Execution::Parallel => tiles
            .par_iter()
            .map(|t| run_tile(t, cfg, &mlps, opts))
            .collect::<Result<_>>()?,
    };
    let mut counters = AccessCounters::default();
    for t in &results {
        counters += t.counters;
    }
    let loads: Vec<u64> = results.iter().map(|t| t.load_cycles).collect();
    let procs: Vec<u64> = results.iter().map(TileResult::process_cycles).collect();
    let schedule = ScheduleSummary {
        pipelined_cycles: PingPongCam::default().schedule(&loads, &procs)?,
        sequential_cycles: sequential_schedule(&loads, &procs),
    };
    Ok(SimResult {
        source: cloud.source.clone(),
        points: cloud.len(),
        tiles: results,
        schedule,
        report: Report::new(cfg.energy, counters, schedule.pipelined_cycles),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub counters: AccessCounters,
    pub preprocess_energy_pj: f64,
    pub preprocess_on_chip_energy_pj: f64,
    pub total_energy_pj: f64,
    pub total_cycles: u64,
    pub latency_s: f64,
}

impl ModeSummary {
    fn new(counters: AccessCounters, total_cycles: u64, params: EnergyParams) -> Self {
        let r = Report::new(params, counters, total_cycles);
        let pre = r.stage(Stage::Preprocess).energy_pj;
        Self {
            counters,
            preprocess_energy_pj: pre.total,
            preprocess_on_chip_energy_pj: pre.on_chip(),
            total_energy_pj: r.energy_pj,
            total_cycles,
            latency_s: r.latency_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub pc2im: ModeSummary,
    pub local_digital: ModeSummary,
    pub global_digital: ModeSummary,
    /// Traffic model for the first-layer samples over the whole cloud.
    pub global_traffic_model: GlobalFpsTraffic,
    /// `1 - simulated preprocessing DRAM reads / global baseline DRAM reads`.
    pub simulated_dram_reduction: f64,
    pub preprocess_energy_ratio_vs_local: f64,
    pub preprocess_energy_ratio_vs_global: f64,
    pub speedup_vs_local: f64,
    pub speedup_vs_global: f64,
    pub energy_efficiency_vs_local: f64,
    pub energy_efficiency_vs_global: f64,
    pub feature_cycles_split_concat: u64,
    pub feature_cycles_bit_serial: u64,
    pub feature_cycle_ratio: f64,
}

/// Runs the accelerator flow with both MAC engines and prices the digital
/// local-FPS and global-FPS baselines under the same parameters.
pub fn compare_baselines(
    cloud: &PointCloud,
    cfg: &NetworkConfig,
) -> Result<(SimResult, BaselineComparison)> {
    let sim = run_network(cloud, cfg)?;
    let bs = run_network_with(
        cloud,
        cfg,
        &RunOptions {
            engine: MacEngine::BitSerial,
            ..RunOptions::default()
        },
    )?;
    let params = cfg.energy;
    let model = BaselineModel::default();

    // Baselines share the accelerator's feature work, computed bit-serially.
    let mut local = AccessCounters::default();
    let mut global = AccessCounters::default();
    let mut first_layer_samples = 0u64;
    for (t, tb) in sim.tiles.iter().zip(&bs.tiles) {
        local.feature += tb.counters.feature;
        global.feature += tb.counters.feature;
        let n0 = t.global_indices.len() as u64;
        local.load.dram_bits_read += n0 * POINT_BITS;
        local.load.sram_bits_written += n0 * POINT_BITS;
        for (li, level) in t.psa.iter().enumerate() {
            let m = level.centroids.len() as u64;
            let n = level.input_points as u64;
            local.preprocess += model.local_fps_counters(n, m);
            if li == 0 {
                first_layer_samples += m;
            } else {
                global.preprocess += model.local_fps_counters(n, m);
            }
        }
        // Up-sampling distance work is the same streaming pass in every mode.
        local.preprocess += t.pfp_preprocess;
        global.preprocess += t.pfp_preprocess;
    }
    let n_total = cloud.len() as u64;
    global.preprocess += model.global_fps_counters(n_total, first_layer_samples);

    let traffic =
        baseline_global_fps_traffic(n_total, first_layer_samples.min(n_total), POINT_BITS)?;
    let simulated = sim.report.counters.preprocessing_dram_read_bits();
    let global_dram = global.preprocessing_dram_read_bits();
    let pc2im = ModeSummary::new(sim.report.counters, sim.report.total_cycles, params);
    let local_s = ModeSummary::new(local, local.total().cycles, params);
    let global_s = ModeSummary::new(global, global.total().cycles, params);
    let fc_sc = sim.report.counters.feature.cycles;
    let fc_bs = bs.report.counters.feature.cycles;
    let cmp = BaselineComparison {
        global_traffic_model: traffic,
        simulated_dram_reduction: if global_dram == 0 {
            0.0
        } else {
            1.0 - simulated as f64 / global_dram as f64
        },
        preprocess_energy_ratio_vs_local: pc2im.preprocess_energy_pj / local_s.preprocess_energy_pj,
        preprocess_energy_ratio_vs_global: pc2im.preprocess_energy_pj
            / global_s.preprocess_energy_pj,
        speedup_vs_local: local_s.total_cycles as f64 / pc2im.total_cycles as f64,
        speedup_vs_global: global_s.total_cycles as f64 / pc2im.total_cycles as f64,
        energy_efficiency_vs_local: local_s.total_energy_pj / pc2im.total_energy_pj,
        energy_efficiency_vs_global: global_s.total_energy_pj / pc2im.total_energy_pj,
        feature_cycles_split_concat: fc_sc,
        feature_cycles_bit_serial: fc_bs,
        feature_cycle_ratio: fc_sc as f64 / fc_bs as f64,
        pc2im,
        local_digital: local_s,
        global_digital: global_s,
    };
    Ok((sim, cmp))
}
