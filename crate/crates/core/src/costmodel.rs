//! Energy, latency and memory-traffic accounting.
//!
//! Every hardware model charges its work to a [`Counters`] bucket. A run
//! keeps one bucket per [`Stage`] in [`AccessCounters`]; a [`Report`] pairs
//! a counter snapshot with the [`EnergyParams`] used to price it, so energy
//! is always recomputable from the snapshot.

use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::POINT_BITS;

/// Width of one temporary distance entry in the digital baselines.
pub const TD_BITS: u64 = 19;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    pub sram_pj_per_bit: f64,
    pub dram_pj_per_bit: f64,
    /// Aggregate-derived: reciprocal of 2.53 TOPS/W.
    pub mac_pj_per_16b_op: f64,
    /// Placeholder; no published per-cycle CAM figure.
    pub cam_pj_per_pair_cycle: f64,
    /// Placeholder; no published per-result CIM distance figure.
    pub cim_dist_pj_per_result: f64,
    pub clock_hz: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            sram_pj_per_bit: 0.7,
            dram_pj_per_bit: 4.5,
            mac_pj_per_16b_op: 1.0 / 2.53,
            cam_pj_per_pair_cycle: 0.01,
            cim_dist_pj_per_result: 1.0 / 2.53,
            clock_hz: 2.5e8,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sram_pj_per_bit", self.sram_pj_per_bit),
            ("dram_pj_per_bit", self.dram_pj_per_bit),
            ("mac_pj_per_16b_op", self.mac_pj_per_16b_op),
            ("cam_pj_per_pair_cycle", self.cam_pj_per_pair_cycle),
            ("cim_dist_pj_per_result", self.cim_dist_pj_per_result),
            ("clock_hz", self.clock_hz),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Bit-level traffic and operation counts for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub dram_bits_read: u64,
    pub dram_bits_written: u64,
    pub sram_bits_read: u64,
    pub sram_bits_written: u64,
    pub cim_distance_results: u64,
    /// One per temporary-distance pair written or initialized.
    pub cam_pair_update_cycles: u64,
    pub cam_search_cycles: u64,
    /// Search cycles weighted by the number of pairs participating.
    pub cam_search_pair_cycles: u64,
    /// 16-bit operations; one multiply-accumulate counts as two.
    pub mac_ops_16b: u64,
    /// Busy cycles of the stage, before any cross-tile overlap.
    pub cycles: u64,
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.dram_bits_read += o.dram_bits_read;
        self.dram_bits_written += o.dram_bits_written;
        self.sram_bits_read += o.sram_bits_read;
        self.sram_bits_written += o.sram_bits_written;
        self.cim_distance_results += o.cim_distance_results;
        self.cam_pair_update_cycles += o.cam_pair_update_cycles;
        self.cam_search_cycles += o.cam_search_cycles;
        self.cam_search_pair_cycles += o.cam_search_pair_cycles;
        self.mac_ops_16b += o.mac_ops_16b;
        self.cycles += o.cycles;
    }
}

impl Add for Counters {
    type Output = Counters;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl Sub for Counters {
    type Output = Counters;

    /// Field-wise difference against an earlier snapshot of the same counters.
    fn sub(self, o: Self) -> Self {
        Counters {
            dram_bits_read: self.dram_bits_read - o.dram_bits_read,
            dram_bits_written: self.dram_bits_written - o.dram_bits_written,
            sram_bits_read: self.sram_bits_read - o.sram_bits_read,
            sram_bits_written: self.sram_bits_written - o.sram_bits_written,
            cim_distance_results: self.cim_distance_results - o.cim_distance_results,
            cam_pair_update_cycles: self.cam_pair_update_cycles - o.cam_pair_update_cycles,
            cam_search_cycles: self.cam_search_cycles - o.cam_search_cycles,
            cam_search_pair_cycles: self.cam_search_pair_cycles - o.cam_search_pair_cycles,
            mac_ops_16b: self.mac_ops_16b - o.mac_ops_16b,
            cycles: self.cycles - o.cycles,
        }
    }
}

impl Counters {
    /// True when every field of `self` is at least the matching field of `earlier`.
    pub fn dominates(&self, earlier: &Counters) -> bool {
        let a = self.fields();
        let b = earlier.fields();
        a.iter().zip(b.iter()).all(|(x, y)| x >= y)
    }

    fn fields(&self) -> [u64; 10] {
        [
            self.dram_bits_read,
            self.dram_bits_written,
            self.sram_bits_read,
            self.sram_bits_written,
            self.cim_distance_results,
            self.cam_pair_update_cycles,
            self.cam_search_cycles,
            self.cam_search_pair_cycles,
            self.mac_ops_16b,
            self.cycles,
        ]
    }

    pub fn on_chip_bits(&self) -> u64 {
        self.sram_bits_read + self.sram_bits_written
    }

    pub fn dram_bits(&self) -> u64 {
        self.dram_bits_read + self.dram_bits_written
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Preprocess,
    Feature,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Load, Stage::Preprocess, Stage::Feature];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessCounters {
    pub load: Counters,
    pub preprocess: Counters,
    pub feature: Counters,
}

impl AccessCounters {
    pub fn stage(&self, stage: Stage) -> &Counters {
        match stage {
            Stage::Load => &self.load,
            Stage::Preprocess => &self.preprocess,
            Stage::Feature => &self.feature,
        }
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut Counters {
        match stage {
            Stage::Load => &mut self.load,
            Stage::Preprocess => &mut self.preprocess,
            Stage::Feature => &mut self.feature,
        }
    }

    pub fn total(&self) -> Counters {
        self.load + self.preprocess + self.feature
    }

    /// DRAM bits read while structuring the cloud: tile loading plus
    /// sampling/grouping.
    pub fn preprocessing_dram_read_bits(&self) -> u64 {
        self.load.dram_bits_read + self.preprocess.dram_bits_read
    }
}

impl AddAssign for AccessCounters {
    fn add_assign(&mut self, o: Self) {
        self.load += o.load;
        self.preprocess += o.preprocess;
        self.feature += o.feature;
    }
}

impl Add for AccessCounters {
    type Output = AccessCounters;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

/// Energy split by cost source, in picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dram: f64,
    pub sram: f64,
    pub cim: f64,
    pub cam: f64,
    pub mac: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    /// Everything except off-chip traffic.
    pub fn on_chip(&self) -> f64 {
        self.total - self.dram
    }
}

pub fn energy(c: &Counters, p: &EnergyParams) -> EnergyBreakdown {
    let dram = c.dram_bits() as f64 * p.dram_pj_per_bit;
    let sram = c.on_chip_bits() as f64 * p.sram_pj_per_bit;
    let cim = c.cim_distance_results as f64 * p.cim_dist_pj_per_result;
    let cam =
        (c.cam_pair_update_cycles + c.cam_search_pair_cycles) as f64 * p.cam_pj_per_pair_cycle;
    let mac = c.mac_ops_16b as f64 * p.mac_pj_per_16b_op;
    EnergyBreakdown {
        dram,
        sram,
        cim,
        cam,
        mac,
        total: dram + sram + cim + cam + mac,
    }
}

/// Seconds for `cycles` at `clock_hz`.
pub fn latency(cycles: u64, clock_hz: f64) -> f64 {
    cycles as f64 / clock_hz
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub cycles: u64,
    pub energy_pj: EnergyBreakdown,
    pub latency_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageReports {
    pub load: StageReport,
    pub preprocess: StageReport,
    pub feature: StageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: EnergyParams,
    pub counters: AccessCounters,
    /// End-to-end cycles after scheduling; may be below the sum of stage
    /// cycles when tiles overlap.
    pub total_cycles: u64,
    pub energy_pj: f64,
    pub latency_s: f64,
    pub stages: StageReports,
}

impl Report {
    pub fn new(config: EnergyParams, counters: AccessCounters, total_cycles: u64) -> Self {
        let stage = |c: &Counters| StageReport {
            cycles: c.cycles,
            energy_pj: energy(c, &config),
            latency_s: latency(c.cycles, config.clock_hz),
        };
        let stages = StageReports {
            load: stage(&counters.load),
            preprocess: stage(&counters.preprocess),
            feature: stage(&counters.feature),
        };
        Self {
            config,
            counters,
            total_cycles,
            energy_pj: energy(&counters.total(), &config).total,
            latency_s: latency(total_cycles, config.clock_hz),
            stages,
        }
    }

    /// Report whose end-to-end cycles are the plain sum of stage cycles.
    pub fn sequential(config: EnergyParams, counters: AccessCounters) -> Self {
        let cycles = counters.total().cycles;
        Self::new(config, counters, cycles)
    }

    pub fn zero(config: EnergyParams) -> Self {
        Self::new(config, AccessCounters::default(), 0)
    }

    pub fn stage(&self, stage: Stage) -> &StageReport {
        match stage {
            Stage::Load => &self.stages.load,
            Stage::Preprocess => &self.stages.preprocess,
            Stage::Feature => &self.stages.feature,
        }
    }

    /// Rebuilds every derived field from the counter snapshot.
    pub fn recomputed(&self) -> Report {
        Report::new(self.config, self.counters, self.total_cycles)
    }
}

/// Counter-wise sum of reports priced under identical parameters; end-to-end
/// cycles add as if the reports ran back to back.
pub fn merge_reports(reports: &[Report]) -> Result<Report> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to merge".into()))?;
    let mut counters = AccessCounters::default();
    let mut cycles = 0;
    for r in reports {
        if r.config != first.config {
            return Err(Error::MismatchedParams);
        }
        counters += r.counters;
        cycles += r.total_cycles;
    }
    Ok(Report::new(first.config, counters, cycles))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalFpsTraffic {
    pub dram_bits_baseline: u64,
    pub dram_bits_tiled: u64,
    pub reduction: f64,
}

/// Global FPS re-reads all `n` points from DRAM for each of `m` samples;
/// the tiled flow reads every point once.
pub fn baseline_global_fps_traffic(
    n: u64,
    m: u64,
    bits_per_point: u64,
) -> Result<GlobalFpsTraffic> {
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "{m} samples from {n} points"
        )));
    }
    let baseline = m * n * bits_per_point;
    let tiled = n * bits_per_point;
    let reduction = if m == 0 { 0.0 } else { 1.0 - 1.0 / m as f64 };
    Ok(GlobalFpsTraffic {
        dram_bits_baseline: baseline,
        dram_bits_tiled: tiled,
        reduction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFpsBreakdown {
    pub point_access_bits: u64,
    pub td_update_bits: u64,
    pub point_share: f64,
    pub td_share: f64,
}

/// On-chip traffic of digital local FPS: per sample every point is read
/// (48 bits) and every temporary distance is read and written back.
pub fn baseline_local_fps_breakdown(n: u64, m: u64, td_bits: u64) -> Result<LocalFpsBreakdown> {
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "{m} samples from {n} points"
        )));
    }
    let point = m * n * POINT_BITS;
    let td = m * n * 2 * td_bits;
    let total = point + td;
    let (ps, ts) = if total == 0 {
        (0.0, 0.0)
    } else {
        (point as f64 / total as f64, td as f64 / total as f64)
    };
    Ok(LocalFpsBreakdown {
        point_access_bits: point,
        td_update_bits: td,
        point_share: ps,
        td_share: ts,
    })
}

/// Throughput assumptions of the digital baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    /// Points read and compared per cycle by the digital distance units.
    pub points_per_cycle: u64,
    pub dram_bits_per_cycle: u64,
}

impl Default for BaselineModel {
    fn default() -> Self {
        Self {
            points_per_cycle: 16,
            dram_bits_per_cycle: 128,
        }
    }
}

impl BaselineModel {
    /// Preprocess counters of digital local FPS on one `n`-point tile.
    /// Per sample: one streaming pass reads points and computes distances,
    /// the temporary-distance list is read and rewritten, plus a reference
    /// read and a final max reduction cycle.
    pub fn local_fps_counters(&self, n: u64, m: u64) -> Counters {
        let b = baseline_local_fps_breakdown(n, m, TD_BITS).expect("m <= n");
        Counters {
            sram_bits_read: b.point_access_bits + m * n * TD_BITS + m * POINT_BITS,
            sram_bits_written: m * n * TD_BITS,
            cim_distance_results: m * n,
            cycles: m * (n.div_ceil(self.points_per_cycle) + 2),
            ..Counters::default()
        }
    }

    /// Preprocess counters of global FPS over an `n`-point cloud: each of
    /// the `m` samples streams the whole cloud from DRAM.
    pub fn global_fps_counters(&self, n: u64, m: u64) -> Counters {
        let dram = m * n * POINT_BITS;
        let per_sample = (n * POINT_BITS)
            .div_ceil(self.dram_bits_per_cycle)
            .max(n.div_ceil(self.points_per_cycle));
        Counters {
            dram_bits_read: dram,
            sram_bits_read: m * n * TD_BITS,
            sram_bits_written: m * n * TD_BITS,
            cim_distance_results: m * n,
            cycles: m * (per_sample + 2),
            ..Counters::default()
        }
    }
}
