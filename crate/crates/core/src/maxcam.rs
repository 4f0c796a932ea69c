//! Behavioral and cycle model of the two-level Ping-Pong-MAX CAM.
//!
//! Each temporary-distance pair keeps two 19-bit slots whose minimum is the
//! live running-min distance. Updates overwrite the larger slot (cell-level
//! ping-pong); the maximum is found by a 19-cycle MSB-first bit search and
//! its address by a single data-CAM cycle. Two arrays alternate between
//! search and load mode across tiles (array-level ping-pong).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::apdcim::DistanceBatch;
use crate::costmodel::Counters;
use crate::error::{Error, Result};
use crate::geometry::Distance19;

pub const GROUPS: usize = 16;
pub const PAIRS_PER_GROUP: usize = 128;
pub const CAPACITY: usize = GROUPS * PAIRS_PER_GROUP;
pub const BIT_SEARCH_CYCLES: u64 = Distance19::BITS as u64;
pub const DATA_SEARCH_CYCLES: u64 = 1;
/// Pipeline fill between the distance stream and the CAM updates.
pub const STREAM_FILL_CYCLES: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdPair {
    pub upper: Distance19,
    pub lower: Distance19,
    pub point_index: usize,
    pub search_enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Larger {
    Upper,
    Lower,
}

impl TdPair {
    pub fn new(point_index: usize) -> Self {
        Self {
            upper: Distance19::MAX,
            lower: Distance19::MAX,
            point_index,
            search_enabled: true,
        }
    }

    #[inline]
    pub fn effective(&self) -> Distance19 {
        self.upper.min(self.lower)
    }
}

/// Which slot holds the larger value; ties resolve to the upper slot.
#[inline]
pub fn in_situ_compare(pair: &TdPair) -> Larger {
    if pair.upper >= pair.lower {
        Larger::Upper
    } else {
        Larger::Lower
    }
}

/// Overwrites the larger slot with `d`, which keeps the pair's minimum equal
/// to the running minimum of everything written so far.
#[inline]
pub fn update_pair(mut pair: TdPair, d: Distance19) -> TdPair {
    match in_situ_compare(&pair) {
        Larger::Upper => pair.upper = d,
        Larger::Lower => pair.lower = d,
    }
    pair
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CamMode {
    Search,
    Load,
}

impl CamMode {
    fn name(self) -> &'static str {
        match self {
            CamMode::Search => "search",
            CamMode::Load => "load",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSearch {
    pub max_value: Distance19,
    pub cycles: u64,
    /// Surviving pairs after each bit cycle, MSB first.
    pub survivors: Vec<usize>,
}

impl BitSearch {
    /// CSV: `bit,survivors`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bit,survivors")?;
        for (k, s) in self.survivors.iter().enumerate() {
            writeln!(w, "{},{}", Distance19::BITS as usize - 1 - k, s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub max_value: Distance19,
    pub centroid_index: usize,
    pub cycles: u64,
}

/// Sixteen groups of 128 pairs, addressed group-major. Pair `a` tracks
/// tile-local point `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CamArray {
    pairs: Vec<TdPair>,
    mode: CamMode,
}

impl CamArray {
    /// Fills `n` pairs with the all-ones value; charged as load-mode writes.
    pub fn init_array(n: usize, counters: &mut Counters) -> Result<Self> {
        if n > CAPACITY {
            return Err(Error::Capacity {
                requested: n,
                capacity: CAPACITY,
            });
        }
        counters.cam_pair_update_cycles += n as u64;
        Ok(Self {
            pairs: (0..n).map(TdPair::new).collect(),
            mode: CamMode::Load,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn mode(&self) -> CamMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: CamMode) {
        self.mode = mode;
    }

    pub fn pairs(&self) -> &[TdPair] {
        &self.pairs
    }

    pub fn groups(&self) -> impl Iterator<Item = &[TdPair]> {
        self.pairs.chunks(PAIRS_PER_GROUP)
    }

    pub fn pair(&self, address: usize) -> Option<&TdPair> {
        self.pairs.get(address)
    }

    /// Direct slot write for tests and fault injection; load mode only.
    pub fn write_pair(
        &mut self,
        address: usize,
        upper: Distance19,
        lower: Distance19,
    ) -> Result<()> {
        self.require(CamMode::Load)?;
        let len = self.pairs.len();
        let p = self.pairs.get_mut(address).ok_or(Error::IndexOutOfRange {
            index: address,
            len,
        })?;
        p.upper = upper;
        p.lower = lower;
        Ok(())
    }

    pub fn set_search_enabled(&mut self, address: usize, enabled: bool) -> Result<()> {
        let len = self.pairs.len();
        self.pairs
            .get_mut(address)
            .ok_or(Error::IndexOutOfRange {
                index: address,
                len,
            })?
            .search_enabled = enabled;
        Ok(())
    }

    pub fn enabled_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.search_enabled).count()
    }

    fn require(&self, mode: CamMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::WrongMode {
                required: mode.name(),
                actual: self.mode.name(),
            })
        }
    }

    /// Applies one streamed distance per pair. Updates overlap the distance
    /// stream, so the only added latency is the pipeline fill.
    pub fn stream_update(&mut self, batch: &DistanceBatch, counters: &mut Counters) -> Result<u64> {
        self.require(CamMode::Search)?;
        if batch.distances.is_empty() {
            return Ok(0);
        }
        if batch.distances.len() != self.pairs.len() {
            return Err(Error::MisalignedBatch {
                batch: batch.distances.len(),
                pairs: self.pairs.len(),
            });
        }
        for (pair, &d) in self.pairs.iter_mut().zip(&batch.distances) {
            *pair = update_pair(*pair, d);
        }
        counters.cam_pair_update_cycles += batch.distances.len() as u64;
        counters.cycles += STREAM_FILL_CYCLES;
        Ok(STREAM_FILL_CYCLES)
    }

    /// MSB-to-LSB bit search over the effective values of enabled pairs.
    /// At each bit, if any survivor has a one there, survivors with a zero
    /// are excluded for the remaining cycles.
    pub fn bit_cam_max(&self, counters: &mut Counters) -> Result<BitSearch> {
        self.require(CamMode::Search)?;
        let mut alive: Vec<bool> = self.pairs.iter().map(|p| p.search_enabled).collect();
        let enabled = alive.iter().filter(|&&a| a).count();
        if enabled == 0 {
            return Err(Error::NoEnabledPairs);
        }
        let mut value = 0u32;
        let mut survivors = Vec::with_capacity(Distance19::BITS as usize);
        for bit in (0..Distance19::BITS).rev() {
            let any_one = self
                .pairs
                .iter()
                .zip(&alive)
                .any(|(p, &a)| a && p.effective().bit(bit));
            if any_one {
                value |= 1 << bit;
                for (p, a) in self.pairs.iter().zip(alive.iter_mut()) {
                    if *a && !p.effective().bit(bit) {
                        *a = false;
                    }
                }
            }
            survivors.push(alive.iter().filter(|&&a| a).count());
        }
        counters.cam_search_cycles += BIT_SEARCH_CYCLES;
        counters.cam_search_pair_cycles += BIT_SEARCH_CYCLES * enabled as u64;
        counters.cycles += BIT_SEARCH_CYCLES;
        Ok(BitSearch {
            max_value: Distance19::from_raw(value),
            cycles: BIT_SEARCH_CYCLES,
            survivors,
        })
    }

    /// Bit-parallel match of `value`; the lowest matching address wins.
    pub fn data_cam_index(&self, value: Distance19, counters: &mut Counters) -> Result<usize> {
        self.require(CamMode::Search)?;
        let enabled = self.enabled_count() as u64;
        counters.cam_search_cycles += DATA_SEARCH_CYCLES;
        counters.cam_search_pair_cycles += DATA_SEARCH_CYCLES * enabled;
        counters.cycles += DATA_SEARCH_CYCLES;
        self.pairs
            .iter()
            .find(|p| p.search_enabled && p.effective() == value)
            .map(|p| p.point_index)
            .ok_or(Error::NoMatch(value.get()))
    }

    pub fn find_centroid(&self, counters: &mut Counters) -> Result<SearchResult> {
        let bits = self.bit_cam_max(counters)?;
        let centroid_index = self.data_cam_index(bits.max_value, counters)?;
        Ok(SearchResult {
            max_value: bits.max_value,
            centroid_index,
            cycles: bits.cycles + DATA_SEARCH_CYCLES,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Work {
    pub target: Side,
    pub cycles: u64,
}

/// Two CAM arrays time-multiplexed between search and load roles.
#[derive(Debug, Clone)]
pub struct PingPongCam {
    pub array_a: CamArray,
    pub array_b: CamArray,
    active: Option<Side>,
}

impl Default for PingPongCam {
    fn default() -> Self {
        Self::new(CamArray::empty(), CamArray::empty())
    }
}

impl CamArray {
    fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            mode: CamMode::Load,
        }
    }
}

impl PingPongCam {
    pub fn new(array_a: CamArray, array_b: CamArray) -> Self {
        Self {
            array_a,
            array_b,
            active: None,
        }
    }

    /// The array currently in search mode, if any.
    pub fn active(&self) -> Option<Side> {
        self.active
    }

    pub fn array(&self, side: Side) -> &CamArray {
        match side {
            Side::A => &self.array_a,
            Side::B => &self.array_b,
        }
    }

    pub fn array_mut(&mut self, side: Side) -> &mut CamArray {
        match side {
            Side::A => &mut self.array_a,
            Side::B => &mut self.array_b,
        }
    }

    /// Runs a search-side and a load-side work item in the same simulated
    /// cycles; the step takes as long as the slower of the two.
    pub fn pingpong_step(&mut self, search: Option<Work>, load: Option<Work>) -> Result<u64> {
        if let (Some(s), Some(l)) = (search, load) {
            if s.target == l.target {
                return Err(Error::InvalidArgument(
                    "search and load work target the same CAM array".into(),
                ));
            }
        }
        if let Some(s) = search {
            self.array_mut(s.target).set_mode(CamMode::Search);
            self.active = Some(s.target);
        } else {
            self.active = None;
        }
        if let Some(l) = load {
            self.array_mut(l.target).set_mode(CamMode::Load);
        }
        Ok(search
            .map_or(0, |w| w.cycles)
            .max(load.map_or(0, |w| w.cycles)))
    }

    /// Makespan of a tile sequence: tile `i+1` loads into the idle array
    /// while tile `i` is processed in the other one.
    pub fn schedule(&mut self, load_cycles: &[u64], process_cycles: &[u64]) -> Result<u64> {
        if load_cycles.len() != process_cycles.len() {
            return Err(Error::InvalidArgument(
                "load/process length mismatch".into(),
            ));
        }
        let n = load_cycles.len();
        if n == 0 {
            return Ok(0);
        }
        let mut side = Side::A;
        let mut total = self.pingpong_step(
            None,
            Some(Work {
                target: side,
                cycles: load_cycles[0],
            }),
        )?;
        for i in 0..n {
            let load = (i + 1 < n).then(|| Work {
                target: side.other(),
                cycles: load_cycles[i + 1],
            });
            total += self.pingpong_step(
                Some(Work {
                    target: side,
                    cycles: process_cycles[i],
                }),
                load,
            )?;
            side = side.other();
        }
        Ok(total)
    }
}

/// Makespan without overlap.
pub fn sequential_schedule(load_cycles: &[u64], process_cycles: &[u64]) -> u64 {
    load_cycles.iter().sum::<u64>() + process_cycles.iter().sum::<u64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: u32) -> Distance19 {
        Distance19::new(v).unwrap()
    }

    fn pair(upper: u32, lower: u32) -> TdPair {
        TdPair {
            upper: d(upper),
            lower: d(lower),
            point_index: 0,
            search_enabled: true,
        }
    }

    fn array_with(effectives: &[u32]) -> CamArray {
        let mut c = Counters::default();
        let mut a = CamArray::init_array(effectives.len(), &mut c).unwrap();
        for (i, &v) in effectives.iter().enumerate() {
            a.write_pair(i, d(v), Distance19::MAX).unwrap();
        }
        a.set_mode(CamMode::Search);
        a
    }

    #[test]
    fn init_examples() {
        let mut c = Counters::default();
        let a = CamArray::init_array(2048, &mut c).unwrap();
        assert_eq!(a.len(), 2048);
        assert!(a
            .pairs()
            .iter()
            .all(|p| p.effective().get() == 524287 && p.search_enabled));
        assert_eq!(a.groups().count(), 16);
        assert!(a.groups().all(|g| g.len() == 128));
        assert_eq!(c.cam_pair_update_cycles, 2048);
        let mut e = CamArray::init_array(0, &mut c).unwrap();
        e.set_mode(CamMode::Search);
        assert!(matches!(e.bit_cam_max(&mut c), Err(Error::NoEnabledPairs)));
        assert!(CamArray::init_array(2049, &mut c).is_err());
    }

    #[test]
    fn compare_examples() {
        assert_eq!(in_situ_compare(&pair(100, 50)), Larger::Upper);
        assert_eq!(in_situ_compare(&pair(50, 100)), Larger::Lower);
        assert_eq!(in_situ_compare(&pair(7, 7)), Larger::Upper);
    }

    #[test]
    fn update_examples() {
        let p = update_pair(pair(100, 50), d(70));
        assert_eq!(
            (p.upper.get(), p.lower.get(), p.effective().get()),
            (70, 50, 50)
        );
        let p = update_pair(pair(524287, 524287), d(40));
        assert_eq!(
            (p.upper.get(), p.lower.get(), p.effective().get()),
            (40, 524287, 40)
        );
        let p = update_pair(pair(30, 50), d(90));
        assert_eq!(
            (p.upper.get(), p.lower.get(), p.effective().get()),
            (30, 90, 30)
        );
    }

    #[test]
    fn stream_update_examples() {
        let mut c = Counters::default();
        let mut a = CamArray::init_array(2048, &mut c).unwrap();
        let batch = DistanceBatch {
            reference: Some(0),
            distances: (0..2048).map(|i| d(i * 3)).collect(),
            cycles_used: 128,
        };
        assert!(matches!(
            a.stream_update(&batch, &mut c),
            Err(Error::WrongMode { .. })
        ));
        a.set_mode(CamMode::Search);
        assert_eq!(a.stream_update(&batch, &mut c).unwrap(), 1);
        let empty = DistanceBatch {
            reference: None,
            distances: vec![],
            cycles_used: 0,
        };
        let before = c;
        assert_eq!(a.stream_update(&empty, &mut c).unwrap(), 0);
        assert_eq!(c, before);
        let short = DistanceBatch {
            reference: None,
            distances: vec![d(1)],
            cycles_used: 1,
        };
        assert!(matches!(
            a.stream_update(&short, &mut c),
            Err(Error::MisalignedBatch { .. })
        ));

        let second = DistanceBatch {
            reference: Some(1),
            distances: (0..2048).map(|i| d((2048 - i) * 2)).collect(),
            cycles_used: 128,
        };
        a.stream_update(&second, &mut c).unwrap();
        for (i, p) in a.pairs().iter().enumerate() {
            let i = i as u32;
            assert_eq!(p.effective().get(), (i * 3).min((2048 - i) * 2).min(524287));
        }
    }

    #[test]
    fn bit_cam_examples() {
        let mut c = Counters::default();
        let a = array_with(&[5, 12, 9]);
        let s = a.bit_cam_max(&mut c).unwrap();
        assert_eq!((s.max_value.get(), s.cycles), (12, 19));
        assert_eq!(s.survivors.len(), 19);
        assert_eq!(*s.survivors.last().unwrap(), 1);
        let z = array_with(&[0, 0, 0]);
        assert_eq!(z.bit_cam_max(&mut c).unwrap().max_value.get(), 0);
        let mut out = Vec::new();
        s.write_trace_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("bit,survivors\n18,3\n"));
        assert!(text.ends_with("0,1\n"));
    }

    #[test]
    fn data_cam_examples() {
        let mut c = Counters::default();
        let a = array_with(&[7, 7, 3]);
        assert_eq!(a.data_cam_index(d(7), &mut c).unwrap(), 0);
        assert_eq!(a.data_cam_index(d(3), &mut c).unwrap(), 2);
        assert!(matches!(
            a.data_cam_index(d(4), &mut c),
            Err(Error::NoMatch(4))
        ));
    }

    #[test]
    fn find_centroid_examples() {
        let mut c = Counters::default();
        let r = array_with(&[0, 524287, 3]).find_centroid(&mut c).unwrap();
        assert_eq!(
            (r.max_value.get(), r.centroid_index, r.cycles),
            (524287, 1, 20)
        );
        let r = array_with(&[42; 9]).find_centroid(&mut c).unwrap();
        assert_eq!(r.centroid_index, 0);
        let mut a = array_with(&[42, 42, 1]);
        a.set_search_enabled(0, false).unwrap();
        assert_eq!(a.find_centroid(&mut c).unwrap().centroid_index, 1);
    }

    #[test]
    fn search_counts_cycles() {
        let mut c = Counters::default();
        let a = array_with(&[1, 2, 3, 4]);
        a.find_centroid(&mut c).unwrap();
        assert_eq!(c.cam_search_cycles, 20);
        assert_eq!(c.cam_search_pair_cycles, 80);
        assert_eq!(c.cycles, 20);
    }

    #[test]
    fn wrong_mode_rejected() {
        let mut c = Counters::default();
        let mut a = array_with(&[1, 2]);
        assert!(a.write_pair(0, d(1), d(1)).is_err());
        a.set_mode(CamMode::Load);
        assert!(matches!(
            a.bit_cam_max(&mut c),
            Err(Error::WrongMode {
                required: "search",
                ..
            })
        ));
        assert!(a.data_cam_index(d(1), &mut c).is_err());
        assert!(a.find_centroid(&mut c).is_err());
    }

    #[test]
    fn pingpong_examples() {
        let mut pp = PingPongCam::default();
        let s = Work {
            target: Side::A,
            cycles: 20,
        };
        let l = Work {
            target: Side::B,
            cycles: 16,
        };
        assert_eq!(pp.pingpong_step(Some(s), Some(l)).unwrap(), 20);
        assert_eq!(pp.active(), Some(Side::A));
        assert_eq!(pp.array(Side::A).mode(), CamMode::Search);
        assert_eq!(pp.array(Side::B).mode(), CamMode::Load);
        assert_eq!(pp.pingpong_step(None, Some(l)).unwrap(), 16);
        assert!(pp
            .pingpong_step(
                Some(s),
                Some(Work {
                    target: Side::A,
                    cycles: 1
                })
            )
            .is_err());

        let loads = [128, 128];
        let procs = [150 * 64, 150 * 64];
        let pipelined = PingPongCam::default().schedule(&loads, &procs).unwrap();
        assert_eq!(pipelined, 128 + 150 * 64 * 2);
        assert!(pipelined < sequential_schedule(&loads, &procs));
    }
}
