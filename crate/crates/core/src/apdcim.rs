//! Behavioral and cycle model of the approximate-distance CIM array.
//!
//! The array holds up to 2048 quantized points in 4 point groups of 16
//! point clusters, 32 points per cluster. Activating one row streams one
//! L1 distance per cluster, i.e. 16 distances per cycle.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::costmodel::Counters;
use crate::error::{Error, Result};
use crate::geometry::{l1, Distance19};
use crate::pointcloud::{QuantPoint, Tile, POINT_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApdCimGeometry {
    pub ptg_count: usize,
    pub ptc_per_ptg: usize,
    pub points_per_ptc: usize,
    pub distances_per_cycle: usize,
}

impl Default for ApdCimGeometry {
    fn default() -> Self {
        Self {
            ptg_count: 4,
            ptc_per_ptg: 16,
            points_per_ptc: 32,
            distances_per_cycle: 16,
        }
    }
}

impl ApdCimGeometry {
    pub fn capacity(&self) -> usize {
        self.ptg_count * self.ptc_per_ptg * self.points_per_ptc
    }

    /// Cycles to stream `n` distances.
    pub fn distance_cycles(&self, n: usize) -> u64 {
        n.div_ceil(self.distances_per_cycle) as u64
    }
}

/// Physical placement of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellAddress {
    pub ptg: usize,
    pub ptc: usize,
    pub row: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceRegister {
    pub point: QuantPoint,
    /// Local index when the reference was read out of the array.
    pub local_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceBatch {
    /// Local index of the reference point, if it is stored in the array.
    pub reference: Option<usize>,
    pub distances: Vec<Distance19>,
    pub cycles_used: u64,
}

/// One activated row in a distance trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub cycle: u64,
    pub ptg: usize,
    pub row: usize,
    pub distances: Vec<Distance19>,
}

#[derive(Debug, Clone)]
pub struct ApdCimArray {
    geometry: ApdCimGeometry,
    points: Vec<QuantPoint>,
    reference: Option<ReferenceRegister>,
    trace: Option<Vec<TraceRow>>,
    trace_cycle: u64,
}

impl ApdCimArray {
    pub fn new(geometry: ApdCimGeometry) -> Self {
        Self {
            geometry,
            points: Vec::new(),
            reference: None,
            trace: None,
            trace_cycle: 0,
        }
    }

    /// Writes a tile into the array: 48 SRAM bits per point, one row of
    /// clusters per cycle.
    pub fn load_tile(tile: &Tile, counters: &mut Counters) -> Result<Self> {
        Self::load_points(ApdCimGeometry::default(), &tile.points, counters)
    }

    pub fn load_points(
        geometry: ApdCimGeometry,
        points: &[QuantPoint],
        counters: &mut Counters,
    ) -> Result<Self> {
        if points.len() > geometry.capacity() {
            return Err(Error::Capacity {
                requested: points.len(),
                capacity: geometry.capacity(),
            });
        }
        let mut array = Self::new(geometry);
        array.points = points.to_vec();
        counters.sram_bits_written += points.len() as u64 * POINT_BITS;
        counters.cycles += geometry.distance_cycles(points.len());
        Ok(array)
    }

    pub fn geometry(&self) -> &ApdCimGeometry {
        &self.geometry
    }

    pub fn loaded_count(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[QuantPoint] {
        &self.points
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    /// Index `i` sits in cluster `i % 16` of its group, so each row
    /// activation covers 16 consecutive indices.
    pub fn address_of(&self, local_index: usize) -> CellAddress {
        let g = &self.geometry;
        let per_ptg = g.ptc_per_ptg * g.points_per_ptc;
        let within = local_index % per_ptg;
        CellAddress {
            ptg: local_index / per_ptg,
            ptc: within % g.ptc_per_ptg,
            row: within / g.ptc_per_ptg,
        }
    }

    /// Reads a stored point into the reference registers: one cycle and
    /// 48 SRAM read bits.
    pub fn set_reference(
        &mut self,
        local_index: usize,
        counters: &mut Counters,
    ) -> Result<ReferenceRegister> {
        let point = *self.points.get(local_index).ok_or(Error::IndexOutOfRange {
            index: local_index,
            len: self.points.len(),
        })?;
        counters.cycles += 1;
        counters.sram_bits_read += POINT_BITS;
        let reg = ReferenceRegister {
            point,
            local_index: Some(local_index),
        };
        self.reference = Some(reg);
        Ok(reg)
    }

    /// Loads a reference that is not stored in the array (e.g. an
    /// up-sampling target) from the point buffer.
    pub fn set_reference_point(
        &mut self,
        point: QuantPoint,
        counters: &mut Counters,
    ) -> ReferenceRegister {
        counters.cycles += 1;
        counters.sram_bits_read += POINT_BITS;
        let reg = ReferenceRegister {
            point,
            local_index: None,
        };
        self.reference = Some(reg);
        reg
    }

    pub fn reference(&self) -> Option<ReferenceRegister> {
        self.reference
    }

    /// Streams L1 distances from every stored point to the reference.
    pub fn compute_all(&mut self, counters: &mut Counters) -> Result<DistanceBatch> {
        let reg = self
            .reference
            .ok_or_else(|| Error::InvalidArgument("reference register not set".into()))?;
        let distances: Vec<Distance19> = self.points.iter().map(|&p| l1(p, reg.point)).collect();
        let cycles_used = self.geometry.distance_cycles(distances.len());
        if let Some(trace) = self.trace.as_mut() {
            let per_cycle = self.geometry.distances_per_cycle;
            for (c, chunk) in distances.chunks(per_cycle).enumerate() {
                let first = c * per_cycle;
                let per_ptg = self.geometry.ptc_per_ptg * self.geometry.points_per_ptc;
                trace.push(TraceRow {
                    cycle: self.trace_cycle + c as u64,
                    ptg: first / per_ptg,
                    row: (first % per_ptg) / self.geometry.ptc_per_ptg,
                    distances: chunk.to_vec(),
                });
            }
        }
        self.trace_cycle += cycles_used;
        counters.cim_distance_results += distances.len() as u64;
        counters.cycles += cycles_used;
        Ok(DistanceBatch {
            reference: reg.local_index,
            distances,
            cycles_used,
        })
    }

    /// CSV trace: `cycle,ptg,row,d0..d15`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let Some(trace) = &self.trace else {
            return Ok(());
        };
        let lanes = self.geometry.distances_per_cycle;
        let header: Vec<String> = (0..lanes).map(|i| format!("d{i}")).collect();
        writeln!(w, "cycle,ptg,row,{}", header.join(","))?;
        for r in trace {
            let ds: Vec<String> = (0..lanes)
                .map(|i| {
                    r.distances
                        .get(i)
                        .map(|d| d.get().to_string())
                        .unwrap_or_default()
                })
                .collect();
            writeln!(w, "{},{},{},{}", r.cycle, r.ptg, r.row, ds.join(","))?;
        }
        Ok(())
    }
}
