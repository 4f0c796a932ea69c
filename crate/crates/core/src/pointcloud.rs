//! Point-cloud representation, file ingestion, synthetic generation and
//! per-tile 16-bit quantization.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest quantized coordinate.
pub const QUANT_MAX: u16 = u16::MAX;

/// Bits occupied by one quantized point (three 16-bit coordinates).
pub const POINT_BITS: u64 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl RawPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Tile-local quantized point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct QuantPoint {
    pub qx: u16,
    pub qy: u16,
    pub qz: u16,
}

impl QuantPoint {
    pub const fn new(qx: u16, qy: u16, qz: u16) -> Self {
        Self { qx, qy, qz }
    }

    #[inline]
    pub fn coords(&self) -> [u16; 3] {
        [self.qx, self.qy, self.qz]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<RawPoint>,
    pub source: String,
}

impl PointCloud {
    pub fn new(points: Vec<RawPoint>, source: impl Into<String>) -> Self {
        Self {
            points,
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A capacity-bounded group of quantized points. `global_indices[i]` is the
/// position of `points[i]` in the source cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub points: Vec<QuantPoint>,
    pub global_indices: Vec<usize>,
    pub quant_origin: RawPoint,
    /// Raw units per quantization step, per axis. Zero marks a degenerate axis.
    pub quant_scale: [f64; 3],
    pub capacity: usize,
}

impl Tile {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps a quantized point back into raw coordinates.
    pub fn dequantize(&self, p: QuantPoint) -> RawPoint {
        let c = p.coords();
        let o = [
            self.quant_origin.x,
            self.quant_origin.y,
            self.quant_origin.z,
        ];
        let v: [f64; 3] = std::array::from_fn(|a| o[a] + f64::from(c[a]) * self.quant_scale[a]);
        RawPoint::new(v[0], v[1], v[2])
    }

    /// Sub-tile holding the given local indices, sharing this tile's
    /// quantization frame.
    pub fn subset(&self, local: &[usize]) -> Tile {
        Tile {
            points: local.iter().map(|&i| self.points[i]).collect(),
            global_indices: local.iter().map(|&i| self.global_indices[i]).collect(),
            quant_origin: self.quant_origin,
            quant_scale: self.quant_scale,
            capacity: self.capacity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    XyzAscii,
    F32leBinary,
}

impl CloudFormat {
    /// Guesses the format from a file extension: `.bin`/`.f32` are binary,
    /// everything else ascii.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("f32") => CloudFormat::F32leBinary,
            _ => CloudFormat::XyzAscii,
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let points = match format {
        CloudFormat::XyzAscii => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                location: format!("byte {}", e.valid_up_to()),
                message: "invalid utf-8".into(),
            })?;
            parse_xyz(text)?
        }
        CloudFormat::F32leBinary => parse_f32le(&bytes)?,
    };
    if points.is_empty() {
        return Err(Error::Empty(path.display().to_string()));
    }
    Ok(PointCloud::new(points, path.display().to_string()))
}

pub fn parse_xyz(text: &str) -> Result<Vec<RawPoint>> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            location: format!("line {}", lineno + 1),
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 3];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .map_err(|e| err(format!("{field:?}: {e}")))?;
        }
        let p = RawPoint::new(v[0], v[1], v[2]);
        if !p.is_finite() {
            return Err(err("non-finite coordinate".into()));
        }
        points.push(p);
    }
    Ok(points)
}

pub fn parse_f32le(bytes: &[u8]) -> Result<Vec<RawPoint>> {
    if !bytes.len().is_multiple_of(12) {
        return Err(Error::Parse {
            location: format!("byte {}", bytes.len() - bytes.len() % 12),
            message: format!("trailing {} bytes, records are 12 bytes", bytes.len() % 12),
        });
    }
    bytes
        .chunks_exact(12)
        .enumerate()
        .map(|(i, rec)| {
            let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
            let p = RawPoint::new(f(0), f(4), f(8));
            if p.is_finite() {
                Ok(p)
            } else {
                Err(Error::Parse {
                    location: format!("byte {}", i * 12),
                    message: "non-finite coordinate".into(),
                })
            }
        })
        .collect()
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(cloud.len() * 24);
    match format {
        CloudFormat::XyzAscii => {
            for p in &cloud.points {
                writeln!(buf, "{} {} {}", p.x, p.y, p.z).unwrap();
            }
        }
        CloudFormat::F32leBinary => {
            for p in &cloud.points {
                for v in [p.x, p.y, p.z] {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    fs::write(path, buf).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudKind {
    Uniform,
    Gaussian,
    Clustered,
}

const GAUSSIAN_SIGMA: f64 = 0.2;
const CLUSTER_COUNT: usize = 8;
const CLUSTER_SIGMA: f64 = 0.05;

/// Seeded synthetic cloud: uniform in the unit cube, an isotropic gaussian
/// around the cube center, or eight gaussian blobs at uniform centers.
pub fn generate_cloud(kind: CloudKind, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "point count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = match kind {
        CloudKind::Uniform => (0..n)
            .map(|_| RawPoint::new(rng.random(), rng.random(), rng.random()))
            .collect(),
        CloudKind::Gaussian => {
            let d = Normal::new(0.5, GAUSSIAN_SIGMA).unwrap();
            (0..n)
                .map(|_| RawPoint::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng)))
                .collect()
        }
        CloudKind::Clustered => {
            let centers: Vec<RawPoint> = (0..CLUSTER_COUNT)
                .map(|_| RawPoint::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let d = Normal::new(0.0, CLUSTER_SIGMA).unwrap();
            (0..n)
                .map(|_| {
                    let c = centers[rng.random_range(0..CLUSTER_COUNT)];
                    RawPoint::new(
                        c.x + d.sample(&mut rng),
                        c.y + d.sample(&mut rng),
                        c.z + d.sample(&mut rng),
                    )
                })
                .collect()
        }
    };
    let name = match kind {
        CloudKind::Uniform => "uniform",
        CloudKind::Gaussian => "gaussian",
        CloudKind::Clustered => "clustered",
    };
    Ok(PointCloud::new(
        points,
        format!("generated:{name}:n={n}:seed={seed}"),
    ))
}

/// Quantizes one tile onto the 16-bit grid spanned by its bounding box,
/// rounding half up.
pub fn quantize_tile(
    points: &[RawPoint],
    global_indices: &[usize],
    capacity: usize,
) -> Result<Tile> {
    if points.len() > capacity {
        return Err(Error::Capacity {
            requested: points.len(),
            capacity,
        });
    }
    if points.len() != global_indices.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} global indices",
            points.len(),
            global_indices.len()
        )));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p.coord(a));
            hi[a] = hi[a].max(p.coord(a));
        }
    }
    if points.is_empty() {
        lo = [0.0; 3];
        hi = [0.0; 3];
    }
    let extent: [f64; 3] = std::array::from_fn(|a| hi[a] - lo[a]);
    let quant_scale: [f64; 3] = std::array::from_fn(|a| {
        if extent[a] > 0.0 {
            extent[a] / f64::from(QUANT_MAX)
        } else {
            0.0
        }
    });
    let q = |p: &RawPoint, a: usize| -> u16 {
        if extent[a] > 0.0 {
            let t = (p.coord(a) - lo[a]) / extent[a] * f64::from(QUANT_MAX);
            (t + 0.5).floor().clamp(0.0, f64::from(QUANT_MAX)) as u16
        } else {
            0
        }
    };
    Ok(Tile {
        points: points
            .iter()
            .map(|p| QuantPoint::new(q(p, 0), q(p, 1), q(p, 2)))
            .collect(),
        global_indices: global_indices.to_vec(),
        quant_origin: RawPoint::new(lo[0], lo[1], lo[2]),
        quant_scale,
        capacity,
    })
}
