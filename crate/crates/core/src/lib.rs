//! Functional and cycle/energy-level simulator of a compute-in-memory
//! point-cloud accelerator.
//!
//! The data-preprocessing path (median partitioning, L1 farthest point
//! sampling, lattice-query grouping) runs through behavioral models of an
//! approximate-distance CIM array ([`apdcim`]) and a two-level ping-pong
//! MAX CAM ([`maxcam`]). Feature computation runs through a bit-exact
//! split-concatenate CIM MAC model ([`sccim`]). Every model charges its
//! work to [`costmodel::Counters`], from which energy and latency reports
//! are derived.
//!
//! ```
//! use pc2im_core::prelude::*;
//!
//! let cloud = generate_cloud(CloudKind::Uniform, 4096, 1).unwrap();
//! let tiles = msp_partition(&cloud, 2048).unwrap();
//! assert_eq!(tiles.len(), 2);
//! ```

pub mod apdcim;
pub mod costmodel;
pub mod error;
pub mod geometry;
pub mod maxcam;
pub mod partition;
pub mod pipeline;
pub mod pointcloud;
pub mod sccim;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::apdcim::{ApdCimArray, DistanceBatch};
    pub use crate::costmodel::{
        baseline_global_fps_traffic, baseline_local_fps_breakdown, energy, latency, merge_reports,
        AccessCounters, Counters, EnergyParams, Report, Stage,
    };
    pub use crate::error::{Error, Result};
    pub use crate::geometry::{
        ball_query, exact_fps, interpolate_weights, knn, l1, l2_sq, lattice_query, Distance19,
        Metric, QueryConfig,
    };
    pub use crate::maxcam::{CamArray, CamMode, PingPongCam, SearchResult, TdPair};
    pub use crate::partition::{median_split, msp_partition, utilization, Axis, PartitionTree};
    pub use crate::pipeline::{
        accel_fps, accel_fps_points, compare_baselines, fused_grouping, run_network,
        run_network_with, run_pfp_layer, run_psa_layer, BaselineComparison, Execution,
        FeatureTensor, LayerConfig, Mlp, NetworkConfig, PfpLayerConfig, PsaLayerConfig, RunOptions,
        SimResult,
    };
    pub use crate::pointcloud::{
        generate_cloud, load_cloud, quantize_tile, CloudFormat, CloudKind, PointCloud, QuantPoint,
        RawPoint, Tile,
    };
    pub use crate::sccim::{bs_mac_16rows, mac_16rows, split_input, split_weight};
}
