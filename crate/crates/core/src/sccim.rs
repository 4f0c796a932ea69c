//! Bit-exact model of the split-concatenate CIM MAC.
//!
//! Inputs are split bit-wise into four interleaved 4-bit clusters (cluster
//! `j` holds bits `j, j+4, j+8, j+12`), weights block-wise into four 4-bit
//! nibbles. A cluster times a nibble is a concatenation of selected nibbles,
//! never a multiplication. Two adjacent rows share a fused adder that
//! pre-adds their nibbles, so the dense adder tree sees one term per row
//! pair and the carries go to a separate sparse tree. Sign bits of both
//! operands are merged in the periphery.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ROWS: usize = 16;
pub const CLUSTERS: usize = 4;
pub const NIBBLES: usize = 4;
pub const SC_CYCLES: u64 = CLUSTERS as u64;
pub const BS_CYCLES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SccimGeometry {
    pub weight_slices: usize,
    /// Local weight blocks per slice, used in pairs.
    pub blocks_per_slice: usize,
    pub rows: usize,
}

impl Default for SccimGeometry {
    fn default() -> Self {
        Self {
            weight_slices: 64,
            blocks_per_slice: 8,
            rows: ROWS,
        }
    }
}

/// Four 4-bit blocks of a 16-bit weight, least significant first. The top
/// block carries the sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightNibbles(pub [u8; NIBBLES]);

impl WeightNibbles {
    /// Two's-complement value of the top nibble, in `-8..=7`.
    pub fn signed_top(&self) -> i8 {
        ((self.0[3] << 4) as i8) >> 4
    }

    pub fn reconstruct(&self) -> i16 {
        let n = &self.0;
        (i32::from(self.signed_top()) * 4096
            + i32::from(n[2]) * 256
            + i32::from(n[1]) * 16
            + i32::from(n[0])) as i16
    }
}

/// Four 4-bit interleaved clusters of a 16-bit input. Lane `p` of cluster
/// `j` is bit `j + 4p`; lane 3 of cluster 3 is the sign bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputClusters(pub [u8; CLUSTERS]);

impl InputClusters {
    pub fn reassemble(&self) -> i16 {
        let mut v = 0u16;
        for (j, &c) in self.0.iter().enumerate() {
            for p in 0..4 {
                v |= u16::from((c >> p) & 1) << (j + 4 * p);
            }
        }
        v as i16
    }
}

pub fn split_weight(w: i16) -> WeightNibbles {
    let u = w as u16;
    WeightNibbles(std::array::from_fn(|m| ((u >> (4 * m)) & 0xF) as u8))
}

pub fn split_input(x: i16) -> InputClusters {
    let u = x as u16;
    InputClusters(std::array::from_fn(|j| {
        (0..4).fold(0u8, |acc, p| acc | ((((u >> (j + 4 * p)) & 1) as u8) << p))
    }))
}

/// Selects `nibble` into every lane whose cluster bit is set; lane `p`
/// lands at bit offset `4p`.
#[inline]
pub fn cluster_block_multiply(cluster: u8, nibble: u8) -> u16 {
    let nibble = u16::from(nibble & 0xF);
    (0..4).fold(0u16, |acc, p| {
        if (cluster >> p) & 1 == 1 {
            acc | (nibble << (4 * p))
        } else {
            acc
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuaOutput {
    /// Densely concatenated lanes; 16 value bits plus the reserved sign
    /// extension bit.
    pub dense: u32,
    /// Carry of lane `p` is bit `p`; its weight is `2^(4p+4)`.
    pub carries: u8,
}

impl FuaOutput {
    /// Carries placed at their significance by sparse concatenation.
    #[inline]
    pub fn sparse(&self) -> u32 {
        (0..4).fold(0u32, |acc, p| {
            if (self.carries >> p) & 1 == 1 {
                acc | (1 << (4 * p + 4))
            } else {
                acc
            }
        })
    }

    #[inline]
    pub fn value(&self) -> u32 {
        self.dense + self.sparse()
    }
}

/// Fused cluster-block multiply and add for a pair of rows. The 4-bit
/// ripple adder pre-sums the two nibbles; each lane then selects A, B,
/// the sum, or zero from its two input bits.
#[inline]
pub fn fused_add(in_a: u8, in_b: u8, nib_a: u8, nib_b: u8) -> FuaOutput {
    let (nib_a, nib_b) = (nib_a & 0xF, nib_b & 0xF);
    let cra = nib_a + nib_b;
    let (sum4, carry) = (u32::from(cra & 0xF), cra >> 4);
    let mut dense = 0u32;
    let mut carries = 0u8;
    for p in 0..4 {
        let lane = match ((in_a >> p) & 1, (in_b >> p) & 1) {
            (1, 0) => u32::from(nib_a),
            (0, 1) => u32::from(nib_b),
            (1, 1) => {
                carries |= carry << p;
                sum4
            }
            _ => 0,
        };
        dense |= lane << (4 * p);
    }
    FuaOutput { dense, carries }
}

/// Periphery terms that turn the unsigned concatenation result into a
/// signed product sum. With `x = U(x) - 2^16 s_x` and `w = U(w) - 2^16 s_w`:
/// `sum x*w = sum U(x)U(w) - 2^16 (sum s_x U(w) + sum s_w U(x)) + 2^32 sum s_x s_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SignCorrections {
    /// Sum of unsigned weights gated by the input sign bit.
    pub input_sign: i64,
    /// Sum of unsigned inputs gated by the weight sign bit.
    pub weight_sign: i64,
    /// Rows where both sign bits are set.
    pub both_signs: i64,
}

impl SignCorrections {
    pub fn accumulate(&mut self, x: i16, w: i16) {
        let (sx, sw) = (x < 0, w < 0);
        if sx {
            self.input_sign += i64::from(w as u16);
        }
        if sw {
            self.weight_sign += i64::from(x as u16);
        }
        if sx && sw {
            self.both_signs += 1;
        }
    }
}

pub fn signed_merge(unsigned_contrib: i64, corrections: SignCorrections) -> i64 {
    unsigned_contrib - ((corrections.input_sign + corrections.weight_sign) << 16)
        + (corrections.both_signs << 32)
}

/// Single-row signed product through the concatenation path.
pub fn product(x: i16, w: i16) -> i64 {
    let c = split_input(x);
    let n = split_weight(w);
    let mut unsigned = 0i64;
    for j in 0..CLUSTERS {
        for m in 0..NIBBLES {
            unsigned += i64::from(cluster_block_multiply(c.0[j], n.0[m])) << (j + 4 * m);
        }
    }
    let mut corr = SignCorrections::default();
    corr.accumulate(x, w);
    signed_merge(unsigned, corr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacOutcome {
    pub sum: i64,
    pub cycles: u64,
}

/// Adder-tree outputs for one (cluster cycle, weight nibble) step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartialSums {
    pub cycle: usize,
    pub nibble: usize,
    pub dense: u64,
    pub sparse: u64,
}

fn mac_core(
    inputs: &[i16; ROWS],
    weights: &[i16; ROWS],
    mut dump: Option<&mut Vec<PartialSums>>,
) -> MacOutcome {
    let clusters: [InputClusters; ROWS] = std::array::from_fn(|i| split_input(inputs[i]));
    let nibbles: [WeightNibbles; ROWS] = std::array::from_fn(|i| split_weight(weights[i]));
    let mut unsigned = 0i64;
    for j in 0..CLUSTERS {
        for m in 0..NIBBLES {
            let mut dense = 0u64;
            let mut sparse = 0u64;
            for pair in 0..ROWS / 2 {
                let (a, b) = (2 * pair, 2 * pair + 1);
                let f = fused_add(
                    clusters[a].0[j],
                    clusters[b].0[j],
                    nibbles[a].0[m],
                    nibbles[b].0[m],
                );
                dense += u64::from(f.dense);
                sparse += u64::from(f.sparse());
            }
            if let Some(d) = dump.as_deref_mut() {
                d.push(PartialSums {
                    cycle: j,
                    nibble: m,
                    dense,
                    sparse,
                });
            }
            unsigned += ((dense + sparse) as i64) << (j + 4 * m);
        }
    }
    let mut corr = SignCorrections::default();
    for (&x, &w) in inputs.iter().zip(weights) {
        corr.accumulate(x, w);
    }
    MacOutcome {
        sum: signed_merge(unsigned, corr),
        cycles: SC_CYCLES,
    }
}

/// 16-row dot product in four cluster cycles.
pub fn mac_16rows(inputs: &[i16; ROWS], weights: &[i16; ROWS]) -> MacOutcome {
    mac_core(inputs, weights, None)
}

/// As [`mac_16rows`], also returning the per-step adder-tree sums.
pub fn mac_16rows_traced(
    inputs: &[i16; ROWS],
    weights: &[i16; ROWS],
) -> (MacOutcome, Vec<PartialSums>) {
    let mut dump = Vec::with_capacity(CLUSTERS * NIBBLES);
    let out = mac_core(inputs, weights, Some(&mut dump));
    (out, dump)
}

/// CSV: `cycle,nibble,dense,sparse`.
pub fn write_partial_sums_csv<W: Write>(mut w: W, sums: &[PartialSums]) -> io::Result<()> {
    writeln!(w, "cycle,nibble,dense,sparse")?;
    for s in sums {
        writeln!(w, "{},{},{},{}", s.cycle, s.nibble, s.dense, s.sparse)?;
    }
    Ok(())
}

/// Bit-serial baseline: one input bit per cycle, the sign bit subtracted.
pub fn bs_mac_16rows(inputs: &[i16; ROWS], weights: &[i16; ROWS]) -> MacOutcome {
    let mut acc = 0i64;
    for t in 0..16 {
        let partial: i64 = inputs
            .iter()
            .zip(weights)
            .filter(|(&x, _)| (x as u16 >> t) & 1 == 1)
            .map(|(_, &w)| i64::from(w))
            .sum();
        if t == 15 {
            acc -= partial << t;
        } else {
            acc += partial << t;
        }
    }
    MacOutcome {
        sum: acc,
        cycles: BS_CYCLES,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MacEngine {
    SplitConcat,
    BitSerial,
}

impl MacEngine {
    pub fn cycles_per_tile(self) -> u64 {
        match self {
            MacEngine::SplitConcat => SC_CYCLES,
            MacEngine::BitSerial => BS_CYCLES,
        }
    }
}

/// Dot product of any length as a sequence of zero-padded 16-row tiles
/// accumulated in the periphery.
pub fn mac_dot(inputs: &[i16], weights: &[i16], engine: MacEngine) -> MacOutcome {
    assert_eq!(
        inputs.len(),
        weights.len(),
        "dot product operands differ in length"
    );
    let mut sum = 0i64;
    let mut cycles = 0u64;
    for (xs, ws) in inputs.chunks(ROWS).zip(weights.chunks(ROWS)) {
        let mut x = [0i16; ROWS];
        let mut w = [0i16; ROWS];
        x[..xs.len()].copy_from_slice(xs);
        w[..ws.len()].copy_from_slice(ws);
        let out = match engine {
            MacEngine::SplitConcat => mac_16rows(&x, &w),
            MacEngine::BitSerial => bs_mac_16rows(&x, &w),
        };
        sum += out.sum;
        cycles += out.cycles;
    }
    MacOutcome { sum, cycles }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdderTreeStats {
    pub dense_inputs: usize,
    pub sparse_inputs: usize,
    pub naive_inputs: usize,
    /// `dense_inputs / naive_inputs`.
    pub ratio: f64,
    pub fused_adders_per_slice: usize,
}

/// Fan-in of the dense and sparse trees versus accumulating every row.
pub fn adder_tree_stats(geometry: &SccimGeometry) -> AdderTreeStats {
    let pairs = geometry.rows / 2;
    AdderTreeStats {
        dense_inputs: pairs,
        sparse_inputs: pairs,
        naive_inputs: geometry.rows,
        ratio: pairs as f64 / geometry.rows as f64,
        fused_adders_per_slice: geometry.blocks_per_slice / 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub rand_n: usize,
    pub seed: u64,
    /// Negative control: corrupts the checked results.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            rand_n: 100_000,
            seed: 0x5CC1,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub fused_add_total: u64,
    pub fused_add_ok: u64,
    pub input_split_total: u64,
    pub input_split_ok: u64,
    pub weight_split_total: u64,
    pub weight_split_ok: u64,
    pub mac_total: u64,
    pub mac_ok: u64,
    pub bs_mac_ok: u64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.fused_add_ok == self.fused_add_total
            && self.input_split_ok == self.input_split_total
            && self.weight_split_ok == self.weight_split_total
            && self.mac_ok == self.mac_total
            && self.bs_mac_ok == self.mac_total
    }
}

fn spread(cluster: u8) -> u32 {
    (0..4)
        .map(|p| u32::from((cluster >> p) & 1) * 16u32.pow(p))
        .sum()
}

/// Exhaustive fused-add identities, exhaustive split round trips, and
/// random MACs against the exact integer dot product.
pub fn verify_suite(opts: &VerifyOptions) -> VerifyReport {
    let mut r = VerifyReport::default();
    let fault = u32::from(opts.inject_fault);
    for a in 0..16u8 {
        for b in 0..16u8 {
            for na in 0..16u8 {
                for nb in 0..16u8 {
                    let expected = u32::from(na) * spread(a) + u32::from(nb) * spread(b);
                    let got = fused_add(a, b, na, nb).value()
                        ^ (fault * u32::from(a == 3 && b == 5 && na == 9));
                    r.fused_add_total += 1;
                    r.fused_add_ok += u64::from(got == expected);
                }
            }
        }
    }
    for v in 0..=u16::MAX {
        let x = v as i16;
        r.input_split_total += 1;
        r.input_split_ok += u64::from(split_input(x).reassemble() == x);
        r.weight_split_total += 1;
        r.weight_split_ok += u64::from(split_weight(x).reconstruct() == x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for k in 0..opts.rand_n {
        let x: [i16; ROWS] = std::array::from_fn(|_| rng.random());
        let w: [i16; ROWS] = std::array::from_fn(|_| rng.random());
        let exact: i64 = x
            .iter()
            .zip(&w)
            .map(|(&a, &b)| i64::from(a) * i64::from(b))
            .sum();
        let corrupt = i64::from(opts.inject_fault && k % 1000 == 0);
        r.mac_total += 1;
        r.mac_ok += u64::from(mac_16rows(&x, &w).sum + corrupt == exact);
        r.bs_mac_ok += u64::from(bs_mac_16rows(&x, &w).sum == exact);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_weight_examples() {
        let n = split_weight(0x1234);
        assert_eq!(n.0, [4, 3, 2, 1]);
        assert_eq!(n.signed_top(), 1);
        let n = split_weight(-1);
        assert_eq!(n.0, [15, 15, 15, 15]);
        assert_eq!(n.signed_top(), -1);
        assert_eq!(n.reconstruct(), -1);
        assert_eq!(split_weight(0).0, [0; 4]);
    }

    #[test]
    fn split_input_examples() {
        assert_eq!(
            split_input(0x8421u16 as i16).0,
            [0b0001, 0b0010, 0b0100, 0b1000]
        );
        assert_eq!(split_input(-1).0, [0b1111; 4]);
    }

    #[test]
    fn split_round_trips_exhaustive() {
        for v in 0..=u16::MAX {
            let x = v as i16;
            assert_eq!(split_input(x).reassemble(), x);
            assert_eq!(split_weight(x).reconstruct(), x);
        }
    }

    #[test]
    fn cluster_block_examples() {
        assert_eq!(cluster_block_multiply(0b0101, 0xA), 0x0A0A);
        assert_eq!(cluster_block_multiply(0b0101, 0xA), 2570);
        assert_eq!(cluster_block_multiply(0, 0xF), 0);
        assert_eq!(cluster_block_multiply(0b1111, 0xF), 0xFFFF);
    }

    #[test]
    fn fused_add_example() {
        let f = fused_add(0b0011, 0b0101, 9, 8);
        assert_eq!(f.dense, 0x0891);
        assert_eq!(f.dense, 2193);
        assert_eq!(f.carries, 0b0001);
        assert_eq!(f.value(), 2209);
        assert_eq!(f.value(), 9 * 17 + 8 * 257);
        let g = fused_add(0b1011, 0, 13, 6);
        assert_eq!(g.dense, u32::from(cluster_block_multiply(0b1011, 13)));
        assert_eq!(g.carries, 0);
    }

    #[test]
    fn fused_add_identity_exhaustive() {
        for a in 0..16u8 {
            for b in 0..16u8 {
                for na in 0..16u8 {
                    for nb in 0..16u8 {
                        let f = fused_add(a, b, na, nb);
                        assert!(f.dense < 1 << 17);
                        let expected = u32::from(cluster_block_multiply(a, na))
                            + u32::from(cluster_block_multiply(b, nb));
                        assert_eq!(f.value(), expected, "{a} {b} {na} {nb}");
                    }
                }
            }
        }
    }

    #[test]
    fn product_examples() {
        assert_eq!(product(3, 5), 15);
        assert_eq!(product(-2, 7), -14);
        assert_eq!(product(i16::MIN, i16::MIN), 1_073_741_824);
        assert_eq!(product(i16::MIN, i16::MAX), -32768 * 32767);
        assert_eq!(product(i16::MAX, i16::MAX), 32767 * 32767);
    }

    #[test]
    fn product_exhaustive_8bit() {
        for x in -128i16..=127 {
            for w in -128i16..=127 {
                assert_eq!(product(x, w), i64::from(x) * i64::from(w));
            }
        }
    }

    #[test]
    fn mac_examples() {
        assert_eq!(
            mac_16rows(&[1; 16], &[1; 16]),
            MacOutcome { sum: 16, cycles: 4 }
        );
        let mut x = [0i16; 16];
        let mut w = [0i16; 16];
        x[9] = -1234;
        w[9] = 321;
        assert_eq!(mac_16rows(&x, &w).sum, -1234 * 321);
        assert_eq!(
            mac_16rows(&[i16::MIN; 16], &[i16::MIN; 16]).sum,
            16 * (1i64 << 30)
        );
        assert_eq!(
            bs_mac_16rows(&[i16::MIN; 16], &[i16::MIN; 16]).sum,
            16 * (1i64 << 30)
        );
        assert_eq!(
            bs_mac_16rows(&x, &w),
            MacOutcome {
                sum: -1234 * 321,
                cycles: 16
            }
        );
    }

    #[test]
    fn adder_tree_halving() {
        let s = adder_tree_stats(&SccimGeometry::default());
        assert_eq!(
            (s.dense_inputs, s.sparse_inputs, s.naive_inputs),
            (8, 8, 16)
        );
        assert_eq!(s.ratio, 0.5);
        assert_eq!(s.fused_adders_per_slice, 4);
    }

    #[test]
    fn traced_sums_recompose() {
        let x: [i16; 16] = std::array::from_fn(|i| (i as i16 * 977) ^ 0x5a5a);
        let w: [i16; 16] = std::array::from_fn(|i| (i as i16 * -311) ^ 0x0f0f);
        let (out, dump) = mac_16rows_traced(&x, &w);
        assert_eq!(dump.len(), 16);
        let unsigned: i64 = dump
            .iter()
            .map(|p| ((p.dense + p.sparse) as i64) << (p.cycle + 4 * p.nibble))
            .sum();
        let exact_unsigned: i64 = x
            .iter()
            .zip(&w)
            .map(|(&a, &b)| i64::from(a as u16) * i64::from(b as u16))
            .sum();
        assert_eq!(unsigned, exact_unsigned);
        assert_eq!(out, mac_16rows(&x, &w));
        let mut csv = Vec::new();
        write_partial_sums_csv(&mut csv, &dump).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 17);
    }

    #[test]
    fn multi_tile_dot() {
        let x: Vec<i16> = (0..40).map(|i| (i * 1000 - 20000) as i16).collect();
        let w: Vec<i16> = (0..40).map(|i| (7 - i) as i16 * 300).collect();
        let exact: i64 = x
            .iter()
            .zip(&w)
            .map(|(&a, &b)| i64::from(a) * i64::from(b))
            .sum();
        assert_eq!(
            mac_dot(&x, &w, MacEngine::SplitConcat),
            MacOutcome {
                sum: exact,
                cycles: 12
            }
        );
        assert_eq!(
            mac_dot(&x, &w, MacEngine::BitSerial),
            MacOutcome {
                sum: exact,
                cycles: 48
            }
        );
    }

    #[test]
    fn verify_suite_small() {
        let r = verify_suite(&VerifyOptions {
            rand_n: 200,
            ..Default::default()
        });
        assert!(r.passed());
        assert_eq!(r.fused_add_total, 65536);
        assert_eq!(r.mac_total, 200);
        let bad = verify_suite(&VerifyOptions {
            rand_n: 10,
            inject_fault: true,
            ..Default::default()
        });
        assert!(!bad.passed());
        assert_eq!(bad.fused_add_ok, 65536 - 16);
    }

    fn arb_row() -> impl Strategy<Value = [i16; 16]> {
        prop::array::uniform16(any::<i16>())
    }

    proptest! {
        #[test]
        fn mac_is_exact(x in arb_row(), w in arb_row()) {
            let exact: i64 = x.iter().zip(&w).map(|(&a, &b)| i64::from(a) * i64::from(b)).sum();
            prop_assert_eq!(mac_16rows(&x, &w).sum, exact);
            prop_assert_eq!(bs_mac_16rows(&x, &w).sum, exact);
        }

        #[test]
        fn accumulation_is_linear(a in arb_row(), b in arb_row(), w in arb_row()) {
            // Split each 16-bit input into two halves that sum back exactly.
            let lo: [i16; 16] = std::array::from_fn(|i| a[i] / 2);
            let hi: [i16; 16] = std::array::from_fn(|i| a[i] - a[i] / 2);
            prop_assert_eq!(mac_16rows(&lo, &w).sum + mac_16rows(&hi, &w).sum, mac_16rows(&a, &w).sum);
            let sum_rows: i64 = (0..16).map(|i| {
                let mut x = [0i16; 16];
                x[i] = b[i];
                mac_16rows(&x, &w).sum
            }).sum();
            prop_assert_eq!(sum_rows, mac_16rows(&b, &w).sum);
        }
    }
}
