//! Parameter and multiply-accumulate accounting.
//!
//! Convolutions are bias-free; every batchnorm contributes a (gamma, beta)
//! pair per channel; the classifier has a bias.

use crate::error::{Error, Result};
use crate::ops::conv::window_extent;

use super::{ArchDescription, BlockSpec, CandidateOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountMode {
    /// Each search unit counted at its largest candidate.
    SinglePathMax,
    /// Each search unit counted as the sum of all its candidates.
    AllPaths,
}

fn conv_params(cin: usize, cout: usize, k: usize) -> u64 {
    (cin * cout * k * k) as u64
}

fn bn_params(c: usize) -> u64 {
    2 * c as u64
}

/// Parameters of one concrete bottleneck path (shortcut included).
pub(crate) fn path_params(block: &BlockSpec, op: CandidateOp) -> u64 {
    let (i, m, o) = (block.in_channels, block.mid_channels, block.out_channels);
    let mut n = conv_params(i, m, 1) + bn_params(m);
    n += conv_params(m, m, op.kernel) + bn_params(m);
    n += conv_params(m, o, 1) + bn_params(o);
    if block.projection {
        n += conv_params(i, o, 1) + bn_params(o);
    }
    n
}

pub fn count_params(desc: &ArchDescription, mode: CountMode) -> u64 {
    let stem = &desc.stem;
    let mut total = conv_params(stem.in_channels, stem.out_channels, stem.kernel()) + bn_params(stem.out_channels);
    for block in &desc.blocks {
        let per_path = block.ops().iter().map(|&op| path_params(block, op));
        total += match mode {
            CountMode::SinglePathMax => per_path.max().unwrap_or(0),
            CountMode::AllPaths => per_path.sum(),
        };
    }
    let f = desc.head_features() as u64;
    let c = desc.num_classes as u64;
    total + f * c + c
}

/// Parameter count in millions, two decimals (e.g. `23.53M`).
pub fn format_millions(count: u64) -> String {
    format!("{:.2}M", count as f64 / 1e6)
}

fn spatial(op: &'static str, hw: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    window_extent(hw, k, stride, pad)
        .ok_or_else(|| Error::Config(format!("{op}: input extent {hw} too small for kernel {k}")))
}

/// MACs of one concrete block path on an `hw x hw` input; returns the MACs
/// and the output extent.
fn path_macs(block: &BlockSpec, op: CandidateOp, hw: usize) -> Result<(u64, usize)> {
    let (i, m, o) = (block.in_channels as u64, block.mid_channels as u64, block.out_channels as u64);
    let k = op.kernel;
    let out_hw = spatial("block", hw, k, block.stride, k / 2)?;
    let in_area = (hw * hw) as u64;
    let out_area = (out_hw * out_hw) as u64;
    let mut macs = in_area * i * m;
    macs += out_area * m * m * (k * k) as u64;
    macs += out_area * m * o;
    if block.projection {
        macs += out_area * i * o;
    }
    Ok((macs, out_hw))
}

/// Per-block MACs at spatial extent `hw`; search units report the mean over
/// their candidates (uniform path probabilities).
pub fn block_macs(block: &BlockSpec, hw: usize) -> Result<(u64, usize)> {
    let ops = block.ops();
    let mut sum = 0;
    let mut out_hw = 0;
    for &op in ops {
        let (m, o) = path_macs(block, op, hw)?;
        sum += m;
        out_hw = o;
    }
    Ok((sum / ops.len() as u64, out_hw))
}

/// Multiply-accumulates of one forward pass for a single `input_hw` square
/// image (convolutions and the classifier).
pub fn count_macs(desc: &ArchDescription, input_hw: usize) -> Result<u64> {
    let stem = &desc.stem;
    let mut hw = spatial("stem", input_hw, stem.kernel(), stem.stride(), stem.padding())?;
    let mut total = (hw * hw) as u64 * conv_params(stem.in_channels, stem.out_channels, stem.kernel());
    if stem.has_max_pool() {
        hw = spatial("stem max-pool", hw, 3, 2, 1)?;
    }
    for block in &desc.blocks {
        let (m, out_hw) = block_macs(block, hw)?;
        total += m;
        hw = out_hw;
    }
    Ok(total + (desc.head_features() * desc.num_classes) as u64)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn resnet50_counts() {
        let d = build_base_resnet50(10, false).unwrap();
        assert_eq!(count_params(&d, CountMode::SinglePathMax), 23_528_522);
        assert_eq!(format_millions(count_params(&d, CountMode::AllPaths)), "23.53M");
        assert_eq!(count_params(&build_base_resnet50(1000, false).unwrap(), CountMode::SinglePathMax), 25_557_032);
    }

    #[test]
    fn single_path_max_small_scope() {
        let base = build_base_resnet50(10, false).unwrap();
        let s = build_supernet(&base, Scope::Small).unwrap();
        assert_eq!(count_params(&s, CountMode::SinglePathMax), 23_528_522 + 3 * 16 * 512 * 512);
    }

    #[test]
    fn pointwise_block_is_one_mac() {
        let block = BlockSpec {
            stage: 1,
            in_channels: 4,
            mid_channels: 1,
            out_channels: 4,
            stride: 1,
            projection: false,
            body: BlockBody::Bottleneck(CandidateOp::BASELINE),
            choice: None,
        };
        // 1x1 map: 4 + 9 + 4 MACs for conv1, conv2, conv3
        assert_eq!(block_macs(&block, 1).unwrap(), (17, 1));
    }

    #[test]
    fn stage_one_bottleneck_macs() {
        let block = BlockSpec {
            stage: 1,
            in_channels: 64,
            mid_channels: 64,
            out_channels: 256,
            stride: 1,
            projection: false,
            body: BlockBody::Bottleneck(CandidateOp::BASELINE),
            choice: None,
        };
        let expected = 3136 * (64 * 64 + 9 * 64 * 64 + 64 * 256);
        assert_eq!(block_macs(&block, 56).unwrap(), (expected, 56));
    }

    #[test]
    fn input_too_small() {
        let d = build_base_resnet50(10, false).unwrap();
        assert!(count_macs(&d, 0).is_err());
        assert!(count_macs(&d, 224).is_ok());
    }
}
