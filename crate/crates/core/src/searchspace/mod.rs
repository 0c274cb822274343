//! ResNet-50 descriptions, search scopes and supernet construction.
//!
//! A description is a plain value: stem, an ordered list of blocks grouped
//! into stages, and a classifier head. Search-unit blocks hold the six joint
//! (kernel, activation) candidates; everything else is a concrete bottleneck.

mod count;
mod json;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ops::Activation;

pub use count::{block_macs, count_macs, count_params, format_millions, CountMode};

/// Candidate kernel sizes for the middle convolution, in candidate-id order.
pub const KERNELS: [usize; 2] = [3, 5];
pub const NUM_CANDIDATES: usize = KERNELS.len() * Activation::ALL.len();

/// Block counts and bottleneck widths of the four ResNet-50 stages.
pub const RESNET50_STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];
pub const RESNET50_STAGE_MIDS: [usize; 4] = [64, 128, 256, 512];
pub const BOTTLENECK_EXPANSION: usize = 4;

/// One concrete choice for a search unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CandidateOp {
    pub kernel: usize,
    pub activation: Activation,
}

impl CandidateOp {
    /// Plain ResNet bottleneck: 3x3 middle conv, ReLU.
    pub const BASELINE: CandidateOp = CandidateOp {
        kernel: 3,
        activation: Activation::Relu,
    };

    pub fn from_id(id: usize) -> Option<Self> {
        (id < NUM_CANDIDATES).then(|| CandidateOp {
            kernel: KERNELS[id / 3],
            activation: Activation::ALL[id % 3],
        })
    }

    /// `3 * kernel_index + activation_index`.
    pub fn id(&self) -> usize {
        let k = KERNELS.iter().position(|&k| k == self.kernel).expect("candidate kernel");
        3 * k + self.activation.index()
    }

    pub fn all() -> Vec<CandidateOp> {
        (0..NUM_CANDIDATES).filter_map(CandidateOp::from_id).collect()
    }

    /// Series label, e.g. `k5-mish`.
    pub fn label(&self) -> String {
        format!("k{}-{}", self.kernel, self.activation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    None,
    Small,
    Medium,
    Large,
    Full,
}

impl Scope {
    pub const SEARCHABLE: [Scope; 4] = [Scope::Small, Scope::Medium, Scope::Large, Scope::Full];

    /// Number of deepest stages covered.
    pub fn depth(self) -> usize {
        match self {
            Scope::None => 0,
            Scope::Small => 1,
            Scope::Medium => 2,
            Scope::Large => 3,
            Scope::Full => 4,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Scope::None => "none",
            Scope::Small => "s",
            Scope::Medium => "m",
            Scope::Large => "l",
            Scope::Full => "f",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scope::None),
            "s" => Ok(Scope::Small),
            "m" => Ok(Scope::Medium),
            "l" => Ok(Scope::Large),
            "f" => Ok(Scope::Full),
            _ => Err(Error::format("scope", format!("`{s}` is not one of none, s, m, l, f"))),
        }
    }
}

/// Block indices of ResNet-50 covered by a scope: a contiguous suffix of the
/// 16 blocks made of whole stages.
pub fn scope_blocks(scope: Scope) -> Vec<usize> {
    suffix_for_scope(&RESNET50_STAGE_BLOCKS, scope)
}

fn suffix_for_scope(stage_blocks: &[usize], scope: Scope) -> Vec<usize> {
    let total: usize = stage_blocks.iter().sum();
    let depth = scope.depth().min(stage_blocks.len());
    let covered: usize = stage_blocks.iter().rev().take(depth).sum();
    (total - covered..total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StemKind {
    /// 7x7/2 conv, BN, ReLU, 3x3/2 max-pool.
    Standard,
    /// 3x3/1 conv, BN, ReLU, no pooling.
    SmallInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StemSpec {
    pub kind: StemKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl StemSpec {
    pub fn kernel(&self) -> usize {
        match self.kind {
            StemKind::Standard => 7,
            StemKind::SmallInput => 3,
        }
    }

    pub fn stride(&self) -> usize {
        match self.kind {
            StemKind::Standard => 2,
            StemKind::SmallInput => 1,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel() / 2
    }

    pub fn has_max_pool(&self) -> bool {
        self.kind == StemKind::Standard
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockBody {
    Bottleneck(CandidateOp),
    SearchUnit(Vec<CandidateOp>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Bottleneck,
    SearchUnit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    /// 1-based stage number.
    pub stage: usize,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub projection: bool,
    pub body: BlockBody,
    /// Candidate id this block was resolved from, for blocks that came out
    /// of a search unit.
    pub choice: Option<usize>,
}

impl BlockSpec {
    pub fn kind(&self) -> BlockKind {
        match self.body {
            BlockBody::Bottleneck(_) => BlockKind::Bottleneck,
            BlockBody::SearchUnit(_) => BlockKind::SearchUnit,
        }
    }

    /// Candidate ops this block can run: one for a bottleneck, six for a
    /// search unit.
    pub fn ops(&self) -> &[CandidateOp] {
        match &self.body {
            BlockBody::Bottleneck(op) => std::slice::from_ref(op),
            BlockBody::SearchUnit(c) => c,
        }
    }

    pub fn is_search_unit(&self) -> bool {
        self.kind() == BlockKind::SearchUnit
    }

    /// The same block with a fixed op.
    pub fn with_op(&self, op: CandidateOp) -> BlockSpec {
        BlockSpec {
            body: BlockBody::Bottleneck(op),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchDescription {
    pub num_classes: usize,
    pub stem: StemSpec,
    pub blocks: Vec<BlockSpec>,
    pub scope: Scope,
}

/// Shape of a ResNet-style bottleneck network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResNetShape {
    pub num_classes: usize,
    pub in_channels: usize,
    pub stem: StemKind,
    pub stem_channels: usize,
    pub stage_blocks: Vec<usize>,
    pub stage_mids: Vec<usize>,
}

impl ResNetShape {
    pub fn resnet50(num_classes: usize, small_input_stem: bool) -> Self {
        ResNetShape {
            num_classes,
            in_channels: 3,
            stem: if small_input_stem { StemKind::SmallInput } else { StemKind::Standard },
            stem_channels: 64,
            stage_blocks: RESNET50_STAGE_BLOCKS.to_vec(),
            stage_mids: RESNET50_STAGE_MIDS.to_vec(),
        }
    }

    /// ResNet-50 topology with every width divided by `divisor`.
    pub fn resnet50_scaled(num_classes: usize, small_input_stem: bool, divisor: usize) -> Result<Self> {
        if divisor == 0 || 64 % divisor != 0 {
            return Err(Error::Config(format!("width divisor {divisor} must divide 64")));
        }
        let mut shape = Self::resnet50(num_classes, small_input_stem);
        shape.stem_channels /= divisor;
        shape.stage_mids.iter_mut().for_each(|m| *m /= divisor);
        Ok(shape)
    }

    pub fn build(&self) -> Result<ArchDescription> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.stage_blocks.len() != self.stage_mids.len() || self.stage_blocks.is_empty() {
            return Err(Error::Config("stage block counts and widths must pair up".into()));
        }
        if self.stage_blocks.iter().chain(&self.stage_mids).any(|&v| v == 0) || self.stem_channels == 0 {
            return Err(Error::Config("stage sizes and widths must be positive".into()));
        }
        let mut blocks = Vec::new();
        let mut in_channels = self.stem_channels;
        for (s, (&count, &mid)) in self.stage_blocks.iter().zip(&self.stage_mids).enumerate() {
            for b in 0..count {
                let out = mid * BOTTLENECK_EXPANSION;
                blocks.push(BlockSpec {
                    stage: s + 1,
                    in_channels,
                    mid_channels: mid,
                    out_channels: out,
                    stride: if b == 0 && s > 0 { 2 } else { 1 },
                    projection: b == 0,
                    body: BlockBody::Bottleneck(CandidateOp::BASELINE),
                    choice: None,
                });
                in_channels = out;
            }
        }
        let desc = ArchDescription {
            num_classes: self.num_classes,
            stem: StemSpec {
                kind: self.stem,
                in_channels: self.in_channels,
                out_channels: self.stem_channels,
            },
            blocks,
            scope: Scope::None,
        };
        desc.validate()?;
        Ok(desc)
    }
}

/// Standard ResNet-50 (16 bottlenecks in stages of 3, 4, 6, 3).
pub fn build_base_resnet50(num_classes: usize, small_input_stem: bool) -> Result<ArchDescription> {
    ResNetShape::resnet50(num_classes, small_input_stem).build()
}

/// Replaces every block inside `scope` with a six-candidate search unit.
pub fn build_supernet(base: &ArchDescription, scope: Scope) -> Result<ArchDescription> {
    if base.scope != Scope::None || base.blocks.iter().any(BlockSpec::is_search_unit) {
        return Err(Error::Config("base architecture already contains search units".into()));
    }
    let mut desc = base.clone();
    for i in desc.scope_blocks(scope) {
        let block = &mut desc.blocks[i];
        block.body = BlockBody::SearchUnit(CandidateOp::all());
        block.choice = None;
    }
    desc.scope = scope;
    desc.validate()?;
    Ok(desc)
}

impl ArchDescription {
    pub fn num_stages(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.stage)
    }

    pub fn stage_blocks(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_stages()];
        for b in &self.blocks {
            counts[b.stage - 1] += 1;
        }
        counts
    }

    /// Blocks covered by `scope` in this network's stage layout.
    pub fn scope_blocks(&self, scope: Scope) -> Vec<usize> {
        suffix_for_scope(&self.stage_blocks(), scope)
    }

    pub fn search_block_indices(&self) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&i| self.blocks[i].is_search_unit()).collect()
    }

    /// Resolves every search unit to the given candidate id (one per search
    /// block, in block order).
    pub fn resolve(&self, choices: &[usize]) -> Result<FinalArchitecture> {
        let search = self.search_block_indices();
        if choices.len() != search.len() {
            return Err(Error::Config(format!(
                "{} choices for {} search blocks",
                choices.len(),
                search.len()
            )));
        }
        let mut description = self.clone();
        let mut picked = Vec::with_capacity(choices.len());
        for (&i, &id) in search.iter().zip(choices) {
            let op = CandidateOp::from_id(id)
                .filter(|op| self.blocks[i].ops().contains(op))
                .ok_or_else(|| Error::Config(format!("candidate {id} not available in block {i}")))?;
            let mut block = self.blocks[i].with_op(op);
            block.choice = Some(id);
            description.blocks[i] = block;
            picked.push(op);
        }
        description.scope = Scope::None;
        Ok(FinalArchitecture {
            choices: picked,
            description,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.stem.in_channels == 0 || self.stem.out_channels == 0 {
            return bad("stem channels must be positive".into());
        }
        let mut prev_out = self.stem.out_channels;
        let mut prev_stage = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            let first_of_stage = b.stage != prev_stage;
            if first_of_stage && b.stage != prev_stage + 1 {
                return bad(format!("block {i}: stage {} follows stage {prev_stage}", b.stage));
            }
            if b.in_channels != prev_out {
                return bad(format!("block {i}: {} input channels after {prev_out}", b.in_channels));
            }
            if b.mid_channels == 0 || b.out_channels != BOTTLENECK_EXPANSION * b.mid_channels {
                return bad(format!("block {i}: out {} != 4 x mid {}", b.out_channels, b.mid_channels));
            }
            if b.stride != 1 && b.stride != 2 {
                return bad(format!("block {i}: stride {}", b.stride));
            }
            if b.projection != first_of_stage {
                return bad(format!("block {i}: projection shortcut must mark exactly the first block of a stage"));
            }
            if !b.projection && (b.stride != 1 || b.in_channels != b.out_channels) {
                return bad(format!("block {i}: identity shortcut with changing shape"));
            }
            match &b.body {
                BlockBody::SearchUnit(c) => {
                    if *c != CandidateOp::all() {
                        return bad(format!("block {i}: search unit must carry the 6 candidates in id order"));
                    }
                    if b.choice.is_some() {
                        return bad(format!("block {i}: search unit cannot carry a choice"));
                    }
                }
                BlockBody::Bottleneck(op) => {
                    if !KERNELS.contains(&op.kernel) {
                        return bad(format!("block {i}: kernel {}", op.kernel));
                    }
                    if b.choice.is_some_and(|c| c != op.id()) {
                        return bad(format!("block {i}: choice does not match its op"));
                    }
                }
            }
            prev_out = b.out_channels;
            prev_stage = b.stage;
        }
        if self.search_block_indices() != self.scope_blocks(self.scope) {
            return bad(format!("search units do not match scope `{}`", self.scope));
        }
        Ok(())
    }

    /// Feature width entering the classifier.
    pub fn head_features(&self) -> usize {
        self.blocks.last().map_or(self.stem.out_channels, |b| b.out_channels)
    }

    /// Number of joint architectures encoded by the search units.
    pub fn search_space_size(&self) -> u128 {
        self.blocks.iter().map(|b| b.ops().len() as u128).product()
    }
}

/// A supernet with each search unit resolved to one candidate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinalArchitecture {
    pub choices: Vec<CandidateOp>,
    pub description: ArchDescription,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks the highest-weighted candidate of every search block.
pub fn derive_final_architecture(supernet: &ArchDescription, alphas: &[Vec<f64>]) -> Result<FinalArchitecture> {
    let search = supernet.search_block_indices();
    if alphas.len() != search.len() {
        return Err(Error::Config(format!(
            "{} architecture vectors for {} search blocks",
            alphas.len(),
            search.len()
        )));
    }
    let mut choices = Vec::with_capacity(alphas.len());
    for (&block, alpha) in search.iter().zip(alphas) {
        if alpha.len() != NUM_CANDIDATES {
            return Err(Error::Config(format!(
                "block {block}: architecture vector has {} entries, expected {NUM_CANDIDATES}",
                alpha.len()
            )));
        }
        if alpha.iter().any(|a| a.is_nan()) {
            return Err(Error::NonFinite(format!("architecture vector of block {block}")));
        }
        choices.push(argmax_lowest(alpha).expect("non-empty"));
    }
    supernet.resolve(&choices)
}
