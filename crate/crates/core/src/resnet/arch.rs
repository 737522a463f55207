// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hard-coded ResNet18 architecture: parameter table, block identities and
//! the I/B/O tap registry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output channels of stages 1..=4.
pub const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const NUM_CLASSES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    BnWeight,
    BnBias,
    BnRunningMean,
    BnRunningVar,
    FcWeight,
    FcBias,
}

impl ParamKind {
    /// Trainable parameters; running statistics are buffers.
    pub fn is_learnable(self) -> bool {
        !matches!(self, Self::BnRunningMean | Self::BnRunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Every tensor of the model in canonical (state-dict) order.
pub fn parameter_table() -> Vec<ParamSpec> {
    let mut table = Vec::with_capacity(102);
    let conv = |t: &mut Vec<ParamSpec>, name: String, o: usize, i: usize, k: usize| {
        t.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![o, i, k, k],
            kind: ParamKind::ConvWeight,
        });
    };
    let bn = |t: &mut Vec<ParamSpec>, name: String, c: usize| {
        for (suffix, kind) in [
            ("weight", ParamKind::BnWeight),
            ("bias", ParamKind::BnBias),
            ("running_mean", ParamKind::BnRunningMean),
            ("running_var", ParamKind::BnRunningVar),
        ] {
            t.push(ParamSpec {
                name: format!("{name}.{suffix}"),
                shape: vec![c],
                kind,
            });
        }
    };
    conv(&mut table, "conv1".into(), 64, 3, 7);
    bn(&mut table, "bn1".into(), 64);
    let mut cin = 64;
    for (s, &width) in STAGE_WIDTHS.iter().enumerate() {
        for b in 0..2 {
            let p = format!("layer{}.{b}", s + 1);
            conv(&mut table, format!("{p}.conv1"), width, if b == 0 { cin } else { width }, 3);
            bn(&mut table, format!("{p}.bn1"), width);
            conv(&mut table, format!("{p}.conv2"), width, width, 3);
            bn(&mut table, format!("{p}.bn2"), width);
            if b == 0 && s > 0 {
                conv(&mut table, format!("{p}.downsample.0"), width, cin, 1);
                bn(&mut table, format!("{p}.downsample.1"), width);
            }
        }
        cin = width;
    }
    table.push(ParamSpec {
        name: "fc.weight".into(),
        shape: vec![NUM_CLASSES, 512],
        kind: ParamKind::FcWeight,
    });
    table.push(ParamSpec {
        name: "fc.bias".into(),
        shape: vec![NUM_CLASSES],
        kind: ParamKind::FcBias,
    });
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Simple,
    Downsample,
}

/// A residual block `stage.index`, e.g. `3.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRef {
    stage: u8,
    index: u8,
}

impl BlockRef {
    pub fn new(stage: u8, index: u8) -> Result<Self> {
        if !(1..=4).contains(&stage) || index > 1 {
            return Err(Error::invalid(
                "block",
                format!("no block {stage}.{index} in ResNet18 (stages 1..4, index 0|1)"),
            ));
        }
        Ok(Self { stage, index })
    }

    pub fn stage(self) -> u8 {
        self.stage
    }

    pub fn index(self) -> u8 {
        self.index
    }

    pub fn kind(self) -> BlockKind {
        if self.index == 0 && self.stage >= 2 {
            BlockKind::Downsample
        } else {
            BlockKind::Simple
        }
    }

    pub fn is_downsample(self) -> bool {
        self.kind() == BlockKind::Downsample
    }

    /// Output channels of the block.
    pub fn width(self) -> usize {
        STAGE_WIDTHS[self.stage as usize - 1]
    }

    /// Position in execution order, 0 for block 1.0 through 7 for 4.1.
    pub fn ordinal(self) -> usize {
        (self.stage as usize - 1) * 2 + self.index as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Self {
        assert!(ordinal < 8);
        Self {
            stage: (ordinal / 2 + 1) as u8,
            index: (ordinal % 2) as u8,
        }
    }

    /// Parameter-name prefix, e.g. `layer3.1`.
    pub fn prefix(self) -> String {
        format!("layer{}.{}", self.stage, self.index)
    }

    /// Block 1.0 is excluded: its input comes straight from the max pool.
    pub fn is_studied(self) -> bool {
        !(self.stage == 1 && self.index == 0)
    }

    pub fn ensure_studied(self) -> Result<()> {
        if self.is_studied() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "block {self} is not analysed (its input is the max-pool output)"
            )))
        }
    }

    /// The block executed just before this one, if any.
    pub fn previous(self) -> Option<Self> {
        self.ordinal().checked_sub(1).map(Self::from_ordinal)
    }
}

/// Blocks 1.1 through 4.1.
pub fn studied_blocks() -> [BlockRef; 7] {
    std::array::from_fn(|i| BlockRef::from_ordinal(i + 1))
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.stage, self.index)
    }
}

impl FromStr for BlockRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('.')
            .ok_or_else(|| Error::invalid("block", format!("expected `stage.index`, got `{s}`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u8>()
                .map_err(|_| Error::invalid("block", format!("bad block `{s}`")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

impl Serialize for BlockRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlockRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// The addend that bypasses the block.
    Input,
    /// The block's second batch norm.
    Block,
    /// The stream sum, before the block's final ReLU.
    Output,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Input, Role::Block, Role::Output];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Input => "input",
            Role::Block => "block",
            Role::Output => "output",
        }
    }
}

/// One of a block's three measurement points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tap {
    pub block: BlockRef,
    pub role: Role,
}

impl Tap {
    pub fn new(block: BlockRef, role: Role) -> Self {
        Self { block, role }
    }

    pub fn input(block: BlockRef) -> Self {
        Self::new(block, Role::Input)
    }

    pub fn block(block: BlockRef) -> Self {
        Self::new(block, Role::Block)
    }

    pub fn output(block: BlockRef) -> Self {
        Self::new(block, Role::Output)
    }

    pub fn channels(self) -> usize {
        self.block.width()
    }
}

/// The 21 taps of blocks 1.1..4.1.
pub fn studied_taps() -> Vec<Tap> {
    studied_blocks()
        .into_iter()
        .flat_map(|b| Role::ALL.map(|r| Tap::new(b, r)))
        .collect()
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.block, self.role.as_str())
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (block, role) = s
            .rsplit_once('.')
            .ok_or_else(|| Error::invalid("tap", format!("expected `stage.index.role`, got `{s}`")))?;
        let role = match role {
            "input" | "I" => Role::Input,
            "block" | "B" => Role::Block,
            "output" | "O" => Role::Output,
            other => return Err(Error::invalid("tap", format!("unknown role `{other}`"))),
        };
        Ok(Self::new(block.parse()?, role))
    }
}

impl Serialize for Tap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
