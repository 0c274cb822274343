//! Canonical JSON form of descriptions: sorted keys, 2-space indent,
//! trailing newline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::Activation;

use super::{ArchDescription, BlockBody, BlockSpec, CandidateOp, FinalArchitecture, Scope, StemKind, StemSpec};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDoc {
    num_classes: usize,
    stem: StemDoc,
    blocks: Vec<BlockDoc>,
    scope: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StemDoc {
    kind: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    max_pool: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelsDoc {
    #[serde(rename = "in")]
    input: usize,
    mid: usize,
    out: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateDoc {
    candidate_id: usize,
    kernel: usize,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    kind: String,
    stage: usize,
    channels: ChannelsDoc,
    stride: usize,
    projection: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<CandidateDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choice: Option<usize>,
}

fn stem_kind_name(kind: StemKind) -> &'static str {
    match kind {
        StemKind::Standard => "standard",
        StemKind::SmallInput => "small_input",
    }
}

impl From<&ArchDescription> for ArchDoc {
    fn from(d: &ArchDescription) -> Self {
        ArchDoc {
            num_classes: d.num_classes,
            stem: StemDoc {
                kind: stem_kind_name(d.stem.kind).into(),
                in_channels: d.stem.in_channels,
                out_channels: d.stem.out_channels,
                kernel: d.stem.kernel(),
                stride: d.stem.stride(),
                max_pool: d.stem.has_max_pool(),
            },
            blocks: d.blocks.iter().map(BlockDoc::from).collect(),
            scope: d.scope.code().into(),
        }
    }
}

impl From<&BlockSpec> for BlockDoc {
    fn from(b: &BlockSpec) -> Self {
        let (kind, kernel, activation, candidates) = match &b.body {
            BlockBody::Bottleneck(op) => ("bottleneck", Some(op.kernel), Some(op.activation), None),
            BlockBody::SearchUnit(c) => (
                "search_unit",
                None,
                None,
                Some(
                    c.iter()
                        .map(|op| CandidateDoc {
                            candidate_id: op.id(),
                            kernel: op.kernel,
                            activation: op.activation,
                        })
                        .collect(),
                ),
            ),
        };
        BlockDoc {
            kind: kind.into(),
            stage: b.stage,
            channels: ChannelsDoc {
                input: b.in_channels,
                mid: b.mid_channels,
                out: b.out_channels,
            },
            stride: b.stride,
            projection: b.projection,
            kernel,
            activation,
            candidates,
            choice: b.choice,
        }
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("architecture JSON", detail)
}

impl TryFrom<ArchDoc> for ArchDescription {
    type Error = Error;

    fn try_from(doc: ArchDoc) -> Result<Self> {
        let kind = match doc.stem.kind.as_str() {
            "standard" => StemKind::Standard,
            "small_input" => StemKind::SmallInput,
            other => return Err(bad(format!("stem kind `{other}`"))),
        };
        let stem = StemSpec {
            kind,
            in_channels: doc.stem.in_channels,
            out_channels: doc.stem.out_channels,
        };
        if (stem.kernel(), stem.stride(), stem.has_max_pool()) != (doc.stem.kernel, doc.stem.stride, doc.stem.max_pool) {
            return Err(bad("stem kernel/stride/max_pool inconsistent with its kind"));
        }
        let blocks = doc
            .blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                let body = match (b.kind.as_str(), b.kernel, b.activation, b.candidates) {
                    ("bottleneck", Some(kernel), Some(activation), None) => {
                        BlockBody::Bottleneck(CandidateOp { kernel, activation })
                    }
                    ("search_unit", None, None, Some(c)) => BlockBody::SearchUnit(
                        c.into_iter()
                            .map(|c| {
                                let op = CandidateOp {
                                    kernel: c.kernel,
                                    activation: c.activation,
                                };
                                if super::KERNELS.contains(&c.kernel) && op.id() == c.candidate_id {
                                    Ok(op)
                                } else {
                                    Err(bad(format!("block {i}: candidate id {} mismatch", c.candidate_id)))
                                }
                            })
                            .collect::<Result<_>>()?,
                    ),
                    (kind, ..) => return Err(bad(format!("block {i}: inconsistent fields for kind `{kind}`"))),
                };
                Ok(BlockSpec {
                    stage: b.stage,
                    in_channels: b.channels.input,
                    mid_channels: b.channels.mid,
                    out_channels: b.channels.out,
                    stride: b.stride,
                    projection: b.projection,
                    body,
                    choice: b.choice,
                })
            })
            .collect::<Result<_>>()?;
        let desc = ArchDescription {
            num_classes: doc.num_classes,
            stem,
            blocks,
            scope: doc.scope.parse()?,
        };
        desc.validate()?;
        Ok(desc)
    }
}

fn emit<T: Serialize>(doc: &T) -> String {
    // Value maps are ordered by key, which gives the canonical layout.
    let value = serde_json::to_value(doc).expect("plain data serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("plain data serializes");
    s.push('\n');
    s
}

impl ArchDescription {
    pub fn to_json(&self) -> String {
        emit(&ArchDoc::from(self))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ArchDoc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        doc.try_into()
    }
}

impl FinalArchitecture {
    pub fn to_json(&self) -> String {
        self.description.to_json()
    }

    /// Reads a resolved architecture; every block carrying a `choice`
    /// contributes one entry to `choices`.
    pub fn from_json(text: &str) -> Result<Self> {
        let description = ArchDescription::from_json(text)?;
        if description.scope != Scope::None || !description.search_block_indices().is_empty() {
            return Err(bad("final architecture contains search units"));
        }
        let choices = description
            .blocks
            .iter()
            .filter(|b| b.choice.is_some())
            .map(|b| b.ops()[0])
            .collect();
        Ok(FinalArchitecture { choices, description })
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    #[test]
    fn supernet_round_trips_byte_for_byte() {
        let sup = build_supernet(&build_base_resnet50(10, false).unwrap(), Scope::Medium).unwrap();
        let text = sup.to_json();
        assert!(text.ends_with("}\n"));
        assert!(text.starts_with("{\n  \"blocks\": ["));
        let back = ArchDescription::from_json(&text).unwrap();
        assert_eq!(back, sup);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn final_architecture_round_trips() {
        let sup = build_supernet(&build_base_resnet50(10, true).unwrap(), Scope::Small).unwrap();
        let fin = sup.resolve(&[4, 0, 2]).unwrap();
        let text = fin.to_json();
        let back = FinalArchitecture::from_json(&text).unwrap();
        assert_eq!(back, fin);
        assert_eq!(back.to_json(), text);
        assert!(FinalArchitecture::from_json(&sup.to_json()).is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_structure() {
        let d = build_base_resnet50(10, false).unwrap();
        let text = d.to_json().replacen("\"num_classes\"", "\"extra\": 1,\n  \"num_classes\"", 1);
        assert!(ArchDescription::from_json(&text).is_err());
        let text = d.to_json().replacen("\"scope\": \"none\"", "\"scope\": \"s\"", 1);
        assert!(ArchDescription::from_json(&text).is_err());
    }
}
