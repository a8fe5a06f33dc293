//! Global summarization heads that turn a `channels×height×width` feature
//! map into class scores.
//!
//! `max`, `avg`, `roi` and `flatten` produce a vector that goes through an
//! affine layer and a softmax. `att` classifies directly: a 1×1 classification
//! branch with a per-bin softmax over classes is weighted by a sigmoid
//! attention branch normalized to sum to one over the plane. `roi_att` feeds
//! the 16×16 block maxima into the attention head instead of flattening them.
//!
//! `flatten` is accepted on every topology, but on an unpooled 512×64×320 map
//! its affine layer holds over 100 million weights for ten classes.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Padding, ParamId, Real, Tape, Var, Bound};

/// Side of the square ROI sub-areas.
pub const ROI_BLOCK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Flatten,
    Max,
    Avg,
    Roi,
    Att,
    RoiAtt,
}

impl HeadKind {
    pub const ALL: [HeadKind; 6] = [
        HeadKind::Flatten,
        HeadKind::Max,
        HeadKind::Avg,
        HeadKind::Roi,
        HeadKind::Att,
        HeadKind::RoiAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Flatten => "flatten",
            HeadKind::Max => "max",
            HeadKind::Avg => "avg",
            HeadKind::Roi => "roi",
            HeadKind::Att => "att",
            HeadKind::RoiAtt => "roi_att",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, HeadKind::Att | HeadKind::RoiAtt)
    }

    pub fn uses_roi(self) -> bool {
        matches!(self, HeadKind::Roi | HeadKind::RoiAtt)
    }

    pub fn code(self) -> u32 {
        HeadKind::ALL.iter().position(|&h| h == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        HeadKind::ALL.get(code as usize).copied()
    }

    /// Shape of the tensor the head summarizes, given the final map shape.
    pub fn summary_dims(self, map: [usize; 3]) -> Result<[usize; 3]> {
        let [h, p, q] = map;
        if self.uses_roi() {
            if p % ROI_BLOCK != 0 || q % ROI_BLOCK != 0 {
                return Err(shape_err!(
                    "ROI pooling needs a map divisible by {ROI_BLOCK}, got {p}×{q}"
                ));
            }
            Ok([h, p / ROI_BLOCK, q / ROI_BLOCK])
        } else {
            Ok(map)
        }
    }

    /// Input width of the affine classifier for non-attention heads.
    pub fn affine_inputs(self, map: [usize; 3]) -> Result<Option<usize>> {
        let [h, p, q] = self.summary_dims(map)?;
        Ok(match self {
            HeadKind::Max | HeadKind::Avg => Some(h),
            HeadKind::Flatten | HeadKind::Roi => Some(h * p * q),
            HeadKind::Att | HeadKind::RoiAtt => None,
        })
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown head kind {s:?}")))
    }
}

/// Parameters of an affine classifier, `classes × inputs`.
#[derive(Clone, Copy, Debug)]
pub struct AffineParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Two 1×1 convolutions with one output channel per class each.
#[derive(Clone, Copy, Debug)]
pub struct AttentionHead {
    pub cls_weight: ParamId,
    pub cls_bias: ParamId,
    pub att_weight: ParamId,
    pub att_bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub enum HeadParams {
    Affine(AffineParams),
    Attention(AttentionHead),
}

/// Output of a head: class scores and, for attention heads, the normalized
/// attention map of shape `classes×height×width`.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub scores: Var,
    pub attention: Option<Var>,
}

/// Per-channel maximum over the whole plane.
pub fn global_max<T: Real>(tape: &mut Tape<T>, map: Var) -> Result<Var> {
    tape.channel_max(map)
}

/// Per-channel mean over the whole plane.
pub fn global_avg<T: Real>(tape: &mut Tape<T>, map: Var) -> Result<Var> {
    tape.channel_mean(map)
}

/// Max of each 16×16 block: `c×h×w → c×(h/16)×(w/16)`.
pub fn roi_pool<T: Real>(tape: &mut Tape<T>, map: Var) -> Result<Var> {
    tape.block_max(map, ROI_BLOCK)
}

/// Attention pooling from precomputed branch logits, each
/// `classes×height×width`. Returns the class probabilities and the
/// normalized attention map.
pub fn attend<T: Real>(tape: &mut Tape<T>, cls_logits: Var, att_logits: Var) -> Result<(Var, Var)> {
    if tape.shape(cls_logits) != tape.shape(att_logits) {
        return Err(shape_err!(
            "attention branches disagree: {:?} vs {:?}",
            tape.shape(cls_logits),
            tape.shape(att_logits)
        ));
    }
    let c = tape.softmax(cls_logits, 0)?;
    let a = tape.sigmoid(att_logits);
    let a_norm = tape.channel_normalize(a)?;
    let weighted = tape.mul(a_norm, c)?;
    let y = tape.channel_sum(weighted)?;
    Ok((y, a_norm))
}

pub fn attention_pool<T: Real>(
    tape: &mut Tape<T>,
    map: Var,
    head: &AttentionHead,
    bound: &Bound,
) -> Result<(Var, Var)> {
    let cls = tape.conv2d(
        map,
        bound.var(head.cls_weight),
        Some(bound.var(head.cls_bias)),
        1,
        Padding::Valid,
    )?;
    let att = tape.conv2d(
        map,
        bound.var(head.att_weight),
        Some(bound.var(head.att_bias)),
        1,
        Padding::Valid,
    )?;
    attend(tape, cls, att)
}

/// `softmax(W·R + b)` for a pooled vector or a flattened map.
pub fn classify_from_pooled<T: Real>(
    tape: &mut Tape<T>,
    pooled: Var,
    affine: &AffineParams,
    bound: &Bound,
) -> Result<Var> {
    let flat = if tape.value(pooled).rank() == 1 {
        pooled
    } else {
        tape.flatten(pooled)
    };
    let logits = tape.linear(flat, bound.var(affine.weight), Some(bound.var(affine.bias)))?;
    tape.softmax(logits, 0)
}

/// Runs the head selected by `kind` over the final feature map.
pub fn apply_head<T: Real>(
    tape: &mut Tape<T>,
    kind: HeadKind,
    params: &HeadParams,
    bound: &Bound,
    map: Var,
) -> Result<HeadOutput> {
    match (kind, params) {
        (HeadKind::Att | HeadKind::RoiAtt, HeadParams::Attention(head)) => {
            let input = if kind == HeadKind::RoiAtt {
                roi_pool(tape, map)?
            } else {
                map
            };
            let (scores, attention) = attention_pool(tape, input, head, bound)?;
            Ok(HeadOutput {
                scores,
                attention: Some(attention),
            })
        }
        (_, HeadParams::Affine(affine)) if !kind.is_attention() => {
            let pooled = match kind {
                HeadKind::Max => global_max(tape, map)?,
                HeadKind::Avg => global_avg(tape, map)?,
                HeadKind::Roi => roi_pool(tape, map)?,
                _ => map,
            };
            let scores = classify_from_pooled(tape, pooled, affine, bound)?;
            Ok(HeadOutput {
                scores,
                attention: None,
            })
        }
        _ => Err(Error::Config(format!(
            "head kind {kind} does not match its parameters"
        ))),
    }
}
