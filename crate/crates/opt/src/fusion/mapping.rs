//! Mapping-type classification and the fusion profitability table.
//!
//! Operators are classified by the dependence relation between their input
//! and output elements. Pairs of mapping types get one of three verdicts:
//! fuse directly, reject, or decide by the size of the intermediate that
//! fusion would eliminate ("profile"). The whole table lives in this file so
//! the policy can be audited and edited in one place.

use serde::{Deserialize, Serialize};

use xgir_core::ops::Op;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MappingType {
    /// Each output element depends on exactly one input element in place
    /// (elementwise arithmetic and activations).
    OneToOne,
    /// One input element fans out to many outputs (broadcast).
    OneToMany,
    /// Many input elements collapse into one output (reductions, pooling).
    ManyToOne,
    /// Dense dependence both ways (convolution, matmul, softmax).
    ManyToMany,
    /// Pure data movement: each output is one input element relocated
    /// (reshape, transpose, concat, gather).
    Reorganize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Profitability {
    Fuse,
    Reject,
    Profile,
}

use MappingType::{ManyToMany as MM, ManyToOne as MO, OneToMany as OM, OneToOne as O, Reorganize as R};
use Profitability::{Fuse as F, Profile as P, Reject as X};

const N: usize = 5;

const fn idx(t: MappingType) -> usize {
    match t {
        O => 0,
        OM => 1,
        MO => 2,
        MM => 3,
        R => 4,
    }
}

/// Verdict for fusing a producer of type `row` into a consumer of type
/// `col`. Anything touching OneToOne fuses; data movement fuses into either
/// side; two heavy loop nests back to back are rejected; broadcast against
/// heavy ops and reduce against dense ops depend on the intermediate size.
#[rustfmt::skip]
const VERDICT: [[Profitability; N]; N] = [
    //            O  OM  MO  MM  R
    /* O  */    [ F,  F,  F,  F,  F ],
    /* OM */    [ F,  F,  P,  P,  F ],
    /* MO */    [ F,  P,  X,  P,  F ],
    /* MM */    [ F,  P,  P,  X,  F ],
    /* R  */    [ F,  F,  F,  F,  F ],
];

/// Mapping type of the composite operator after fusing `row` into `col`;
/// `None` where the verdict is Reject.
#[rustfmt::skip]
const FUSED: [[Option<MappingType>; N]; N] = [
    //                 O         OM        MO        MM        R
    /* O  */    [ Some(O),  Some(OM), Some(MO), Some(MM), Some(R)  ],
    /* OM */    [ Some(OM), Some(OM), Some(MM), Some(MM), Some(OM) ],
    /* MO */    [ Some(MO), Some(MM), None,     Some(MM), Some(MO) ],
    /* MM */    [ Some(MM), Some(MM), Some(MM), None,     Some(MM) ],
    /* R  */    [ Some(R),  Some(OM), Some(MO), Some(MM), Some(R)  ],
];

/// Classify an operator kind. Total over the operator set; `Fused` nodes
/// fold their members through the fusion-result table.
pub fn classify_mapping_type(op: &Op) -> MappingType {
    match op {
        Op::Add
        | Op::Sub
        | Op::Mul
        | Op::Div
        | Op::Sqrt
        | Op::Square
        | Op::Recip
        | Op::Abs
        | Op::Exp
        | Op::Relu
        | Op::Sigmoid
        | Op::Tanh => O,
        Op::Broadcast { .. } => OM,
        Op::ReduceSum { .. } | Op::ReduceProd { .. } | Op::MaxPool { .. } | Op::AvgPool { .. } => MO,
        Op::Conv2D { .. } | Op::MatMul | Op::Softmax { .. } => MM,
        Op::Reshape { .. } | Op::Transpose { .. } | Op::Concat { .. } | Op::Gather { .. } => R,
        Op::Fused { members } => {
            let mut t = classify_mapping_type(&members[0].op);
            for m in &members[1..] {
                t = fused_mapping_type(t, classify_mapping_type(&m.op)).unwrap_or(MM);
            }
            t
        }
    }
}

/// Three-way profitability of fusing a `first`-typed producer into a
/// `second`-typed consumer.
pub fn fusion_profitability(first: MappingType, second: MappingType) -> Profitability {
    VERDICT[idx(first)][idx(second)]
}

/// Mapping type of the fused composite, when fusion is not rejected.
pub fn fused_mapping_type(first: MappingType, second: MappingType) -> Option<MappingType> {
    FUSED[idx(first)][idx(second)]
}
