//! High-level computational-graph optimization.
//!
//! Two passes over the XGIR graph:
//!
//! * [`rewrite`]: mathematical-property based rewriting that removes
//!   operations and replaces costly operator combinations with cheaper ones,
//!   driven by the FLOP convention of `xgir_core::flops`.
//! * [`fusion`]: operator fusion via mapping-type classification and a
//!   three-way profitability table, plus fused execution that skips
//!   materializing intermediate results.

pub mod fusion;
pub mod rewrite;

pub use fusion::{
    apply_fusion, classify_mapping_type, execute_fused, fusion_profitability, plan_fusion,
    FusionError, FusionPlan, MappingType, Profitability,
};
pub use rewrite::{
    apply_rewrites, builtin_rules, match_rule, Binding, Property, RewriteError, RewriteLog,
    RewriteRule, RewriteStep,
};
