//! Output-equivalence comparison between two models on seeded random
//! inputs.

use xgir_core::exec::execute_reference;
use xgir_core::graph::Graph;
use xgir_core::{max_rel_error, zoo};

use crate::error::CliError;

pub struct CompareOutcome {
    pub max_rel_error: f32,
    pub worst_output: String,
    pub worst_input_index: usize,
    pub passed: bool,
}

/// Run both models on `n` seeded random inputs and compare outputs
/// positionally. Fails validation if the input/output signatures differ.
pub fn compare_models(
    a: &Graph,
    b: &Graph,
    n: usize,
    tolerance: f32,
    seed: u64,
) -> Result<CompareOutcome, CliError> {
    if a.inputs != b.inputs {
        return Err(CliError::Validation(
            "models declare different inputs".into(),
        ));
    }
    if a.outputs.len() != b.outputs.len() {
        return Err(CliError::Validation(format!(
            "models declare {} vs {} outputs",
            a.outputs.len(),
            b.outputs.len()
        )));
    }
    let mut worst = 0f32;
    let mut worst_output = String::new();
    let mut worst_input = 0usize;
    for (idx, feed) in zoo::random_inputs(a, seed, n).iter().enumerate() {
        let va = execute_reference(a, feed)?;
        let vb = execute_reference(b, feed)?;
        for (oa, ob) in a.outputs.iter().zip(&b.outputs) {
            let err = max_rel_error(&vb[ob], &va[oa]);
            if err > worst {
                worst = err;
                worst_output = oa.clone();
                worst_input = idx;
            }
        }
    }
    Ok(CompareOutcome {
        max_rel_error: worst,
        worst_output,
        worst_input_index: worst_input,
        passed: worst <= tolerance,
    })
}
