//! The co-search space: per-layer pruning scheme/rate gene domains and the
//! global cost budget.

use serde::{Deserialize, Serialize};

use xgir_core::graph::{Graph, NodeId};
use xgir_core::ops::Op;
use xgir_core::topo;

use xgen_prune::BlockPruneMode;

use crate::SearchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Scheme {
    Dense,
    Pattern { entries: usize, k: usize },
    Block { br: usize, bc: usize, mode: BlockPruneMode },
}

/// One gene choice: a scheme plus its rate (connectivity rate for pattern
/// pruning, pruned fraction for block pruning, ignored for dense).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gene {
    #[serde(flatten)]
    pub scheme: Scheme,
    #[serde(default)]
    pub rate: f64,
}

impl Gene {
    pub fn dense() -> Self {
        Gene { scheme: Scheme::Dense, rate: 0.0 }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.scheme, Scheme::Dense)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDomain {
    /// Node id of the prunable layer.
    pub layer: NodeId,
    pub choices: Vec<Gene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub layers: Vec<LayerDomain>,
    /// Hard cost-model budget; candidates above it are infeasible.
    pub budget: f64,
    #[serde(default = "default_flop_weight")]
    pub flop_weight: f64,
    #[serde(default = "default_load_weight")]
    pub load_weight: f64,
}

fn default_flop_weight() -> f64 {
    1.0
}

fn default_load_weight() -> f64 {
    4.0
}

/// A prunable layer of the model: a conv or matmul node whose weight input
/// is a graph weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunableLayer {
    pub node_id: NodeId,
    pub weight_id: String,
    pub weight_shape: Vec<usize>,
    pub is_conv: bool,
}

/// Prunable layers in topological order.
pub fn prunable_layers(g: &Graph) -> Result<Vec<PrunableLayer>, SearchError> {
    let order = topo::topo_order(g)?;
    let mut out = Vec::new();
    for id in &order {
        let node = g.node(id).expect("topo yields existing nodes");
        let is_conv = matches!(node.op, Op::Conv2D { .. });
        if !(is_conv || matches!(node.op, Op::MatMul)) {
            continue;
        }
        let Some(weight_id) = node.inputs.get(1) else { continue };
        let Some(w) = g.weights.get(weight_id) else { continue };
        out.push(PrunableLayer {
            node_id: id.clone(),
            weight_id: weight_id.clone(),
            weight_shape: w.shape().to_vec(),
            is_conv,
        });
    }
    Ok(out)
}

impl SearchSpace {
    /// A reasonable default space over a model: dense always available;
    /// 4-entry pattern pruning (with optional connectivity) for 3x3 convs;
    /// whole-matrix column pruning at a few rates everywhere. Kernels larger
    /// than 16 positions get only block schemes.
    pub fn default_for_model(g: &Graph, budget: f64) -> Result<Self, SearchError> {
        let mut layers = Vec::new();
        for layer in prunable_layers(g)? {
            let mut choices = vec![Gene::dense()];
            if layer.is_conv {
                let (kh, kw) = (layer.weight_shape[2], layer.weight_shape[3]);
                if (kh, kw) == (3, 3) {
                    for rate in [0.0, 0.5] {
                        choices.push(Gene {
                            scheme: Scheme::Pattern { entries: 4, k: 8 },
                            rate,
                        });
                    }
                }
                let (rows, cols) = (
                    layer.weight_shape[0],
                    layer.weight_shape[1] * kh * kw,
                );
                for rate in [0.5, 5.0 / 6.0] {
                    choices.push(Gene {
                        scheme: Scheme::Block { br: rows, bc: cols, mode: BlockPruneMode::Cols },
                        rate,
                    });
                }
            } else {
                let (rows, cols) = (layer.weight_shape[0], layer.weight_shape[1]);
                for rate in [0.5, 5.0 / 6.0] {
                    choices.push(Gene {
                        scheme: Scheme::Block { br: rows, bc: cols, mode: BlockPruneMode::Cols },
                        rate,
                    });
                }
            }
            layers.push(LayerDomain { layer: layer.node_id, choices });
        }
        Ok(SearchSpace {
            layers,
            budget,
            flop_weight: default_flop_weight(),
            load_weight: default_load_weight(),
        })
    }

    /// Check the space lines up with the model's prunable layers.
    pub fn validate_against(&self, g: &Graph) -> Result<Vec<PrunableLayer>, SearchError> {
        let layers = prunable_layers(g)?;
        if layers.len() != self.layers.len() {
            return Err(SearchError::SpaceMismatch(format!(
                "space has {} layer domains, model has {} prunable layers",
                self.layers.len(),
                layers.len()
            )));
        }
        for (domain, layer) in self.layers.iter().zip(&layers) {
            if domain.layer != layer.node_id {
                return Err(SearchError::SpaceMismatch(format!(
                    "domain `{}` does not match model layer `{}`",
                    domain.layer, layer.node_id
                )));
            }
            if domain.choices.is_empty() {
                return Err(SearchError::SpaceMismatch(format!(
                    "layer `{}` has an empty gene domain",
                    domain.layer
                )));
            }
        }
        if self.budget <= 0.0 {
            return Err(SearchError::SpaceMismatch("budget must be positive".into()));
        }
        Ok(layers)
    }

    /// Total number of distinct genomes.
    pub fn genome_count(&self) -> u128 {
        self.layers
            .iter()
            .map(|l| l.choices.len() as u128)
            .product()
    }
}

/// A genome: one choice index per layer domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub genes: Vec<usize>,
}

impl Candidate {
    pub fn all_dense(space: &SearchSpace) -> Self {
        Candidate {
            genes: space
                .layers
                .iter()
                .map(|l| l.choices.iter().position(Gene::is_dense).unwrap_or(0))
                .collect(),
        }
    }

    pub fn resolve<'a>(&self, space: &'a SearchSpace) -> Vec<(&'a NodeId, &'a Gene)> {
        self.genes
            .iter()
            .zip(&space.layers)
            .map(|(&gi, domain)| (&domain.layer, &domain.choices[gi]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgir_core::zoo;

    #[test]
    fn default_space_over_cnn6() {
        let g = zoo::toy_cnn6(1);
        let space = SearchSpace::default_for_model(&g, 1e12).unwrap();
        assert_eq!(space.layers.len(), 6);
        space.validate_against(&g).unwrap();
        // 3x3 convs get pattern choices, the 1x1 stem does not.
        let stem = &space.layers[0];
        assert_eq!(stem.layer, "stem");
        assert!(stem
            .choices
            .iter()
            .all(|c| !matches!(c.scheme, Scheme::Pattern { .. })));
        let conv2 = &space.layers[1];
        assert!(conv2
            .choices
            .iter()
            .any(|c| matches!(c.scheme, Scheme::Pattern { .. })));
        assert!(space.genome_count() > 1);
    }

    #[test]
    fn all_dense_candidate_picks_dense_everywhere() {
        let g = zoo::toy_cnn6(1);
        let space = SearchSpace::default_for_model(&g, 1e12).unwrap();
        let c = Candidate::all_dense(&space);
        for (_, gene) in c.resolve(&space) {
            assert!(gene.is_dense());
        }
    }
}
