//! Canonical layer symbols: the alphabet the composability machinery runs
//! over. One string per prunable layer, covering operator kind, kernel
//! size, channel counts, and the gene's pruning scheme.

use xgir_core::graph::Graph;

use crate::space::{Candidate, Gene, Scheme, SearchSpace};
use crate::SearchError;

fn gene_tag(gene: &Gene) -> String {
    match &gene.scheme {
        Scheme::Dense => "dense".to_string(),
        Scheme::Pattern { entries, k } => format!("pattern({entries},{k})r{}", gene.rate),
        Scheme::Block { br, bc, .. } => format!("block({br}x{bc})r{}", gene.rate),
    }
}

/// The layer-symbol sequence of a candidate: one canonical string per
/// prunable layer in topological order.
pub fn layer_symbols(
    space: &SearchSpace,
    model: &Graph,
    candidate: &Candidate,
) -> Result<Vec<String>, SearchError> {
    let layers = space.validate_against(model)?;
    Ok(layers
        .iter()
        .zip(candidate.resolve(space))
        .map(|(layer, (_, gene))| {
            let w = &layer.weight_shape;
            let shape_tag = if layer.is_conv {
                format!("Conv2D:{}x{}:{}->{}", w[2], w[3], w[1], w[0])
            } else {
                format!("MatMul:{}->{}", w[0], w[1])
            };
            format!("{shape_tag}:{}", gene_tag(gene))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use xgir_core::zoo;

    #[test]
    fn symbols_cover_all_layers_and_depend_on_genes() {
        let g = zoo::toy_cnn6(1);
        let space = SearchSpace::default_for_model(&g, 1e12).unwrap();
        let dense = Candidate::all_dense(&space);
        let syms = layer_symbols(&space, &g, &dense).unwrap();
        assert_eq!(syms.len(), 6);
        assert!(syms[1].starts_with("Conv2D:3x3:12->12"));
        assert!(syms.iter().all(|s| s.ends_with(":dense")));

        let mut other = dense.genes.clone();
        other[1] = 1;
        let syms2 = layer_symbols(&space, &g, &Candidate { genes: other }).unwrap();
        assert_ne!(syms, syms2);
        assert_eq!(syms[0], syms2[0]);
    }
}
