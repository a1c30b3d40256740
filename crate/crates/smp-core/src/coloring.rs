//! Identifier compression by greedy coloring of a graph power.
//!
//! When the diameter is large compared to the layer count L, nodes farther
//! than 2L apart can safely share an identifier: no node ever sees the same
//! color twice within its L-hop view. Colors come from a greedy coloring of
//! the graph whose edges connect all pairs at distance <= 2L.

use std::rc::Rc;

use thiserror::Error;

use crate::graph::{all_pairs_shortest_paths, Graph};
use crate::layers::LocalContext;
use crate::tensor::DiffTensor;

#[derive(Debug, Error)]
pub enum ColoringError {
    #[error("invalid color assignment: {0}")]
    InvalidAssignment(String),
}

/// A coloring of the nodes valid for an L-layer network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorAssignment {
    pub colors: Vec<usize>,
    /// Number of colors used, `1 + max(colors)`.
    pub chi: usize,
    /// Layer horizon the assignment was built for.
    pub l: usize,
}

impl ColorAssignment {
    /// Checks the defining invariant against shortest-path distances:
    /// distinct nodes within distance 2L never share a color.
    pub fn validate(&self, g: &Graph) -> Result<(), ColoringError> {
        if self.colors.len() != g.n() {
            return Err(ColoringError::InvalidAssignment(format!(
                "{} colors for {} nodes",
                self.colors.len(),
                g.n()
            )));
        }
        let apsp = all_pairs_shortest_paths(g);
        let n = g.n();
        for i in 0..n {
            for j in (i + 1)..n {
                if apsp[i][j] < n && apsp[i][j] <= 2 * self.l && self.colors[i] == self.colors[j] {
                    return Err(ColoringError::InvalidAssignment(format!(
                        "nodes {i} and {j} at distance {} share color {}",
                        apsp[i][j], self.colors[i]
                    )));
                }
            }
        }
        let max = self.colors.iter().max().copied().unwrap_or(0);
        if g.n() > 0 && self.chi != max + 1 {
            return Err(ColoringError::InvalidAssignment(format!(
                "chi = {} but colors reach {max}",
                self.chi
            )));
        }
        Ok(())
    }
}

/// Greedily colors the graph power `G' = (V, {(i,j) : d(i,j) <= 2L})` in
/// ascending node order, assigning each node the lowest color unused among
/// its already-colored G' neighbors.
pub fn color_nodes(g: &Graph, l: usize) -> ColorAssignment {
    assert!(l >= 1, "coloring needs a layer horizon of at least 1");
    let n = g.n();
    let apsp = all_pairs_shortest_paths(g);
    let mut colors = vec![usize::MAX; n];
    for i in 0..n {
        let mut taken: Vec<bool> = vec![false; n];
        for j in 0..i {
            if apsp[i][j] < n && apsp[i][j] <= 2 * l {
                taken[colors[j]] = true;
            }
        }
        colors[i] = (0..n).find(|&c| !taken[c]).expect("n colors always suffice");
    }
    let chi = colors.iter().max().map_or(0, |&m| m + 1);
    ColorAssignment { colors, chi, l }
}

/// Context initialization in the compressed row space: node j occupies row
/// `colors[j]` of every context, and the own-row rule becomes
/// `U_i[colors[i], :] = [1, x_i]`.
pub fn init_colored_context(
    g: &Graph,
    ca: &ColorAssignment,
) -> Result<LocalContext, ColoringError> {
    ca.validate(g)?;
    let n = g.n();
    let c = 1 + g.node_feature_width();
    let mut values = vec![0.0; n * ca.chi * c];
    for i in 0..n {
        let base = (i * ca.chi + ca.colors[i]) * c;
        values[base] = 1.0;
        if let Some(x) = g.node_features() {
            values[base + 1..base + c].copy_from_slice(&x[i]);
        }
    }
    let tensor = DiffTensor::leaf(vec![n, ca.chi, c], values).expect("colored init shape");
    Ok(LocalContext {
        tensor,
        row_of: Rc::new(ca.colors.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_node_gets_one_color() {
        let g = Graph::new(1, &[]).unwrap();
        let ca = color_nodes(&g, 3);
        assert_eq!(ca.colors, vec![0]);
        assert_eq!(ca.chi, 1);
        ca.validate(&g).unwrap();
    }

    #[test]
    fn five_path_greedy_coloring_by_hand() {
        // P5 with L = 1 links all pairs at distance <= 2; greedy in index
        // order yields [0, 1, 2, 0, 1].
        let g = Graph::path(5);
        let ca = color_nodes(&g, 1);
        assert_eq!(ca.colors, vec![0, 1, 2, 0, 1]);
        assert_eq!(ca.chi, 3);
        ca.validate(&g).unwrap();
    }

    #[test]
    fn star_power_is_complete() {
        // K_{1,3}: all pairs are within distance 2, so G' = K4.
        let g = Graph::new(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let ca = color_nodes(&g, 1);
        assert_eq!(ca.chi, 4);
    }

    #[test]
    fn components_can_share_colors() {
        // Two disjoint edges: cross-component distances are infinite.
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        let ca = color_nodes(&g, 1);
        assert_eq!(ca.chi, 2);
        ca.validate(&g).unwrap();
        let ctx = init_colored_context(&g, &ca).unwrap();
        assert_eq!(ctx.rows(), 2);
    }

    #[test]
    fn degenerate_coloring_matches_one_hot_layout() {
        // chi = n on a complete graph: the colored init is the one-hot init
        // with rows relabeled by the coloring.
        let g = Graph::complete(4);
        let ca = color_nodes(&g, 1);
        assert_eq!(ca.chi, 4);
        let colored = init_colored_context(&g, &ca).unwrap();
        let onehot = crate::layers::init_local_context(&g);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(colored.value(i, j, 0), onehot.value(i, j, 0));
            }
        }
    }

    #[test]
    fn invalid_assignment_is_rejected() {
        let g = Graph::path(3);
        let bad = ColorAssignment {
            colors: vec![0, 0, 1],
            chi: 2,
            l: 1,
        };
        assert!(init_colored_context(&g, &bad).is_err());
    }

    #[test]
    fn chi_is_monotone_in_the_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let n = rng.random_range(2..20);
            let g = Graph::random_er(n, 0.2, &mut rng);
            let mut prev = 0;
            for l in 1..=3 {
                let ca = color_nodes(&g, l);
                ca.validate(&g).unwrap();
                assert!(ca.chi >= prev, "chi decreased with deeper horizon");
                prev = ca.chi;
            }
        }
    }
}
