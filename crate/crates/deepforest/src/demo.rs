//! A tiny two-layer cascade with closed-form attribution.
//!
//! Four training points on the unit square with `y = 2*x1 + x2`, a depth-1
//! first layer splitting `x1`, and a hand-built second layer whose root
//! splits the generated feature. Every contribution, importance value and
//! conservation total can be checked by hand, which makes this model the
//! reference fixture for tests and the guide.

use crate::attribution::CalibrationMethod;
use crate::cascade::{CascadeLayer, CascadeModel, GrowthMetric, LayerSchema};
use crate::data::{Dataset, Task};
use crate::error::Result;
use crate::forest::{Forest, ForestKind, ForestParams};
use crate::tree::{Node, Split, Tree, TreeParams};

/// The four training points `(0,0), (0,1), (1,0), (1,1)` with
/// `y = 2*x1 + x2`.
pub fn dataset() -> Dataset {
    Dataset::new(
        vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0],
        vec![0.0, 1.0, 2.0, 3.0],
        4,
        2,
        1,
        Task::Regression,
        vec!["x1".into(), "x2".into()],
        vec![],
    )
    .expect("static fixture")
}

/// Build the two-layer model with the given calibration. In this fixture
/// the estimated deltas already match the labeled deltas, so all
/// calibration rules agree bit for bit.
pub fn two_layer_model(calibration: CalibrationMethod) -> Result<(CascadeModel, Dataset)> {
    let d = dataset();

    // Layer 1: one depth-1 best-split tree; it picks x1 at 0.5.
    let layer1_params = ForestParams {
        n_trees: 1,
        tree: TreeParams {
            max_depth: Some(1),
            ..TreeParams::default()
        },
        bootstrap: false,
        kind: ForestKind::BestSplit,
        seed: 0,
    };
    let layer1 = Forest::fit(&d, &layer1_params)?;

    // Layer 2 consumes (x1, x2, prediction). Its root splits the generated
    // feature, then each side splits x2.
    let leaf = |n: usize, mean: f64, depth: usize| Node {
        split: None,
        n,
        mean: vec![mean],
        depth,
    };
    let nodes = vec![
        Node {
            split: Some(Split {
                feature: 2,
                threshold: 1.5,
                left: 1,
                right: 2,
                impurity_decrease: 1.0,
            }),
            n: 4,
            mean: vec![1.5],
            depth: 0,
        },
        Node {
            split: Some(Split {
                feature: 1,
                threshold: 0.5,
                left: 3,
                right: 4,
                impurity_decrease: 0.25,
            }),
            n: 2,
            mean: vec![0.5],
            depth: 1,
        },
        Node {
            split: Some(Split {
                feature: 1,
                threshold: 0.5,
                left: 5,
                right: 6,
                impurity_decrease: 0.25,
            }),
            n: 2,
            mean: vec![2.5],
            depth: 1,
        },
        leaf(1, 0.0, 2),
        leaf(1, 1.0, 2),
        leaf(1, 2.0, 2),
        leaf(1, 3.0, 2),
    ];
    let layer2_tree = Tree::from_nodes(nodes, 3, 1)?;
    let layer2 = Forest::from_parts(
        vec![layer2_tree],
        ForestParams {
            n_trees: 1,
            tree: TreeParams {
                max_depth: Some(2),
                ..TreeParams::default()
            },
            bootstrap: false,
            kind: ForestKind::BestSplit,
            seed: 0,
        },
        vec![1.5],
        None,
        3,
        1,
    )?;

    let layers = vec![
        CascadeLayer {
            forests: vec![layer1],
            schema: LayerSchema::empty(),
        },
        CascadeLayer {
            forests: vec![layer2],
            schema: LayerSchema::canonical(1, 1),
        },
    ];
    let model = CascadeModel::from_layers(
        layers,
        vec![1.5],
        vec![0.0, 0.0],
        &d,
        calibration,
        GrowthMetric::Mse,
        0,
    )?;
    Ok((model, d))
}
