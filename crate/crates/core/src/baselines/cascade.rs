//! Top-down cascades of classification RBMs, one per internal tree node.
//!
//! Each node's RBM classifies an example into one of the node's children.
//! Hard mode follows the most probable child down to a leaf; soft mode
//! scores each class by the product of child probabilities along its path.
//! The HHRBM variant feeds every non-root node with its parent's hidden
//! representation instead of the raw input.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::rbm::RbmParams;
use crate::taxonomy::TaxonomyTree;
use crate::train::{train_flat_rbm, TrainConfig};

/// Class bias given to children that saw no training data; their
/// probability underflows to exactly zero.
pub const FORBIDDEN_CLASS_BIAS: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascadeMode {
    Hard,
    Soft,
}

impl FromStr for CascadeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft" => Ok(Self::Soft),
            other => Err(Error::Config(format!("unknown cascade mode `{other}`"))),
        }
    }
}

impl fmt::Display for CascadeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hard => "hard",
            Self::Soft => "soft",
        })
    }
}

/// Classifier at one internal node. Nodes with a single child need none.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeNode {
    pub node: usize,
    pub classifier: Option<RbmParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    tree: TaxonomyTree,
    nodes: Vec<CascadeNode>,
    slot: Vec<Option<usize>>,
    projected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadePrediction {
    pub class: usize,
    /// Per-class path products (soft mode only).
    pub scores: Option<Vec<f64>>,
    /// Edges followed from the root (hard mode), or the leaf depth (soft).
    pub visited: usize,
}

/// Examples under `node` paired with the position of the child subtree
/// that holds their class.
pub fn node_training_indices(tree: &TaxonomyTree, labels: &[usize], node: usize) -> Vec<(usize, usize)> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, &y)| tree.child_towards(node, y).map(|c| (i, c)))
        .collect()
}

fn node_seed(base: u64, position: usize) -> u64 {
    if position == 0 {
        base
    } else {
        base ^ (position as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

struct Builder<'t> {
    tree: &'t TaxonomyTree,
    config: &'t TrainConfig,
    widths: Option<&'t [usize]>,
    positions: Vec<usize>,
    trained: Vec<Option<RbmParams>>,
}

impl Builder<'_> {
    fn train_node(&mut self, node: usize, data: &Dataset) -> Result<()> {
        let tree = self.tree;
        let children = tree.children(node);
        let routed = node_training_indices(tree, data.labels(), node);

        let classifier = if children.len() < 2 {
            None
        } else if routed.is_empty() {
            log::warn!("cascade node `{}` has no training examples", tree.name(node));
            None
        } else {
            let idx: Vec<usize> = routed.iter().map(|&(i, _)| i).collect();
            let sub = data.subset(&idx, "cascade node");
            let local = Dataset::new(
                sub.features().to_owned(),
                routed.iter().map(|&(_, c)| c).collect(),
                children.len(),
                format!("node {}", tree.name(node)),
            )?;
            let hidden = match self.widths {
                Some(w) => w[tree.depth(node).min(w.len() - 1)],
                None => self.config.hidden,
            };
            let config = TrainConfig {
                hidden,
                seed: node_seed(self.config.seed, self.positions[node]),
                ..self.config.clone()
            };
            let (mut params, _) = train_flat_rbm(&local, children.len(), &config)?;
            for (c, count) in local.class_histogram().into_iter().enumerate() {
                if count == 0 {
                    log::warn!(
                        "child `{}` of `{}` has no training examples; its probability is fixed at 0",
                        tree.name(children[c]),
                        tree.name(node)
                    );
                    params.d_bias[c] = FORBIDDEN_CLASS_BIAS;
                }
            }
            Some(params)
        };

        for (pos, &child) in children.iter().enumerate() {
            if tree.is_leaf(child) {
                continue;
            }
            let idx: Vec<usize> = routed.iter().filter(|r| r.1 == pos).map(|r| r.0).collect();
            let mut sub = data.subset(&idx, "cascade child");
            if self.widths.is_some() {
                if let Some(params) = &classifier {
                    sub = sub.with_features(params.hidden_given_x_batch(sub.features())?)?;
                }
            }
            self.train_node(child, &sub)?;
        }
        self.trained[node] = classifier;
        Ok(())
    }
}

fn build(data: &Dataset, tree: &TaxonomyTree, config: &TrainConfig, widths: Option<&[usize]>) -> Result<Cascade> {
    config.validate()?;
    if let Some(&label) = data.labels().iter().find(|&&y| y >= tree.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: tree.num_classes(),
        });
    }
    let internal = tree.internal_nodes();
    let mut positions = vec![usize::MAX; tree.num_nodes()];
    for (p, &v) in internal.iter().enumerate() {
        positions[v] = p;
    }
    let mut builder = Builder {
        tree,
        config,
        widths,
        positions,
        trained: vec![None; tree.num_nodes()],
    };
    builder.train_node(tree.root(), data)?;
    let nodes = internal
        .iter()
        .map(|&v| CascadeNode {
            node: v,
            classifier: builder.trained[v].take(),
        })
        .collect();
    Cascade::from_nodes(tree.clone(), nodes, widths.is_some())
}

/// HRBMh / HRBMs: every node classifies the raw input. The mode only
/// matters at prediction time.
pub fn train_cascade(data: &Dataset, tree: &TaxonomyTree, config: &TrainConfig) -> Result<Cascade> {
    build(data, tree, config, None)
}

/// HHRBM: children learn on their parent's hidden representation. Node
/// width is `widths[min(depth, len - 1)]`.
pub fn train_hhrbm(data: &Dataset, tree: &TaxonomyTree, config: &TrainConfig, widths: &[usize]) -> Result<Cascade> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Config("HHRBM needs positive per-level hidden widths".into()));
    }
    build(data, tree, config, Some(widths))
}

impl Cascade {
    pub fn from_nodes(tree: TaxonomyTree, nodes: Vec<CascadeNode>, projected: bool) -> Result<Self> {
        let mut slot = vec![None; tree.num_nodes()];
        for (i, n) in nodes.iter().enumerate() {
            if n.node >= tree.num_nodes() || tree.is_leaf(n.node) {
                return Err(Error::Config(format!("cascade node {} is not an internal node", n.node)));
            }
            if let Some(p) = &n.classifier {
                p.validate()?;
                if p.num_classes() != tree.children(n.node).len() {
                    return Err(Error::Shape(format!(
                        "classifier at `{}` has {} classes for {} children",
                        tree.name(n.node),
                        p.num_classes(),
                        tree.children(n.node).len()
                    )));
                }
            }
            slot[n.node] = Some(i);
        }
        for v in tree.internal_nodes() {
            if slot[v].is_none() {
                return Err(Error::Config(format!("no cascade entry for node `{}`", tree.name(v))));
            }
        }
        Ok(Self {
            tree,
            nodes,
            slot,
            projected,
        })
    }

    pub fn tree(&self) -> &TaxonomyTree {
        &self.tree
    }

    pub fn nodes(&self) -> &[CascadeNode] {
        &self.nodes
    }

    pub fn is_projected(&self) -> bool {
        self.projected
    }

    pub fn node(&self, v: usize) -> Option<&CascadeNode> {
        self.slot.get(v).copied().flatten().map(|i| &self.nodes[i])
    }

    pub fn num_classifiers(&self) -> usize {
        self.nodes.iter().filter(|n| n.classifier.is_some()).count()
    }

    /// Probabilities over the children of `v` for its input representation.
    pub fn child_probs(&self, v: usize, input: ArrayView1<f64>) -> Result<Vec<f64>> {
        let k = self.tree.children(v).len();
        match self.node(v).and_then(|n| n.classifier.as_ref()) {
            Some(p) => Ok(p.class_posterior(input)?.to_vec()),
            None => Ok(vec![1.0 / k as f64; k]),
        }
    }

    /// Input representation handed from `v` to its children.
    fn pass_down(&self, v: usize, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        match (self.projected, self.node(v).and_then(|n| n.classifier.as_ref())) {
            (true, Some(p)) => {
                let row = input.insert_axis(ndarray::Axis(0));
                Ok(p.hidden_given_x_batch(row)?.row(0).to_owned())
            }
            _ => Ok(input.to_owned()),
        }
    }

    fn soft_scores(&self, v: usize, input: ArrayView1<f64>, mass: f64, scores: &mut [f64]) -> Result<()> {
        let probs = self.child_probs(v, input)?;
        let next = if self.projected {
            Some(self.pass_down(v, input)?)
        } else {
            None
        };
        for (&child, &p) in self.tree.children(v).iter().zip(&probs) {
            let m = mass * p;
            match self.tree.class_of_leaf(child) {
                Some(class) if self.tree.is_leaf(child) => scores[class] = m,
                _ => {
                    let inp = next.as_ref().map_or(input, |a| a.view());
                    self.soft_scores(child, inp, m, scores)?;
                }
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: ArrayView1<f64>, mode: CascadeMode) -> Result<CascadePrediction> {
        match mode {
            CascadeMode::Soft => {
                let mut scores = vec![0.0; self.tree.num_classes()];
                self.soft_scores(self.tree.root(), x, 1.0, &mut scores)?;
                let class = argmax(&scores);
                Ok(CascadePrediction {
                    class,
                    visited: self.tree.depth(self.tree.leaf_of_class(class)),
                    scores: Some(scores),
                })
            }
            CascadeMode::Hard => {
                let mut v = self.tree.root();
                let mut input = x.to_owned();
                let mut visited = 0;
                loop {
                    let probs = self.child_probs(v, input.view())?;
                    let child = self.tree.children(v)[argmax(&probs)];
                    visited += 1;
                    if self.tree.is_leaf(child) {
                        let class = self.tree.class_of_leaf(child).expect("leaves carry classes");
                        return Ok(CascadePrediction {
                            class,
                            scores: None,
                            visited,
                        });
                    }
                    if self.projected {
                        input = self.pass_down(v, input.view())?;
                    }
                    v = child;
                }
            }
        }
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>, mode: CascadeMode) -> Result<Vec<usize>> {
        x.outer_iter().map(|row| self.predict(row, mode).map(|p| p.class)).collect()
    }

    pub fn error_rate(&self, data: &Dataset, mode: CascadeMode) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict_batch(data.features(), mode)?;
        let wrong = pred.iter().zip(data.labels()).filter(|(p, y)| p != y).count();
        Ok(wrong as f64 / data.len() as f64)
    }
}
