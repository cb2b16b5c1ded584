//! Hierarchical correlated prior over the label weights.
//!
//! Each taxonomy edge carries one vector `a_e`; the label-weight column of
//! class `k` is the sum of the vectors on its root→leaf path, so sibling
//! classes share everything above their common ancestor. The orthogonality
//! penalty acts on every `(edge, ancestor edge)` pair:
//!
//! | mode      | pair term        |
//! |-----------|------------------|
//! | `raw`     | `a_μ·a_ν`        |
//! | `abs`     | `|a_μ·a_ν|`      |
//! | `squared` | `(a_μ·a_ν)²`     |
//!
//! `raw` is unbounded below, so `abs` is the default.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rbm::{RbmParams, INIT_STD};
use crate::taxonomy::{PathIndicator, TaxonomyTree};
use crate::train::{LabelLayer, RbmTrainer, RunMetrics, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyMode {
    Raw,
    #[default]
    Abs,
    Squared,
}

impl FromStr for PenaltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "abs" => Ok(Self::Abs),
            "squared" => Ok(Self::Squared),
            other => Err(Error::Config(format!("unknown penalty mode `{other}`"))),
        }
    }
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Raw => "raw",
            Self::Abs => "abs",
            Self::Squared => "squared",
        })
    }
}

/// Penalty settings shared by the gradient routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub weight: f64,
    pub mode: PenaltyMode,
    /// Keep only the child-side term of each pair's gradient.
    pub partial_grad: bool,
}

impl Penalty {
    pub fn none() -> Self {
        Self {
            weight: 0.0,
            mode: PenaltyMode::Abs,
            partial_grad: false,
        }
    }
}

/// Per-edge parameter vectors plus the fixed tree structure they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeParams {
    /// `M × width`, row `e` is the vector of edge `e`.
    pub a: Array2<f64>,
    indicator: PathIndicator,
    pairs: Vec<(usize, usize)>,
    pub penalty: Penalty,
}

/// Column `k` of the result is `Σ_{e on path(k)} a_e`, summed root first.
pub fn compose_u(a: ArrayView2<f64>, indicator: &PathIndicator) -> Array2<f64> {
    let k = indicator.num_classes();
    let mut u = Array2::zeros((a.ncols(), k));
    for class in 0..k {
        let mut col = u.column_mut(class);
        for &e in indicator.path(class) {
            col += &a.row(e);
        }
    }
    u
}

fn pair_dot(a: ArrayView2<f64>, e: usize, f: usize) -> f64 {
    a.row(e).dot(&a.row(f))
}

pub fn orthogonal_penalty(a: ArrayView2<f64>, pairs: &[(usize, usize)], mode: PenaltyMode) -> f64 {
    pairs
        .iter()
        .map(|&(child, anc)| {
            let s = pair_dot(a, child, anc);
            match mode {
                PenaltyMode::Raw => s,
                PenaltyMode::Abs => s.abs(),
                PenaltyMode::Squared => s * s,
            }
        })
        .sum()
}

/// Gradient of [`orthogonal_penalty`] with respect to every edge vector.
///
/// With `partial` set only the child side of each pair is differentiated,
/// which in raw mode gives row `ν` = `Σ_{μ ancestor of ν} a_μ`.
pub fn penalty_gradient(
    a: ArrayView2<f64>,
    pairs: &[(usize, usize)],
    mode: PenaltyMode,
    partial: bool,
) -> Array2<f64> {
    let mut g = Array2::zeros(a.dim());
    for &(child, anc) in pairs {
        let factor = match mode {
            PenaltyMode::Raw => 1.0,
            PenaltyMode::Abs => {
                let s = pair_dot(a, child, anc);
                if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            PenaltyMode::Squared => 2.0 * pair_dot(a, child, anc),
        };
        if factor == 0.0 {
            continue;
        }
        g.row_mut(child).scaled_add(factor, &a.row(anc));
        if !partial {
            g.row_mut(anc).scaled_add(factor, &a.row(child));
        }
    }
    g
}

/// Routes a label-weight gradient (ascent orientation) back to the edges
/// and subtracts the weighted penalty gradient.
pub fn hier_gradient(
    grad_u: ArrayView2<f64>,
    a: ArrayView2<f64>,
    indicator: &PathIndicator,
    pairs: &[(usize, usize)],
    penalty: &Penalty,
) -> Result<Array2<f64>> {
    let (m, width) = a.dim();
    if grad_u.dim() != (width, indicator.num_classes()) || m != indicator.num_edges() {
        return Err(Error::Shape(format!(
            "label gradient {:?} vs edge parameters {:?} and {} classes",
            grad_u.dim(),
            a.dim(),
            indicator.num_classes()
        )));
    }
    let mut out = Array2::zeros((m, width));
    for e in 0..m {
        let mut row = out.row_mut(e);
        for &k in indicator.classes_of_edge(e) {
            row += &grad_u.column(k);
        }
    }
    if penalty.weight != 0.0 {
        let pg = penalty_gradient(a, pairs, penalty.mode, penalty.partial_grad);
        out.scaled_add(-penalty.weight, &pg);
    }
    Ok(out)
}

impl EdgeParams {
    pub fn zeros(tree: &TaxonomyTree, width: usize, penalty: Penalty) -> Self {
        Self {
            a: Array2::zeros((tree.num_edges(), width)),
            indicator: tree.indicator_matrix(),
            pairs: tree.ancestor_pairs(),
            penalty,
        }
    }

    /// Gaussian `N(0, 0.01²)` rows when the penalty is active on a tree
    /// that has ancestor pairs; zero otherwise, which matches the zero
    /// label-weight initialization of the flat model.
    pub fn init<R: Rng + ?Sized>(tree: &TaxonomyTree, width: usize, penalty: Penalty, rng: &mut R) -> Self {
        let mut p = Self::zeros(tree, width, penalty);
        if penalty.weight > 0.0 && !p.pairs.is_empty() {
            let normal = Normal::new(0.0, INIT_STD).expect("valid std");
            p.a.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        p
    }

    pub fn from_matrix(tree: &TaxonomyTree, a: Array2<f64>, penalty: Penalty) -> Result<Self> {
        if a.nrows() != tree.num_edges() {
            return Err(Error::Shape(format!(
                "{} edge rows for a tree with {} edges",
                a.nrows(),
                tree.num_edges()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("edge parameters".into()));
        }
        Ok(Self {
            a,
            indicator: tree.indicator_matrix(),
            pairs: tree.ancestor_pairs(),
            penalty,
        })
    }

    pub fn indicator(&self) -> &PathIndicator {
        &self.indicator
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn width(&self) -> usize {
        self.a.ncols()
    }

    pub fn compose(&self) -> Array2<f64> {
        compose_u(self.a.view(), &self.indicator)
    }

    pub fn penalty_value(&self) -> f64 {
        orthogonal_penalty(self.a.view(), &self.pairs, self.penalty.mode)
    }

    pub fn penalty_gradient(&self) -> Array2<f64> {
        penalty_gradient(self.a.view(), &self.pairs, self.penalty.mode, self.penalty.partial_grad)
    }

    pub fn route(&self, grad_u: ArrayView2<f64>) -> Result<Array2<f64>> {
        hier_gradient(grad_u, self.a.view(), &self.indicator, &self.pairs, &self.penalty)
    }

    /// Largest `|a_μ·a_ν|` over ancestor pairs.
    pub fn max_pair_dot(&self) -> f64 {
        self.pairs
            .iter()
            .map(|&(c, a)| pair_dot(self.a.view(), c, a).abs())
            .fold(0.0, f64::max)
    }

    /// `a ← a + η·step`, rejecting non-finite steps.
    pub fn ascend(&mut self, step: &Array2<f64>, eta: f64) -> Result<()> {
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("edge gradient".into()));
        }
        self.a.scaled_add(eta, step);
        Ok(())
    }
}

/// Label layer whose weights are recomposed from edge vectors after each
/// update.
#[derive(Debug, Clone)]
pub struct HierLabels {
    pub edges: EdgeParams,
}

impl LabelLayer for HierLabels {
    fn init_u(&self, _num_hidden: usize) -> Array2<f64> {
        self.edges.compose()
    }

    fn update(&mut self, params: &mut RbmParams, grad_u: &Array2<f64>, eta: f64) -> Result<()> {
        let step = self.edges.route(grad_u.view())?;
        self.edges.ascend(&step, eta)?;
        params.u = self.edges.compose();
        Ok(())
    }

    fn penalty(&self) -> f64 {
        self.edges.penalty_value()
    }
}

/// A trained hierarchical-prior model.
#[derive(Debug, Clone)]
pub struct HierModel {
    pub params: RbmParams,
    pub edges: EdgeParams,
    pub metrics: RunMetrics,
}

pub type HierTrainer<'a> = RbmTrainer<'a, HierLabels>;

impl<'a> HierTrainer<'a> {
    pub fn hierarchical(data: &'a Dataset, tree: &TaxonomyTree, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if let Some(&label) = data.labels().iter().find(|&&y| y >= tree.num_classes()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: tree.num_classes(),
            });
        }
        let penalty = config.penalty();
        RbmTrainer::with_label_layer(data, tree.num_classes(), config, |rng| HierLabels {
            edges: EdgeParams::init(tree, config.hidden, penalty, rng),
        })
    }

    pub fn edges(&self) -> &EdgeParams {
        &self.label_layer().edges
    }
}

/// Trains the classification RBM whose label weights follow the taxonomy.
pub fn train_hcrbm(data: &Dataset, tree: &TaxonomyTree, config: &TrainConfig) -> Result<HierModel> {
    let mut trainer = HierTrainer::hierarchical(data, tree, config)?;
    let metrics = trainer.run()?;
    let edges = trainer.edges().clone();
    Ok(HierModel {
        params: trainer.into_params(),
        edges,
        metrics,
    })
}
