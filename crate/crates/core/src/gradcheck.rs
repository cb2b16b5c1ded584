//! Finite-difference checks of the exact likelihood gradient and of the
//! orthogonality-penalty gradient.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exact::{exact_joint_loglik, exact_loglik_gradient};
use crate::hier::{orthogonal_penalty, penalty_gradient, PenaltyMode};
use crate::rbm::RbmParams;
use crate::taxonomy::TaxonomyTree;

pub const LIKELIHOOD_STEP: f64 = 1e-5;
pub const LIKELIHOOD_TOL: f64 = 1e-6;
pub const PENALTY_STEP: f64 = 1e-6;
pub const PENALTY_TOL: f64 = 1e-8;
pub const MAX_GRADCHECK_DIM: usize = 4;

/// Deliberate corruption of an analytic gradient, to confirm the check
/// catches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    FlipUSign,
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub hidden: usize,
    pub visible: usize,
    pub classes: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            hidden: 3,
            visible: 4,
            classes: 3,
            seed: 1,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub max_abs_error: f64,
    pub tolerance: f64,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.max_abs_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(BlockReport::passed)
    }

    pub fn failed_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| !b.passed())
            .map(|b| b.name.as_str())
            .collect()
    }
}

/// Mutable access to entry `idx` of block `block` (W, b, c, d, U order).
pub fn param_entry(p: &mut RbmParams, block: usize, idx: usize) -> &mut f64 {
    let slice = match block {
        0 => p.w.as_slice_mut(),
        1 => p.b.as_slice_mut(),
        2 => p.c.as_slice_mut(),
        3 => p.d_bias.as_slice_mut(),
        4 => p.u.as_slice_mut(),
        _ => panic!("block index {block} out of range"),
    };
    &mut slice.expect("standard layout")[idx]
}

pub fn random_params<R: Rng>(n: usize, d: usize, k: usize, scale: f64, rng: &mut R) -> RbmParams {
    let mut p = RbmParams::zeros(n, d, k);
    let mut draw = |v: &mut f64| *v = scale * (2.0 * rng.random::<f64>() - 1.0);
    p.w.iter_mut().for_each(&mut draw);
    p.b.iter_mut().for_each(&mut draw);
    p.c.iter_mut().for_each(&mut draw);
    p.d_bias.iter_mut().for_each(&mut draw);
    p.u.iter_mut().for_each(&mut draw);
    p
}

/// Max abs difference per block between the exact analytic gradient of
/// `log p(x, y)` and central differences.
pub fn likelihood_check(
    params: &RbmParams,
    x: &ndarray::Array1<f64>,
    y: usize,
    fault: Option<Fault>,
) -> Result<Vec<BlockReport>> {
    let mut analytic = exact_loglik_gradient(params, x.view(), y)?;
    if fault == Some(Fault::FlipUSign) {
        analytic.u.mapv_inplace(|v| -v);
    }
    let mut reports = Vec::new();
    for (block, (name, values)) in analytic.blocks().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (idx, &g) in values.iter().enumerate() {
            let mut plus = params.clone();
            *param_entry(&mut plus, block, idx) += LIKELIHOOD_STEP;
            let mut minus = params.clone();
            *param_entry(&mut minus, block, idx) -= LIKELIHOOD_STEP;
            let fd = (exact_joint_loglik(&plus, x.view(), y)? - exact_joint_loglik(&minus, x.view(), y)?)
                / (2.0 * LIKELIHOOD_STEP);
            worst = worst.max((fd - g).abs());
        }
        reports.push(BlockReport {
            name: name.to_string(),
            max_abs_error: worst,
            tolerance: LIKELIHOOD_TOL,
        });
    }
    Ok(reports)
}

/// Max abs difference between [`penalty_gradient`] and central differences
/// of [`orthogonal_penalty`].
pub fn penalty_check(a: &Array2<f64>, pairs: &[(usize, usize)], mode: PenaltyMode) -> f64 {
    let analytic = penalty_gradient(a.view(), pairs, mode, false);
    let mut worst: f64 = 0.0;
    for ((e, j), &g) in analytic.indexed_iter() {
        let mut plus = a.clone();
        plus[[e, j]] += PENALTY_STEP;
        let mut minus = a.clone();
        minus[[e, j]] -= PENALTY_STEP;
        let fd = (orthogonal_penalty(plus.view(), pairs, mode) - orthogonal_penalty(minus.view(), pairs, mode))
            / (2.0 * PENALTY_STEP);
        worst = worst.max((fd - g).abs());
    }
    worst
}

/// Edge vectors whose ancestor-pair dot products all exceed `margin` in
/// magnitude, so the abs penalty is differentiable everywhere within a
/// finite-difference step.
pub fn random_edges_away_from_zero<R: Rng>(
    m: usize,
    width: usize,
    pairs: &[(usize, usize)],
    margin: f64,
    rng: &mut R,
) -> Array2<f64> {
    loop {
        let a = Array2::from_shape_fn((m, width), |_| 2.0 * rng.random::<f64>() - 1.0);
        let ok = pairs
            .iter()
            .all(|&(c, p)| a.row(c).dot(&a.row(p)).abs() > margin);
        if ok {
            return a;
        }
    }
}

const CHECK_TREE: &str = "\
[edges]
root -> g1
root -> g2
g1 -> h1
g1 -> l2
h1 -> l0
h1 -> l1
g2 -> l3
g2 -> l4
[classes]
l0 = 0
l1 = 1
l2 = 2
l3 = 3
l4 = 4
";

/// Runs the likelihood and penalty gradient checks on a random instance.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.hidden > MAX_GRADCHECK_DIM || opts.visible > MAX_GRADCHECK_DIM {
        return Err(Error::TooLarge(format!(
            "gradcheck supports n, d <= {MAX_GRADCHECK_DIM}; got n={}, d={}",
            opts.hidden, opts.visible
        )));
    }
    if opts.hidden == 0 || opts.visible == 0 || opts.classes == 0 {
        return Err(Error::Config("gradcheck dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let params = random_params(opts.hidden, opts.visible, opts.classes, 1.0, &mut rng);
    let x = ndarray::Array1::from_shape_fn(opts.visible, |_| f64::from(rng.random::<bool>() as u8));
    let y = rng.random_range(0..opts.classes);
    let mut blocks = likelihood_check(&params, &x, y, opts.fault)?;

    let tree = TaxonomyTree::parse(CHECK_TREE)?;
    let pairs = tree.ancestor_pairs();
    let width = opts.hidden.max(2);
    for mode in [PenaltyMode::Raw, PenaltyMode::Abs, PenaltyMode::Squared] {
        let a = random_edges_away_from_zero(tree.num_edges(), width, &pairs, 1e-3, &mut rng);
        blocks.push(BlockReport {
            name: format!("penalty-{mode}"),
            max_abs_error: penalty_check(&a, &pairs, mode),
            tolerance: PENALTY_TOL,
        });
    }

    // one-sided raw gradient on a 3-edge chain equals the ancestor sum
    let chain = TaxonomyTree::parse("[edges]\nr -> a\na -> b\nb -> l\n[classes]\nl = 0\n")?;
    let chain_pairs = chain.ancestor_pairs();
    let a = Array2::from_shape_fn((3, width), |_| 2.0 * rng.random::<f64>() - 1.0);
    let g = penalty_gradient(a.view(), &chain_pairs, PenaltyMode::Raw, true);
    let mut worst: f64 = 0.0;
    for e in 0..3 {
        let mut expect = ndarray::Array1::<f64>::zeros(width);
        for &anc in chain.node_path(chain.edge(e).parent) {
            expect += &a.row(anc);
        }
        worst = worst.max((&g.row(e) - &expect).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    blocks.push(BlockReport {
        name: "penalty-raw-partial".into(),
        max_abs_error: worst,
        tolerance: 0.0,
    });
    Ok(GradcheckReport { blocks })
}
