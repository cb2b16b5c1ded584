//! Model files.
//!
//! RBM checkpoint, little-endian:
//!
//! ```text
//! "HRBM" | u32 version = 1 | u32 n | u32 d | u32 K | u32 m
//! f64 W[n×d] | b[d] | c[n] | d_bias[K] | U[n×K]          (row-major)
//! if m > 0: f64 A[m×n] | u32 len | taxonomy text (UTF-8)
//! ```
//!
//! Linear models use the same layout under the magic `HMNL` with header
//! `d, K, m` and arrays `coef[d×K] | bias[K] | A[m×d]`. Cascades are stored
//! as a directory holding one RBM checkpoint per internal node, the
//! taxonomy file and a `manifest` of `node_name = filename` lines; entries
//! whose name starts with `@` carry cascade settings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::baselines::cascade::{Cascade, CascadeMode, CascadeNode};
use crate::baselines::mnl::LinearLogit;
use crate::error::{Error, Result};
use crate::hier::{EdgeParams, Penalty};
use crate::rbm::RbmParams;
use crate::taxonomy::TaxonomyTree;

const RBM_MAGIC: &[u8; 4] = b"HRBM";
const LOGIT_MAGIC: &[u8; 4] = b"HMNL";
const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest";
pub const TREE_FILE: &str = "taxonomy.tree";

/// Any model the command line can evaluate.
#[derive(Debug, Clone)]
pub enum Model {
    Rbm {
        params: RbmParams,
        hier: Option<(TaxonomyTree, EdgeParams)>,
    },
    Logit {
        model: LinearLogit,
        tree: Option<TaxonomyTree>,
    },
    Cascade {
        cascade: Cascade,
        mode: CascadeMode,
    },
}

impl Model {
    pub fn num_visible(&self) -> usize {
        match self {
            Model::Rbm { params, .. } => params.num_visible(),
            Model::Logit { model, .. } => model.dim(),
            Model::Cascade { cascade, .. } => cascade
                .node(cascade.tree().root())
                .and_then(|n| n.classifier.as_ref())
                .map_or(0, RbmParams::num_visible),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Rbm { params, .. } => params.num_classes(),
            Model::Logit { model, .. } => model.num_classes(),
            Model::Cascade { cascade, .. } => cascade.tree().num_classes(),
        }
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.num_visible() {
            return Err(Error::Shape(format!(
                "data has {} features, model expects {}",
                x.ncols(),
                self.num_visible()
            )));
        }
        match self {
            Model::Rbm { params, .. } => params.predict_batch(x),
            Model::Logit { model, .. } => model.predict_batch(x),
            Model::Cascade { cascade, mode } => cascade.predict_batch(x, *mode),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Model::Rbm { params, hier } => {
                let hier = hier.as_ref().map(|(t, e)| (t, e));
                fs::write(path, encode_rbm(params, hier))?;
            }
            Model::Logit { model, tree } => fs::write(path, encode_logit(model, tree.as_ref()))?,
            Model::Cascade { cascade, mode } => save_cascade(cascade, *mode, path)?,
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let (cascade, mode) = load_cascade(path)?;
            return Ok(Model::Cascade { cascade, mode });
        }
        let bytes = fs::read(path)?;
        match bytes.get(..4) {
            Some(m) if m == RBM_MAGIC => {
                let (params, hier) = decode_rbm(&bytes)?;
                Ok(Model::Rbm { params, hier })
            }
            Some(m) if m == LOGIT_MAGIC => {
                let (model, tree) = decode_logit(&bytes)?;
                Ok(Model::Logit { model, tree })
            }
            _ => Err(Error::Checkpoint("unrecognized magic bytes".into())),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tree(out: &mut Vec<u8>, tree: &TaxonomyTree) {
    let text = tree.to_text();
    put_u32(out, text.len());
    out.extend_from_slice(text.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint(format!("{what} too large")))?;
        let bytes = self.take(len, what)?;
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in {what}")));
        }
        Ok(vals)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let vals = self.f64s(rows * cols, what)?;
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length checked"))
    }

    fn vector(&mut self, len: usize, what: &str) -> Result<Array1<f64>> {
        Ok(Array1::from(self.f64s(len, what)?))
    }

    fn tree(&mut self) -> Result<TaxonomyTree> {
        let len = self.u32("taxonomy length")?;
        let text = std::str::from_utf8(self.take(len, "taxonomy")?)
            .map_err(|_| Error::Checkpoint("taxonomy text is not UTF-8".into()))?;
        TaxonomyTree::parse(text)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4, "magic")? != magic {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = self.u32("version")?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_rbm(params: &RbmParams, hier: Option<(&TaxonomyTree, &EdgeParams)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RBM_MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, params.num_hidden());
    put_u32(&mut out, params.num_visible());
    put_u32(&mut out, params.num_classes());
    put_u32(&mut out, hier.map_or(0, |(t, _)| t.num_edges()));
    put_f64s(&mut out, params.w.iter());
    put_f64s(&mut out, params.b.iter());
    put_f64s(&mut out, params.c.iter());
    put_f64s(&mut out, params.d_bias.iter());
    put_f64s(&mut out, params.u.iter());
    if let Some((tree, edges)) = hier {
        put_f64s(&mut out, edges.a.iter());
        put_tree(&mut out, tree);
    }
    out
}

pub fn decode_rbm(bytes: &[u8]) -> Result<(RbmParams, Option<(TaxonomyTree, EdgeParams)>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(RBM_MAGIC)?;
    let (n, d, k, m) = (r.u32("n")?, r.u32("d")?, r.u32("K")?, r.u32("m")?);
    let params = RbmParams {
        w: r.matrix(n, d, "W")?,
        b: r.vector(d, "b")?,
        c: r.vector(n, "c")?,
        d_bias: r.vector(k, "d")?,
        u: r.matrix(n, k, "U")?,
    };
    let hier = if m > 0 {
        let a = r.matrix(m, n, "edge parameters")?;
        let tree = r.tree()?;
        if tree.num_edges() != m || tree.num_classes() != k {
            return Err(Error::Checkpoint("taxonomy does not match header".into()));
        }
        let edges = EdgeParams::from_matrix(&tree, a, Penalty::none())?;
        Some((tree, edges))
    } else {
        None
    };
    r.finish()?;
    Ok((params, hier))
}

pub fn encode_logit(model: &LinearLogit, tree: Option<&TaxonomyTree>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(LOGIT_MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, model.dim());
    put_u32(&mut out, model.num_classes());
    let edges = model.edges.as_ref().zip(tree);
    put_u32(&mut out, edges.map_or(0, |(e, _)| e.a.nrows()));
    put_f64s(&mut out, model.coef.iter());
    put_f64s(&mut out, model.bias.iter());
    if let Some((e, t)) = edges {
        put_f64s(&mut out, e.a.iter());
        put_tree(&mut out, t);
    }
    out
}

pub fn decode_logit(bytes: &[u8]) -> Result<(LinearLogit, Option<TaxonomyTree>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.header(LOGIT_MAGIC)?;
    let (d, k, m) = (r.u32("d")?, r.u32("K")?, r.u32("m")?);
    let coef = r.matrix(d, k, "coefficients")?;
    let bias = r.vector(k, "bias")?;
    let (edges, tree) = if m > 0 {
        let a = r.matrix(m, d, "edge parameters")?;
        let tree = r.tree()?;
        let edges = EdgeParams::from_matrix(&tree, a, Penalty::none())?;
        (Some(edges), Some(tree))
    } else {
        (None, None)
    };
    r.finish()?;
    Ok((LinearLogit { coef, bias, edges }, tree))
}

pub fn save_cascade(cascade: &Cascade, mode: CascadeMode, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tree = cascade.tree();
    fs::write(dir.join(TREE_FILE), tree.to_text())?;
    let mut manifest = String::new();
    let kind = if cascade.is_projected() { "hhrbm" } else { "cascade" };
    let _ = writeln!(manifest, "@kind = {kind}");
    let _ = writeln!(manifest, "@mode = {mode}");
    for (pos, node) in cascade.nodes().iter().enumerate() {
        if let Some(params) = &node.classifier {
            let file = format!("node{pos}.hrbm");
            fs::write(dir.join(&file), encode_rbm(params, None))?;
            let _ = writeln!(manifest, "{} = {file}", tree.name(node.node));
        }
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load_cascade(dir: &Path) -> Result<(Cascade, CascadeMode)> {
    let tree = TaxonomyTree::parse(&fs::read_to_string(dir.join(TREE_FILE))?)?;
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let mut projected = false;
    let mut mode = CascadeMode::Soft;
    let mut classifiers = vec![None; tree.num_nodes()];
    for (i, line) in manifest.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Checkpoint(format!("manifest line {}: expected `key = value`", i + 1)))?;
        match key {
            "@kind" => projected = value == "hhrbm",
            "@mode" => mode = value.parse()?,
            name => {
                let node = tree
                    .node_index(name)
                    .ok_or_else(|| Error::Checkpoint(format!("manifest names unknown node `{name}`")))?;
                let (params, _) = decode_rbm(&fs::read(dir.join(value))?)?;
                classifiers[node] = Some(params);
            }
        }
    }
    let nodes = tree
        .internal_nodes()
        .into_iter()
        .map(|v| CascadeNode {
            node: v,
            classifier: classifiers[v].take(),
        })
        .collect();
    Ok((Cascade::from_nodes(tree, nodes, projected)?, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = RbmParams::init(2, 3, 4, &mut rng);
        let bytes = encode_rbm(&p, None);
        assert_eq!(&bytes[..4], b"HRBM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), 24 + 8 * (6 + 3 + 2 + 4 + 8));
        let w00 = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        assert_eq!(w00, p.w[[0, 0]]);
        let (back, hier) = decode_rbm(&bytes).unwrap();
        assert_eq!(back, p);
        assert!(hier.is_none());
    }

    #[test]
    fn corrupt_inputs() {
        let p = RbmParams::zeros(2, 2, 2);
        let bytes = encode_rbm(&p, None);
        assert!(decode_rbm(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_rbm(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_rbm(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_rbm(&long).is_err());
    }
}
