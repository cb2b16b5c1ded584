//! Label taxonomies: rooted trees whose leaves are the classes.
//!
//! Trees are read from a small two-section text format:
//!
//! ```text
//! # comment
//! [edges]
//! root -> animals
//! animals -> cat
//! animals -> dog
//! root -> car
//! [classes]
//! cat = 0
//! dog = 1
//! car = 2
//! ```
//!
//! Edge indices follow the order of the `[edges]` section and node indices
//! follow first appearance in that section. Both orders are stable across a
//! parse/serialize round trip.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub parent: usize,
    pub child: usize,
}

/// A validated label tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyTree {
    names: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    root: usize,
    parent_edge: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    class_of_leaf: Vec<Option<usize>>,
    leaf_of_class: Vec<usize>,
    /// Edges from the root to each node, root first.
    node_paths: Vec<Vec<usize>>,
}

/// Fixed 0/1 edge-on-path matrix: `P[e, k] = 1` iff edge `e` lies on the
/// root→leaf path of class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIndicator {
    matrix: Array2<f64>,
    paths: Vec<Vec<usize>>,
    edge_classes: Vec<Vec<usize>>,
}

#[derive(Default)]
struct Section {
    edges: Vec<(String, String, usize)>,
    classes: Vec<(String, usize, usize)>,
}

fn check_name(name: &str, line: usize) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) || name.contains("->") {
        return Err(Error::TaxonomySyntax {
            line,
            msg: format!("invalid node name `{name}`"),
        });
    }
    Ok(())
}

fn split_sections(text: &str) -> Result<Section> {
    #[derive(PartialEq)]
    enum State {
        None,
        Edges,
        Classes,
    }
    let mut state = State::None;
    let mut out = Section::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[edges]" => {
                state = State::Edges;
                continue;
            }
            "[classes]" => {
                state = State::Classes;
                continue;
            }
            _ => {}
        }
        match state {
            State::None => {
                return Err(Error::TaxonomySyntax {
                    line: line_no,
                    msg: "content before [edges] or [classes] header".into(),
                })
            }
            State::Edges => {
                let mut parts = line.split("->");
                let (Some(p), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(Error::TaxonomySyntax {
                        line: line_no,
                        msg: "expected `parent -> child`".into(),
                    });
                };
                let (p, c) = (p.trim(), c.trim());
                check_name(p, line_no)?;
                check_name(c, line_no)?;
                out.edges.push((p.to_string(), c.to_string(), line_no));
            }
            State::Classes => {
                let Some((name, idx)) = line.split_once('=') else {
                    return Err(Error::TaxonomySyntax {
                        line: line_no,
                        msg: "expected `leaf = class_index`".into(),
                    });
                };
                let name = name.trim();
                check_name(name, line_no)?;
                let idx: usize = idx.trim().parse().map_err(|_| Error::TaxonomySyntax {
                    line: line_no,
                    msg: format!("invalid class index `{}`", idx.trim()),
                })?;
                out.classes.push((name.to_string(), idx, line_no));
            }
        }
    }
    Ok(out)
}

impl TaxonomyTree {
    /// Parses and validates taxonomy-file text.
    pub fn parse(text: &str) -> Result<Self> {
        let sections = split_sections(text)?;
        if sections.edges.is_empty() {
            return Err(Error::EmptyTree);
        }

        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
            *index.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                names.len() - 1
            })
        };

        let mut edges = Vec::with_capacity(sections.edges.len());
        for (p, c, _) in &sections.edges {
            if p == c {
                return Err(Error::Cycle(p.clone()));
            }
            let parent = intern(p, &mut names);
            let child = intern(c, &mut names);
            edges.push(Edge { parent, child });
        }
        let index: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let n = names.len();

        let mut parent_edge = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for (e, edge) in edges.iter().enumerate() {
            if parent_edge[edge.child].is_some() {
                return Err(Error::DuplicateNode(names[edge.child].clone()));
            }
            parent_edge[edge.child] = Some(e);
            children[edge.parent].push(edge.child);
        }

        // Every node has at most one parent, so a cycle shows up as a walk
        // up the parent chain that never terminates.
        for (start, name) in names.iter().enumerate() {
            let mut node = start;
            let mut steps = 0;
            while let Some(e) = parent_edge[node] {
                node = edges[e].parent;
                steps += 1;
                if steps > n {
                    return Err(Error::Cycle(name.clone()));
                }
            }
        }

        let roots: Vec<usize> = (0..n).filter(|&v| parent_edge[v].is_none()).collect();
        let root = match roots.as_slice() {
            [] => return Err(Error::NoRoot),
            [r] => *r,
            many => {
                return Err(Error::MultipleRoots(
                    many.iter().map(|&v| names[v].clone()).collect(),
                ))
            }
        };

        let mut class_of_leaf = vec![None; n];
        let mut seen_class: HashMap<usize, usize> = HashMap::new();
        for (name, k, _) in &sections.classes {
            let &node = index
                .get(name)
                .ok_or_else(|| Error::UnknownNode(name.clone()))?;
            if !children[node].is_empty() {
                return Err(Error::ClassOnInternalNode(name.clone()));
            }
            if class_of_leaf[node].is_some() {
                return Err(Error::DuplicateNode(name.clone()));
            }
            if seen_class.insert(*k, node).is_some() {
                return Err(Error::ClassAssignedTwice(*k));
            }
            class_of_leaf[node] = Some(*k);
        }
        for v in 0..n {
            if children[v].is_empty() && class_of_leaf[v].is_none() {
                return Err(Error::LeafWithoutClass(names[v].clone()));
            }
        }
        let num_classes = seen_class.len();
        if let Some(missing) = (0..num_classes).find(|k| !seen_class.contains_key(k)) {
            return Err(Error::NonContiguousClasses(missing));
        }
        let mut leaf_of_class = vec![0; num_classes];
        for (&k, &node) in &seen_class {
            leaf_of_class[k] = node;
        }

        let mut node_paths = vec![Vec::new(); n];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &c in &children[v] {
                let mut path = node_paths[v].clone();
                path.push(parent_edge[c].expect("child has a parent edge"));
                node_paths[c] = path;
                stack.push(c);
            }
        }

        Ok(Self {
            names,
            index,
            edges,
            root,
            parent_edge,
            children,
            class_of_leaf,
            leaf_of_class,
            node_paths,
        })
    }

    /// Depth-one tree `root -> c0 .. c{k-1}` with edges in class order.
    pub fn star(num_classes: usize) -> Self {
        let mut text = String::from("[edges]\n");
        for k in 0..num_classes {
            let _ = writeln!(text, "root -> c{k}");
        }
        text.push_str("[classes]\n");
        for k in 0..num_classes {
            let _ = writeln!(text, "c{k} = {k}");
        }
        Self::parse(&text).expect("star tree is valid")
    }

    /// Canonical file form: edges in index order, classes in class order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[edges]\n");
        for e in &self.edges {
            let _ = writeln!(out, "{} -> {}", self.names[e.parent], self.names[e.child]);
        }
        out.push_str("[classes]\n");
        for (k, &leaf) in self.leaf_of_class.iter().enumerate() {
            let _ = writeln!(out, "{} = {k}", self.names[leaf]);
        }
        out
    }

    pub fn num_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_classes(&self) -> usize {
        self.leaf_of_class.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn parent_edge(&self, node: usize) -> Option<usize> {
        self.parent_edge[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    pub fn depth(&self, node: usize) -> usize {
        self.node_paths[node].len()
    }

    pub fn class_of_leaf(&self, node: usize) -> Option<usize> {
        self.class_of_leaf[node]
    }

    pub fn leaf_of_class(&self, class: usize) -> usize {
        self.leaf_of_class[class]
    }

    /// Edges on the root→node path, root first.
    pub fn node_path(&self, node: usize) -> &[usize] {
        &self.node_paths[node]
    }

    /// Edges on the root→leaf path of `class`, root first.
    pub fn path_edges(&self, class: usize) -> &[usize] {
        &self.node_paths[self.leaf_of_class[class]]
    }

    /// Internal nodes in pre-order from the root, children in edge order.
    pub fn internal_nodes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            if self.children[v].is_empty() {
                continue;
            }
            out.push(v);
            stack.extend(self.children[v].iter().rev());
        }
        out
    }

    /// Classes whose leaf lies in the subtree rooted at `node`, ascending.
    pub fn classes_under(&self, node: usize) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&k| {
                let leaf = self.leaf_of_class[k];
                leaf == node || self.node_paths[leaf].iter().any(|&e| self.edges[e].parent == node)
            })
            .collect()
    }

    /// For a class below `node`, the position among `node`'s children of the
    /// child whose subtree contains that class.
    pub fn child_towards(&self, node: usize, class: usize) -> Option<usize> {
        let path = self.path_edges(class);
        let e = path.iter().find(|&&e| self.edges[e].parent == node)?;
        self.children[node]
            .iter()
            .position(|&c| c == self.edges[*e].child)
    }

    pub fn indicator_matrix(&self) -> PathIndicator {
        let (m, k) = (self.num_edges(), self.num_classes());
        let mut matrix = Array2::zeros((m, k));
        let mut edge_classes = vec![Vec::new(); m];
        let paths: Vec<Vec<usize>> = (0..k).map(|c| self.path_edges(c).to_vec()).collect();
        for (c, path) in paths.iter().enumerate() {
            for &e in path {
                matrix[[e, c]] = 1.0;
                edge_classes[e].push(c);
            }
        }
        PathIndicator {
            matrix,
            paths,
            edge_classes,
        }
    }

    /// All `(edge, ancestor_edge)` pairs where the ancestor edge lies on the
    /// path from the root to the edge's parent node. Sorted by edge, then by
    /// ancestor depth.
    pub fn ancestor_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (e, edge) in self.edges.iter().enumerate() {
            for &a in &self.node_paths[edge.parent] {
                pairs.push((e, a));
            }
        }
        pairs
    }
}

impl PathIndicator {
    /// The `M × K` 0/1 matrix.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn num_edges(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.ncols()
    }

    /// Edges on class `k`'s path, root first.
    pub fn path(&self, class: usize) -> &[usize] {
        &self.paths[class]
    }

    /// Classes whose path contains edge `e`, ascending.
    pub fn classes_of_edge(&self, e: usize) -> &[usize] {
        &self.edge_classes[e]
    }
}
