//! JSON export of decompilation trees. Node eigenvectors and leaf input
//! features live in a sibling `BLNR` blob and are referenced by tensor name
//! and row.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bilinear_core::decompose::{DecompileTree, TreeNode};
use bilinear_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::{read_file, write_file, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRef {
    pub tensor: String,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub path: Vec<usize>,
    pub layer: usize,
    pub eigenvalue: f64,
    pub vector: TensorRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_feature: Option<TensorRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTreeJson {
    pub class: usize,
    pub direction: TensorRef,
    pub roots: Vec<NodeJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFileJson {
    pub branching: usize,
    /// File name of the tensor blob, relative to the JSON file.
    pub tensors: String,
    pub classes: Vec<ClassTreeJson>,
}

#[derive(Default)]
struct Rows {
    tables: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Rows {
    fn push(&mut self, tensor: &str, row: &[f64]) -> TensorRef {
        let rows = self.tables.entry(tensor.to_owned()).or_default();
        rows.push(row.to_vec());
        TensorRef {
            tensor: tensor.to_owned(),
            row: rows.len() - 1,
        }
    }

    fn into_container(self) -> Container {
        let mut c = Container::new("tree-tensors");
        for (name, rows) in self.tables {
            let cols = rows.first().map_or(0, Vec::len);
            c.push(
                name,
                Matrix::new(rows.len(), cols, rows.concat()).expect("rows share a width"),
            );
        }
        c
    }
}

fn export_node(node: &TreeNode, rows: &mut Rows) -> NodeJson {
    NodeJson {
        path: node.path.clone(),
        layer: node.layer,
        eigenvalue: node.eigenvalue,
        vector: rows.push(&format!("layer{}.vectors", node.layer), &node.eigenvector),
        input_feature: node
            .input_feature
            .as_ref()
            .map(|f| rows.push("input_features", f)),
        children: node.children.iter().map(|c| export_node(c, rows)).collect(),
    }
}

/// Splits trees into the JSON document and its tensor blob.
pub fn export_trees(trees: &[DecompileTree], blob_name: &str) -> (TreeFileJson, Container) {
    let mut rows = Rows::default();
    let classes = trees
        .iter()
        .map(|t| ClassTreeJson {
            class: t.class,
            direction: rows.push("directions", &t.direction),
            roots: t.roots.iter().map(|n| export_node(n, &mut rows)).collect(),
        })
        .collect();
    let doc = TreeFileJson {
        branching: trees.first().map_or(0, |t| t.branching),
        tensors: blob_name.to_owned(),
        classes,
    };
    (doc, rows.into_container())
}

fn lookup(blob: &Container, r: &TensorRef) -> Result<Vec<f64>> {
    let m = blob.tensor(&r.tensor)?;
    if r.row >= m.rows() {
        return Err(Error::Metadata(format!(
            "row {} out of range for tensor {:?}",
            r.row, r.tensor
        )));
    }
    Ok(m.row(r.row).to_vec())
}

fn import_node(node: &NodeJson, blob: &Container) -> Result<TreeNode> {
    Ok(TreeNode {
        path: node.path.clone(),
        layer: node.layer,
        eigenvalue: node.eigenvalue,
        eigenvector: lookup(blob, &node.vector)?,
        input_feature: node
            .input_feature
            .as_ref()
            .map(|r| lookup(blob, r))
            .transpose()?,
        children: node
            .children
            .iter()
            .map(|c| import_node(c, blob))
            .collect::<Result<_>>()?,
    })
}

pub fn import_trees(doc: &TreeFileJson, blob: &Container) -> Result<Vec<DecompileTree>> {
    doc.classes
        .iter()
        .map(|c| {
            Ok(DecompileTree {
                class: c.class,
                direction: lookup(blob, &c.direction)?,
                branching: doc.branching,
                roots: c
                    .roots
                    .iter()
                    .map(|n| import_node(n, blob))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Blob path next to `json_path`: same stem, `.blnr` extension.
pub fn blob_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("blnr")
}

pub fn save_trees(trees: &[DecompileTree], json_path: &Path) -> Result<()> {
    let blob = blob_path(json_path);
    let blob_name = blob
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (doc, tensors) = export_trees(trees, &blob_name);
    tensors.save(&blob)?;
    let mut text =
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Metadata(e.to_string()))?;
    text.push('\n');
    write_file(json_path, text.as_bytes())
}

pub fn load_trees(json_path: &Path) -> Result<Vec<DecompileTree>> {
    let doc: TreeFileJson = serde_json::from_slice(&read_file(json_path)?)
        .map_err(|e| Error::Metadata(e.to_string()))?;
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let blob = Container::load(&dir.join(&doc.tensors))?;
    import_trees(&doc, &blob)
}
