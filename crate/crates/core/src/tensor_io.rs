//! Binary tensor files and graph serialization.
//!
//! `NAMT` layout, all words little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `4E 41 4D 54` (`"NAMT"`) |
//! | 4     | version, `u32` = 1 |
//! | 4     | ndim, `u32` |
//! | 4·ndim| dims, `u32` each, outermost first |
//! | 4     | dtype code, `u32` = 1 (f32) |
//! | 4·n   | payload, f32 row-major |

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{Edge, ExprGraph, GraphNode, PathResult};

pub const MAGIC: [u8; 4] = *b"NAMT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const MAX_DIM: usize = 1 << 20;
pub const MAX_NDIM: usize = 8;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic {0:02X?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("rank {0} exceeds the supported maximum")]
    TooManyDims(usize),
    #[error("dimension {axis} is {dim}, above the 2^20 limit")]
    DimOverflow { axis: usize, dim: usize },
    #[error("payload truncated: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),
    #[error("expected a rank-{expected} tensor, found rank {actual}")]
    Rank { expected: usize, actual: usize },
    #[error("data length {len} does not match dims {dims:?}")]
    LengthMismatch { dims: Vec<usize>, len: usize },
    #[error("graph json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A dense f32 tensor with arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.len() > MAX_NDIM {
            return Err(TensorError::TooManyDims(dims.len()));
        }
        if let Some((axis, &dim)) = dims.iter().enumerate().find(|(_, &d)| d > MAX_DIM) {
            return Err(TensorError::DimOverflow { axis, dim });
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                dims,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue(i));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.dims, self.data)
    }

    fn expect_rank(&self, rank: usize) -> Result<(), TensorError> {
        if self.dims.len() != rank {
            return Err(TensorError::Rank {
                expected: rank,
                actual: self.dims.len(),
            });
        }
        Ok(())
    }
}

/// Word order of the header fields and payload. Files on disk are always
/// little-endian; the big-endian codec exists to check that property.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u32_bytes(self, v: u32) -> [u8; 4] {
        match self {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        }
    }

    fn read_u32(self, b: [u8; 4]) -> u32 {
        match self {
            ByteOrder::Little => u32::from_le_bytes(b),
            ByteOrder::Big => u32::from_be_bytes(b),
        }
    }
}

pub fn encode_with(t: &Tensor, order: ByteOrder) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (4 + t.dims.len() + t.data.len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&order.u32_bytes(VERSION));
    out.extend_from_slice(&order.u32_bytes(t.dims.len() as u32));
    for &d in &t.dims {
        out.extend_from_slice(&order.u32_bytes(d as u32));
    }
    out.extend_from_slice(&order.u32_bytes(DTYPE_F32));
    for v in &t.data {
        out.extend_from_slice(&order.u32_bytes(v.to_bits()));
    }
    out
}

pub fn decode_with(bytes: &[u8], order: ByteOrder) -> Result<Tensor, TensorError> {
    let mut words = Words {
        bytes,
        pos: 0,
        order,
    };
    let magic = words.raw()?;
    if magic != MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    let version = words.u32()?;
    if version != VERSION {
        return Err(TensorError::UnsupportedVersion(version));
    }
    let ndim = words.u32()? as usize;
    if ndim > MAX_NDIM {
        return Err(TensorError::TooManyDims(ndim));
    }
    let mut dims = Vec::with_capacity(ndim);
    for axis in 0..ndim {
        let dim = words.u32()? as usize;
        if dim > MAX_DIM {
            return Err(TensorError::DimOverflow { axis, dim });
        }
        dims.push(dim);
    }
    let dtype = words.u32()?;
    if dtype != DTYPE_F32 {
        return Err(TensorError::UnsupportedDtype(dtype));
    }
    let remaining = bytes.len() - words.pos;
    let expected = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .unwrap_or(usize::MAX);
    if remaining < expected {
        return Err(TensorError::TruncatedPayload {
            expected,
            actual: remaining,
        });
    }
    if remaining > expected {
        return Err(TensorError::TrailingBytes(remaining - expected));
    }
    let data: Vec<f32> = bytes[words.pos..]
        .chunks_exact(4)
        .map(|c| f32::from_bits(order.read_u32([c[0], c[1], c[2], c[3]])))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFiniteValue(i));
    }
    Ok(Tensor { dims, data })
}

struct Words<'a> {
    bytes: &'a [u8],
    pos: usize,
    order: ByteOrder,
}

impl Words<'_> {
    fn raw(&mut self) -> Result<[u8; 4], TensorError> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(TensorError::TruncatedPayload {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        let b = self.raw()?;
        Ok(self.order.read_u32(b))
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    encode_with(t, ByteOrder::Little)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    decode_with(bytes, ByteOrder::Little)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, TensorError> {
    decode_tensor(&std::fs::read(path)?)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    std::fs::write(path, encode_tensor(t))?;
    Ok(())
}

/// `C × H × W` per-cell class scores, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, TensorError> {
        Tensor::new(vec![channels, height, width], data)?.try_into()
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Grid {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f32) {
        self.data[(c * self.height + row) * self.width + col] = v;
    }

    /// Channel `c` as a row-major `H × W` slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.cells();
        &self.data[c * n..(c + 1) * n]
    }

    /// Scores of every channel at one cell.
    pub fn cell(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(c, row, col)).collect()
    }
}

impl TryFrom<Tensor> for Grid {
    type Error = TensorError;

    fn try_from(t: Tensor) -> Result<Self, TensorError> {
        t.expect_rank(3)?;
        let (dims, data) = t.into_parts();
        Ok(Grid {
            channels: dims[0],
            height: dims[1],
            width: dims[2],
            data,
        })
    }
}

impl From<Grid> for Tensor {
    fn from(g: Grid) -> Self {
        Tensor {
            dims: vec![g.channels, g.height, g.width],
            data: g.data,
        }
    }
}

/// Teacher attention, one `H × W` slice per decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStack {
    pub steps: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl AttentionStack {
    pub fn new(
        steps: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, TensorError> {
        Tensor::new(vec![steps, height, width], data)?.try_into()
    }

    pub fn step(&self, l: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[l * n..(l + 1) * n]
    }
}

impl TryFrom<Tensor> for AttentionStack {
    type Error = TensorError;

    fn try_from(t: Tensor) -> Result<Self, TensorError> {
        t.expect_rank(3)?;
        let (dims, data) = t.into_parts();
        Ok(AttentionStack {
            steps: dims[0],
            height: dims[1],
            width: dims[2],
            data,
        })
    }
}

impl From<AttentionStack> for Tensor {
    fn from(a: AttentionStack) -> Self {
        Tensor {
            dims: vec![a.steps, a.height, a.width],
            data: a.data,
        }
    }
}

/// Row-major `N × M` matrix; connectivity and self-correction heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        Tensor::new(vec![rows, cols], data)?.try_into()
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// First row that is not a probability distribution within `tol`.
    pub fn non_stochastic_row(&self, tol: f32) -> Option<usize> {
        (0..self.rows).find(|&r| {
            let row = self.row(r);
            row.iter().any(|&v| v < 0.0) || (row.iter().sum::<f32>() - 1.0).abs() > tol
        })
    }
}

impl TryFrom<Tensor> for ScoreMatrix {
    type Error = TensorError;

    fn try_from(t: Tensor) -> Result<Self, TensorError> {
        t.expect_rank(2)?;
        let (dims, data) = t.into_parts();
        Ok(ScoreMatrix {
            rows: dims[0],
            cols: dims[1],
            data,
        })
    }
}

impl From<ScoreMatrix> for Tensor {
    fn from(m: ScoreMatrix) -> Self {
        Tensor {
            dims: vec![m.rows, m.cols],
            data: m.data,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    label: String,
    row: Option<usize>,
    col: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeJson {
    src: usize,
    dst: usize,
    w: f64,
}

pub fn graph_to_json(g: &ExprGraph) -> String {
    let doc = GraphJson {
        nodes: g
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| NodeJson {
                id,
                label: n.label.clone(),
                row: n.cell.map(|c| c.0),
                col: n.cell.map(|c| c.1),
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeJson {
                src: e.src,
                dst: e.dst,
                w: e.weight,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("graph json is always serializable")
}

/// Reads the JSON graph document. Node classes are not part of the schema
/// and come back as `None`.
pub fn graph_from_json(text: &str) -> Result<ExprGraph, TensorError> {
    let doc: GraphJson = serde_json::from_str(text)?;
    let mut nodes = doc.nodes;
    nodes.sort_by_key(|n| n.id);
    Ok(ExprGraph {
        nodes: nodes
            .into_iter()
            .map(|n| GraphNode {
                label: n.label,
                class: None,
                cell: n.row.zip(n.col),
            })
            .collect(),
        edges: doc
            .edges
            .into_iter()
            .map(|e| Edge {
                src: e.src,
                dst: e.dst,
                weight: e.w,
            })
            .collect(),
    })
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering; edges on `path` are drawn bold.
pub fn to_dot(g: &ExprGraph, path: Option<&PathResult>) -> String {
    let on_path = |src: usize, dst: usize| {
        path.is_some_and(|p| p.nodes.windows(2).any(|w| w[0] == src && w[1] == dst))
    };
    let mut out = String::from("digraph expr {\n  rankdir=LR;\n");
    for (i, n) in g.nodes.iter().enumerate() {
        let label = match n.cell {
            Some((r, c)) => format!("{}@({},{})", n.label, r, c),
            None => n.label.clone(),
        };
        let _ = writeln!(out, "  n{} [label=\"{}\"];", i, dot_escape(&label));
    }
    for e in &g.edges {
        let style = if on_path(e.src, e.dst) {
            ", style=bold"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  n{} -> n{} [label=\"{:.3}\"{}];",
            e.src, e.dst, e.weight, style
        );
    }
    out.push_str("}\n");
    out
}

pub fn export_dot(
    g: &ExprGraph,
    path: Option<&PathResult>,
    file: impl AsRef<Path>,
) -> Result<(), TensorError> {
    std::fs::write(file, to_dot(g, path))?;
    Ok(())
}
