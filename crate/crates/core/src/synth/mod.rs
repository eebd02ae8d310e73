//! Seeded synthetic expressions with simulated model outputs.
//!
//! A sample is a random expression laid out on an abstract grid, plus the
//! tensors a trained model would emit for it: the tokenizer grid, one
//! attention slice per node token, and the self/left/right head scores for
//! the node list that decoding will extract from that grid.

pub mod oracle;

use std::collections::HashMap;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{expand_imaginary, vat_extract, Node};
use crate::latex::{
    build_vocab, emit_latex, end_parents, parse_latex, tree, CanonicalTokenSeq, ClassId, Item,
    LatexError, TokenVocab,
};
use crate::tensor_io::{AttentionStack, Grid, ScoreMatrix};

pub const DEFAULT_DIMS: (usize, usize) = (16, 64);

const SYMBOLS: &[&str] = &[
    "a", "b", "c", "k", "n", "x", "y", "z", "0", "1", "2", "3", "4",
];
const OPERATORS: &[&str] = &["+", "-", "="];

/// Peak probability of a clean cell or attention step.
const PEAK: f32 = 0.9;
/// Observed and true-class mass at a corrupted cell.
const CORRUPT_HIGH: f32 = 0.6;
const CORRUPT_LOW: f32 = 0.3;
/// Logit scale of simulated head rows.
const BETA: f64 = 8.0;
/// Extra logit pull of a self row towards the class the grid shows.
const OBSERVED_PULL: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("layout needs {needed:?} cells (rows, cols), grid is {available:?}")]
    GridTooSmall {
        needed: (usize, usize),
        available: (usize, usize),
    },
    #[error("bad noise spec {0:?}, expected flip,spurious,temperature")]
    BadNoiseSpec(String),
    #[error(transparent)]
    Latex(#[from] LatexError),
}

/// The vocabulary covering every symbol the grammar can produce.
pub fn synth_vocab() -> TokenVocab {
    let mut corpus: Vec<String> = SYMBOLS
        .iter()
        .chain(OPERATORS)
        .map(|s| s.to_string())
        .collect();
    corpus.extend(
        [
            "x ^ { 2 }",
            "x _ { 1 }",
            r"\frac { a } { b }",
            r"\sqrt [ 3 ] { x }",
        ]
        .map(String::from),
    );
    build_vocab(&corpus).expect("fixed corpus is valid")
}

/// Random expression of nesting depth at most `max_depth`, returned as
/// canonical LaTeX and its token sequence.
pub fn gen_expression(
    seed: u64,
    max_depth: usize,
    vocab: &TokenVocab,
) -> Result<(String, CanonicalTokenSeq), LatexError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    expr(&mut rng, max_depth, &mut out);
    let seq = parse_latex(&out.join(" "), vocab)?;
    Ok((emit_latex(&seq, vocab)?, seq))
}

fn expr(rng: &mut ChaCha8Rng, depth: usize, out: &mut Vec<&'static str>) {
    if depth == 0 {
        out.push(symbol(rng));
        return;
    }
    for t in 0..rng.random_range(1..=3) {
        if t > 0 {
            out.push(OPERATORS.choose(rng).unwrap());
        }
        term(rng, depth, out);
    }
}

fn term(rng: &mut ChaCha8Rng, depth: usize, out: &mut Vec<&'static str>) {
    let inner = |rng: &mut ChaCha8Rng, out: &mut Vec<&'static str>| {
        out.push("{");
        let d = rng.random_range(0..depth);
        expr(rng, d, out);
        out.push("}");
    };
    match rng.random_range(0..7) {
        0 | 1 => out.push(symbol(rng)),
        2 | 3 => {
            out.push(symbol(rng));
            out.push(if rng.random_bool(0.5) { "^" } else { "_" });
            inner(rng, out);
        }
        4 => {
            out.push(r"\frac");
            inner(rng, out);
            inner(rng, out);
        }
        5 => {
            out.push(r"\sqrt");
            inner(rng, out);
        }
        _ => {
            out.extend([r"\sqrt", "["]);
            out.push(symbol(rng));
            out.push("]");
            inner(rng, out);
        }
    }
}

fn symbol(rng: &mut ChaCha8Rng) -> &'static str {
    SYMBOLS.choose(rng).unwrap()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Chance that a visible token's cell shows another visible class.
    pub flip_prob: f64,
    /// Chance, per predictable token, of an extra token in an empty cell.
    pub spurious_prob: f64,
    /// Standard deviation of the logit noise on the three head rows.
    pub temperature: f64,
}

impl NoiseSpec {
    pub const ZERO: NoiseSpec = NoiseSpec {
        flip_prob: 0.0,
        spurious_prob: 0.0,
        temperature: 0.0,
    };
}

impl FromStr for NoiseSpec {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SynthError::BadNoiseSpec(s.to_string());
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [flip_prob, spurious_prob, temperature] = v[..] else {
            return Err(bad());
        };
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(flip_prob)
            || !prob(spurious_prob)
            || !(temperature >= 0.0 && temperature.is_finite())
        {
            return Err(bad());
        }
        Ok(Self {
            flip_prob,
            spurious_prob,
            temperature,
        })
    }
}

/// Forced corruptions on top of the random noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corruption {
    /// Show one random visible token as a different visible class.
    FlipOne,
    /// Add one random visible class in a random empty cell.
    SpuriousOne,
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub latex: String,
    pub seq: CanonicalTokenSeq,
    /// Cell of each token; ends take their parent's cell.
    pub layout: Vec<(usize, usize)>,
    pub p: Grid,
    pub attention: AttentionStack,
    pub self_probs: ScoreMatrix,
    pub left: ScoreMatrix,
    pub right: ScoreMatrix,
    pub noise: NoiseSpec,
    /// Ground-truth token behind each decode-time node, `None` for spurious
    /// tokens and unused ends.
    pub node_truth: Vec<Option<usize>>,
}

struct Block {
    cells: Vec<(usize, i64, i64)>,
    width: i64,
    above: i64,
    below: i64,
}

impl Block {
    fn empty() -> Self {
        Block {
            cells: Vec::new(),
            width: 0,
            above: 0,
            below: 0,
        }
    }

    fn single(at: usize) -> Self {
        Block {
            cells: vec![(at, 0, 0)],
            width: 1,
            above: 0,
            below: 0,
        }
    }

    fn place(&mut self, other: Block, dr: i64, dc: i64) {
        self.cells
            .extend(other.cells.into_iter().map(|(i, r, c)| (i, r + dr, c + dc)));
    }
}

fn row(items: &[Item], vocab: &TokenVocab) -> Block {
    let mut b = Block::empty();
    for item in items {
        let part = item_block(item, vocab);
        let (w, a, bl) = (part.width, part.above, part.below);
        let dc = b.width;
        b.place(part, 0, dc);
        b.width += w;
        b.above = b.above.max(a);
        b.below = b.below.max(bl);
    }
    b
}

fn item_block(item: &Item, vocab: &TokenVocab) -> Block {
    let (head, at, groups) = match item {
        Item::Symbol { at, .. } => return Block::single(*at),
        Item::Structure { head, at, groups } => (*head, *at, groups),
    };
    let mut parts: Vec<Block> = groups.iter().map(|g| row(&g.items, vocab)).collect();
    let mut b = Block::empty();
    match (vocab.symbol(head), parts.len()) {
        ("^" | r"\limits", 1) => {
            let c = parts.pop().unwrap();
            b.cells.push((at, -1, 0));
            b.width = 1 + c.width;
            b.above = 1 + c.below + c.above;
            let dr = -1 - c.below;
            b.place(c, dr, 1);
        }
        ("_", 1) => {
            let c = parts.pop().unwrap();
            b.cells.push((at, 1, 0));
            b.width = 1 + c.width;
            b.below = 1 + c.above + c.below;
            let dr = 1 + c.above;
            b.place(c, dr, 1);
        }
        (r"\frac", 2) => {
            let den = parts.pop().unwrap();
            let num = parts.pop().unwrap();
            b.cells.push((at, 0, 0));
            b.width = 1.max(num.width).max(den.width);
            b.above = 1 + num.below + num.above;
            b.below = 1 + den.above + den.below;
            let (up, down) = (-1 - num.below, 1 + den.above);
            b.place(num, up, 0);
            b.place(den, down, 0);
        }
        (r"\sqrt", 2) => {
            let body = parts.pop().unwrap();
            let index = parts.pop().unwrap();
            let iw = index.width.max(1);
            b.cells.push((at, 0, iw - 1));
            b.width = iw + body.width;
            b.above = (1 + index.below + index.above).max(body.above);
            b.below = body.below;
            let up = -1 - index.below;
            b.place(index, up, 0);
            b.place(body, 0, iw);
        }
        _ => {
            b.cells.push((at, 0, 0));
            b.width = 1;
            for part in parts {
                let (w, a, bl) = (part.width, part.above, part.below);
                let dc = b.width;
                b.place(part, 0, dc);
                b.width += w;
                b.above = b.above.max(a);
                b.below = b.below.max(bl);
            }
        }
    }
    b
}

/// Collision-free cell for every predictable token; ends take their
/// parent's cell.
pub fn layout(
    seq: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    dims: (usize, usize),
) -> Result<Vec<(usize, usize)>, SynthError> {
    let items = tree::structure(&seq.tokens, vocab)?;
    let b = row(&items, vocab);
    let needed = ((b.above + b.below + 1) as usize, b.width as usize);
    if needed.0 > dims.0 || needed.1 > dims.1 {
        return Err(SynthError::GridTooSmall {
            needed,
            available: dims,
        });
    }
    let mut cells = vec![(0, 0); seq.len()];
    for (i, r, c) in b.cells {
        cells[i] = ((r + b.above) as usize, c as usize);
    }
    for (i, parent) in end_parents(seq, vocab)?.into_iter().enumerate() {
        if let Some(p) = parent {
            cells[i] = cells[p];
        }
    }
    Ok(cells)
}

pub fn layout_and_render(
    seq: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    dims: (usize, usize),
    noise: NoiseSpec,
    seed: u64,
) -> Result<SynthSample, SynthError> {
    render_corrupted(seq, vocab, dims, noise, seed, &[])
}

/// Fills `cell` with `main` on one class, optionally `second` on another,
/// and spreads the rest evenly over the remaining channels.
fn fill_cell(
    p: &mut Grid,
    row: usize,
    col: usize,
    main: (usize, f32),
    second: Option<(usize, f32)>,
) {
    let c = p.channels;
    let used = 1 + usize::from(second.is_some());
    let rest_mass = 1.0 - main.1 - second.map_or(0.0, |s| s.1);
    let rest = if c > used {
        rest_mass / (c - used) as f32
    } else {
        0.0
    };
    for k in 0..c {
        p.set(k, row, col, rest);
    }
    p.set(main.0, row, col, main.1);
    if let Some((k, v)) = second {
        p.set(k, row, col, v);
    }
}

pub fn render_corrupted(
    seq: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    dims: (usize, usize),
    noise: NoiseSpec,
    seed: u64,
    corruptions: &[Corruption],
) -> Result<SynthSample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = layout(seq, vocab, dims)?;
    let (h, w) = dims;
    let none = vocab.none_class().index();
    let visible: Vec<ClassId> = vocab.visible_classes().collect();
    let predictable: Vec<usize> = seq.predictable(vocab).map(|(i, _)| i).collect();

    let mut p = Grid::zeros(vocab.grid_channels(), h, w);
    let mut occupied: HashMap<(usize, usize), usize> = HashMap::new();
    for r in 0..h {
        for c in 0..w {
            fill_cell(&mut p, r, c, (none, PEAK), None);
        }
    }
    for &i in &predictable {
        let (r, c) = cells[i];
        occupied.insert((r, c), i);
        fill_cell(&mut p, r, c, (seq.tokens[i].index(), PEAK), None);
    }

    let flippable: Vec<usize> = predictable
        .iter()
        .copied()
        .filter(|&i| vocab.role(seq.tokens[i]) == crate::latex::Role::Visible)
        .collect();
    let flip = |p: &mut Grid, rng: &mut ChaCha8Rng, i: usize| {
        let truth = seq.tokens[i];
        let others: Vec<ClassId> = visible.iter().copied().filter(|&v| v != truth).collect();
        if let Some(&shown) = others.choose(rng) {
            let (r, c) = cells[i];
            fill_cell(
                p,
                r,
                c,
                (shown.index(), CORRUPT_HIGH),
                Some((truth.index(), CORRUPT_LOW)),
            );
        }
    };
    for &i in &flippable {
        if noise.flip_prob > 0.0 && rng.random_bool(noise.flip_prob) {
            flip(&mut p, &mut rng, i);
        }
    }
    let spurious =
        |p: &mut Grid, rng: &mut ChaCha8Rng, occupied: &mut HashMap<(usize, usize), usize>| {
            let free: Vec<(usize, usize)> = (0..h)
                .flat_map(|r| (0..w).map(move |c| (r, c)))
                .filter(|rc| !occupied.contains_key(rc))
                .collect();
            if let (Some(&(r, c)), Some(&class)) = (free.choose(rng), visible.choose(rng)) {
                occupied.insert((r, c), usize::MAX);
                fill_cell(
                    p,
                    r,
                    c,
                    (class.index(), CORRUPT_HIGH),
                    Some((none, CORRUPT_LOW)),
                );
            }
        };
    for _ in &predictable {
        if noise.spurious_prob > 0.0 && rng.random_bool(noise.spurious_prob) {
            spurious(&mut p, &mut rng, &mut occupied);
        }
    }
    for corruption in corruptions {
        match corruption {
            Corruption::FlipOne => {
                if let Some(&i) = flippable.choose(&mut rng) {
                    flip(&mut p, &mut rng, i);
                }
            }
            Corruption::SpuriousOne => spurious(&mut p, &mut rng, &mut occupied),
        }
    }

    let attention = attention_stack(&cells, h, w);
    let nodes = expand_imaginary(
        &vat_extract(&p, vocab, false).expect("grid matches vocabulary"),
        vocab,
    );
    let node_truth = node_truth(&nodes, seq, vocab, &occupied)?;
    let (self_probs, left, right) =
        head_scores(&nodes, &node_truth, seq, vocab, noise.temperature, &mut rng);

    Ok(SynthSample {
        latex: emit_latex(seq, vocab)?,
        seq: seq.clone(),
        layout: cells,
        p,
        attention,
        self_probs,
        left,
        right,
        noise,
        node_truth,
    })
}

fn attention_stack(cells: &[(usize, usize)], h: usize, w: usize) -> AttentionStack {
    let n = h * w;
    let floor = if n > 1 {
        (1.0 - PEAK) / (n - 1) as f32
    } else {
        0.0
    };
    let peak = if n > 1 { PEAK } else { 1.0 };
    let mut data = vec![floor; cells.len() * n];
    for (l, &(r, c)) in cells.iter().enumerate() {
        data[l * n + r * w + c] = peak;
    }
    AttentionStack::new(cells.len(), h, w, data).expect("consistent dims")
}

fn node_truth(
    nodes: &[Node],
    seq: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    occupied: &HashMap<(usize, usize), usize>,
) -> Result<Vec<Option<usize>>, SynthError> {
    let parents = end_parents(seq, vocab)?;
    let mut truth: Vec<Option<usize>> = Vec::with_capacity(nodes.len());
    let mut ends_used: HashMap<usize, usize> = HashMap::new();
    for n in nodes {
        let t = match n.attached_to {
            None => occupied
                .get(&(n.row, n.col))
                .copied()
                .filter(|&i| i < seq.len()),
            Some(parent) => truth[parent].and_then(|gp| {
                let k = ends_used.entry(gp).or_insert(0);
                let hit = parents
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p == Some(gp))
                    .nth(*k)
                    .map(|(e, _)| e);
                *k += 1;
                hit
            }),
        };
        truth.push(t);
    }
    Ok(truth)
}

fn noisy_row(
    width: usize,
    target: usize,
    pull: Option<usize>,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    if temperature == 0.0 {
        let mut v = vec![0.0; width];
        v[target] = 1.0;
        return v;
    }
    let mut logits: Vec<f64> = (0..width)
        .map(|_| BETA * temperature * rng.sample::<f64, _>(StandardNormal))
        .collect();
    logits[target] += BETA;
    if let Some(o) = pull {
        logits[o] += BETA * OBSERVED_PULL;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|x| (x / sum) as f32).collect()
}

fn head_scores(
    nodes: &[Node],
    truth: &[Option<usize>],
    seq: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> (ScoreMatrix, ScoreMatrix, ScoreMatrix) {
    let n = nodes.len();
    let d = n + 2;
    let delete = vocab.none_class().index();
    let mut node_of = vec![usize::MAX; seq.len()];
    for (i, t) in truth.iter().enumerate() {
        if let Some(g) = t {
            node_of[*g] = i;
        }
    }
    let conn = |g: usize| node_of[g] + 1;
    let last = seq.len().checked_sub(1);

    let self_rows: Vec<Vec<f32>> = nodes
        .iter()
        .zip(truth)
        .map(|(node, t)| {
            let target = t.map_or(delete, |g| seq.tokens[g].index());
            let pull = (node.class.index() != target).then_some(node.class.index());
            noisy_row(vocab.self_head_width(), target, pull, temperature, rng)
        })
        .collect();

    let uniform = vec![1.0 / d as f32; d];
    let mut left_rows = vec![uniform.clone(); d];
    let mut right_rows = vec![uniform; d];
    right_rows[0] = noisy_row(
        d,
        if seq.is_empty() { d - 1 } else { conn(0) },
        None,
        temperature,
        rng,
    );
    for (i, t) in truth.iter().enumerate() {
        let (l, r) = match *t {
            Some(g) => (
                if g == 0 { 0 } else { conn(g - 1) },
                if Some(g) == last { d - 1 } else { conn(g + 1) },
            ),
            None => (0, d - 1),
        };
        left_rows[i + 1] = noisy_row(d, l, None, temperature, rng);
        right_rows[i + 1] = noisy_row(d, r, None, temperature, rng);
    }
    left_rows[d - 1] = noisy_row(d, last.map_or(0, conn), None, temperature, rng);

    (
        ScoreMatrix::from_rows(&self_rows).unwrap_or_else(|_| {
            ScoreMatrix::new(0, vocab.self_head_width(), Vec::new()).expect("empty matrix")
        }),
        ScoreMatrix::from_rows(&left_rows).expect("square rows"),
        ScoreMatrix::from_rows(&right_rows).expect("square rows"),
    )
}

/// Expression plus rendered tensors from one seed.
pub fn generate(
    seed: u64,
    max_depth: usize,
    dims: (usize, usize),
    noise: NoiseSpec,
    vocab: &TokenVocab,
) -> Result<SynthSample, SynthError> {
    let (_, seq) = gen_expression(seed, max_depth, vocab)?;
    layout_and_render(
        &seq,
        vocab,
        dims,
        noise,
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED,
    )
}
