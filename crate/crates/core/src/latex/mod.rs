//! LaTeX labels as node-token sequences.
//!
//! A label such as `x ^ { y z } + 1` becomes the node sequence
//! `x ^ y z } + 1`: opening braces vanish and every closing brace of a
//! structural group is an imaginary end token (`}`), shared by all
//! structures.

mod parse;
pub mod tree;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_latex;
pub use tree::{Group, Item};
pub use vocab::{
    builtin_role, builtin_rule, ClassId, Role, StructuralRule, TokenVocab, VocabEntry, END_SYMBOL,
    EOS_SYMBOL, HSE_SYMBOLS, IRS_SYMBOLS, NONE_SYMBOL, SOS_SYMBOL,
};

#[derive(Debug, Error)]
pub enum LatexError {
    #[error("label corpus is empty")]
    EmptyCorpus,
    #[error("unbalanced braces in {input:?} at byte {position}")]
    UnbalancedBraces { input: String, position: usize },
    #[error("cannot isolate control sequence in {input:?} at byte {position}")]
    UnknownControlSequence { input: String, position: usize },
    #[error("structural group without an owner or argument at byte {position}")]
    DanglingGroup { position: usize },
    #[error("symbol {0:?} is not in the vocabulary")]
    VocabMiss(String),
    #[error("ill-nested token sequence at position {0}")]
    IllNested(usize),
    #[error("vocab line {line}: expected `symbol<TAB>role`")]
    BadVocabLine { line: usize },
    #[error("vocab line {line}: unknown role {role:?}")]
    UnknownRole { line: usize, role: String },
    #[error("invalid vocab layout: {0}")]
    VocabLayout(String),
    #[error("duplicate vocab symbol {0:?}")]
    DuplicateSymbol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A label linearized into node tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalTokenSeq {
    pub tokens: Vec<ClassId>,
    pub source: String,
}

impl CanonicalTokenSeq {
    pub fn new(tokens: Vec<ClassId>) -> Self {
        CanonicalTokenSeq {
            tokens,
            source: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens the per-cell tokenizer is responsible for, in label order.
    pub fn predictable<'a>(
        &'a self,
        vocab: &'a TokenVocab,
    ) -> impl Iterator<Item = (usize, ClassId)> + 'a {
        self.tokens
            .iter()
            .copied()
            .enumerate()
            .filter(move |(_, c)| vocab.role(*c).is_predictable())
    }

    pub fn symbols<'v>(&self, vocab: &'v TokenVocab) -> Vec<&'v str> {
        self.tokens.iter().map(|&c| vocab.symbol(c)).collect()
    }
}

/// Scans a label corpus and assigns roles from the builtin relation and
/// structural symbol lists. Class order is lexicographic by symbol, so the
/// result depends only on the set of symbols seen.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S]) -> Result<TokenVocab, LatexError> {
    if corpus.is_empty() {
        return Err(LatexError::EmptyCorpus);
    }
    let symbols = parse::corpus_symbols(corpus)?;
    TokenVocab::from_symbols(symbols)
}

pub fn emit_latex(seq: &CanonicalTokenSeq, vocab: &TokenVocab) -> Result<String, LatexError> {
    Ok(tree::render(&tree::structure(&seq.tokens, vocab)?, vocab))
}

/// Emission that repairs ill-nested input instead of failing.
pub fn emit_latex_lenient(tokens: &[ClassId], vocab: &TokenVocab) -> String {
    tree::render(&tree::structure_lenient(tokens, vocab), vocab)
}

/// Ground-truth node targets: the linear chain `<sos> → t_1 → … → t_L → <eos>`.
/// Indices address the `(L+2)`-wide candidate axis with `<sos>` at 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTargets {
    pub self_targets: Vec<ClassId>,
    pub left_targets: Vec<usize>,
    pub right_targets: Vec<usize>,
}

pub fn gt_targets(seq: &CanonicalTokenSeq) -> NodeTargets {
    let n = seq.tokens.len();
    NodeTargets {
        self_targets: seq.tokens.clone(),
        left_targets: (0..n).collect(),
        right_targets: (2..n + 2).collect(),
    }
}

/// For each position, the index of the structural token whose group the
/// end token at that position closes (`None` for non-end tokens).
pub fn end_parents(
    seq: &CanonicalTokenSeq,
    vocab: &TokenVocab,
) -> Result<Vec<Option<usize>>, LatexError> {
    let items = tree::structure(&seq.tokens, vocab)?;
    let mut parents = vec![None; seq.tokens.len()];
    fn walk(items: &[Item], parents: &mut [Option<usize>]) {
        for item in items {
            if let Item::Structure { at, groups, .. } = item {
                for g in groups {
                    if let Some(e) = g.end_at {
                        parents[e] = Some(*at);
                    }
                    walk(&g.items, parents);
                }
            }
        }
    }
    walk(&items, &mut parents);
    Ok(parents)
}
