//! Reconstruction of group structure from a flat node-token sequence, and
//! LaTeX emission from that structure.
//!
//! Imaginary ends are indistinguishable, so the only freedom is how many
//! optional groups each variable-arity token (`\sqrt`) takes. A sequence
//! is well nested iff the pending-end depth never goes negative and ends
//! at zero; handing the required extra groups to the earliest variable
//! tokens maximizes every prefix depth, so it succeeds whenever any
//! assignment does.

use serde::Serialize;

use super::vocab::{ClassId, TokenVocab};
use super::LatexError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Item {
    Symbol {
        class: ClassId,
        at: usize,
    },
    Structure {
        head: ClassId,
        at: usize,
        groups: Vec<Group>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Group {
    pub items: Vec<Item>,
    /// Index of the closing end token; `None` when closed by repair.
    pub end_at: Option<usize>,
}

struct Frame {
    head: ClassId,
    at: usize,
    total: usize,
    groups: Vec<Group>,
    current: Vec<Item>,
}

/// Group count chosen for each position (0 for non-structural tokens).
fn assign_arity(tokens: &[ClassId], vocab: &TokenVocab) -> Vec<usize> {
    let end = vocab.end_class();
    let mut arity = vec![0usize; tokens.len()];
    let mut depth: i64 = 0;
    let mut slack = 0usize;
    for (i, &t) in tokens.iter().enumerate() {
        if t == end {
            depth -= 1;
        } else if let Some(rule) = vocab.rule(t) {
            arity[i] = rule.min_groups;
            depth += rule.min_groups as i64;
            slack += rule.optional_groups();
        }
    }
    // Out-of-range demands are clamped; the stack walk reports the exact
    // failure position in strict mode.
    let mut extra = (-depth).clamp(0, slack as i64) as usize;
    for (i, &t) in tokens.iter().enumerate() {
        if extra == 0 {
            break;
        }
        if let Some(rule) = vocab.rule(t) {
            let take = rule.optional_groups().min(extra);
            arity[i] += take;
            extra -= take;
        }
    }
    arity
}

fn build(tokens: &[ClassId], vocab: &TokenVocab, lenient: bool) -> Result<Vec<Item>, LatexError> {
    let arity = assign_arity(tokens, vocab);
    let end = vocab.end_class();
    let mut root: Vec<Item> = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();

    fn push(root: &mut Vec<Item>, stack: &mut [Frame], item: Item) {
        match stack.last_mut() {
            Some(f) => f.current.push(item),
            None => root.push(item),
        }
    }

    fn close(frame: &mut Frame, end_at: Option<usize>) -> bool {
        frame.groups.push(Group {
            items: std::mem::take(&mut frame.current),
            end_at,
        });
        frame.groups.len() == frame.total
    }

    for (i, &t) in tokens.iter().enumerate() {
        if t == end {
            let Some(top) = stack.last_mut() else {
                if lenient {
                    continue;
                }
                return Err(LatexError::IllNested(i));
            };
            if close(top, Some(i)) {
                let f = stack.pop().unwrap();
                let item = Item::Structure {
                    head: f.head,
                    at: f.at,
                    groups: f.groups,
                };
                push(&mut root, &mut stack, item);
            }
        } else if arity[i] > 0 {
            stack.push(Frame {
                head: t,
                at: i,
                total: arity[i],
                groups: Vec::new(),
                current: Vec::new(),
            });
        } else {
            push(&mut root, &mut stack, Item::Symbol { class: t, at: i });
        }
    }

    if let Some(f) = stack.last() {
        if !lenient {
            return Err(LatexError::IllNested(f.at));
        }
    }
    while let Some(mut f) = stack.pop() {
        while !close(&mut f, None) {}
        let item = Item::Structure {
            head: f.head,
            at: f.at,
            groups: f.groups,
        };
        push(&mut root, &mut stack, item);
    }
    Ok(root)
}

/// Strict structure reconstruction; fails on ill-nested input.
pub fn structure(tokens: &[ClassId], vocab: &TokenVocab) -> Result<Vec<Item>, LatexError> {
    build(tokens, vocab, false)
}

/// Best-effort reconstruction: stray ends are dropped and open groups are
/// closed at the end of the sequence.
pub fn structure_lenient(tokens: &[ClassId], vocab: &TokenVocab) -> Vec<Item> {
    build(tokens, vocab, true).expect("lenient build cannot fail")
}

pub fn render(items: &[Item], vocab: &TokenVocab) -> String {
    let mut parts: Vec<&str> = Vec::new();
    render_into(items, vocab, &mut parts);
    parts.join(" ")
}

fn render_into<'v>(items: &[Item], vocab: &'v TokenVocab, parts: &mut Vec<&'v str>) {
    for item in items {
        match item {
            Item::Symbol { class, .. } => parts.push(vocab.symbol(*class)),
            Item::Structure { head, groups, .. } => {
                parts.push(vocab.symbol(*head));
                let rule = vocab.rule(*head).expect("structure head has a rule");
                for (g, (open, close)) in groups.iter().zip(rule.delimiters_for(groups.len())) {
                    parts.push(open);
                    render_into(&g.items, vocab, parts);
                    parts.push(close);
                }
            }
        }
    }
}

/// Flattens a structure back into node tokens.
pub fn flatten(items: &[Item], vocab: &TokenVocab) -> Vec<ClassId> {
    let mut out = Vec::new();
    flatten_into(items, vocab, &mut out);
    out
}

fn flatten_into(items: &[Item], vocab: &TokenVocab, out: &mut Vec<ClassId>) {
    for item in items {
        match item {
            Item::Symbol { class, .. } => out.push(*class),
            Item::Structure { head, groups, .. } => {
                out.push(*head);
                for g in groups {
                    flatten_into(&g.items, vocab, out);
                    out.push(vocab.end_class());
                }
            }
        }
    }
}
