//! Lexing and structural parsing of LaTeX labels into node tokens.
//!
//! Braces are syntax: `{` is absorbed and the `}` closing a structural
//! group becomes an imaginary end. Bare groups (`{ a }` with no owner) are
//! flattened. An omitted brace group (`x ^ 2`) takes exactly one atom.

use std::collections::BTreeSet;

use super::vocab::{builtin_rule, StructuralRule, TokenVocab, END_SYMBOL};
use super::{CanonicalTokenSeq, LatexError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Lexeme {
    pub text: String,
    pub offset: usize,
}

/// Node-level symbols before class lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Sym {
    Symbol(String),
    End,
}

const SYNTAX: [&str; 4] = ["{", "}", "[", "]"];

fn chunks(s: &str) -> impl Iterator<Item = (usize, &str)> {
    s.split(char::is_whitespace)
        .filter(|c| !c.is_empty())
        .map(move |c| (c.as_ptr() as usize - s.as_ptr() as usize, c))
}

/// LaTeX lexical rules: control words, control symbols, single characters.
fn latex_lexemes(chunk: &str, base: usize) -> Result<Vec<Lexeme>, usize> {
    let mut out = Vec::new();
    let mut it = chunk.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if c == '\\' {
            let mut end = i + 1;
            match it.peek() {
                None => return Err(base + i),
                Some(&(_, n)) if n.is_ascii_alphabetic() => {
                    while let Some(&(j, n)) = it.peek() {
                        if !n.is_ascii_alphabetic() {
                            break;
                        }
                        end = j + n.len_utf8();
                        it.next();
                    }
                }
                Some(&(j, n)) => {
                    end = j + n.len_utf8();
                    it.next();
                }
            }
            out.push(Lexeme {
                text: chunk[i..end].to_string(),
                offset: base + i,
            });
        } else {
            out.push(Lexeme {
                text: c.to_string(),
                offset: base + i,
            });
        }
    }
    Ok(out)
}

pub(crate) fn lex_plain(s: &str) -> Result<Vec<Lexeme>, LatexError> {
    let mut out = Vec::new();
    for (off, chunk) in chunks(s) {
        let lexemes =
            latex_lexemes(chunk, off).map_err(|position| LatexError::UnknownControlSequence {
                input: s.to_string(),
                position,
            })?;
        out.extend(lexemes);
    }
    Ok(out)
}

/// Whitespace-separated tokens, falling back to greedy longest match over
/// the vocab for unspaced chunks.
pub(crate) fn lex_with_vocab(s: &str, vocab: &TokenVocab) -> Result<Vec<Lexeme>, LatexError> {
    let known = |t: &str| SYNTAX.contains(&t) || matches_vocab(vocab, t);
    let mut out = Vec::new();
    for (off, chunk) in chunks(s) {
        if known(chunk) {
            out.push(Lexeme {
                text: chunk.to_string(),
                offset: off,
            });
            continue;
        }
        let mut start = 0;
        while start < chunk.len() {
            let rest = &chunk[start..];
            let hit = rest
                .char_indices()
                .map(|(i, c)| i + c.len_utf8())
                .rev()
                .find(|&len| known(&rest[..len]));
            match hit {
                Some(len) => {
                    out.push(Lexeme {
                        text: rest[..len].to_string(),
                        offset: off + start,
                    });
                    start += len;
                }
                None => {
                    let missing = latex_lexemes(rest, 0)
                        .ok()
                        .and_then(|l| l.into_iter().next())
                        .map_or_else(|| rest.to_string(), |l| l.text);
                    return Err(LatexError::VocabMiss(missing));
                }
            }
        }
    }
    Ok(out)
}

fn matches_vocab(vocab: &TokenVocab, t: &str) -> bool {
    match vocab.lookup(t) {
        Some(c) => c.index() < vocab.predictable_count() || t == END_SYMBOL,
        None => false,
    }
}

fn check_balance(input: &str, lexemes: &[Lexeme]) -> Result<(), LatexError> {
    let mut open = Vec::new();
    for l in lexemes {
        match l.text.as_str() {
            "{" => open.push(l.offset),
            "}" if open.pop().is_none() => {
                return Err(LatexError::UnbalancedBraces {
                    input: input.to_string(),
                    position: l.offset,
                });
            }
            _ => {}
        }
    }
    match open.first() {
        Some(&position) => Err(LatexError::UnbalancedBraces {
            input: input.to_string(),
            position,
        }),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stop {
    Eof,
    Brace,
    Bracket,
}

struct Parser<'a, F> {
    lexemes: &'a [Lexeme],
    pos: usize,
    rule: F,
    out: Vec<Sym>,
}

impl<'a, F> Parser<'a, F>
where
    F: Fn(&str) -> Option<StructuralRule>,
{
    fn peek(&self) -> Option<&'a str> {
        self.lexemes.get(self.pos).map(|l| l.text.as_str())
    }

    fn offset(&self) -> usize {
        self.lexemes
            .get(self.pos)
            .or_else(|| self.lexemes.last())
            .map_or(0, |l| l.offset)
    }

    fn sequence(&mut self, stop: Stop) -> Result<(), LatexError> {
        let mut brackets = 0usize;
        loop {
            match self.peek() {
                None => {
                    return match stop {
                        Stop::Eof => Ok(()),
                        _ => Err(LatexError::DanglingGroup {
                            position: self.offset(),
                        }),
                    }
                }
                Some("}") => {
                    return match stop {
                        Stop::Brace => Ok(()),
                        _ => Err(LatexError::DanglingGroup {
                            position: self.offset(),
                        }),
                    }
                }
                Some("]") if stop == Stop::Bracket && brackets == 0 => return Ok(()),
                Some("{") => {
                    self.pos += 1;
                    self.sequence(Stop::Brace)?;
                    self.pos += 1;
                }
                Some(t) => {
                    if stop == Stop::Bracket {
                        match t {
                            "[" => brackets += 1,
                            "]" => brackets -= 1,
                            _ => {}
                        }
                    }
                    self.atom()?;
                }
            }
        }
    }

    fn atom(&mut self) -> Result<(), LatexError> {
        let lexeme = &self.lexemes[self.pos];
        self.pos += 1;
        self.out.push(Sym::Symbol(lexeme.text.clone()));
        if let Some(rule) = (self.rule)(&lexeme.text) {
            self.arguments(&rule, lexeme.offset)?;
        }
        Ok(())
    }

    fn arguments(&mut self, rule: &StructuralRule, head: usize) -> Result<(), LatexError> {
        for _ in 0..rule.optional_groups() {
            if self.peek() == Some("[") {
                self.pos += 1;
                self.sequence(Stop::Bracket)?;
                self.pos += 1;
                self.out.push(Sym::End);
            }
        }
        for _ in 0..rule.min_groups {
            self.group(head)?;
        }
        Ok(())
    }

    fn group(&mut self, head: usize) -> Result<(), LatexError> {
        match self.peek() {
            Some("{") => {
                self.pos += 1;
                self.sequence(Stop::Brace)?;
                self.pos += 1;
            }
            None | Some("}") | Some("]") => {
                return Err(LatexError::DanglingGroup { position: head });
            }
            Some(_) => self.atom()?,
        }
        self.out.push(Sym::End);
        Ok(())
    }
}

fn parse_lexemes<F>(input: &str, lexemes: &[Lexeme], rule: F) -> Result<Vec<Sym>, LatexError>
where
    F: Fn(&str) -> Option<StructuralRule>,
{
    check_balance(input, lexemes)?;
    let mut parser = Parser {
        lexemes,
        pos: 0,
        rule,
        out: Vec::with_capacity(lexemes.len()),
    };
    parser.sequence(Stop::Eof)?;
    Ok(parser.out)
}

/// Collects the predictable symbols of a corpus using the builtin grammar.
pub(crate) fn corpus_symbols<S: AsRef<str>>(corpus: &[S]) -> Result<BTreeSet<String>, LatexError> {
    let mut symbols = BTreeSet::new();
    for s in corpus {
        let s = s.as_ref();
        let lexemes = lex_plain(s)?;
        for sym in parse_lexemes(s, &lexemes, builtin_rule)? {
            if let Sym::Symbol(t) = sym {
                symbols.insert(t);
            }
        }
    }
    Ok(symbols)
}

pub fn parse_latex(s: &str, vocab: &TokenVocab) -> Result<CanonicalTokenSeq, LatexError> {
    let lexemes = lex_with_vocab(s, vocab)?;
    let syms = parse_lexemes(s, &lexemes, |t| vocab.rule_for_symbol(t).cloned())?;
    let tokens = syms
        .into_iter()
        .map(|sym| match sym {
            Sym::End => Ok(vocab.end_class()),
            Sym::Symbol(t) => vocab
                .lookup(&t)
                .filter(|c| c.index() < vocab.predictable_count())
                .ok_or(LatexError::VocabMiss(t)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CanonicalTokenSeq {
        tokens,
        source: s.to_string(),
    })
}
