//! Symbol inventory and the structural grammar table.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LatexError;

pub const NONE_SYMBOL: &str = "<none>";
pub const END_SYMBOL: &str = "}";
pub const SOS_SYMBOL: &str = "<sos>";
pub const EOS_SYMBOL: &str = "<eos>";

/// Relation tokens without a glyph of their own.
pub const IRS_SYMBOLS: &[&str] = &["^", "_", "\\limits"];

/// Drawn structural elements (CROHME and HME100K inventories combined).
pub const HSE_SYMBOLS: &[&str] = &[
    "\\frac",
    "\\sqrt",
    "\\dot",
    "\\ddot",
    "\\boxed",
    "\\widehat",
    "\\overline",
    "\\xlongequal",
    "\\textcircled",
    "\\xrightarrow",
    "\\overrightarrow",
];

/// Dense class index into a [`TokenVocab`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for ClassId {
    fn from(i: usize) -> Self {
        ClassId(i as u32)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Visible,
    Hse,
    Irs,
    ImaginaryEnd,
    Sos,
    Eos,
    None,
}

impl Role {
    /// Roles the per-cell tokenizer can emit.
    pub fn is_predictable(self) -> bool {
        matches!(self, Role::Visible | Role::Hse | Role::Irs)
    }

    pub fn is_structural(self) -> bool {
        matches!(self, Role::Hse | Role::Irs)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Visible => "visible",
            Role::Hse => "hse",
            Role::Irs => "irs",
            Role::ImaginaryEnd => "end",
            Role::Sos => "sos",
            Role::Eos => "eos",
            Role::None => "none",
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "visible" => Role::Visible,
            "hse" => Role::Hse,
            "irs" => Role::Irs,
            "end" => Role::ImaginaryEnd,
            "sos" => Role::Sos,
            "eos" => Role::Eos,
            "none" => Role::None,
            other => return Err(other.to_string()),
        })
    }
}

/// How many brace groups a structural token owns and how they are delimited.
///
/// Optional groups are always leading (the `\sqrt [ n ]` index) and are
/// dropped from the front when absent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralRule {
    pub parent: String,
    pub group_count: usize,
    pub min_groups: usize,
    pub delimiters: Vec<(String, String)>,
}

impl StructuralRule {
    fn braced(parent: &str, groups: usize) -> Self {
        StructuralRule {
            parent: parent.to_string(),
            group_count: groups,
            min_groups: groups,
            delimiters: vec![("{".to_string(), "}".to_string()); groups],
        }
    }

    pub fn optional_groups(&self) -> usize {
        self.group_count - self.min_groups
    }

    /// Delimiters for a token that actually uses `used` groups.
    pub fn delimiters_for(&self, used: usize) -> &[(String, String)] {
        let used = used.clamp(self.min_groups, self.group_count);
        &self.delimiters[self.group_count - used..]
    }
}

/// Arity table for the known structural symbols. Unknown structural
/// symbols (e.g. from a hand-edited vocab file) get one braced group.
pub fn builtin_rule(symbol: &str) -> Option<StructuralRule> {
    match symbol {
        "\\frac" => Some(StructuralRule::braced(symbol, 2)),
        "\\sqrt" => Some(StructuralRule {
            parent: symbol.to_string(),
            group_count: 2,
            min_groups: 1,
            delimiters: vec![
                ("[".to_string(), "]".to_string()),
                ("{".to_string(), "}".to_string()),
            ],
        }),
        s if IRS_SYMBOLS.contains(&s) || HSE_SYMBOLS.contains(&s) => {
            Some(StructuralRule::braced(symbol, 1))
        }
        _ => None,
    }
}

pub fn builtin_role(symbol: &str) -> Role {
    if IRS_SYMBOLS.contains(&symbol) {
        Role::Irs
    } else if HSE_SYMBOLS.contains(&symbol) {
        Role::Hse
    } else {
        Role::Visible
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub symbol: String,
    pub role: Role,
}

/// The class inventory.
///
/// Layout is fixed: predictable classes `0..K` sorted by symbol, then
/// `<none>` at `K`, the imaginary end `}` at `K+1`, `<sos>` and `<eos>`.
/// A VAT probability grid therefore has `K+1` channels and the
/// self-correction head `K+2` columns.
#[derive(Clone, Debug)]
pub struct TokenVocab {
    entries: Vec<VocabEntry>,
    index: HashMap<String, ClassId>,
    rules: HashMap<ClassId, StructuralRule>,
    predictable: usize,
}

impl TokenVocab {
    /// Builds a vocab over the given predictable symbols; roles come from the
    /// builtin IRS/HSE lists.
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self, LatexError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = symbols.into_iter().map(Into::into).collect();
        let mut entries: Vec<VocabEntry> = set
            .into_iter()
            .map(|symbol| {
                let role = builtin_role(&symbol);
                VocabEntry { symbol, role }
            })
            .collect();
        entries.extend(special_entries());
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self, LatexError> {
        let predictable = entries
            .iter()
            .take_while(|e| e.role.is_predictable())
            .count();
        let tail: Vec<Role> = entries[predictable..].iter().map(|e| e.role).collect();
        let expected = [Role::None, Role::ImaginaryEnd, Role::Sos, Role::Eos];
        if tail != expected {
            return Err(LatexError::VocabLayout(format!(
                "expected predictable classes followed by none, end, sos, eos; found tail {:?}",
                tail
            )));
        }
        if entries[predictable + 1].symbol != END_SYMBOL {
            return Err(LatexError::VocabLayout(format!(
                "imaginary end must use the symbol '{}'",
                END_SYMBOL
            )));
        }

        let mut index = HashMap::with_capacity(entries.len());
        let mut rules = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.symbol.is_empty() || e.symbol.chars().any(char::is_whitespace) {
                return Err(LatexError::VocabLayout(format!(
                    "symbol {:?} is empty or contains whitespace",
                    e.symbol
                )));
            }
            if matches!(e.symbol.as_str(), "{" | "[" | "]") && e.role != Role::Visible {
                return Err(LatexError::VocabLayout(format!(
                    "'{}' can only be a visible symbol",
                    e.symbol
                )));
            }
            if e.symbol == "{" {
                return Err(LatexError::VocabLayout("'{' is not a node token".into()));
            }
            if index.insert(e.symbol.clone(), ClassId::from(i)).is_some() {
                return Err(LatexError::DuplicateSymbol(e.symbol.clone()));
            }
            if e.role.is_structural() {
                let rule =
                    builtin_rule(&e.symbol).unwrap_or_else(|| StructuralRule::braced(&e.symbol, 1));
                rules.insert(ClassId::from(i), rule);
            }
        }
        Ok(TokenVocab {
            entries,
            index,
            rules,
            predictable,
        })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `K`, the number of classes the per-cell tokenizer predicts besides `<none>`.
    pub fn predictable_count(&self) -> usize {
        self.predictable
    }

    /// Channel count of a VAT probability grid (`K+1`).
    pub fn grid_channels(&self) -> usize {
        self.predictable + 1
    }

    /// Column count of the self-correction head (`K+2`).
    pub fn self_head_width(&self) -> usize {
        self.predictable + 2
    }

    pub fn none_class(&self) -> ClassId {
        ClassId::from(self.predictable)
    }

    pub fn end_class(&self) -> ClassId {
        ClassId::from(self.predictable + 1)
    }

    pub fn sos_class(&self) -> ClassId {
        ClassId::from(self.predictable + 2)
    }

    pub fn eos_class(&self) -> ClassId {
        ClassId::from(self.predictable + 3)
    }

    pub fn lookup(&self, symbol: &str) -> Option<ClassId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, class: ClassId) -> &str {
        &self.entries[class.index()].symbol
    }

    pub fn role(&self, class: ClassId) -> Role {
        self.entries[class.index()].role
    }

    pub fn is_structural(&self, class: ClassId) -> bool {
        self.rules.contains_key(&class)
    }

    pub fn rule(&self, class: ClassId) -> Option<&StructuralRule> {
        self.rules.get(&class)
    }

    pub fn rule_for_symbol(&self, symbol: &str) -> Option<&StructuralRule> {
        self.lookup(symbol).and_then(|c| self.rule(c))
    }

    /// Number of imaginary ends attached to a class at inference time.
    pub fn attached_ends(&self, class: ClassId) -> usize {
        self.rule(class).map_or(0, |r| r.group_count)
    }

    pub fn predictable_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.predictable).map(ClassId::from)
    }

    pub fn visible_classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.predictable_classes()
            .filter(move |c| self.role(*c) == Role::Visible)
    }

    /// `symbol<TAB>role` lines; class ids follow line order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.symbol);
            out.push('\t');
            out.push_str(e.role.as_str());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, LatexError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (symbol, role) = line
                .split_once('\t')
                .ok_or(LatexError::BadVocabLine { line: n + 1 })?;
            let role = role
                .trim()
                .parse::<Role>()
                .map_err(|role| LatexError::UnknownRole { line: n + 1, role })?;
            entries.push(VocabEntry {
                symbol: symbol.to_string(),
                role,
            });
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LatexError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LatexError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

fn special_entries() -> [VocabEntry; 4] {
    [
        (NONE_SYMBOL, Role::None),
        (END_SYMBOL, Role::ImaginaryEnd),
        (SOS_SYMBOL, Role::Sos),
        (EOS_SYMBOL, Role::Eos),
    ]
    .map(|(s, role)| VocabEntry {
        symbol: s.to_string(),
        role,
    })
}
