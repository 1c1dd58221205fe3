//! Line-oriented netlist format.
//!
//! One element per line, `#` starts a comment, tokens are whitespace
//! separated and everything is case-insensitive:
//!
//! ```text
//! # kind name nodes... key=value...
//! v   v1  in 0        dc=20
//! w3  y1  in a b x a c turns=1:2:2 lm=370u
//! c1  p c  c=220u                      # SPICE-style: kind taken from the name
//! ```
//!
//! When the first token is not a bare kind keyword it is read as a
//! SPICE-style element name whose leading letters give the kind.

mod builtin;
mod parse;
pub mod units;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

pub use builtin::{
    builtin, network_inventory, BuiltinError, ComponentValues, InitialState, Load3Spec, Mode,
    NetworkInventory, Parasitics, LINK, SOURCE,
};
pub use parse::parse;

use units::format_si;

/// The mandatory ground node.
pub const GROUND: &str = "0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementKind {
    V,
    R,
    L,
    C,
    D,
    S,
    W3,
    Load3,
}

impl ElementKind {
    pub const ALL: [ElementKind; 8] = [
        ElementKind::Load3,
        ElementKind::W3,
        ElementKind::V,
        ElementKind::R,
        ElementKind::L,
        ElementKind::C,
        ElementKind::D,
        ElementKind::S,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            ElementKind::V => "v",
            ElementKind::R => "r",
            ElementKind::L => "l",
            ElementKind::C => "c",
            ElementKind::D => "d",
            ElementKind::S => "s",
            ElementKind::W3 => "w3",
            ElementKind::Load3 => "load3",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        let lower = word.to_ascii_lowercase();
        Self::ALL.into_iter().find(|k| k.keyword() == lower)
    }

    /// Kind implied by a SPICE-style element name (longest keyword prefix).
    pub fn from_name_prefix(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| lower.starts_with(k.keyword()) && lower.len() > k.keyword().len())
    }

    pub fn arity(self) -> usize {
        match self {
            ElementKind::W3 => 6,
            ElementKind::Load3 => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => f.write_str(&format_si(*x)),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub kind: ElementKind,
    pub name: String,
    pub nodes: Vec<String>,
    pub params: BTreeMap<String, Value>,
}

impl Element {
    pub fn new<N, S>(kind: ElementKind, name: &str, nodes: N) -> Self
    where
        N: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            kind,
            name: name.to_ascii_lowercase(),
            nodes: nodes
                .into_iter()
                .map(|n| n.as_ref().to_ascii_lowercase())
                .collect(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_ascii_lowercase(), Value::Num(value));
        self
    }

    pub fn with_text(mut self, key: &str, value: &str) -> Self {
        self.params
            .insert(key.to_ascii_lowercase(), Value::Text(value.to_ascii_lowercase()));
        self
    }

    pub fn num(&self, key: &str) -> Option<f64> {
        match self.params.get(key) {
            Some(Value::Num(x)) => Some(*x),
            _ => None,
        }
    }

    pub fn num_or(&self, key: &str, default: f64) -> f64 {
        self.num(key).unwrap_or(default)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        match self.params.get(key) {
            Some(Value::Text(s)) => Some(s),
            _ => None,
        }
    }

    /// Turns of a `W3` element.
    pub fn turns(&self) -> Option<[f64; 3]> {
        parse_turns(self.text("turns")?)
    }

    fn canonical(&self) -> String {
        let mut line = format!("{} {}", self.kind, self.name);
        for node in &self.nodes {
            line.push(' ');
            line.push_str(node);
        }
        for (key, value) in &self.params {
            line.push_str(&format!(" {key}={value}"));
        }
        line
    }
}

pub(crate) fn parse_turns(text: &str) -> Option<[f64; 3]> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        let x: f64 = part.parse().ok()?;
        if !(x.is_finite() && x > 0.0) {
            return None;
        }
        *slot = x;
    }
    Some(out)
}

/// Stable diagnostic codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Code {
    UnknownKind,
    Arity,
    DuplicateName,
    BadNumber,
    MissingParameter,
    MissingGround,
    InvalidValue,
    UnknownParameter,
    FloatingNode,
    Malformed,
    DuplicateParameter,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::UnknownKind => "E100",
            Code::Arity => "E101",
            Code::DuplicateName => "E102",
            Code::BadNumber => "E103",
            Code::MissingParameter => "E104",
            Code::MissingGround => "E105",
            Code::InvalidValue => "E106",
            Code::UnknownParameter => "E107",
            Code::FloatingNode => "E108",
            Code::Malformed => "E109",
            Code::DuplicateParameter => "E110",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub code: Code,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl Diagnostic {
    /// `file:line: code: message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}: {}: {}", self.line, self.code, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.line, self.column, self.code, self.message)
    }
}

/// A validated netlist.
#[derive(Debug, Clone)]
pub struct Circuit {
    elements: Vec<Element>,
    nodes: BTreeSet<String>,
    name_index: HashMap<String, usize>,
}

impl PartialEq for Circuit {
    fn eq(&self, other: &Self) -> bool {
        self.elements == other.elements && self.nodes == other.nodes
    }
}

impl Circuit {
    pub fn empty() -> Self {
        Self {
            elements: Vec::new(),
            nodes: BTreeSet::new(),
            name_index: HashMap::new(),
        }
    }

    /// Validate elements built in code; diagnostics use the element index
    /// (1-based) as the line number.
    pub fn from_elements(elements: Vec<Element>) -> Result<Self, Vec<Diagnostic>> {
        let lines: Vec<(usize, Vec<usize>)> = (0..elements.len()).map(|i| (i + 1, Vec::new())).collect();
        parse::validate(elements, &lines)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn get(&self, name: &str) -> Option<&Element> {
        self.name_index
            .get(&name.to_ascii_lowercase())
            .map(|&i| &self.elements[i])
    }

    pub fn count(&self, kind: ElementKind) -> usize {
        self.elements.iter().filter(|e| e.kind == kind).count()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Canonical text: header comment, then one `kind name nodes key=value`
    /// line per element with sorted keys.
    pub fn serialize(&self) -> String {
        let mut out = String::from("# zsource-lab netlist\n");
        for element in &self.elements {
            out.push_str(&element.canonical());
            out.push('\n');
        }
        out
    }

    /// Copy with one element replaced (same name) and revalidated.
    pub fn with_element(&self, element: Element) -> Result<Self, Vec<Diagnostic>> {
        let mut elements = self.elements.clone();
        match self.name_index.get(&element.name) {
            Some(&i) => elements[i] = element,
            None => elements.push(element),
        }
        Self::from_elements(elements)
    }

    /// Copy without the named element, revalidated.
    pub fn without(&self, name: &str) -> Result<Self, Vec<Diagnostic>> {
        let name = name.to_ascii_lowercase();
        Self::from_elements(
            self.elements
                .iter()
                .filter(|e| e.name != name)
                .cloned()
                .collect(),
        )
    }
}

/// Serialize a circuit to canonical text.
pub fn serialize(c: &Circuit) -> String {
    c.serialize()
}
