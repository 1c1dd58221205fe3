use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::units::{parse_si, NumberError};
use super::{parse_turns, Circuit, Code, Diagnostic, Element, ElementKind, Value, GROUND};

#[derive(Clone, Copy, PartialEq)]
enum ParamType {
    Positive,
    NonNegative,
    Finite,
    Text,
    Turns,
}

struct ParamSpec {
    key: &'static str,
    required: bool,
    ty: ParamType,
}

const fn req(key: &'static str, ty: ParamType) -> ParamSpec {
    ParamSpec { key, required: true, ty }
}

const fn opt(key: &'static str, ty: ParamType) -> ParamSpec {
    ParamSpec { key, required: false, ty }
}

use ParamType::*;

const V_PARAMS: &[ParamSpec] = &[req("dc", Finite)];
const R_PARAMS: &[ParamSpec] = &[req("r", Positive)];
const L_PARAMS: &[ParamSpec] = &[req("l", Positive), opt("i0", Finite)];
const C_PARAMS: &[ParamSpec] = &[req("c", Positive), opt("v0", Finite)];
const D_PARAMS: &[ParamSpec] = &[opt("ron", Positive), opt("roff", Positive), opt("vf", NonNegative)];
const S_PARAMS: &[ParamSpec] = &[req("gate", Text), opt("ron", Positive), opt("roff", Positive)];
const W3_PARAMS: &[ParamSpec] = &[
    req("turns", Turns),
    req("lm", Positive),
    opt("ll1", NonNegative),
    opt("ll2", NonNegative),
    opt("ll3", NonNegative),
    opt("i01", Finite),
    opt("i02", Finite),
    opt("i03", Finite),
];
const LOAD3_PARAMS: &[ParamSpec] = &[
    req("type", Text),
    opt("r", Positive),
    opt("l", Positive),
    opt("rs", Positive),
    opt("rr", Positive),
    opt("lls", Positive),
    opt("llr", Positive),
    opt("lm", Positive),
    opt("j", Positive),
    opt("pp", Positive),
    opt("tl", Finite),
    opt("rpm", Finite),
    opt("w0", Finite),
];

fn schema(kind: ElementKind) -> &'static [ParamSpec] {
    match kind {
        ElementKind::V => V_PARAMS,
        ElementKind::R => R_PARAMS,
        ElementKind::L => L_PARAMS,
        ElementKind::C => C_PARAMS,
        ElementKind::D => D_PARAMS,
        ElementKind::S => S_PARAMS,
        ElementKind::W3 => W3_PARAMS,
        ElementKind::Load3 => LOAD3_PARAMS,
    }
}

fn valid_word(word: &str) -> bool {
    !word.is_empty() && !word.contains(['=', '#', ':'])
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let content = line.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in content.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                tokens.push(Token { text: &content[s..i], column: s + 1 });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token { text: &content[s..], column: s + 1 });
    }
    tokens
}

fn diag(code: Code, line: usize, column: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic { code, line, column, message: message.into() }
}

/// Parse netlist text into a validated [`Circuit`].
///
/// All problems found are reported; a `Circuit` is only returned when
/// there are none.
pub fn parse(text: &str) -> Result<Circuit, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut elements = Vec::new();
    // (line, column of each node token) per element, for later diagnostics
    let mut positions = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens = tokenize(raw);
        let Some(first) = tokens.first() else { continue };

        let (kind, name_tok, rest) = if let Some(kind) = ElementKind::from_keyword(first.text) {
            match tokens.get(1) {
                Some(name) if !name.text.contains('=') => (kind, name, &tokens[2..]),
                _ => {
                    diags.push(diag(Code::Malformed, line, first.column, format!("`{}` element has no name", kind)));
                    continue;
                }
            }
        } else if let Some(kind) = ElementKind::from_name_prefix(first.text) {
            (kind, first, &tokens[1..])
        } else {
            diags.push(diag(
                Code::UnknownKind,
                line,
                first.column,
                format!("unknown element kind in `{}`", first.text),
            ));
            continue;
        };

        if !valid_word(name_tok.text) {
            diags.push(diag(Code::Malformed, line, name_tok.column, format!("invalid element name `{}`", name_tok.text)));
            continue;
        }

        let mut nodes = Vec::new();
        let mut node_cols = Vec::new();
        let mut params = BTreeMap::new();
        let mut ok = true;
        let spec = schema(kind);
        for tok in rest {
            match tok.text.split_once('=') {
                None => {
                    if !params.is_empty() {
                        diags.push(diag(Code::Malformed, line, tok.column, format!("node `{}` after parameters", tok.text)));
                        ok = false;
                    } else if !valid_word(tok.text) {
                        diags.push(diag(Code::Malformed, line, tok.column, format!("invalid node name `{}`", tok.text)));
                        ok = false;
                    } else {
                        nodes.push(tok.text.to_ascii_lowercase());
                        node_cols.push(tok.column);
                    }
                }
                Some((key, value)) => {
                    let key = key.to_ascii_lowercase();
                    if key.is_empty() || value.is_empty() {
                        diags.push(diag(Code::Malformed, line, tok.column, format!("malformed parameter `{}`", tok.text)));
                        ok = false;
                        continue;
                    }
                    let Some(ps) = spec.iter().find(|p| p.key == key) else {
                        diags.push(diag(
                            Code::UnknownParameter,
                            line,
                            tok.column,
                            format!("unknown parameter `{key}` for {kind} element"),
                        ));
                        ok = false;
                        continue;
                    };
                    if params.contains_key(&key) {
                        diags.push(diag(Code::DuplicateParameter, line, tok.column, format!("parameter `{key}` given twice")));
                        ok = false;
                        continue;
                    }
                    let parsed = match ps.ty {
                        Text | Turns => Value::Text(value.to_ascii_lowercase()),
                        _ => match parse_si(value) {
                            Ok(x) => Value::Num(x),
                            Err(e) => {
                                let what = match e {
                                    NumberError::BadSuffix => "bad unit suffix in",
                                    NumberError::NotFinite => "non-finite value",
                                    NumberError::Malformed => "malformed number",
                                };
                                diags.push(diag(Code::BadNumber, line, tok.column, format!("{what} `{key}={value}`")));
                                ok = false;
                                continue;
                            }
                        },
                    };
                    params.insert(key, parsed);
                }
            }
        }
        if nodes.len() != kind.arity() {
            diags.push(diag(
                Code::Arity,
                line,
                name_tok.column,
                format!("{kind} element `{}` needs {} nodes, found {}", name_tok.text, kind.arity(), nodes.len()),
            ));
            ok = false;
        }
        if ok {
            elements.push(Element {
                kind,
                name: name_tok.text.to_ascii_lowercase(),
                nodes,
                params,
            });
            positions.push((line, node_cols));
        }
    }

    match validate(elements, &positions) {
        Ok(c) if diags.is_empty() => Ok(c),
        Ok(_) => Err(diags),
        Err(more) => {
            diags.extend(more);
            diags.sort_by_key(|d| (d.line, d.column));
            Err(diags)
        }
    }
}

fn check_value(el: &Element, ps: &ParamSpec) -> Option<String> {
    let value = el.params.get(ps.key)?;
    match (ps.ty, value) {
        (Positive, Value::Num(x)) if *x <= 0.0 => Some(format!("`{}` must be positive, got {x}", ps.key)),
        (NonNegative, Value::Num(x)) if *x < 0.0 => Some(format!("`{}` must be non-negative, got {x}", ps.key)),
        (Turns, Value::Text(t)) if parse_turns(t).is_none() => {
            Some(format!("`turns` must be three positive numbers a:b:c, got `{t}`"))
        }
        (Text, Value::Text(t)) if !valid_word(t) => Some(format!("invalid value `{t}` for `{}`", ps.key)),
        (Text | Turns, Value::Num(_)) => Some(format!("`{}` expects text", ps.key)),
        (Positive | NonNegative | Finite, Value::Text(_)) => Some(format!("`{}` expects a number", ps.key)),
        _ => None,
    }
}

fn kind_specific(el: &Element) -> Vec<(Code, String)> {
    let mut out = Vec::new();
    if matches!(el.kind, ElementKind::D | ElementKind::S) {
        let ron = el.num_or("ron", crate::engine::RON);
        let roff = el.num_or("roff", crate::engine::ROFF);
        if ron >= roff {
            out.push((Code::InvalidValue, format!("ron ({ron}) must be below roff ({roff})")));
        }
    }
    if el.kind == ElementKind::Load3 {
        match el.text("type") {
            Some("r") => {
                if el.num("r").is_none() {
                    out.push((Code::MissingParameter, "resistive LOAD3 needs `r`".into()));
                }
            }
            Some("rl") => {
                for key in ["r", "l"] {
                    if el.num(key).is_none() {
                        out.push((Code::MissingParameter, format!("series-RL LOAD3 needs `{key}`")));
                    }
                }
            }
            Some("im") => {
                if let Some(pp) = el.num("pp") {
                    if pp.fract() != 0.0 {
                        out.push((Code::InvalidValue, format!("pole pairs must be an integer, got {pp}")));
                    }
                }
            }
            Some(other) => out.push((Code::InvalidValue, format!("unknown LOAD3 type `{other}` (expected r, rl or im)"))),
            None => {}
        }
    }
    out
}

/// Union-find over node names.
struct Connectivity {
    parent: HashMap<String, String>,
}

impl Connectivity {
    fn find(&mut self, n: &str) -> String {
        let p = self.parent.entry(n.to_string()).or_insert_with(|| n.to_string()).clone();
        if p == n {
            return p;
        }
        let root = self.find(&p);
        self.parent.insert(n.to_string(), root.clone());
        root
    }

    fn union(&mut self, a: &str, b: &str) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra, rb);
        }
    }
}

/// Groups of nodes galvanically tied by one element.
pub(crate) fn terminal_groups(el: &Element) -> Vec<Vec<&str>> {
    let n: Vec<&str> = el.nodes.iter().map(String::as_str).collect();
    match el.kind {
        ElementKind::W3 => vec![vec![n[0], n[1]], vec![n[2], n[3]], vec![n[4], n[5]]],
        _ => vec![n],
    }
}

pub(crate) fn validate(elements: Vec<Element>, positions: &[(usize, Vec<usize>)]) -> Result<Circuit, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut name_index = HashMap::new();
    let mut nodes = BTreeSet::new();
    let pos = |i: usize| positions.get(i).map(|p| p.0).unwrap_or(i + 1);

    for (i, el) in elements.iter().enumerate() {
        let line = pos(i);
        if !valid_word(&el.name) {
            diags.push(diag(Code::Malformed, line, 1, format!("invalid element name `{}`", el.name)));
        }
        if el.nodes.len() != el.kind.arity() {
            diags.push(diag(Code::Arity, line, 1, format!("{} element `{}` needs {} nodes, found {}", el.kind, el.name, el.kind.arity(), el.nodes.len())));
        }
        if let Some(bad) = el.nodes.iter().find(|n| !valid_word(n)) {
            diags.push(diag(Code::Malformed, line, 1, format!("invalid node name `{bad}`")));
        }
        if name_index.insert(el.name.clone(), i).is_some() {
            diags.push(diag(Code::DuplicateName, line, 1, format!("duplicate element name `{}`", el.name)));
        }
        let spec = schema(el.kind);
        for key in el.params.keys() {
            if !spec.iter().any(|p| p.key == key) {
                diags.push(diag(Code::UnknownParameter, line, 1, format!("unknown parameter `{key}` for {} element", el.kind)));
            }
        }
        for ps in spec {
            if ps.required && !el.params.contains_key(ps.key) {
                diags.push(diag(
                    Code::MissingParameter,
                    line,
                    1,
                    format!("{} element `{}` is missing required parameter `{}`", el.kind, el.name, ps.key),
                ));
            }
            if let Some(msg) = check_value(el, ps) {
                diags.push(diag(Code::InvalidValue, line, 1, format!("{}: {msg}", el.name)));
            }
        }
        for (code, msg) in kind_specific(el) {
            diags.push(diag(code, line, 1, format!("{}: {msg}", el.name)));
        }
        nodes.extend(el.nodes.iter().cloned());
    }

    if !elements.is_empty() && !nodes.contains(GROUND) {
        diags.push(diag(Code::MissingGround, pos(0), 1, "no element connects to ground node `0`"));
    } else if diags.is_empty() {
        let mut conn = Connectivity { parent: HashMap::new() };
        for el in &elements {
            for group in terminal_groups(el) {
                for w in group.windows(2) {
                    conn.union(w[0], w[1]);
                }
            }
        }
        let ground = conn.find(GROUND);
        let mut reported = BTreeSet::new();
        for (i, el) in elements.iter().enumerate() {
            for (j, node) in el.nodes.iter().enumerate() {
                if conn.find(node) != ground && reported.insert(node.clone()) {
                    let column = positions.get(i).and_then(|p| p.1.get(j)).copied().unwrap_or(1);
                    diags.push(diag(
                        Code::FloatingNode,
                        pos(i),
                        column,
                        format!("node `{node}` has no path to ground"),
                    ));
                }
            }
        }
    }

    if diags.is_empty() {
        Ok(Circuit { elements, nodes, name_index })
    } else {
        diags.sort_by_key(|d| (d.line, d.column));
        Err(diags)
    }
}
