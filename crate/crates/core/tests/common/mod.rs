//! Generators shared by the property suites and the acceptance run.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::sample::select;

/// A number as netlist text, written with an SI suffix or an exponent.
pub fn number(min_exp: i32, max_exp: i32) -> impl Strategy<Value = String> {
    (1u32..1000, min_exp..=max_exp, 0usize..3).prop_map(|(m, e, form)| {
        let suffix = match e {
            -12 => Some("p"),
            -9 => Some("n"),
            -6 => Some("u"),
            -3 => Some("m"),
            3 => Some("k"),
            6 => Some("meg"),
            _ => None,
        };
        match (form, suffix) {
            (0, Some(s)) => format!("{m}{s}"),
            (1, _) => format!("{m}e{e}"),
            _ => format!("{}", m as f64 * 10f64.powi(e)),
        }
    })
}

fn signed(min_exp: i32, max_exp: i32) -> impl Strategy<Value = String> {
    (number(min_exp, max_exp), any::<bool>()).prop_map(|(n, neg)| if neg { format!("-{n}") } else { n })
}

fn turns() -> impl Strategy<Value = String> {
    prop::array::uniform3(1u32..50).prop_map(|t| format!("{}:{}.{}:{}", t[0], t[1], t[2] % 10, t[2]))
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    V,
    R,
    L,
    C,
    D,
    S,
    W3,
    Load3,
}

impl Kind {
    fn keyword(self) -> &'static str {
        match self {
            Kind::V => "v",
            Kind::R => "r",
            Kind::L => "l",
            Kind::C => "c",
            Kind::D => "d",
            Kind::S => "s",
            Kind::W3 => "w3",
            Kind::Load3 => "load3",
        }
    }
}

fn params(kind: Kind) -> BoxedStrategy<Vec<String>> {
    let kv = |k: &'static str, v: BoxedStrategy<String>| v.prop_map(move |v| format!("{k}={v}")).boxed();
    let maybe = |p: BoxedStrategy<String>| prop::option::of(p).boxed();
    let collect = |req: Vec<BoxedStrategy<String>>, opt: Vec<BoxedStrategy<Option<String>>>| {
        (req, opt)
            .prop_map(|(r, o)| r.into_iter().chain(o.into_iter().flatten()).collect::<Vec<_>>())
            .prop_shuffle()
            .boxed()
    };
    match kind {
        Kind::V => collect(vec![kv("dc", signed(-3, 3).boxed())], vec![]),
        Kind::R => collect(vec![kv("r", number(-3, 6).boxed())], vec![]),
        Kind::L => collect(
            vec![kv("l", number(-9, -3).boxed())],
            vec![maybe(kv("i0", signed(-3, 1).boxed()))],
        ),
        Kind::C => collect(
            vec![kv("c", number(-12, -3).boxed())],
            vec![maybe(kv("v0", signed(-3, 2).boxed()))],
        ),
        Kind::D => collect(
            vec![],
            vec![
                maybe(kv("ron", number(-6, -3).boxed())),
                maybe(kv("roff", number(5, 6).boxed())),
                maybe(kv("vf", number(-3, -1).boxed())),
            ],
        ),
        Kind::S => collect(
            vec![kv("gate", select(vec!["st", "nst", "sah", "sbl", "on"]).prop_map(String::from).boxed())],
            vec![maybe(kv("ron", number(-6, -3).boxed())), maybe(kv("roff", number(5, 6).boxed()))],
        ),
        Kind::W3 => collect(
            vec![kv("turns", turns().boxed()), kv("lm", number(-6, -3).boxed())],
            vec![
                maybe(kv("ll1", number(-9, -6).boxed())),
                maybe(kv("ll2", number(-9, -6).boxed())),
                maybe(kv("ll3", number(-9, -6).boxed())),
                maybe(kv("i01", signed(-3, 0).boxed())),
            ],
        ),
        Kind::Load3 => prop_oneof![
            collect(vec![Just("type=r".to_string()).boxed(), kv("r", number(0, 2).boxed())], vec![]),
            collect(
                vec![Just("type=rl".to_string()).boxed(), kv("r", number(0, 2).boxed()), kv("l", number(-3, -2).boxed())],
                vec![],
            ),
            collect(
                vec![Just("type=im".to_string()).boxed()],
                vec![
                    maybe(kv("rs", number(-1, 0).boxed())),
                    maybe(kv("pp", select(vec!["1", "2", "3"]).prop_map(String::from).boxed())),
                    maybe(kv("tl", signed(-1, 1).boxed())),
                ],
            ),
        ]
        .boxed(),
    }
}

fn kind() -> impl Strategy<Value = Kind> {
    select(vec![Kind::V, Kind::R, Kind::L, Kind::C, Kind::D, Kind::S, Kind::W3, Kind::Load3])
}

/// Line layout choices for one element.
#[derive(Debug, Clone)]
struct Style {
    spice: bool,
    upper: bool,
    comment: bool,
    indent: usize,
}

fn style() -> impl Strategy<Value = Style> {
    (any::<bool>(), any::<bool>(), prop::bool::weighted(0.2), 0usize..3).prop_map(|(spice, upper, comment, indent)| {
        Style {
            spice,
            upper,
            comment,
            indent,
        }
    })
}

/// Node picks: each is either an already grounded node (by index) or a new one.
fn picks(n: usize) -> impl Strategy<Value = Vec<(bool, usize)>> {
    prop::collection::vec((any::<bool>(), 0usize..64), n)
}

/// A valid netlist with 1..=max elements, every node tied to ground,
/// mixing keyword and name-prefix forms, letter case, comments and blank lines.
pub fn netlist_text(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec((kind(), params_any(), style(), picks(6)), 1..=max).prop_map(|items| {
        let mut grounded = vec!["0".to_string()];
        let mut fresh = 0usize;
        let mut out = String::new();
        for (i, (kind, ps, st, pk)) in items.into_iter().enumerate() {
            let params = ps.get(kind);
            let arity = match kind {
                Kind::W3 => 6,
                Kind::Load3 => 3,
                _ => 2,
            };
            let mut nodes = Vec::with_capacity(arity);
            for (j, (new, idx)) in pk.into_iter().take(arity).enumerate() {
                // the first node of each galvanic group must already reach ground
                let anchor = match kind {
                    Kind::W3 => j % 2 == 0,
                    _ => j == 0,
                };
                if new && !anchor {
                    fresh += 1;
                    nodes.push(format!("n{fresh}"));
                } else {
                    nodes.push(grounded[idx % grounded.len()].clone());
                }
            }
            for n in &nodes {
                if !grounded.contains(n) {
                    grounded.push(n.clone());
                }
            }
            let name = format!("{}_{}", kind.keyword(), i + 1);
            let mut head = if st.spice { name } else { format!("{} {name}", kind.keyword()) };
            if st.upper {
                head = head.to_ascii_uppercase();
            }
            let mut line = format!("{}{head} {} {}", " ".repeat(st.indent), nodes.join(" "), params.join(" "));
            if st.comment {
                line.push_str("  # note");
                out.push_str("# block\n\n");
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    })
}

/// Parameter lists for every kind, drawn together so a line can pick its own.
#[derive(Debug, Clone)]
struct ParamsAny(Vec<Vec<String>>);

impl ParamsAny {
    fn get(&self, kind: Kind) -> Vec<String> {
        let idx = match kind {
            Kind::V => 0,
            Kind::R => 1,
            Kind::L => 2,
            Kind::C => 3,
            Kind::D => 4,
            Kind::S => 5,
            Kind::W3 => 6,
            Kind::Load3 => 7,
        };
        self.0[idx].clone()
    }
}

fn params_any() -> impl Strategy<Value = ParamsAny> {
    [Kind::V, Kind::R, Kind::L, Kind::C, Kind::D, Kind::S, Kind::W3, Kind::Load3]
        .into_iter()
        .map(params)
        .collect::<Vec<_>>()
        .prop_map(ParamsAny)
}

/// A broken line and the diagnostic code it must raise.
pub fn bad_line() -> impl Strategy<Value = (String, &'static str)> {
    select(vec![
        ("q q1 a 0", "E100"),
        ("r r_bad 0", "E101"),
        ("", "E102"),
        ("r r_bad 0 0 r=1x", "E103"),
        ("c c_bad 0 0", "E104"),
        ("r r_bad 0 0 r=-5", "E106"),
        ("r r_bad 0 0 r=1 zz=3", "E107"),
        ("r r_bad 0 0 r=1 r=2", "E110"),
        ("r", "E109"),
    ])
    .prop_map(|(l, c)| (l.to_string(), c))
}

/// A valid netlist with one broken line spliced in; returns the text, the
/// 1-based line of the break and the expected code.
pub fn malformed(max: usize) -> impl Strategy<Value = (String, usize, &'static str)> {
    (netlist_text(max), bad_line(), any::<prop::sample::Index>()).prop_map(|(text, (bad, code), at)| {
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let (pos, bad) = if code == "E102" {
            // repeat the first element after all others
            let first = lines.iter().find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
            (lines.len(), first.cloned().expect("at least one element"))
        } else {
            (at.index(lines.len() + 1), bad)
        };
        lines.insert(pos, bad);
        (lines.join("\n"), pos + 1, code)
    })
}
