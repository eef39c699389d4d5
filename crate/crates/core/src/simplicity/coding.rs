use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::Serialize;

use crate::datasets::{code_bits, object_attributes, MappingClass, MappingSpec, OBJECTS};
use crate::error::{LabError, Result};

/// Description vocabulary shared by every mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Token {
    /// Left side of an attribute rule: attribute index and value.
    Attr { attr: u8, value: u8 },
    /// An output bit value.
    Bit(u8),
    /// Which output position the first attribute feeds; `true` when swapped.
    Perm(bool),
    /// One object, indexed `2·color + shape`.
    Object(u8),
    /// Every object.
    All,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Attr { attr, value } => write!(f, "a{attr}={value}"),
            Token::Bit(b) => write!(f, "b{b}"),
            Token::Perm(swapped) => write!(f, "{}", if *swapped { "perm:swap" } else { "perm:keep" }),
            Token::Object(o) => write!(f, "o{o}"),
            Token::All => f.write_str("*"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionForm {
    /// `attr=value → bit` rules for each attribute, then the position permutation.
    Attribute,
    /// One rule per distinct code: the two bits, then the objects sharing it
    /// (`*` when all of them do).
    Grouped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MappingDescription {
    pub form: DescriptionForm,
    pub tokens: Vec<Token>,
    /// Object lookups served by a rule that an earlier object already used.
    pub reuse_count: usize,
}

impl MappingDescription {
    pub fn render(&self) -> String {
        self.tokens.iter().map(Token::to_string).collect::<Vec<_>>().join(" ")
    }
}

/// Optimal prefix-code lengths for the symbol frequencies of `tokens`. A
/// single distinct symbol gets length 1.
pub fn huffman_lengths<T: Ord + Clone>(tokens: &[T]) -> BTreeMap<T, usize> {
    let mut freq: BTreeMap<T, usize> = BTreeMap::new();
    for t in tokens {
        *freq.entry(t.clone()).or_default() += 1;
    }
    let symbols: Vec<T> = freq.keys().cloned().collect();
    if symbols.len() == 1 {
        return symbols.into_iter().map(|s| (s, 1)).collect();
    }
    // nodes 0..n are leaves; internal nodes record their parent links
    let mut parent: Vec<usize> = vec![usize::MAX; symbols.len()];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = symbols.iter().enumerate().map(|(i, s)| Reverse((freq[s], i))).collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("two nodes present");
        let Reverse((wb, b)) = heap.pop().expect("two nodes present");
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    symbols
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut depth = 0;
            let mut node = i;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            (s, depth)
        })
        .collect()
}

/// Total Huffman-coded length of `tokens` in bits.
pub fn huffman_bits<T: Ord + Clone>(tokens: &[T]) -> f64 {
    let lengths = huffman_lengths(tokens);
    tokens.iter().map(|t| lengths[t]).sum::<usize>() as f64
}

/// Output position fed by each attribute and the bit emitted for each
/// attribute value, when every output bit copies or negates its own attribute.
fn attribute_structure(assignment: &[u8; 4]) -> Option<(bool, [[u8; 2]; 2])> {
    for swapped in [false, true] {
        let mut table = [[0u8; 2]; 2];
        let mut seen = [[false; 2]; 2];
        let mut ok = true;
        for o in 0..OBJECTS {
            let attrs = object_attributes(o);
            let bits = code_bits(assignment[o]);
            for attr in 0..2 {
                let pos = if swapped { 1 - attr } else { attr };
                let v = attrs[attr] as usize;
                if seen[attr][v] && table[attr][v] != bits[pos] {
                    ok = false;
                }
                seen[attr][v] = true;
                table[attr][v] = bits[pos];
            }
        }
        // each attribute must actually distinguish its two values
        if ok && table.iter().all(|t| t[0] != t[1]) {
            return Some((swapped, table));
        }
    }
    None
}

/// Builds the description of `mapping` and its Huffman coding length.
///
/// Compositional mappings are written as attribute rules plus the position
/// permutation; everything else is written as one rule per distinct code.
pub fn describe_and_encode(mapping: &MappingSpec) -> (MappingDescription, f64) {
    let a = &mapping.assignment;
    let description = match (mapping.class, attribute_structure(a)) {
        (MappingClass::Compositional, Some((swapped, table))) => {
            let mut tokens = Vec::with_capacity(9);
            for (attr, row) in table.iter().enumerate() {
                for (value, &bit) in row.iter().enumerate() {
                    tokens.push(Token::Attr { attr: attr as u8, value: value as u8 });
                    tokens.push(Token::Bit(bit));
                }
            }
            tokens.push(Token::Perm(swapped));
            // 4 rules cover 8 attribute lookups
            MappingDescription { form: DescriptionForm::Attribute, tokens, reuse_count: 4 }
        }
        _ => {
            let mut groups: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
            for (o, &c) in a.iter().enumerate() {
                groups.entry(c).or_default().push(o as u8);
            }
            let mut tokens = Vec::new();
            for (code, objects) in &groups {
                let [hi, lo] = code_bits(*code);
                tokens.push(Token::Bit(hi));
                tokens.push(Token::Bit(lo));
                if objects.len() == OBJECTS {
                    tokens.push(Token::All);
                } else {
                    tokens.extend(objects.iter().map(|&o| Token::Object(o)));
                }
            }
            MappingDescription { form: DescriptionForm::Grouped, tokens, reuse_count: OBJECTS - groups.len() }
        }
    };
    let bits = huffman_bits(&description.tokens);
    (description, bits)
}

/// Rebuilds the assignment from a description.
pub fn decode(description: &MappingDescription) -> Result<[u8; 4]> {
    let bad = |msg: &str| LabError::Domain(format!("malformed description: {msg}"));
    let t = &description.tokens;
    match description.form {
        DescriptionForm::Attribute => {
            if t.len() != 9 {
                return Err(bad("attribute form has 9 tokens"));
            }
            let mut table = [[0u8; 2]; 2];
            for k in 0..4 {
                match (t[2 * k], t[2 * k + 1]) {
                    (Token::Attr { attr, value }, Token::Bit(b)) if attr < 2 && value < 2 && b < 2 => table[attr as usize][value as usize] = b,
                    _ => return Err(bad("expected an attribute rule")),
                }
            }
            let Token::Perm(swapped) = t[8] else { return Err(bad("missing permutation")) };
            let mut out = [0u8; 4];
            for (o, slot) in out.iter_mut().enumerate() {
                let attrs = object_attributes(o);
                let mut bits = [0u8; 2];
                for attr in 0..2 {
                    bits[if swapped { 1 - attr } else { attr }] = table[attr][attrs[attr] as usize];
                }
                *slot = 2 * bits[0] + bits[1];
            }
            Ok(out)
        }
        DescriptionForm::Grouped => {
            let mut out = [u8::MAX; 4];
            let mut i = 0;
            while i < t.len() {
                let (Some(Token::Bit(hi)), Some(Token::Bit(lo))) = (t.get(i), t.get(i + 1)) else {
                    return Err(bad("rule must open with two bits"));
                };
                let code = 2 * hi + lo;
                i += 2;
                let start = i;
                while let Some(tok) = t.get(i) {
                    match *tok {
                        Token::Object(o) if (o as usize) < OBJECTS => out[o as usize] = code,
                        Token::All => out = [code; 4],
                        Token::Bit(_) => break,
                        _ => return Err(bad("unexpected token in a rule")),
                    }
                    i += 1;
                }
                if i == start {
                    return Err(bad("rule without objects"));
                }
            }
            if out.contains(&u8::MAX) {
                return Err(bad("some object has no code"));
            }
            Ok(out)
        }
    }
}
