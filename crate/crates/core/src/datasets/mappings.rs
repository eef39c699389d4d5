use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mathcore::{normal_matrix, LabRng, Matrix, Vector};

/// Objects are indexed `2·color + shape`.
pub const OBJECTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingClass {
    Compositional,
    Holistic,
    Degenerate,
    Other,
}

/// One assignment of the four objects to 2-bit codes (0..4).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingSpec {
    /// Base-4 reading of the assignment, object 0 least significant.
    pub id: usize,
    pub assignment: [u8; 4],
    pub class: MappingClass,
}

impl MappingSpec {
    pub fn from_assignment(assignment: [u8; 4]) -> Result<Self> {
        if assignment.iter().any(|&c| c > 3) {
            return Err(LabError::Domain(format!("codes must be 2-bit, got {assignment:?}")));
        }
        let id = assignment.iter().rev().fold(0usize, |acc, &c| acc * 4 + c as usize);
        Ok(Self { id, assignment, class: classify_assignment(&assignment) })
    }

    pub fn is_bijection(&self) -> bool {
        matches!(self.class, MappingClass::Compositional | MappingClass::Holistic)
    }
}

/// `(color, shape)` of an object.
pub fn object_attributes(object: usize) -> [u8; 2] {
    [(object >> 1) as u8 & 1, object as u8 & 1]
}

/// `(first bit, second bit)` of a code.
pub fn code_bits(code: u8) -> [u8; 2] {
    [(code >> 1) & 1, code & 1]
}

pub fn classify_assignment(a: &[u8; 4]) -> MappingClass {
    let mut seen = [false; 4];
    for &c in a {
        seen[c as usize] = true;
    }
    let distinct = seen.iter().filter(|&&s| s).count();
    match distinct {
        1 => MappingClass::Degenerate,
        4 => {
            // Compositional iff each output bit copies (or negates) a distinct attribute.
            let follows = |bit: usize, attr: usize| {
                let f: Vec<u8> = (0..OBJECTS).map(|o| code_bits(a[o])[bit] ^ object_attributes(o)[attr]).collect();
                f.iter().all(|&v| v == f[0])
            };
            if (follows(0, 0) && follows(1, 1)) || (follows(0, 1) && follows(1, 0)) {
                MappingClass::Compositional
            } else {
                MappingClass::Holistic
            }
        }
        _ => MappingClass::Other,
    }
}

/// All 256 assignments, ordered by id.
pub fn enumerate_mappings() -> Vec<MappingSpec> {
    (0..256usize)
        .map(|id| {
            let a = [id & 3, (id >> 2) & 3, (id >> 4) & 3, (id >> 6) & 3].map(|c| c as u8);
            MappingSpec::from_assignment(a).expect("codes are 2-bit by construction")
        })
        .collect()
}

pub fn write_mappings_json<W: Write>(out: W, mappings: &[MappingSpec]) -> Result<()> {
    serde_json::to_writer(out, mappings)?;
    Ok(())
}

/// One-hot input encodings of the objects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// Two concatenated 2-dim one-hots.
    Oht2,
    /// Two concatenated 3-dim one-hots with an always-zero slot each.
    Oht3,
}

impl Encoding {
    pub fn width(self) -> usize {
        match self {
            Encoding::Oht2 => 4,
            Encoding::Oht3 => 6,
        }
    }

    pub fn encode(self, object: usize) -> Vector {
        let attrs = object_attributes(object);
        let block = self.width() / 2;
        let mut v = Vector::zeros(self.width());
        for (k, &a) in attrs.iter().enumerate() {
            // value 1 in the first slot, value 0 in the second, as in 100 / 010
            v[k * block + (1 - a as usize)] = 1.0;
        }
        v
    }
}

/// The four encoded objects after a fixed random projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Toy256Inputs {
    pub encoding: Encoding,
    /// `proj_dim × width`.
    pub projection: Matrix,
    pub inputs: Vec<Vector>,
}

impl Toy256Inputs {
    pub fn new(encoding: Encoding, proj_dim: usize, rng: &mut LabRng) -> Self {
        let projection = normal_matrix(proj_dim, encoding.width(), rng);
        let inputs = (0..OBJECTS).map(|o| &projection * encoding.encode(o)).collect();
        Self { encoding, projection, inputs }
    }
}
