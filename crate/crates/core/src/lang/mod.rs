//! Structured instructions: vocabulary, token layout, referring expressions
//! and grounding against attributed objects.

mod refexpr;
mod vocab;

pub use refexpr::{
    ground_refexpr, relate_holds, sample_refexpr, AttrKind, Dimension, Feature, ObjectAttrs, RefMode, ReferringExpression,
    EQUAL_TOLERANCE,
};
pub use vocab::{
    Color, ConceptType, HPos, Heading, Marker, Material, ObjectClass, Relate, SizeClass, StructureShape, Token,
    VPos, Vocabulary, CLASS_NAMES, VOCAB_FORMAT,
};

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fixed instruction length.
pub const SEQ_LEN: usize = 12;
const REF_START: usize = 6;

/// Discretized structure parameters of an instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructureParams {
    pub shape: StructureShape,
    pub size: SizeClass,
    pub hpos: HPos,
    pub vpos: VPos,
    pub rotation: Heading,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub structure: StructureParams,
    pub refexpr: Option<ReferringExpression>,
    pub tokens: Vec<u32>,
}

impl Instruction {
    pub fn new(vocab: &Vocabulary, structure: StructureParams, refexpr: Option<ReferringExpression>) -> Result<Self> {
        let tokens = tokenize(vocab, &structure, refexpr.as_ref())?;
        Ok(Self { structure, refexpr, tokens })
    }

    pub fn from_tokens(vocab: &Vocabulary, tokens: &[u32]) -> Result<Self> {
        let (structure, refexpr) = detokenize(vocab, tokens)?;
        Ok(Self { structure, refexpr, tokens: tokens.to_vec() })
    }
}

fn typed_tokens(structure: &StructureParams, refexpr: Option<&ReferringExpression>) -> Result<Vec<Token>> {
    let mut t = alloc::vec![
        Token::Shape(structure.shape),
        Token::Size(structure.size),
        Token::Hpos(structure.hpos),
        Token::Vpos(structure.vpos),
        Token::Rotation(structure.rotation),
    ];
    match (structure.shape, refexpr) {
        (StructureShape::TableSetting, None) => {}
        (StructureShape::TableSetting, Some(_)) => {
            return Err(Error::Vocabulary("table-setting instructions take no referring expression".into()));
        }
        (_, None) => return Err(Error::Vocabulary("missing referring expression".into())),
        (_, Some(r)) => {
            r.validate()?;
            match r {
                ReferringExpression::Direct { features } => {
                    t.push(Token::Marker(Marker::Direct));
                    t.extend(features.iter().map(|f| f.token()));
                }
                ReferringExpression::AnchorRelational { shared, anchor } => {
                    t.push(Token::Marker(Marker::Relational));
                    t.push(Token::Marker(shared.marker()));
                    t.extend(anchor.iter().map(|f| f.token()));
                }
                ReferringExpression::ContinuousComparison { dimension, relate, anchor } => {
                    t.push(Token::Marker(Marker::Comparison));
                    t.push(Token::Marker(dimension.marker()));
                    t.push(Token::Relate(*relate));
                    t.extend(anchor.iter().map(|f| f.token()));
                }
            }
        }
    }
    debug_assert!(t.len() <= SEQ_LEN);
    t.resize(SEQ_LEN, Token::Pad);
    Ok(t)
}

/// Layout: `[shape, size, hpos, vpos, rotation, MODE, slots…, PAD…]`.
pub fn tokenize(vocab: &Vocabulary, structure: &StructureParams, refexpr: Option<&ReferringExpression>) -> Result<Vec<u32>> {
    typed_tokens(structure, refexpr)?.into_iter().map(|t| vocab.id(t)).collect()
}

pub fn detokenize(vocab: &Vocabulary, ids: &[u32]) -> Result<(StructureParams, Option<ReferringExpression>)> {
    if ids.len() != SEQ_LEN {
        return Err(Error::Vocabulary(format!("expected {SEQ_LEN} tokens, got {}", ids.len())));
    }
    let toks: Vec<Token> = ids.iter().map(|&i| vocab.token(i)).collect::<Result<_>>()?;
    let bad = |slot: usize| Error::Vocabulary(format!("unexpected token {:?} in slot {slot}", toks[slot].concept()));
    let structure = StructureParams {
        shape: match toks[0] {
            Token::Shape(s) => s,
            _ => return Err(bad(0)),
        },
        size: match toks[1] {
            Token::Size(s) => s,
            _ => return Err(bad(1)),
        },
        hpos: match toks[2] {
            Token::Hpos(s) => s,
            _ => return Err(bad(2)),
        },
        vpos: match toks[3] {
            Token::Vpos(s) => s,
            _ => return Err(bad(3)),
        },
        rotation: match toks[4] {
            Token::Rotation(s) => s,
            _ => return Err(bad(4)),
        },
    };
    let features_from = |start: usize| -> Result<Vec<Feature>> {
        let mut out = Vec::new();
        let mut i = start;
        while i < SEQ_LEN && toks[i] != Token::Pad {
            out.push(Feature::from_token(toks[i]).ok_or_else(|| bad(i))?);
            i += 1;
        }
        if let Some(j) = (i..SEQ_LEN).find(|&j| toks[j] != Token::Pad) {
            return Err(bad(j));
        }
        Ok(out)
    };
    let refexpr = match toks[5] {
        Token::Pad if structure.shape == StructureShape::TableSetting => {
            if let Some(j) = (REF_START..SEQ_LEN).find(|&j| toks[j] != Token::Pad) {
                return Err(bad(j));
            }
            None
        }
        Token::Marker(Marker::Direct) => Some(ReferringExpression::Direct { features: features_from(REF_START)? }),
        Token::Marker(Marker::Relational) => {
            let shared = match toks[REF_START] {
                Token::Marker(m) => AttrKind::from_marker(m).ok_or_else(|| bad(REF_START))?,
                _ => return Err(bad(REF_START)),
            };
            Some(ReferringExpression::AnchorRelational { shared, anchor: features_from(REF_START + 1)? })
        }
        Token::Marker(Marker::Comparison) => {
            let dimension = match toks[REF_START] {
                Token::Marker(Marker::Height) => Dimension::Height,
                Token::Marker(Marker::Volume) => Dimension::Volume,
                _ => return Err(bad(REF_START)),
            };
            let relate = match toks[REF_START + 1] {
                Token::Relate(r) => r,
                _ => return Err(bad(REF_START + 1)),
            };
            Some(ReferringExpression::ContinuousComparison { dimension, relate, anchor: features_from(REF_START + 2)? })
        }
        _ => return Err(bad(5)),
    };
    if let Some(r) = &refexpr {
        if structure.shape == StructureShape::TableSetting {
            return Err(bad(5));
        }
        r.validate()?;
        // Only canonical forms are valid token sequences.
        if r.canonical() != *r {
            return Err(Error::Vocabulary("referring expression features out of canonical order".into()));
        }
    }
    Ok((structure, refexpr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use alloc::collections::BTreeSet;
    use rand::Rng as _;

    fn params(shape: StructureShape) -> StructureParams {
        StructureParams {
            shape,
            size: SizeClass::Large,
            hpos: HPos::Right,
            vpos: VPos::Top,
            rotation: Heading::North,
        }
    }

    #[test]
    fn direct_layout() {
        let v = Vocabulary::standard();
        let r = ReferringExpression::Direct { features: alloc::vec![Feature::Material(Material::Metal)] };
        let ids = tokenize(&v, &params(StructureShape::Circle), Some(&r)).unwrap();
        let expect = [
            Token::Shape(StructureShape::Circle),
            Token::Size(SizeClass::Large),
            Token::Hpos(HPos::Right),
            Token::Vpos(VPos::Top),
            Token::Rotation(Heading::North),
            Token::Marker(Marker::Direct),
            Token::Material(Material::Metal),
        ];
        for (i, t) in expect.iter().enumerate() {
            assert_eq!(ids[i], v.id(*t).unwrap());
        }
        assert!(ids[7..].iter().all(|&i| i == 0));
        assert_eq!(detokenize(&v, &ids).unwrap(), (params(StructureShape::Circle), Some(r)));
    }

    #[test]
    fn table_setting_has_no_ref_slots() {
        let v = Vocabulary::standard();
        let ids = tokenize(&v, &params(StructureShape::TableSetting), None).unwrap();
        assert!(ids[5..].iter().all(|&i| i == 0));
        let r = ReferringExpression::Direct { features: alloc::vec![Feature::Color(Color::Red)] };
        assert!(tokenize(&v, &params(StructureShape::TableSetting), Some(&r)).is_err());
        assert!(tokenize(&v, &params(StructureShape::Line), None).is_err());
    }

    fn random_instruction(rng: &mut crate::rng::Rng) -> (StructureParams, Option<ReferringExpression>) {
        let pick = |rng: &mut crate::rng::Rng, n: usize| rng.random_range(0..n);
        let shape = StructureShape::ALL[pick(rng, 4)];
        let p = StructureParams {
            shape,
            size: SizeClass::ALL[pick(rng, 3)],
            hpos: HPos::ALL[pick(rng, 3)],
            vpos: VPos::ALL[pick(rng, 3)],
            rotation: Heading::ALL[pick(rng, 4)],
        };
        if shape == StructureShape::TableSetting {
            return (p, None);
        }
        let pool: Vec<ObjectClass> = ObjectClass::all().collect();
        (p, Some(sample_refexpr(rng, &pool).unwrap()))
    }

    #[test]
    fn roundtrip_and_injective_over_random_instructions() {
        let v = Vocabulary::standard();
        let mut rng = rng_from_seed(11);
        let mut seen = BTreeSet::new();
        let mut distinct_inputs = BTreeSet::new();
        for _ in 0..200 {
            let (p, r) = random_instruction(&mut rng);
            let ids = tokenize(&v, &p, r.as_ref()).unwrap();
            assert_eq!(ids.len(), SEQ_LEN);
            let back = detokenize(&v, &ids).unwrap();
            assert_eq!(back, (p, r.clone()));
            distinct_inputs.insert(alloc::format!("{p:?}{r:?}"));
            seen.insert(ids);
        }
        assert_eq!(seen.len(), distinct_inputs.len());
    }

    #[test]
    fn malformed_sequences_rejected() {
        let v = Vocabulary::standard();
        assert!(detokenize(&v, &[0; 5]).is_err());
        let mut ids = tokenize(&v, &params(StructureShape::TableSetting), None).unwrap();
        ids[8] = v.id(Token::Color(Color::Red)).unwrap();
        assert!(detokenize(&v, &ids).is_err());
        ids[8] = 999;
        assert!(detokenize(&v, &ids).is_err());
    }
}
