use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const VOCAB_FORMAT: &str = "rearrange-vocab v1";

pub const CLASS_NAMES: [&str; 35] = [
    "basket", "beer_bottle", "book", "bowl", "calculator", "candle", "controller", "cup", "donut", "fork",
    "knife", "plate", "spoon", "mug", "pan", "teapot", "bottle", "can", "jar", "shoe_box", "tray", "vase",
    "apple", "lamp", "phone", "remote", "stapler", "tissue_box", "clock", "speaker", "pot", "glass",
    "wallet", "cereal_box", "soap_bottle",
];

macro_rules! concept_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                match s { $($text => Some($name::$variant),)+ _ => None }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }
    };
}

concept_enum!(Material { Glass => "glass", Metal => "metal", Plastic => "plastic" });
concept_enum!(Color {
    Blue => "blue", Cyan => "cyan", Green => "green", Magenta => "magenta", Red => "red", Yellow => "yellow",
});
concept_enum!(Relate { Less => "less", Equal => "equal", More => "more" });
concept_enum!(StructureShape { Circle => "circle", Line => "line", Tower => "tower", TableSetting => "table_setting" });
concept_enum!(SizeClass { Small => "small", Medium => "medium", Large => "large" });
concept_enum!(VPos { Top => "top", Middle => "middle", Bottom => "bottom" });
concept_enum!(HPos { Left => "left", Center => "center", Right => "right" });
concept_enum!(Heading { North => "north", East => "east", South => "south", West => "west" });
concept_enum!(
    /// Structural tokens that are not concept values.
    Marker {
        Direct => "direct",
        Relational => "relational",
        Comparison => "comparison",
        Height => "height",
        Volume => "volume",
        AttrClass => "attr_class",
        AttrMaterial => "attr_material",
        AttrColor => "attr_color",
    }
);

/// Index into [`CLASS_NAMES`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectClass(u8);

impl ObjectClass {
    pub fn new(index: usize) -> Option<Self> {
        (index < CLASS_NAMES.len()).then_some(Self(index as u8))
    }

    pub fn from_name(s: &str) -> Option<Self> {
        CLASS_NAMES.iter().position(|c| *c == s).map(|i| Self(i as u8))
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.0 as usize]
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = ObjectClass> {
        (0..CLASS_NAMES.len()).map(|i| ObjectClass(i as u8))
    }
}

impl TryFrom<String> for ObjectClass {
    type Error = String;
    fn try_from(s: String) -> core::result::Result<Self, String> {
        ObjectClass::from_name(&s).ok_or_else(|| format!("unknown object class {s}"))
    }
}

impl From<ObjectClass> for String {
    fn from(c: ObjectClass) -> String {
        c.name().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptType {
    Pad,
    Marker,
    Class,
    Material,
    Color,
    Relate,
    Shape,
    Size,
    Vpos,
    Hpos,
    Rotation,
}

impl ConceptType {
    pub fn name(self) -> &'static str {
        match self {
            ConceptType::Pad => "pad",
            ConceptType::Marker => "marker",
            ConceptType::Class => "class",
            ConceptType::Material => "material",
            ConceptType::Color => "color",
            ConceptType::Relate => "relate",
            ConceptType::Shape => "shape",
            ConceptType::Size => "size",
            ConceptType::Vpos => "vpos",
            ConceptType::Hpos => "hpos",
            ConceptType::Rotation => "rotation",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "pad" => ConceptType::Pad,
            "marker" => ConceptType::Marker,
            "class" => ConceptType::Class,
            "material" => ConceptType::Material,
            "color" => ConceptType::Color,
            "relate" => ConceptType::Relate,
            "shape" => ConceptType::Shape,
            "size" => ConceptType::Size,
            "vpos" => ConceptType::Vpos,
            "hpos" => ConceptType::Hpos,
            "rotation" => ConceptType::Rotation,
            _ => return None,
        })
    }
}

/// A single instruction token in typed form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Pad,
    Marker(Marker),
    Class(ObjectClass),
    Material(Material),
    Color(Color),
    Relate(Relate),
    Shape(StructureShape),
    Size(SizeClass),
    Vpos(VPos),
    Hpos(HPos),
    Rotation(Heading),
}

impl Token {
    pub fn concept(&self) -> (ConceptType, &'static str) {
        match *self {
            Token::Pad => (ConceptType::Pad, "PAD"),
            Token::Marker(m) => (ConceptType::Marker, m.name()),
            Token::Class(c) => (ConceptType::Class, c.name()),
            Token::Material(m) => (ConceptType::Material, m.name()),
            Token::Color(c) => (ConceptType::Color, c.name()),
            Token::Relate(r) => (ConceptType::Relate, r.name()),
            Token::Shape(s) => (ConceptType::Shape, s.name()),
            Token::Size(s) => (ConceptType::Size, s.name()),
            Token::Vpos(v) => (ConceptType::Vpos, v.name()),
            Token::Hpos(h) => (ConceptType::Hpos, h.name()),
            Token::Rotation(r) => (ConceptType::Rotation, r.name()),
        }
    }

    pub fn parse(concept: ConceptType, value: &str) -> Option<Token> {
        Some(match concept {
            ConceptType::Pad => (value == "PAD").then_some(Token::Pad)?,
            ConceptType::Marker => Token::Marker(Marker::from_name(value)?),
            ConceptType::Class => Token::Class(ObjectClass::from_name(value)?),
            ConceptType::Material => Token::Material(Material::from_name(value)?),
            ConceptType::Color => Token::Color(Color::from_name(value)?),
            ConceptType::Relate => Token::Relate(Relate::from_name(value)?),
            ConceptType::Shape => Token::Shape(StructureShape::from_name(value)?),
            ConceptType::Size => Token::Size(SizeClass::from_name(value)?),
            ConceptType::Vpos => Token::Vpos(VPos::from_name(value)?),
            ConceptType::Hpos => Token::Hpos(HPos::from_name(value)?),
            ConceptType::Rotation => Token::Rotation(Heading::from_name(value)?),
        })
    }
}

/// Every token in canonical id order; id 0 is PAD.
fn standard_tokens() -> Vec<Token> {
    let mut t = alloc::vec![Token::Pad];
    t.extend(Marker::ALL.iter().map(|&m| Token::Marker(m)));
    t.extend(ObjectClass::all().map(Token::Class));
    t.extend(Material::ALL.iter().map(|&m| Token::Material(m)));
    t.extend(Color::ALL.iter().map(|&c| Token::Color(c)));
    t.extend(Relate::ALL.iter().map(|&r| Token::Relate(r)));
    t.extend(StructureShape::ALL.iter().map(|&s| Token::Shape(s)));
    t.extend(SizeClass::ALL.iter().map(|&s| Token::Size(s)));
    t.extend(VPos::ALL.iter().map(|&v| Token::Vpos(v)));
    t.extend(HPos::ALL.iter().map(|&h| Token::Hpos(h)));
    t.extend(Heading::ALL.iter().map(|&r| Token::Rotation(r)));
    t
}

/// Bidirectional token ↔ id map with a content hash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: BTreeMap<Token, u32>,
    hash: String,
}

impl Vocabulary {
    pub fn standard() -> Self {
        Self::from_tokens(standard_tokens())
    }

    fn from_tokens(tokens: Vec<Token>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, &t)| (t, i as u32)).collect();
        let mut v = Self { tokens, ids, hash: String::new() };
        let digest = Sha256::digest(v.to_text().as_bytes());
        v.hash = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// First 16 hex digits of the SHA-256 of [`Vocabulary::to_text`].
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn id(&self, t: Token) -> Result<u32> {
        self.ids
            .get(&t)
            .copied()
            .ok_or_else(|| Error::Vocabulary(format!("token {:?} not in vocabulary", t.concept())))
    }

    pub fn token(&self, id: u32) -> Result<Token> {
        self.tokens
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Vocabulary(format!("token id {id} out of range")))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Versioned text form: a header line, then one `type value id` line per token.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# ");
        s.push_str(VOCAB_FORMAT);
        s.push('\n');
        for (i, t) in self.tokens.iter().enumerate() {
            let (c, v) = t.concept();
            s.push_str(&format!("{} {} {}\n", c.name(), v, i));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == format!("# {VOCAB_FORMAT}") => {}
            other => {
                return Err(Error::Vocabulary(format!("missing header, got {:?}", other.map(|x| x.1))));
            }
        }
        let mut tokens = Vec::new();
        for (ln, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Vocabulary(format!("line {}: malformed entry {line:?}", ln + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let concept = ConceptType::from_name(parts[0]).ok_or_else(bad)?;
            let token = Token::parse(concept, parts[1]).ok_or_else(bad)?;
            let id: usize = parts[2].parse().map_err(|_| bad())?;
            if id != tokens.len() {
                return Err(Error::Vocabulary(format!("line {}: id {id} out of sequence", ln + 1)));
            }
            tokens.push(token);
        }
        if tokens.first() != Some(&Token::Pad) {
            return Err(Error::Vocabulary("id 0 must be PAD".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_concept_table() {
        assert_eq!(CLASS_NAMES.len(), 35);
        assert_eq!(Material::ALL.len(), 3);
        assert_eq!(Color::ALL.len(), 6);
        assert_eq!(Relate::ALL.len(), 3);
        assert_eq!(StructureShape::ALL.len(), 4);
        assert_eq!(SizeClass::ALL.len(), 3);
        assert_eq!(VPos::ALL.len(), 3);
        assert_eq!(HPos::ALL.len(), 3);
        assert_eq!(Heading::ALL.len(), 4);
        let v = Vocabulary::standard();
        assert_eq!(v.len(), 1 + 8 + 35 + 3 + 6 + 3 + 4 + 3 + 3 + 3 + 4);
        assert_eq!(v.id(Token::Pad).unwrap(), 0);
    }

    #[test]
    fn ids_unique_and_text_roundtrip() {
        let v = Vocabulary::standard();
        let mut seen = alloc::collections::BTreeSet::new();
        for &t in v.tokens() {
            assert!(seen.insert(v.id(t).unwrap()));
            assert_eq!(v.token(v.id(t).unwrap()).unwrap(), t);
        }
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash().len(), 16);
    }

    #[test]
    fn malformed_text_rejected() {
        assert!(Vocabulary::from_text("pad PAD 0\n").is_err());
        let text = Vocabulary::standard().to_text().replace("color red", "color crimson");
        assert!(Vocabulary::from_text(&text).is_err());
    }
}
