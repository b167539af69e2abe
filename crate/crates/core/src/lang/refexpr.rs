use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::{Color, Marker, Material, ObjectClass, Relate, Token};
use crate::rng::Rng;
use crate::{Error, Result};

/// Relative band treated as "equal" for continuous comparisons.
pub const EQUAL_TOLERANCE: f64 = 0.1;

/// Discrete attribute kinds, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Class,
    Material,
    Color,
}

impl AttrKind {
    pub const ALL: [AttrKind; 3] = [AttrKind::Class, AttrKind::Material, AttrKind::Color];

    pub fn marker(self) -> Marker {
        match self {
            AttrKind::Class => Marker::AttrClass,
            AttrKind::Material => Marker::AttrMaterial,
            AttrKind::Color => Marker::AttrColor,
        }
    }

    pub fn from_marker(m: Marker) -> Option<Self> {
        match m {
            Marker::AttrClass => Some(AttrKind::Class),
            Marker::AttrMaterial => Some(AttrKind::Material),
            Marker::AttrColor => Some(AttrKind::Color),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttrKind::Class => "class",
            AttrKind::Material => "material",
            AttrKind::Color => "color",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Feature {
    Class(ObjectClass),
    Material(Material),
    Color(Color),
}

impl Feature {
    pub fn kind(&self) -> AttrKind {
        match self {
            Feature::Class(_) => AttrKind::Class,
            Feature::Material(_) => AttrKind::Material,
            Feature::Color(_) => AttrKind::Color,
        }
    }

    pub fn token(&self) -> Token {
        match *self {
            Feature::Class(c) => Token::Class(c),
            Feature::Material(m) => Token::Material(m),
            Feature::Color(c) => Token::Color(c),
        }
    }

    pub fn from_token(t: Token) -> Option<Self> {
        match t {
            Token::Class(c) => Some(Feature::Class(c)),
            Token::Material(m) => Some(Feature::Material(m)),
            Token::Color(c) => Some(Feature::Color(c)),
            _ => None,
        }
    }

    pub fn matches(&self, o: &ObjectAttrs) -> bool {
        match *self {
            Feature::Class(c) => o.class == c,
            Feature::Material(m) => o.material == m,
            Feature::Color(c) => o.color == c,
        }
    }

    /// The feature of kind `kind` carried by `o`.
    pub fn of(kind: AttrKind, o: &ObjectAttrs) -> Feature {
        match kind {
            AttrKind::Class => Feature::Class(o.class),
            AttrKind::Material => Feature::Material(o.material),
            AttrKind::Color => Feature::Color(o.color),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Height,
    Volume,
}

impl Dimension {
    pub fn marker(self) -> Marker {
        match self {
            Dimension::Height => Marker::Height,
            Dimension::Volume => Marker::Volume,
        }
    }

    pub fn of(self, o: &ObjectAttrs) -> f64 {
        match self {
            Dimension::Height => o.height,
            Dimension::Volume => o.volume,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMode {
    Direct,
    AnchorRelational,
    ContinuousComparison,
}

/// How the query set is described.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ReferringExpression {
    Direct { features: Vec<Feature> },
    AnchorRelational { shared: AttrKind, anchor: Vec<Feature> },
    ContinuousComparison { dimension: Dimension, relate: Relate, anchor: Vec<Feature> },
}

/// Attributes used for grounding. Height is the vertical extent; volume is
/// footprint area times height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectAttrs {
    pub id: u32,
    pub class: ObjectClass,
    pub material: Material,
    pub color: Color,
    pub height: f64,
    pub volume: f64,
}

fn check_features(fs: &[Feature], what: &str) -> Result<()> {
    if fs.is_empty() || fs.len() > 3 {
        return Err(Error::Vocabulary(format!("{what} needs 1 to 3 features, got {}", fs.len())));
    }
    let kinds: BTreeSet<AttrKind> = fs.iter().map(|f| f.kind()).collect();
    if kinds.len() != fs.len() {
        return Err(Error::Vocabulary(format!("{what} repeats a feature kind")));
    }
    Ok(())
}

/// `Less` and `More` exclude the equal band so the three relations partition.
pub fn relate_holds(relate: Relate, value: f64, anchor: f64) -> bool {
    let equal = (value - anchor).abs() <= EQUAL_TOLERANCE * anchor.abs();
    match relate {
        Relate::Less => !equal && value < anchor,
        Relate::Equal => equal,
        Relate::More => !equal && value > anchor,
    }
}

impl ReferringExpression {
    pub fn mode(&self) -> RefMode {
        match self {
            ReferringExpression::Direct { .. } => RefMode::Direct,
            ReferringExpression::AnchorRelational { .. } => RefMode::AnchorRelational,
            ReferringExpression::ContinuousComparison { .. } => RefMode::ContinuousComparison,
        }
    }

    pub fn anchor(&self) -> Option<&[Feature]> {
        match self {
            ReferringExpression::Direct { .. } => None,
            ReferringExpression::AnchorRelational { anchor, .. }
            | ReferringExpression::ContinuousComparison { anchor, .. } => Some(anchor),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReferringExpression::Direct { features } => check_features(features, "direct expression"),
            ReferringExpression::AnchorRelational { shared, anchor } => {
                check_features(anchor, "anchor descriptor")?;
                if anchor.iter().all(|f| f.kind() == *shared) {
                    return Err(Error::Vocabulary("anchor descriptor only uses the shared attribute".into()));
                }
                Ok(())
            }
            ReferringExpression::ContinuousComparison { anchor, .. } => check_features(anchor, "anchor descriptor"),
        }
    }

    /// Same expression with features sorted by kind.
    pub fn canonical(&self) -> Self {
        let sorted = |fs: &[Feature]| {
            let mut v = fs.to_vec();
            v.sort();
            v
        };
        match self {
            ReferringExpression::Direct { features } => ReferringExpression::Direct { features: sorted(features) },
            ReferringExpression::AnchorRelational { shared, anchor } => {
                ReferringExpression::AnchorRelational { shared: *shared, anchor: sorted(anchor) }
            }
            ReferringExpression::ContinuousComparison { dimension, relate, anchor } => {
                ReferringExpression::ContinuousComparison { dimension: *dimension, relate: *relate, anchor: sorted(anchor) }
            }
        }
    }

    /// Grouping key for selection metrics.
    pub fn property_type(&self) -> &'static str {
        match self {
            ReferringExpression::Direct { features } if features.len() == 1 => features[0].kind().name(),
            ReferringExpression::Direct { .. } => "multi_feature",
            ReferringExpression::AnchorRelational { shared, .. } => match shared {
                AttrKind::Class => "same_class",
                AttrKind::Material => "same_material",
                AttrKind::Color => "same_color",
            },
            ReferringExpression::ContinuousComparison { dimension: Dimension::Height, .. } => "height",
            ReferringExpression::ContinuousComparison { dimension: Dimension::Volume, .. } => "volume",
        }
    }
}

fn descriptor_matches(fs: &[Feature], o: &ObjectAttrs) -> bool {
    fs.iter().all(|f| f.matches(o))
}

fn unique_anchor<'a>(anchor: &[Feature], objects: &'a [ObjectAttrs]) -> Result<&'a ObjectAttrs> {
    let mut hits = objects.iter().filter(|o| descriptor_matches(anchor, o));
    match (hits.next(), hits.next()) {
        (Some(a), None) => Ok(a),
        (None, _) => Err(Error::Grounding("no object matches the anchor descriptor".into())),
        (Some(_), Some(_)) => Err(Error::Grounding("anchor descriptor is ambiguous".into())),
    }
}

/// Ids of the objects the expression refers to.
pub fn ground_refexpr(expr: &ReferringExpression, objects: &[ObjectAttrs]) -> Result<BTreeSet<u32>> {
    Ok(match expr {
        ReferringExpression::Direct { features } => {
            objects.iter().filter(|o| descriptor_matches(features, o)).map(|o| o.id).collect()
        }
        ReferringExpression::AnchorRelational { shared, anchor } => {
            let a = unique_anchor(anchor, objects)?;
            let value = Feature::of(*shared, a);
            objects.iter().filter(|o| o.id != a.id && value.matches(o)).map(|o| o.id).collect()
        }
        ReferringExpression::ContinuousComparison { dimension, relate, anchor } => {
            let a = unique_anchor(anchor, objects)?;
            let av = dimension.of(a);
            objects
                .iter()
                .filter(|o| o.id != a.id && relate_holds(*relate, dimension.of(o), av))
                .map(|o| o.id)
                .collect()
        }
    })
}

fn random_feature(rng: &mut Rng, kind: AttrKind, pool: &[ObjectClass]) -> Feature {
    match kind {
        AttrKind::Class => Feature::Class(*pool.choose(rng).expect("non-empty pool")),
        AttrKind::Material => Feature::Material(*Material::ALL.choose(rng).expect("non-empty")),
        AttrKind::Color => Feature::Color(*Color::ALL.choose(rng).expect("non-empty")),
    }
}

fn random_descriptor(rng: &mut Rng, count: usize, kinds: &[AttrKind], pool: &[ObjectClass]) -> Vec<Feature> {
    let mut ks: Vec<AttrKind> = kinds.choose_multiple(rng, count).copied().collect();
    ks.sort();
    ks.into_iter().map(|k| random_feature(rng, k, pool)).collect()
}

/// Samples an expression with a uniformly chosen mode. Class values are
/// drawn from `pool`, which must hold at least three distinct classes.
pub fn sample_refexpr(rng: &mut Rng, pool: &[ObjectClass]) -> Result<ReferringExpression> {
    let distinct: BTreeSet<_> = pool.iter().collect();
    if distinct.len() < 3 {
        return Err(Error::Vocabulary(format!("class pool needs 3 distinct classes, got {}", distinct.len())));
    }
    Ok(match rng.random_range(0..3) {
        0 => {
            let n = rng.random_range(1..=2);
            ReferringExpression::Direct { features: random_descriptor(rng, n, &AttrKind::ALL, pool) }
        }
        1 => {
            let shared = AttrKind::ALL[rng.random_range(0..3)];
            let n = rng.random_range(1..=3);
            let anchor = if n == 1 {
                let others: Vec<AttrKind> = AttrKind::ALL.iter().copied().filter(|&k| k != shared).collect();
                random_descriptor(rng, 1, &others, pool)
            } else {
                random_descriptor(rng, n, &AttrKind::ALL, pool)
            };
            ReferringExpression::AnchorRelational { shared, anchor }
        }
        _ => {
            let dimension = if rng.random_bool(0.5) { Dimension::Height } else { Dimension::Volume };
            let relate = Relate::ALL[rng.random_range(0..3)];
            let n = rng.random_range(1..=3);
            ReferringExpression::ContinuousComparison {
                dimension,
                relate,
                anchor: random_descriptor(rng, n, &AttrKind::ALL, pool),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use alloc::vec;

    fn obj(id: u32, class: &str, material: Material, color: Color, height: f64) -> ObjectAttrs {
        ObjectAttrs {
            id,
            class: ObjectClass::from_name(class).unwrap(),
            material,
            color,
            height,
            volume: height * 0.01,
        }
    }

    #[test]
    fn direct_filter() {
        let objs = [
            obj(0, "cup", Material::Plastic, Color::Red, 0.1),
            obj(1, "cup", Material::Plastic, Color::Blue, 0.1),
            obj(2, "pan", Material::Metal, Color::Red, 0.1),
        ];
        let e = ReferringExpression::Direct { features: vec![Feature::Color(Color::Red)] };
        assert_eq!(ground_refexpr(&e, &objs).unwrap(), [0, 2].into_iter().collect());
    }

    #[test]
    fn comparison_less() {
        let objs = [
            obj(0, "cup", Material::Glass, Color::Red, 0.10),
            obj(1, "mug", Material::Glass, Color::Red, 0.20),
            obj(2, "vase", Material::Glass, Color::Blue, 0.15),
        ];
        let e = ReferringExpression::ContinuousComparison {
            dimension: Dimension::Height,
            relate: Relate::Less,
            anchor: vec![Feature::Class(ObjectClass::from_name("vase").unwrap())],
        };
        assert_eq!(ground_refexpr(&e, &objs).unwrap(), [0].into_iter().collect());
    }

    #[test]
    fn relational_material_brute_force() {
        let objs = [
            obj(0, "bottle", Material::Metal, Color::Blue, 0.2),
            obj(1, "can", Material::Metal, Color::Red, 0.1),
            obj(2, "pot", Material::Metal, Color::Green, 0.1),
            obj(3, "bowl", Material::Glass, Color::Blue, 0.1),
            obj(4, "bottle", Material::Plastic, Color::Red, 0.1),
        ];
        let anchor = vec![
            Feature::Class(ObjectClass::from_name("bottle").unwrap()),
            Feature::Material(Material::Metal),
        ];
        let e = ReferringExpression::AnchorRelational { shared: AttrKind::Material, anchor: anchor.clone() };
        let brute: BTreeSet<u32> = objs
            .iter()
            .filter(|o| !descriptor_matches(&anchor, o) && o.material == Material::Metal)
            .map(|o| o.id)
            .collect();
        let got = ground_refexpr(&e, &objs).unwrap();
        assert_eq!(got, brute);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn ambiguous_and_missing_anchor() {
        let objs = [
            obj(0, "cup", Material::Glass, Color::Red, 0.1),
            obj(1, "cup", Material::Glass, Color::Blue, 0.1),
        ];
        let amb = ReferringExpression::AnchorRelational {
            shared: AttrKind::Color,
            anchor: vec![Feature::Class(ObjectClass::from_name("cup").unwrap())],
        };
        assert!(matches!(ground_refexpr(&amb, &objs), Err(Error::Grounding(_))));
        let missing = ReferringExpression::AnchorRelational {
            shared: AttrKind::Color,
            anchor: vec![Feature::Class(ObjectClass::from_name("pan").unwrap())],
        };
        assert!(matches!(ground_refexpr(&missing, &objs), Err(Error::Grounding(_))));
    }

    #[test]
    fn relations_partition_the_line() {
        for v in [0.5, 0.89, 0.9, 0.95, 1.0, 1.1, 1.11, 2.0] {
            let n = Relate::ALL.iter().filter(|&&r| relate_holds(r, v, 1.0)).count();
            assert_eq!(n, 1, "value {v}");
        }
    }

    #[test]
    fn sampling_statistics() {
        let pool: Vec<ObjectClass> = ObjectClass::all().take(5).collect();
        let mut rng = rng_from_seed(5);
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            let e = sample_refexpr(&mut rng, &pool).unwrap();
            e.validate().unwrap();
            assert_eq!(e, e.canonical());
            if let Some(a) = e.anchor() {
                assert!((1..=3).contains(&a.len()));
            }
            counts[e.mode() as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1000.0 - 1.0 / 3.0).abs() < 0.05, "{counts:?}");
        }
        let a = sample_refexpr(&mut rng_from_seed(9), &pool).unwrap();
        let b = sample_refexpr(&mut rng_from_seed(9), &pool).unwrap();
        assert_eq!(a, b);
        assert!(sample_refexpr(&mut rng, &pool[..2]).is_err());
    }
}
