//! Class templates: each object class maps to a primitive shape kind with
//! per-dimension uniform ranges.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::geometry::shape::{MAX_EXTENT, MIN_EXTENT};
use crate::geometry::PrimitiveShape;
use crate::lang::{ObjectClass, CLASS_NAMES};
use crate::rng::Rng;
use crate::{Error, Result};

const LIBRARY_TSV: &str = include_str!("../../data/object_library.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Box,
    Cylinder,
    Disk,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassTemplate {
    pub class: ObjectClass,
    pub kind: ShapeKind,
    pub x: (f64, f64),
    /// Unused for round kinds.
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl ClassTemplate {
    pub fn sample(&self, rng: &mut Rng) -> PrimitiveShape {
        let mut u = |r: (f64, f64)| if r.1 > r.0 { rng.random_range(r.0..r.1) } else { r.0 };
        let x = u(self.x);
        match self.kind {
            ShapeKind::Box => {
                let d = u(self.y);
                PrimitiveShape::Box { w: x, d, h: u(self.z) }
            }
            ShapeKind::Cylinder => PrimitiveShape::Cylinder { radius: x, height: u(self.z) },
            ShapeKind::Disk => PrimitiveShape::Disk { radius: x, height: u(self.z) },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectLibrary {
    templates: Vec<ClassTemplate>,
}

impl ObjectLibrary {
    /// The bundled library covering every vocabulary class.
    pub fn standard() -> Self {
        Self::parse(LIBRARY_TSV).expect("bundled object library is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut slots: Vec<Option<ClassTemplate>> = alloc::vec![None; CLASS_NAMES.len()];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("object library line {}: {what}", ln + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 8 {
                return Err(bad("expected 8 tab-separated columns"));
            }
            let class = ObjectClass::from_name(cols[0]).ok_or_else(|| bad("unknown class"))?;
            let kind = match cols[1] {
                "box" => ShapeKind::Box,
                "cylinder" => ShapeKind::Cylinder,
                "disk" => ShapeKind::Disk,
                _ => return Err(bad("unknown shape kind")),
            };
            let num = |s: &str| -> Result<f64> {
                if s == "-" {
                    Ok(0.0)
                } else {
                    s.parse().map_err(|_| bad("bad number"))
                }
            };
            let t = ClassTemplate {
                class,
                kind,
                x: (num(cols[2])?, num(cols[3])?),
                y: (num(cols[4])?, num(cols[5])?),
                z: (num(cols[6])?, num(cols[7])?),
            };
            let ranges: &[(f64, f64)] = if kind == ShapeKind::Box { &[t.x, t.y, t.z] } else { &[t.x, t.z] };
            for &(lo, hi) in ranges {
                if !(lo <= hi) || lo <= MIN_EXTENT || hi >= MAX_EXTENT {
                    return Err(bad("dimension range out of bounds"));
                }
            }
            if slots[class.index()].replace(t).is_some() {
                return Err(bad("duplicate class"));
            }
        }
        let templates = slots
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| Error::Config(format!("object library misses class {}", CLASS_NAMES[i]))))
            .collect::<Result<_>>()?;
        Ok(Self { templates })
    }

    pub fn template(&self, class: ObjectClass) -> &ClassTemplate {
        &self.templates[class.index()]
    }

    pub fn sample_shape(&self, class: ObjectClass, rng: &mut Rng) -> PrimitiveShape {
        self.template(class).sample(rng)
    }
}
