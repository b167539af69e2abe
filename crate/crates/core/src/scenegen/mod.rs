//! Procedural rearrangement examples: a goal structure is synthesized first,
//! then objects are scattered to collision-free initial poses, and the pose
//! offsets recovering the goal are recorded.

pub mod library;
pub mod structure;

pub use library::{ClassTemplate, ObjectLibrary, ShapeKind};
pub use structure::{
    heading_yaw, local_layout, sample_position, size_range, synthesize_structure, Structure, StructureSpec,
    TableBounds, MAX_QUERIES, TABLE_ROLES, TABLE_SLOTS,
};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geometry::pose::{mat_mul, rot_z, transpose, yaw_of};
use crate::geometry::{
    footprint_overlap, matrix_to_rot6d, rot6d_to_matrix, sample_surface, stable_on, Mat3, PointCloud, Pose,
    PrimitiveShape, Rot6D, Vec3,
};
use crate::lang::{
    ground_refexpr, relate_holds, sample_refexpr, AttrKind, Color, Feature, Heading, HPos, Instruction, Material,
    ObjectAttrs, ObjectClass, ReferringExpression, SizeClass, StructureParams, StructureShape, VPos, Vocabulary,
};
use crate::math;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{Error, Result};

/// Maximum objects in a scene.
pub const MAX_OBJECTS: usize = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub class: ObjectClass,
    pub material: Material,
    pub color: Color,
    pub shape: PrimitiveShape,
    pub initial_pose: Pose,
    pub goal_pose: Option<Pose>,
    pub is_query: bool,
    /// 1-based position in the canonical structure order.
    pub query_order: Option<u32>,
}

impl SceneObject {
    pub fn attrs(&self) -> ObjectAttrs {
        ObjectAttrs {
            id: self.id,
            class: self.class,
            material: self.material,
            color: self.color,
            height: self.shape.height(),
            volume: self.shape.volume(),
        }
    }
}

/// Pose offset δ. For the structure frame it is the frame's world pose; for
/// objects, the goal position in the structure frame plus the world-frame
/// rotation `R_off` with `R_goal = R_off · R_init`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseOffset {
    pub t: Vec3,
    pub rotation: Rot6D,
}

impl PoseOffset {
    pub fn from_pose(p: &Pose) -> Result<Self> {
        Ok(Self { t: p.t, rotation: matrix_to_rot6d(&p.r)? })
    }

    pub fn matrix(&self) -> Result<Mat3> {
        rot6d_to_matrix(&self.rotation)
    }

    pub fn pose(&self) -> Result<Pose> {
        Ok(Pose::new(self.t, self.matrix()?))
    }

    /// `(t, a, b)` as 9 reals.
    pub fn features(&self) -> [f64; 9] {
        let r = self.rotation.to_array();
        [self.t[0], self.t[1], self.t[2], r[0], r[1], r[2], r[3], r[4], r[5]]
    }

    pub fn from_features(f: &[f64]) -> Self {
        Self { t: [f[0], f[1], f[2]], rotation: Rot6D::from_slice(&f[3..9]) }
    }
}

/// Offsets taking each query from its initial pose to its goal.
pub fn extract_deltas(frame: &Pose, initial: &[Pose], goals: &[Pose]) -> Result<Vec<PoseOffset>> {
    let inv = frame.inverse();
    initial
        .iter()
        .zip(goals)
        .map(|(i, g)| {
            let r_off = mat_mul(&g.r, &transpose(&i.r));
            Ok(PoseOffset { t: inv.apply(g.t), rotation: matrix_to_rot6d(&r_off)? })
        })
        .collect()
}

/// Goal poses from a structure frame and per-object offsets.
pub fn apply_deltas(frame: &PoseOffset, initial: &[Pose], deltas: &[PoseOffset]) -> Result<Vec<Pose>> {
    let f = frame.pose()?;
    initial
        .iter()
        .zip(deltas)
        .map(|(i, d)| Ok(Pose::new(f.apply(d.t), mat_mul(&d.matrix()?, &i.r))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RearrangementExample {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    pub instruction: Instruction,
    pub spec: StructureSpec,
    pub structure_frame: Pose,
    /// One offset per query, in query order.
    pub deltas: Vec<PoseOffset>,
    /// Scene cloud at the initial poses; segment id = object id.
    pub cloud: PointCloud,
}

impl RearrangementExample {
    pub fn shape(&self) -> StructureShape {
        self.instruction.structure.shape
    }

    /// Object indices of the queries in canonical order.
    pub fn query_indices(&self) -> Vec<usize> {
        let mut q: Vec<(u32, usize)> =
            self.objects.iter().enumerate().filter_map(|(i, o)| o.query_order.map(|k| (k, i))).collect();
        q.sort();
        q.into_iter().map(|(_, i)| i).collect()
    }

    pub fn stationary_indices(&self) -> Vec<usize> {
        (0..self.objects.len()).filter(|&i| !self.objects[i].is_query).collect()
    }

    pub fn query_ids(&self) -> BTreeSet<u32> {
        self.objects.iter().filter(|o| o.is_query).map(|o| o.id).collect()
    }

    pub fn attrs(&self) -> Vec<ObjectAttrs> {
        self.objects.iter().map(SceneObject::attrs).collect()
    }

    /// `[δ₀, δ₁, …, δ_N]`.
    pub fn delta_sequence(&self) -> Result<Vec<PoseOffset>> {
        let mut out = alloc::vec![PoseOffset::from_pose(&self.structure_frame)?];
        out.extend_from_slice(&self.deltas);
        Ok(out)
    }

    /// Points of object `id`.
    pub fn segment(&self, id: u32) -> Vec<Vec3> {
        self.cloud
            .points
            .iter()
            .zip(&self.cloud.segment_ids)
            .filter(|(_, &s)| s == id)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Checks the structural invariants of a stored example.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Generation(m));
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return fail(format!("{} objects", self.objects.len()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.id as usize != i {
                return fail(format!("object {i} has id {}", o.id));
            }
            if o.is_query != o.goal_pose.is_some() || o.is_query != o.query_order.is_some() {
                return fail(format!("object {i} has inconsistent query fields"));
            }
            o.shape.validate()?;
            o.initial_pose.validate()?;
        }
        let mut orders: Vec<u32> = self.objects.iter().filter_map(|o| o.query_order).collect();
        orders.sort();
        if orders.is_empty() || orders.iter().enumerate().any(|(k, &q)| q as usize != k + 1) {
            return fail("query order is not 1..N".into());
        }
        if orders.len() != self.deltas.len() {
            return fail("delta count differs from query count".into());
        }
        let again = Instruction::from_tokens(vocab, &self.instruction.tokens)?;
        if again != self.instruction {
            return fail("instruction tokens disagree with its fields".into());
        }
        self.cloud.validate()?;
        if self.cloud.segment_ids.iter().any(|&s| s as usize >= self.objects.len()) {
            return fail("point cloud segment id out of range".into());
        }
        Ok(())
    }

    /// Max deviation between the stored goals and the goals recovered from
    /// the ground-truth offsets (translation in m, rotation Frobenius).
    pub fn reversal_error(&self) -> Result<f64> {
        let q = self.query_indices();
        let init: Vec<Pose> = q.iter().map(|&i| self.objects[i].initial_pose).collect();
        let goals = apply_deltas(&PoseOffset::from_pose(&self.structure_frame)?, &init, &self.deltas)?;
        let mut worst: f64 = 0.0;
        for (g, &i) in goals.iter().zip(&q) {
            let want = self.objects[i].goal_pose.expect("query has a goal");
            for k in 0..3 {
                worst = worst.max((g.t[k] - want.t[k]).abs());
            }
            worst = worst.max(crate::geometry::pose::frobenius_diff(&g.r, &want.r));
        }
        Ok(worst)
    }
}

/// Query set implied by the instruction: grounded referring expression, or
/// the role classes for table settings.
pub fn instruction_query_set(instruction: &Instruction, objects: &[ObjectAttrs]) -> Result<BTreeSet<u32>> {
    match &instruction.refexpr {
        Some(r) => ground_refexpr(r, objects),
        None => Ok(objects.iter().filter(|o| is_table_role(o.class)).map(|o| o.id).collect()),
    }
}

pub fn is_table_role(c: ObjectClass) -> bool {
    TABLE_ROLES.contains(&c.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Relative weights for circle, line, tower, table setting.
    pub structure_weights: [f64; 4],
    pub query_range: (usize, usize),
    pub distractor_range: (usize, usize),
    pub points_per_object: usize,
    pub partial_view: bool,
    pub class_pool_size: usize,
    pub max_tries: usize,
    pub retry_budget: usize,
    pub table: TableBounds,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            structure_weights: [1.0; 4],
            query_range: (2, 7),
            distractor_range: (0, 4),
            points_per_object: 32,
            partial_view: false,
            class_pool_size: 5,
            max_tries: 1000,
            retry_budget: 100,
            table: TableBounds::default(),
        }
    }
}

impl GenConfig {
    /// Restricts generation to the listed structures with equal weight.
    pub fn with_structures(mut self, shapes: &[StructureShape]) -> Self {
        self.structure_weights = [0.0; 4];
        for s in shapes {
            self.structure_weights[s.index()] = 1.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.structure_weights.iter().any(|w| !(*w >= 0.0)) || self.structure_weights.iter().sum::<f64>() <= 0.0 {
            return bad("structure weights must be non-negative with a positive sum");
        }
        let (qlo, qhi) = self.query_range;
        if qlo < 1 || qlo > qhi || qhi > MAX_QUERIES {
            return bad("query range must lie within 1..=7");
        }
        if self.distractor_range.0 > self.distractor_range.1 {
            return bad("empty distractor range");
        }
        if self.points_per_object < 8 {
            return bad("need at least 8 points per object");
        }
        if self.class_pool_size < 3 {
            return bad("class pool needs at least 3 classes");
        }
        if self.max_tries == 0 || self.retry_budget == 0 {
            return bad("try budgets must be positive");
        }
        Ok(())
    }
}

/// Uniform collision-free poses on the table for `shapes`, avoiding
/// `obstacles` and each other. Each object gets up to `max_tries` draws.
pub fn scatter_initial(
    shapes: &[PrimitiveShape],
    obstacles: &[(PrimitiveShape, Pose)],
    table: &TableBounds,
    rng: &mut Rng,
    max_tries: usize,
) -> Result<Vec<Pose>> {
    let area: f64 = shapes.iter().chain(obstacles.iter().map(|(s, _)| s)).map(|s| s.footprint_area()).sum();
    if area > 0.6 * table.area() {
        return Err(Error::Generation("objects cover too much of the table".into()));
    }
    let mut placed: Vec<(PrimitiveShape, Pose)> = obstacles.to_vec();
    let mut out = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let r = shape.footprint_radius();
        if table.lo[0] + r >= table.hi[0] - r || table.lo[1] + r >= table.hi[1] - r {
            return Err(Error::Generation("object wider than the table".into()));
        }
        let mut found = None;
        for _ in 0..max_tries {
            let x = rng.random_range(table.lo[0] + r..table.hi[0] - r);
            let y = rng.random_range(table.lo[1] + r..table.hi[1] - r);
            let yaw = rng.random_range(-PI..PI);
            let pose = Pose::from_yaw([x, y, shape.height() / 2.0], yaw);
            if placed.iter().all(|(s, p)| !footprint_overlap(shape, &pose, s, p)) {
                found = Some(pose);
                break;
            }
        }
        let pose = found.ok_or(Error::Placement { tries: max_tries })?;
        placed.push((*shape, pose));
        out.push(pose);
    }
    Ok(out)
}

struct Draft {
    class: ObjectClass,
    material: Material,
    color: Color,
    shape: PrimitiveShape,
}

impl Draft {
    fn attrs(&self) -> ObjectAttrs {
        ObjectAttrs {
            id: u32::MAX,
            class: self.class,
            material: self.material,
            color: self.color,
            height: self.shape.height(),
            volume: self.shape.volume(),
        }
    }

    fn set(&mut self, f: Feature) {
        match f {
            Feature::Class(c) => self.class = c,
            Feature::Material(m) => self.material = m,
            Feature::Color(c) => self.color = c,
        }
    }
}

const DRAFT_TRIES: usize = 300;
/// Relative margin keeping generated comparisons away from the relation
/// boundaries.
const COMPARISON_MARGIN: f64 = 0.03;

struct Drafter<'a> {
    lib: &'a ObjectLibrary,
    pool: Vec<ObjectClass>,
}

impl Drafter<'_> {
    fn random(&self, rng: &mut Rng) -> Draft {
        let class = *self.pool.choose(rng).expect("non-empty pool");
        self.with_class(class, rng)
    }

    fn with_class(&self, class: ObjectClass, rng: &mut Rng) -> Draft {
        let material = *Material::ALL.choose(rng).expect("non-empty");
        let color = *Color::ALL.choose(rng).expect("non-empty");
        Draft { class, material, color, shape: self.lib.sample_shape(class, rng) }
    }

    /// A random draft, reshaped after fixing the features so the shape
    /// always matches the final class.
    fn with_features(&self, fs: &[Feature], rng: &mut Rng) -> Draft {
        let mut d = self.random(rng);
        for f in fs {
            d.set(*f);
        }
        d.shape = self.lib.sample_shape(d.class, rng);
        d
    }

    fn until(&self, rng: &mut Rng, what: &str, mut make: impl FnMut(&mut Rng) -> Draft, ok: impl Fn(&Draft) -> bool) -> Result<Draft> {
        for _ in 0..DRAFT_TRIES {
            let d = make(rng);
            if ok(&d) {
                return Ok(d);
            }
        }
        Err(Error::Generation(format!("could not draft a {what}")))
    }
}

fn matches_all(fs: &[Feature], a: &ObjectAttrs) -> bool {
    fs.iter().all(|f| f.matches(a))
}

/// Drafts (queries, stationary objects) for a referring expression.
fn draft_for_refexpr(
    d: &Drafter,
    expr: &ReferringExpression,
    n_queries: usize,
    n_distractors: usize,
    rng: &mut Rng,
) -> Result<(Vec<Draft>, Vec<Draft>)> {
    let mut queries = Vec::new();
    let mut stationary = Vec::new();
    match expr {
        ReferringExpression::Direct { features } => {
            for _ in 0..n_queries {
                queries.push(d.with_features(features, rng));
            }
            for _ in 0..n_distractors {
                stationary.push(d.until(rng, "distractor", |r| d.random(r), |x| !matches_all(features, &x.attrs()))?);
            }
        }
        ReferringExpression::AnchorRelational { shared, anchor } => {
            let a = d.with_features(anchor, rng);
            let value = Feature::of(*shared, &a.attrs());
            for _ in 0..n_queries {
                let q = d.until(
                    rng,
                    "query",
                    |r| {
                        let mut x = d.random(r);
                        x.set(value);
                        if *shared == AttrKind::Class {
                            x.shape = d.lib.sample_shape(x.class, r);
                        }
                        x
                    },
                    |x| !matches_all(anchor, &x.attrs()),
                )?;
                queries.push(q);
            }
            for _ in 0..n_distractors {
                stationary.push(d.until(
                    rng,
                    "distractor",
                    |r| d.random(r),
                    |x| !matches_all(anchor, &x.attrs()) && !value.matches(&x.attrs()),
                )?);
            }
            stationary.push(a);
        }
        ReferringExpression::ContinuousComparison { dimension, relate, anchor } => {
            let a = d.with_features(anchor, rng);
            let av = dimension.of(&a.attrs());
            let lo = 1.0 - COMPARISON_MARGIN;
            let hi = 1.0 + COMPARISON_MARGIN;
            for _ in 0..n_queries {
                queries.push(d.until(
                    rng,
                    "query",
                    |r| d.random(r),
                    |x| {
                        let (xa, v) = (x.attrs(), dimension.of(&x.attrs()));
                        !matches_all(anchor, &xa) && relate_holds(*relate, v * lo, av) && relate_holds(*relate, v * hi, av)
                    },
                )?);
            }
            for _ in 0..n_distractors {
                stationary.push(d.until(
                    rng,
                    "distractor",
                    |r| d.random(r),
                    |x| {
                        let (xa, v) = (x.attrs(), dimension.of(&x.attrs()));
                        !matches_all(anchor, &xa) && !relate_holds(*relate, v * lo, av) && !relate_holds(*relate, v * hi, av)
                    },
                )?);
            }
            stationary.push(a);
        }
    }
    Ok((queries, stationary))
}

fn pick_weighted(rng: &mut Rng, weights: &[f64; 4]) -> StructureShape {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return StructureShape::ALL[i];
        }
        u -= w;
    }
    StructureShape::ALL[weights.iter().rposition(|w| *w > 0.0).expect("positive weight")]
}

/// One generation attempt from a fresh RNG.
fn attempt(
    seed: u64,
    shape: StructureShape,
    rng: &mut Rng,
    config: &GenConfig,
    lib: &ObjectLibrary,
    vocab: &Vocabulary,
) -> Result<RearrangementExample> {
    let params = StructureParams {
        shape,
        size: *SizeClass::ALL.choose(rng).expect("non-empty"),
        hpos: *HPos::ALL.choose(rng).expect("non-empty"),
        vpos: *VPos::ALL.choose(rng).expect("non-empty"),
        rotation: *Heading::ALL.choose(rng).expect("non-empty"),
    };
    let (dlo, dhi) = config.distractor_range;
    let (queries, stationary, refexpr) = if shape == StructureShape::TableSetting {
        let non_roles: Vec<ObjectClass> = ObjectClass::all().filter(|c| !is_table_role(*c)).collect();
        let drafter = Drafter { lib, pool: non_roles };
        let queries: Vec<Draft> = TABLE_ROLES
            .iter()
            .map(|r| drafter.with_class(ObjectClass::from_name(r).expect("role class"), rng))
            .collect();
        let n_d = rng.random_range(dlo..=dhi).min(MAX_OBJECTS - queries.len());
        let stationary = (0..n_d).map(|_| drafter.random(rng)).collect();
        (queries, stationary, None)
    } else {
        let all: Vec<ObjectClass> = ObjectClass::all().collect();
        let pool: Vec<ObjectClass> = all.choose_multiple(rng, config.class_pool_size).copied().collect();
        let expr = sample_refexpr(rng, &pool)?;
        let (qlo, qhi) = config.query_range;
        let n_q = rng.random_range(qlo..=qhi);
        let anchor = usize::from(expr.anchor().is_some());
        let n_d = rng.random_range(dlo..=dhi).min(MAX_OBJECTS - n_q - anchor);
        let drafter = Drafter { lib, pool };
        let (q, s) = draft_for_refexpr(&drafter, &expr, n_q, n_d, rng)?;
        (q, s, Some(expr))
    };
    let instruction = Instruction::new(vocab, params, refexpr)?;

    let q_objs: Vec<(ObjectClass, PrimitiveShape)> = queries.iter().map(|d| (d.class, d.shape)).collect();
    let (size_lo, size_hi) = size_range(shape, params.size);
    let size_value = if size_hi > size_lo { rng.random_range(size_lo..size_hi) } else { size_lo };
    let (order, local) = local_layout(shape, size_value, &q_objs)?;
    let position = sample_position(&params, &q_objs, &order, &local, &config.table, rng)?;
    let spec = StructureSpec { params, size_value, position };
    let structure = synthesize_structure(&spec, &q_objs, &config.table)?;

    let goal_obstacles: Vec<(PrimitiveShape, Pose)> =
        structure.order.iter().zip(&structure.goals).map(|(&i, g)| (q_objs[i].1, *g)).collect();
    let s_shapes: Vec<PrimitiveShape> = stationary.iter().map(|d| d.shape).collect();
    let s_init = scatter_initial(&s_shapes, &goal_obstacles, &config.table, rng, config.max_tries)?;
    let s_placed: Vec<(PrimitiveShape, Pose)> = s_shapes.iter().copied().zip(s_init.iter().copied()).collect();
    let ordered_shapes: Vec<PrimitiveShape> = structure.order.iter().map(|&i| q_objs[i].1).collect();
    let q_init = scatter_initial(&ordered_shapes, &s_placed, &config.table, rng, config.max_tries)?;

    // Boxes keep the goal heading modulo their half-turn symmetry closest to
    // the initial yaw; round objects keep their initial rotation.
    let goals: Vec<Pose> = structure
        .goals
        .iter()
        .zip(&q_init)
        .zip(&ordered_shapes)
        .map(|((g, init), s)| {
            if s.is_round() {
                Pose::new(g.t, init.r)
            } else {
                let base = yaw_of(&g.r);
                let iy = yaw_of(&init.r);
                let flip = math::wrap_angle(base + PI - iy).abs() < math::wrap_angle(base - iy).abs();
                Pose::new(g.t, rot_z(if flip { math::wrap_angle(base + PI) } else { base }))
            }
        })
        .collect();

    // Assemble in shuffled order so object index carries no role.
    struct Entry<'a> {
        draft: &'a Draft,
        init: Pose,
        goal: Option<(Pose, u32)>,
    }
    let mut entries: Vec<Entry> = Vec::new();
    for (k, &i) in structure.order.iter().enumerate() {
        entries.push(Entry { draft: &queries[i], init: q_init[k], goal: Some((goals[k], k as u32 + 1)) });
    }
    for (d, p) in stationary.iter().zip(&s_init) {
        entries.push(Entry { draft: d, init: *p, goal: None });
    }
    entries.shuffle(rng);
    let objects: Vec<SceneObject> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| SceneObject {
            id: i as u32,
            class: e.draft.class,
            material: e.draft.material,
            color: e.draft.color,
            shape: e.draft.shape,
            initial_pose: e.init,
            goal_pose: e.goal.map(|g| g.0),
            is_query: e.goal.is_some(),
            query_order: e.goal.map(|g| g.1),
        })
        .collect();

    let mut points = Vec::new();
    let mut segment_ids = Vec::new();
    for o in &objects {
        let c = sample_surface(&o.shape, &o.initial_pose, config.points_per_object, config.partial_view, o.id, rng)?;
        points.extend(c.points);
        segment_ids.extend(c.segment_ids);
    }

    let mut ex = RearrangementExample {
        seed,
        objects,
        instruction,
        spec,
        structure_frame: structure.frame,
        deltas: Vec::new(),
        cloud: PointCloud { points, segment_ids },
    };
    let q = ex.query_indices();
    let init: Vec<Pose> = q.iter().map(|&i| ex.objects[i].initial_pose).collect();
    let goal: Vec<Pose> = q.iter().map(|&i| ex.objects[i].goal_pose.expect("query")).collect();
    ex.deltas = extract_deltas(&ex.structure_frame, &init, &goal)?;
    check_goal_scene(&ex)?;
    if instruction_query_set(&ex.instruction, &ex.attrs())? != ex.query_ids() {
        return Err(Error::Generation("grounded query set differs from the designated queries".into()));
    }
    Ok(ex)
}

/// Goal scene (queries at goals, others at initial poses) is collision free
/// and, for towers, stable level by level.
pub fn check_goal_scene(ex: &RearrangementExample) -> Result<()> {
    let placed: Vec<(PrimitiveShape, Pose)> =
        ex.objects.iter().map(|o| (o.shape, o.goal_pose.unwrap_or(o.initial_pose))).collect();
    for a in 0..placed.len() {
        for b in a + 1..placed.len() {
            if footprint_overlap(&placed[a].0, &placed[a].1, &placed[b].0, &placed[b].1) {
                return Err(Error::Generation(format!("goal scene collision between {a} and {b}")));
            }
        }
    }
    if ex.shape() == StructureShape::Tower {
        let q = ex.query_indices();
        for w in q.windows(2) {
            let (s, t) = (&placed[w[0]], &placed[w[1]]);
            if !stable_on(&t.0, &t.1, &s.0, &s.1, None) {
                return Err(Error::Generation("unstable tower level".into()));
            }
        }
    }
    Ok(())
}

/// Generates one example, retrying failed attempts with derived seeds.
pub fn generate_example(seed: u64, config: &GenConfig, lib: &ObjectLibrary, vocab: &Vocabulary) -> Result<RearrangementExample> {
    config.validate()?;
    // The structure type is fixed per example so retries keep the weights.
    let shape = pick_weighted(&mut rng_from_seed(seed), &config.structure_weights);
    let mut last = None;
    for k in 0..config.retry_budget {
        let mut rng = rng_from_seed(derive_seed(seed, k as u64));
        match attempt(seed, shape, &mut rng, config, lib, vocab) {
            Ok(ex) => return Ok(ex),
            Err(e @ (Error::Infeasible(_) | Error::Placement { .. } | Error::Generation(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "retry budget of {} exhausted; last failure: {}",
        config.retry_budget,
        last.map(|e| alloc::string::ToString::to_string(&e)).unwrap_or_default()
    )))
}

/// Per-example seed for index `i` of a dataset rooted at `master_seed`.
pub fn example_seed(master_seed: u64, index: u64) -> u64 {
    derive_seed(master_seed ^ 0x5CE9_E9E9, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(seed: u64, config: &GenConfig) -> RearrangementExample {
        generate_example(seed, config, &ObjectLibrary::standard(), &Vocabulary::standard()).unwrap()
    }

    #[test]
    fn examples_satisfy_invariants() {
        let vocab = Vocabulary::standard();
        let config = GenConfig::default();
        let mut seen = [0usize; 4];
        for s in 0..150 {
            let ex = gen(example_seed(1, s), &config);
            ex.validate(&vocab).unwrap();
            assert!(ex.reversal_error().unwrap() < 1e-9);
            check_goal_scene(&ex).unwrap();
            assert_eq!(instruction_query_set(&ex.instruction, &ex.attrs()).unwrap(), ex.query_ids());
            assert!(ex.objects.len() <= MAX_OBJECTS);
            for o in &ex.objects {
                assert!(config.table.contains(&o.shape, &o.initial_pose));
                if let Some(g) = o.goal_pose {
                    assert!(config.table.contains(&o.shape, &g));
                }
            }
            seen[ex.shape().index()] += 1;
        }
        assert!(seen.iter().all(|&c| c > 10), "{seen:?}");
    }

    #[test]
    fn generation_is_reproducible() {
        let config = GenConfig::default();
        assert_eq!(gen(42, &config), gen(42, &config));
        assert_ne!(gen(42, &config), gen(43, &config));
    }

    #[test]
    fn structure_filter_is_respected() {
        let config = GenConfig::default().with_structures(&[StructureShape::Circle, StructureShape::Line]);
        for s in 0..30 {
            let k = gen(s, &config).shape();
            assert!(matches!(k, StructureShape::Circle | StructureShape::Line));
        }
    }

    #[test]
    fn single_box_scatters_first_try() {
        let mut rng = rng_from_seed(0);
        let b = PrimitiveShape::Box { w: 0.05, d: 0.05, h: 0.05 };
        let p = scatter_initial(&[b], &[], &TableBounds::default(), &mut rng, 1).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn crowded_table_fails() {
        let mut rng = rng_from_seed(0);
        let b = PrimitiveShape::Box { w: 0.45, d: 0.45, h: 0.05 };
        assert!(scatter_initial(&[b; 4], &[], &TableBounds::default(), &mut rng, 100).is_err());
    }

    #[test]
    fn delta_roundtrip() {
        let mut rng = rng_from_seed(8);
        let frame = Pose::new([0.3, 0.4, 0.0], rot_z(0.3));
        let init: Vec<Pose> =
            (0..4).map(|_| Pose::new([rng.random(), rng.random(), 0.05], crate::geometry::random_rotation(&mut rng))).collect();
        let goals: Vec<Pose> =
            (0..4).map(|_| Pose::new([rng.random(), rng.random(), 0.05], crate::geometry::random_rotation(&mut rng))).collect();
        let d = extract_deltas(&frame, &init, &goals).unwrap();
        let back = apply_deltas(&PoseOffset::from_pose(&frame).unwrap(), &init, &d).unwrap();
        for (b, g) in back.iter().zip(&goals) {
            for k in 0..3 {
                assert!((b.t[k] - g.t[k]).abs() < 1e-9);
            }
            assert!(crate::geometry::pose::frobenius_diff(&b.r, &g.r) < 1e-9);
        }
    }
}
