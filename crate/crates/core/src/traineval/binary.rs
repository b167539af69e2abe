//! Pairwise baseline: places one object at a time next to the previously
//! placed one, seeing only the scene around that anchor.

use alloc::format;
use alloc::vec::Vec;

use crate::geometry::pose::{distance, mat_mul, transpose};
use crate::geometry::{Pose, Vec3};
use crate::model::{featurize_points, Embedder, ModelConfig, DELTA_DIM, MIN_POINTS, POINT_FEATURES};
use crate::rng::{derive_seed, Rng};
use crate::scenegen::{PoseOffset, RearrangementExample};
use crate::tensor::{AttnMask, DropoutRng, EncoderLayer, Linear, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Radius of the scene neighborhood around the anchor object.
pub const NEIGHBORHOOD: f64 = 0.5;

const TYPE_WORD: usize = 0;
const TYPE_ANCHOR: usize = 1;
const TYPE_CONTEXT: usize = 2;
const TYPE_TARGET: usize = 3;

type Cloud = Vec<[f64; POINT_FEATURES]>;

/// Network input for one placement step.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryInput {
    pub tokens: Vec<u32>,
    /// Previously placed object, absent on the first step.
    pub anchor: Option<Cloud>,
    /// Other objects' points: the whole scene on the first step, otherwise
    /// only points near the anchor.
    pub context: Vec<Cloud>,
    pub target: Cloud,
}

/// Points of object `i` with the object at `pose`.
fn cloud_at(ex: &RearrangementExample, i: usize, pose: &Pose) -> Vec<Vec3> {
    let o = &ex.objects[i];
    let delta = pose.compose(&o.initial_pose.inverse());
    ex.segment(o.id).into_iter().map(|p| delta.apply(p)).collect()
}

fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    c
}

/// Input for placing `order[step]`, with `order[..step]` already at `placed`.
pub fn binary_input(ex: &RearrangementExample, order: &[usize], placed: &[Pose], step: usize) -> Result<BinaryInput> {
    if step >= order.len() || placed.len() < step {
        return Err(Error::Model(format!("step {step} of {} with {} placed", order.len(), placed.len())));
    }
    let n = ex.objects.len();
    let pose_of = |i: usize| match order[..step].iter().position(|&j| j == i) {
        Some(k) => placed[k],
        None => ex.objects[i].initial_pose,
    };
    let feat = |i: usize, pts: &[Vec3]| featurize_points(pts, ex.objects[i].color, ex.objects[i].material);
    let target = order[step];
    let target_cloud = feat(target, &cloud_at(ex, target, &ex.objects[target].initial_pose));
    let (anchor, context) = if step == 0 {
        let ctx = (0..n)
            .filter(|&i| i != target)
            .map(|i| feat(i, &cloud_at(ex, i, &pose_of(i))))
            .collect();
        (None, ctx)
    } else {
        let a = order[step - 1];
        let a_pts = cloud_at(ex, a, &pose_of(a));
        let c = centroid(&a_pts);
        let mut ctx = Vec::new();
        for i in (0..n).filter(|&i| i != target && i != a) {
            let near: Vec<Vec3> = cloud_at(ex, i, &pose_of(i)).into_iter().filter(|p| distance(*p, c) <= NEIGHBORHOOD).collect();
            if near.len() >= MIN_POINTS {
                ctx.push(feat(i, &near));
            }
        }
        (Some(feat(a, &a_pts)), ctx)
    };
    Ok(BinaryInput { tokens: ex.instruction.tokens.clone(), anchor, context, target: target_cloud })
}

/// World-frame target for `order[step]` in network units.
pub fn binary_target(ex: &RearrangementExample, i: usize, translation_scale: f64) -> [f64; DELTA_DIM] {
    let o = &ex.objects[i];
    let g = o.goal_pose.unwrap_or(o.initial_pose);
    let r_off = mat_mul(&g.r, &transpose(&o.initial_pose.r));
    let off = PoseOffset::from_pose(&Pose::new(g.t, r_off)).expect("rotation");
    let mut f = off.features();
    for v in &mut f[..3] {
        *v *= translation_scale;
    }
    f
}

#[derive(Clone, Debug)]
pub struct BinaryNet {
    pub config: ModelConfig,
    embed: Embedder,
    layers: Vec<EncoderLayer>,
    head: Linear,
}

impl BinaryNet {
    /// Uses four token types: word, anchor, context, target.
    pub fn new(config: &ModelConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let config = ModelConfig { n_types: 4, ..config.clone() };
        config.validate()?;
        Ok(Self {
            embed: Embedder::new(store, "bin.embed", &config, rng),
            layers: (0..config.enc_layers)
                .map(|i| EncoderLayer::new(store, &format!("bin.enc{i}"), config.d_model, config.heads, rng))
                .collect(),
            head: Linear::new(store, "bin.head", config.d_model, DELTA_DIM, rng),
            config,
        })
    }

    /// `1 × 9` prediction read at the target row.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &BinaryInput, drop: Option<&DropoutRng>) -> Result<Var> {
        let m = input.tokens.len();
        if m != self.config.seq_len {
            return Err(Error::Model(format!("expected {} tokens, got {m}", self.config.seq_len)));
        }
        let mut clouds: Vec<&[[f64; POINT_FEATURES]]> = Vec::new();
        let mut types = Vec::new();
        if let Some(a) = &input.anchor {
            clouds.push(a);
            types.push(TYPE_ANCHOR);
        }
        for c in &input.context {
            clouds.push(c);
            types.push(TYPE_CONTEXT);
        }
        clouds.push(&input.target);
        types.push(TYPE_TARGET);
        let rows = m + clouds.len();
        if rows > self.config.positions() {
            return Err(Error::Model(format!("{rows} input rows exceed {} positions", self.config.positions())));
        }
        let words = self.embed.word_rows(tape, store, &input.tokens, TYPE_WORD)?;
        let positions: Vec<usize> = (m..rows).collect();
        let objs = self.embed.object_rows(tape, store, &clouds, &positions, &types)?;
        let mut h = tape.vcat(&[words, objs])?;
        for l in &self.layers {
            h = l.forward(tape, store, h, &AttnMask::None, drop)?;
        }
        let last = tape.rows(h, &[rows - 1])?;
        self.head.forward(tape, store, last)
    }

    /// Teacher-forced loss for one step with ground-truth earlier placements.
    pub fn step_loss(&self, tape: &mut Tape, store: &ParamStore, ex: &RearrangementExample, step: usize, drop: Option<&DropoutRng>) -> Result<Var> {
        let order = ex.query_indices();
        let placed: Vec<Pose> = order[..step].iter().map(|&i| ex.objects[i].goal_pose.expect("query")).collect();
        let input = binary_input(ex, &order, &placed, step)?;
        let pred = self.forward(tape, store, &input, drop)?;
        let target = tape.constant(&[1, DELTA_DIM], binary_target(ex, order[step], self.config.translation_scale).to_vec())?;
        tape.l2_loss(pred, target)
    }

    fn to_offset(&self, raw: &[f64]) -> Result<PoseOffset> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("binary baseline output".into()));
        }
        let s = self.config.translation_scale;
        let f = PoseOffset::from_features(raw);
        let m = f.matrix()?;
        Ok(PoseOffset { t: [raw[0] / s, raw[1] / s, raw[2] / s], rotation: crate::geometry::matrix_to_rot6d(&m)? })
    }

    /// Places `order` one object at a time, each step anchored on the
    /// previous prediction. Offsets are world-frame.
    pub fn rollout(&self, store: &ParamStore, ex: &RearrangementExample, order: &[usize], p: f64, seed: u64) -> Result<Vec<PoseOffset>> {
        let mut placed = Vec::new();
        let mut out = Vec::new();
        for step in 0..order.len() {
            let input = binary_input(ex, order, &placed, step)?;
            let drop = (p > 0.0).then(|| DropoutRng::new(derive_seed(seed, step as u64), p));
            let mut tape = Tape::new();
            let y = self.forward(&mut tape, store, &input, drop.as_ref())?;
            let off = self.to_offset(tape.value(y))?;
            let i = order[step];
            placed.push(Pose::new(off.t, mat_mul(&off.matrix()?, &ex.objects[i].initial_pose.r)));
            out.push(off);
        }
        Ok(out)
    }
}
