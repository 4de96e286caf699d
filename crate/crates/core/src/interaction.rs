//! Cross-modality feature interaction.
//!
//! For the image branch, `R_{3D→2D} = softmax(K_2D·V_3Dᵀ / √F)·V_2D` and
//! `f̂_2D = FFN(Norm(f_2D ⊙ R_{3D→2D}))`; the point branch is the mirror
//! image. The key-times-value score matrix is used as the default. Queries
//! are still projected and drive the alternative [`AttentionMode::QueryKey`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var, NORM_EPS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionVariant {
    #[default]
    Symmetric,
    /// Only `f̂_3D` is computed; `f_2D` passes through.
    TwoDToThreeD,
    /// Only `f̂_2D` is computed; `f_3D` passes through.
    ThreeDToTwoD,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Multiply,
    Add,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiply" => Ok(FusionMode::Multiply),
            "add" => Ok(FusionMode::Add),
            other => Err(Error::arg(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// `A = K_a·V_bᵀ`, values from the receiving branch.
    #[default]
    KeyValue,
    /// `A = Q_a·K_bᵀ`, values from the sending branch.
    QueryKey,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    pub variant: InteractionVariant,
    pub fusion: FusionMode,
    pub attention: AttentionMode,
}

/// Per-modality projection, normalisation and feed-forward weights.
#[derive(Clone, Debug)]
pub struct BranchParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
}

impl BranchParams {
    fn init(store: &mut ParamStore, name: &str, f: usize, rng: &mut impl Rng) -> Self {
        // std 1/√F keeps K·Vᵀ/√F in a moderate range
        let proj = |store: &mut ParamStore, which: &str, rng: &mut _| {
            store.add_normal(format!("{name}.w{which}"), f, f, 2 * f, rng)
        };
        BranchParams {
            wq: proj(store, "q", rng),
            wk: proj(store, "k", rng),
            wv: proj(store, "v", rng),
            norm_scale: store.add(format!("{name}.norm.scale"), Matrix::filled(1, f, 1.0)),
            norm_shift: store.add_zeros(format!("{name}.norm.shift"), 1, f),
            ffn_w1: store.add_normal(format!("{name}.ffn1.w"), f, 2 * f, f, rng),
            ffn_b1: store.add_zeros(format!("{name}.ffn1.b"), 1, 2 * f),
            ffn_w2: store.add_normal(format!("{name}.ffn2.w"), 2 * f, f, 2 * f, rng),
            ffn_b2: store.add_zeros(format!("{name}.ffn2.b"), 1, f),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.wq,
            self.wk,
            self.wv,
            self.norm_scale,
            self.norm_shift,
            self.ffn_w1,
            self.ffn_b1,
            self.ffn_w2,
            self.ffn_b2,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct InteractionParams {
    pub two_d: BranchParams,
    pub three_d: BranchParams,
    pub features: usize,
}

impl InteractionParams {
    pub fn init(store: &mut ParamStore, features: usize, rng: &mut impl Rng) -> Self {
        InteractionParams {
            two_d: BranchParams::init(store, "inter2d", features, rng),
            three_d: BranchParams::init(store, "inter3d", features, rng),
            features,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.two_d.param_ids();
        ids.extend(self.three_d.param_ids());
        ids
    }

    /// Same weights with the modality roles exchanged.
    pub fn swapped(&self) -> Self {
        InteractionParams {
            two_d: self.three_d.clone(),
            three_d: self.two_d.clone(),
            features: self.features,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Qkv {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// Row-wise projections `q^i = W^q f^i` (likewise K and V).
pub fn qkv(tape: &mut Tape, store: &ParamStore, f: Var, branch: &BranchParams) -> Result<Qkv> {
    let mut project = |id: ParamId| -> Result<Var> {
        let w = tape.param(store, id);
        tape.matmul_t(f, false, w, true)
    };
    Ok(Qkv {
        q: project(branch.wq)?,
        k: project(branch.wk)?,
        v: project(branch.wv)?,
    })
}

/// `softmax(K_a·V_bᵀ / √F)·V_a`.
pub fn cross_relation(tape: &mut Tape, k_a: Var, v_b: Var, v_a: Var) -> Result<Var> {
    let (sk, sb, sa) = (tape.value(k_a).shape(), tape.value(v_b).shape(), tape.value(v_a).shape());
    if sk != sb || sk != sa {
        return Err(Error::shape(format!(
            "cross_relation needs equal shapes, got {sk:?}, {sb:?}, {sa:?}"
        )));
    }
    let scale = (sk.1 as f64).sqrt();
    let scores = tape.matmul_t(k_a, false, v_b, true)?;
    let attn = tape.softmax_rows(scores, scale)?;
    tape.matmul(attn, v_a)
}

/// Matrix-level wrapper of [`cross_relation`].
pub fn cross_relation_values(k_a: &Matrix, v_b: &Matrix, v_a: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::inference();
    let (k, vb, va) = (
        tape.constant(k_a.clone()),
        tape.constant(v_b.clone()),
        tape.constant(v_a.clone()),
    );
    let r = cross_relation(&mut tape, k, vb, va)?;
    Ok(tape.value(r).clone())
}

/// `FFN(Norm(f ⊙ R))` or `FFN(Norm(f + R))`, per point.
pub fn fuse(
    tape: &mut Tape,
    store: &ParamStore,
    f: Var,
    r: Var,
    branch: &BranchParams,
    mode: FusionMode,
) -> Result<Var> {
    let mixed = match mode {
        FusionMode::Multiply => tape.mul(f, r)?,
        FusionMode::Add => tape.add(f, r)?,
    };
    let normed = tape.layer_norm(mixed, NORM_EPS);
    let scale = tape.param(store, branch.norm_scale);
    let shift = tape.param(store, branch.norm_shift);
    let normed = tape.mul_row(normed, scale)?;
    let normed = tape.add_row(normed, shift)?;
    let (w1, b1) = (tape.param(store, branch.ffn_w1), tape.param(store, branch.ffn_b1));
    let h = tape.matmul(normed, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let (w2, b2) = (tape.param(store, branch.ffn_w2), tape.param(store, branch.ffn_b2));
    let out = tape.matmul(h, w2)?;
    tape.add_row(out, b2)
}

/// Relation received by branch `a` from branch `b`.
fn relation(tape: &mut Tape, a: &Qkv, b: &Qkv, mode: AttentionMode) -> Result<Var> {
    match mode {
        AttentionMode::KeyValue => cross_relation(tape, a.k, b.v, a.v),
        AttentionMode::QueryKey => cross_relation(tape, a.q, b.k, b.v),
    }
}

/// Enhanced `(f̂_2D, f̂_3D)` for the chosen variant.
pub fn interact(
    tape: &mut Tape,
    store: &ParamStore,
    params: &InteractionParams,
    f2d: Var,
    f3d: Var,
    config: &InteractionConfig,
) -> Result<(Var, Var)> {
    let (s2, s3) = (tape.value(f2d).shape(), tape.value(f3d).shape());
    if s2 != s3 || s2.1 != params.features {
        return Err(Error::shape(format!(
            "interaction expects two Nx{} matrices, got {s2:?} and {s3:?}",
            params.features
        )));
    }
    if config.variant == InteractionVariant::None {
        return Ok((f2d, f3d));
    }
    let p2 = qkv(tape, store, f2d, &params.two_d)?;
    let p3 = qkv(tape, store, f3d, &params.three_d)?;
    let out2d = match config.variant {
        InteractionVariant::Symmetric | InteractionVariant::ThreeDToTwoD => {
            let r = relation(tape, &p2, &p3, config.attention)?;
            fuse(tape, store, f2d, r, &params.two_d, config.fusion)?
        }
        _ => f2d,
    };
    let out3d = match config.variant {
        InteractionVariant::Symmetric | InteractionVariant::TwoDToThreeD => {
            let r = relation(tape, &p3, &p2, config.attention)?;
            fuse(tape, store, f3d, r, &params.three_d, config.fusion)?
        }
        _ => f3d,
    };
    Ok((out2d, out3d))
}

/// Matrix-level wrapper of [`interact`].
pub fn interact_values(
    store: &ParamStore,
    params: &InteractionParams,
    f2d: &Matrix,
    f3d: &Matrix,
    config: &InteractionConfig,
) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::inference();
    let (a, b) = (tape.constant(f2d.clone()), tape.constant(f3d.clone()));
    let (x, y) = interact(&mut tape, store, params, a, b, config)?;
    Ok((tape.value(x).clone(), tape.value(y).clone()))
}
