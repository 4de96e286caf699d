//! Point-to-pixel projection and the toy image / point encoders with their
//! segmentation heads.
//!
//! The image branch is two 3×3 convolutions (widths 8 and F) with ReLU. The
//! second convolution is only evaluated at the pixels hit by projected points,
//! which yields exactly the rows a dense feature map would give under
//! nearest-cell lookup. The point branch is a per-point two-layer MLP whose
//! output is concatenated with its mean over the frame and mapped back to F.

use rand::Rng;

use crate::error::{Error, Result};
use crate::frame::{Calibration, Frame};
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

/// Hidden width of the first image convolution.
pub const CONV1_WIDTH: usize = 8;
/// Hidden width of the point MLP.
pub const POINT_HIDDEN: usize = 16;
/// Metres-to-input scaling for point coordinates.
pub const POINT_SCALE: f64 = 0.1;

/// Result of projecting a point cloud into the front camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Sub-pixel `(u, v)` coordinates of the kept points.
    pub coords: Vec<[f64; 2]>,
    /// Indices into the input points, strictly increasing.
    pub kept: Vec<usize>,
}

impl Projection {
    /// Integer `(column, row)` cell of each kept point.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.coords
            .iter()
            .map(|c| (c[0].floor() as usize, c[1].floor() as usize))
            .collect()
    }
}

/// Pinhole projection; drops points behind the camera or outside the image.
pub fn project_points(
    points: &[[f64; 3]],
    calib: &Calibration,
    image_size: (usize, usize),
) -> Result<Projection> {
    calib.validate()?;
    let (height, width) = image_size;
    let mut coords = Vec::new();
    let mut kept = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let c = calib.to_camera(p);
        if c[2] <= 0.0 {
            continue;
        }
        let u = calib.fx * c[0] / c[2] + calib.cx;
        let v = calib.fy * c[1] / c[2] + calib.cy;
        if u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64 {
            coords.push([u, v]);
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyProjection);
    }
    Ok(Projection { coords, kept })
}

/// A frame reduced to the aligned inputs both branches consume.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub id: u64,
    pub height: usize,
    pub width: usize,
    /// `(H·W)×3` image with one row per pixel.
    pub image: Matrix,
    /// Pixel index `row·W + col` for each kept point.
    pub pixels: Vec<usize>,
    /// Kept points, N×3.
    pub points: Matrix,
    pub labels: Vec<Option<usize>>,
    /// Index of each kept point in the original frame.
    pub point_index: Vec<usize>,
}

impl PreparedFrame {
    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let proj = project_points(&frame.points, &frame.calibration, (frame.height, frame.width))?;
        let pixels = proj
            .cells()
            .into_iter()
            .map(|(u, v)| v * frame.width + u)
            .collect();
        let mut pts = Vec::with_capacity(proj.kept.len() * 3);
        for &i in &proj.kept {
            pts.extend_from_slice(&frame.points[i]);
        }
        Ok(PreparedFrame {
            id: frame.id,
            height: frame.height,
            width: frame.width,
            image: Matrix::from_vec(frame.height * frame.width, 3, frame.image.clone())?,
            pixels,
            points: Matrix::from_vec(proj.kept.len(), 3, pts)?,
            labels: proj.kept.iter().map(|&i| frame.labels[i]).collect(),
            point_index: proj.kept,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Restricts to the listed kept-point rows (order preserved).
    pub fn subset(&self, rows: &[usize]) -> PreparedFrame {
        PreparedFrame {
            id: self.id,
            height: self.height,
            width: self.width,
            image: self.image.clone(),
            pixels: rows.iter().map(|&r| self.pixels[r]).collect(),
            points: self.points.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            point_index: rows.iter().map(|&r| self.point_index[r]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder2d {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub features: usize,
}

impl Encoder2d {
    pub fn init(store: &mut ParamStore, features: usize, rng: &mut impl Rng) -> Self {
        Encoder2d {
            conv1_w: store.add_normal("enc2d.conv1.w", 27, CONV1_WIDTH, 27, rng),
            conv1_b: store.add_zeros("enc2d.conv1.b", 1, CONV1_WIDTH),
            conv2_w: store.add_normal("enc2d.conv2.w", 9 * CONV1_WIDTH, features, 9 * CONV1_WIDTH, rng),
            conv2_b: store.add_zeros("enc2d.conv2.b", 1, features),
            features,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b]
    }

    /// Features at the given pixel indices, one row each.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        image: Var,
        height: usize,
        width: usize,
        pixels: &[usize],
    ) -> Result<Var> {
        if let Some(&bad) = pixels.iter().find(|&&p| p >= height * width) {
            return Err(Error::Bounds {
                u: bad % width.max(1),
                v: bad / width.max(1),
                width,
                height,
            });
        }
        let all: Vec<usize> = (0..height * width).collect();
        let w1 = tape.param(store, self.conv1_w);
        let b1 = tape.param(store, self.conv1_b);
        let h = tape.conv3x3(image, w1, height, width, &all)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h);
        let w2 = tape.param(store, self.conv2_w);
        let b2 = tape.param(store, self.conv2_b);
        let f = tape.conv3x3(h, w2, height, width, pixels)?;
        let f = tape.add_row(f, b2)?;
        Ok(tape.relu(f))
    }
}

/// Image features at projected cells, `(u, v)` = (column, row).
pub fn encode_2d(
    image: &Matrix,
    height: usize,
    width: usize,
    cells: &[(usize, usize)],
    encoder: &Encoder2d,
    store: &ParamStore,
) -> Result<Matrix> {
    let mut pixels = Vec::with_capacity(cells.len());
    for &(u, v) in cells {
        if u >= width || v >= height {
            return Err(Error::Bounds {
                u,
                v,
                width,
                height,
            });
        }
        pixels.push(v * width + u);
    }
    let mut tape = Tape::inference();
    let img = tape.constant(image.clone());
    let out = encoder.forward(&mut tape, store, img, height, width, &pixels)?;
    Ok(tape.value(out).clone())
}

#[derive(Clone, Debug)]
pub struct Encoder3d {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w_ctx: ParamId,
    pub b_ctx: ParamId,
    pub features: usize,
}

impl Encoder3d {
    pub fn init(store: &mut ParamStore, features: usize, rng: &mut impl Rng) -> Self {
        Encoder3d {
            w1: store.add_normal("enc3d.mlp1.w", 4, POINT_HIDDEN, 4, rng),
            b1: store.add_zeros("enc3d.mlp1.b", 1, POINT_HIDDEN),
            w2: store.add_normal("enc3d.mlp2.w", POINT_HIDDEN, features, POINT_HIDDEN, rng),
            b2: store.add_zeros("enc3d.mlp2.b", 1, features),
            w_ctx: store.add_normal("enc3d.ctx.w", 2 * features, features, 2 * features, rng),
            b_ctx: store.add_zeros("enc3d.ctx.b", 1, features),
            features,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2, self.w_ctx, self.b_ctx]
    }

    /// Per-point input row `(x, y, z, range)·POINT_SCALE`.
    pub fn inputs(points: &Matrix) -> Matrix {
        let n = points.rows();
        let mut data = Vec::with_capacity(n * 4);
        for r in 0..n {
            let p = points.row(r);
            let range = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            data.extend([p[0], p[1], p[2], range].iter().map(|v| v * POINT_SCALE));
        }
        Matrix::from_vec(n, 4, data).expect("sized")
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, points: &Matrix) -> Result<Var> {
        if points.rows() == 0 {
            return Err(Error::shape("encode_3d needs at least one point"));
        }
        if points.cols() != 3 {
            return Err(Error::shape(format!("points must be Nx3, got {:?}", points.shape())));
        }
        let n = points.rows();
        let x = tape.constant(Self::inputs(points));
        let (w1, b1) = (tape.param(store, self.w1), tape.param(store, self.b1));
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h);
        let (w2, b2) = (tape.param(store, self.w2), tape.param(store, self.b2));
        let h = tape.matmul(h, w2)?;
        let h = tape.add_row(h, b2)?;
        let h = tape.relu(h);
        let ctx = tape.mean_rows(h)?;
        let ctx = tape.broadcast_rows(ctx, n)?;
        let cat = tape.concat_cols(h, ctx)?;
        let (wc, bc) = (tape.param(store, self.w_ctx), tape.param(store, self.b_ctx));
        let f = tape.matmul(cat, wc)?;
        tape.add_row(f, bc)
    }
}

pub fn encode_3d(points: &Matrix, encoder: &Encoder3d, store: &ParamStore) -> Result<Matrix> {
    let mut tape = Tape::inference();
    let out = encoder.forward(&mut tape, store, points)?;
    Ok(tape.value(out).clone())
}

/// Pointwise affine map from F features to C class logits.
#[derive(Clone, Debug)]
pub struct SegHead {
    pub w: ParamId,
    pub b: ParamId,
    pub features: usize,
    pub classes: usize,
}

impl SegHead {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        features: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        SegHead {
            w: store.add_normal(format!("{name}.w"), features, classes, features, rng),
            b: store.add_zeros(format!("{name}.b"), 1, classes),
            features,
            classes,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let z = tape.matmul(features, w)?;
        tape.add_row(z, b)
    }
}

pub fn segment(features: &Matrix, head: &SegHead, store: &ParamStore) -> Result<Matrix> {
    let mut tape = Tape::inference();
    let f = tape.constant(features.clone());
    let out = head.forward(&mut tape, store, f)?;
    Ok(tape.value(out).clone())
}

/// Both backbones plus one segmentation head per branch.
#[derive(Clone, Debug)]
pub struct SegModel {
    pub enc2d: Encoder2d,
    pub enc3d: Encoder3d,
    pub head2d: SegHead,
    pub head3d: SegHead,
    pub features: usize,
    pub classes: usize,
}

/// Aligned per-point features of one frame.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub f2d: Var,
    pub f3d: Var,
}

/// Materialised per-point features of one frame.
#[derive(Clone, Debug)]
pub struct FeaturePair {
    pub point_index: Vec<usize>,
    pub f2d: Matrix,
    pub f3d: Matrix,
}

impl SegModel {
    pub fn init(store: &mut ParamStore, features: usize, classes: usize, rng: &mut impl Rng) -> Self {
        SegModel {
            enc2d: Encoder2d::init(store, features, rng),
            enc3d: Encoder3d::init(store, features, rng),
            head2d: SegHead::init(store, "head2d", features, classes, rng),
            head3d: SegHead::init(store, "head3d", features, classes, rng),
            features,
            classes,
        }
    }

    pub fn encoder_ids(&self) -> Vec<ParamId> {
        let mut ids = self.enc2d.param_ids();
        ids.extend(self.enc3d.param_ids());
        ids
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder_ids();
        ids.extend(self.head2d.param_ids());
        ids.extend(self.head3d.param_ids());
        ids
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, frame: &PreparedFrame) -> Result<FeatureVars> {
        let img = tape.constant(frame.image.clone());
        let f2d = self
            .enc2d
            .forward(tape, store, img, frame.height, frame.width, &frame.pixels)?;
        let f3d = self.enc3d.forward(tape, store, &frame.points)?;
        Ok(FeatureVars { f2d, f3d })
    }

    /// `(logits2d, logits3d)` for every kept point.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, feats: FeatureVars) -> Result<(Var, Var)> {
        let l2 = self.head2d.forward(tape, store, feats.f2d)?;
        let l3 = self.head3d.forward(tape, store, feats.f3d)?;
        Ok((l2, l3))
    }

    pub fn feature_pair(&self, store: &ParamStore, frame: &PreparedFrame) -> Result<FeaturePair> {
        let mut tape = Tape::inference();
        let fv = self.encode(&mut tape, store, frame)?;
        Ok(FeaturePair {
            point_index: frame.point_index.clone(),
            f2d: tape.value(fv.f2d).clone(),
            f3d: tape.value(fv.f3d).clone(),
        })
    }

    /// Inference logits `(2D, 3D)` for a prepared frame.
    pub fn predict(&self, store: &ParamStore, frame: &PreparedFrame) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::inference();
        let fv = self.encode(&mut tape, store, frame)?;
        let (l2, l3) = self.logits(&mut tape, store, fv)?;
        Ok((tape.value(l2).clone(), tape.value(l3).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn axis_calib() -> Calibration {
        Calibration {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    #[test]
    fn projection_examples() {
        let calib = axis_calib();
        let p = project_points(&[[0.0, 0.0, 5.0], [0.0, 0.0, -1.0], [1.0, 2.0, 10.0]], &calib, (100, 100)).unwrap();
        assert_eq!(p.kept, vec![0, 2]);
        assert_eq!(p.coords[0], [50.0, 50.0]);
        assert_eq!(p.coords[1], [60.0, 70.0]);
        assert!(matches!(
            project_points(&[[0.0, 0.0, -3.0], [100.0, 0.0, 1.0]], &calib, (100, 100)),
            Err(Error::EmptyProjection)
        ));
    }

    #[test]
    fn projection_rejects_bad_calibration() {
        let mut calib = axis_calib();
        calib.rotation[0][0] = 2.0;
        assert!(project_points(&[[0.0, 0.0, 1.0]], &calib, (10, 10)).is_err());
        let mut calib = axis_calib();
        calib.fx = 0.0;
        assert!(project_points(&[[0.0, 0.0, 1.0]], &calib, (10, 10)).is_err());
    }

    fn toy_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(h * w, 3, (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn encode_2d_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = Encoder2d::init(&mut store, 4, &mut rng);
        let img = toy_image(6, 7, &mut rng);
        let cells = [(0, 0), (6, 5), (3, 2)];
        let a = encode_2d(&img, 6, 7, &cells, &enc, &store).unwrap();
        let b = encode_2d(&img, 6, 7, &cells, &enc, &store).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (3, 4));
        let zero = encode_2d(&Matrix::zeros(42, 3), 6, 7, &cells, &enc, &store).unwrap();
        assert!(zero.as_slice().iter().all(|v| *v == 0.0));
        assert!(matches!(
            encode_2d(&img, 6, 7, &[(7, 0)], &enc, &store),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn encode_3d_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = Encoder3d::init(&mut store, 4, &mut rng);
        let pts = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let out = encode_3d(&pts, &enc, &store).unwrap();
        let out_p = encode_3d(&pts.select_rows(&perm), &enc, &store).unwrap();
        assert!(out.select_rows(&perm).max_abs_diff(&out_p) < 1e-12);
        assert_eq!(out, encode_3d(&pts, &enc, &store).unwrap());
    }

    #[test]
    fn encode_3d_single_point_context_is_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = Encoder3d::init(&mut store, 3, &mut rng);
        let pts = Matrix::from_rows(&[&[1.0, 2.0, -0.5]]);
        let mut tape = Tape::inference();
        let x = tape.constant(Encoder3d::inputs(&pts));
        let (w1, b1, w2, b2) = (
            tape.param(&store, enc.w1),
            tape.param(&store, enc.b1),
            tape.param(&store, enc.w2),
            tape.param(&store, enc.b2),
        );
        let h = tape.matmul(x, w1).unwrap();
        let h = tape.add_row(h, b1).unwrap();
        let h = tape.relu(h);
        let h = tape.matmul(h, w2).unwrap();
        let h = tape.add_row(h, b2).unwrap();
        let h = tape.relu(h);
        let m = tape.mean_rows(h).unwrap();
        assert_eq!(tape.value(m), tape.value(h));
    }

    #[test]
    fn segment_examples() {
        let mut store = ParamStore::new();
        let head = SegHead {
            w: store.add_zeros("w", 3, 2),
            b: store.add("b", Matrix::row_vector(&[0.5, -1.0])),
            features: 3,
            classes: 2,
        };
        let out = segment(&Matrix::zeros(4, 3), &head, &store).unwrap();
        assert_eq!(out.shape(), (4, 2));
        assert!((0..4).all(|r| out.row(r) == [0.5, -1.0]));

        let mut store = ParamStore::new();
        let eye = SegHead {
            w: store.add("w", Matrix::identity(3)),
            b: store.add_zeros("b", 1, 3),
            features: 3,
            classes: 3,
        };
        let onehot = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(segment(&onehot, &eye, &store).unwrap(), onehot);
        assert!(matches!(
            segment(&Matrix::zeros(2, 4), &eye, &store),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn encoders_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let model = SegModel::init(&mut store, 4, 3, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            // non-zero biases keep the check away from ReLU kinks at exactly 0
            if store.get(id).name.ends_with(".b") {
                for v in store.value_mut(id).as_mut_slice() {
                    *v = rng.random_range(-0.3..0.3);
                }
            }
        }
        let (h, w) = (5, 6);
        let frame = PreparedFrame {
            id: 0,
            height: h,
            width: w,
            image: toy_image(h, w, &mut rng),
            pixels: vec![0, 8, 15, 22, 29, 8],
            points: Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-8.0..8.0)).collect()).unwrap(),
            labels: vec![Some(0), Some(2), None, Some(1), Some(1), Some(0)],
            point_index: (0..6).collect(),
        };
        let ids = model.param_ids();
        let err = grad_check(&mut store, &ids, 1e-5, |tape, s| {
            let fv = model.encode(tape, s, &frame)?;
            let (l2, l3) = model.logits(tape, s, fv)?;
            let a = tape.cross_entropy(l2, &frame.labels)?;
            let b = tape.cross_entropy(l3, &frame.labels)?;
            tape.add(a, b)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
