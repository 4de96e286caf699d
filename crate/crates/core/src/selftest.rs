//! Quick invariant checks behind `cmda selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{decode_frame, encode_frame, generate_frame, ClassMapping, DomainSpec};
use crate::discriminator::{discriminate, Discriminator};
use crate::encoders::{PreparedFrame, SegModel};
use crate::error::Result;
use crate::eval::{confusion, miou};
use crate::frame::Domain;
use crate::interaction::{cross_relation_values, interact, InteractionConfig, InteractionParams};
use crate::numerics::{grad_check, softmax_rows, Matrix, ParamStore};
use crate::sampling::{select_top, Budget, ScoringStrategy};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: e.to_string() },
    }
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// Gradient of BCE ∘ discriminate ∘ interact ∘ encode on five points, F = 4, C = 3.
pub fn composed_gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let seg = SegModel::init(&mut store, 4, 3, &mut rng);
    let inter = InteractionParams::init(&mut store, 4, &mut rng);
    let disc = Discriminator::init(&mut store, "disc", 8, 6, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        if store.get(id).name.ends_with(".b") {
            for v in store.value_mut(id).as_mut_slice() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let (h, w) = (4, 5);
    let frame = PreparedFrame {
        id: 0,
        height: h,
        width: w,
        image: Matrix::from_vec(h * w, 3, (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect())?,
        pixels: vec![0, 6, 12, 13, 19],
        points: Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-6.0..6.0)).collect())?,
        labels: vec![Some(0); 5],
        point_index: (0..5).collect(),
    };
    let mut ids = seg.encoder_ids();
    ids.extend(inter.param_ids());
    ids.extend(disc.param_ids());
    let cfg = InteractionConfig::default();
    grad_check(&mut store, &ids, 1e-5, |t, s| {
        let fv = seg.encode(t, s, &frame)?;
        let (a, b) = interact(t, s, &inter, fv.f2d, fv.f3d, &cfg)?;
        let (p, _) = discriminate(t, s, &disc, a, b)?;
        t.bce(p, Domain::Target.label())
    })
}

/// Exhaustive best subset, ties broken towards the lexicographically smallest sorted id list.
fn brute_force_top(scored: &[(u64, f64)], k: usize) -> Vec<u64> {
    let n = scored.len();
    let mut best: Option<(f64, Vec<u64>)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let picked: Vec<(u64, f64)> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| scored[i]).collect();
        let sum: f64 = picked.iter().map(|p| p.1).sum();
        let mut ids: Vec<u64> = picked.iter().map(|p| p.0).collect();
        ids.sort_unstable();
        let better = match &best {
            None => true,
            Some((s, b)) => sum > s + 1e-12 || ((sum - s).abs() <= 1e-12 && ids < *b),
        };
        if better {
            best = Some((sum, ids));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

pub fn run_all() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = vec![check(
        "composed gradient",
        composed_gradient_error(5).map(|e| (e < 1e-4, format!("max relative error {e:.2e}"))),
    )];

    out.push(check("attention rows and envelope", (|| {
        for _ in 0..200 {
            let (n, f) = (rng.random_range(1..=4), rng.random_range(1..=3));
            let (k, vb, va) = (random(n, f, &mut rng), random(n, f, &mut rng), random(n, f, &mut rng));
            let a = crate::numerics::matmul_t(&k, false, &vb, true)?;
            let sm = softmax_rows(&a, 1.0 / (f as f64).sqrt())?;
            if (0..n).any(|r| (sm.row(r).iter().sum::<f64>() - 1.0).abs() > 1e-9) {
                return Ok((false, "softmax row does not sum to 1".into()));
            }
            let r = cross_relation_values(&k, &vb, &va)?;
            for c in 0..f {
                let col: Vec<f64> = (0..n).map(|i| va.get(i, c)).collect();
                let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
                if (0..n).any(|i| r.get(i, c) < lo - 1e-12 || r.get(i, c) > hi + 1e-12) {
                    return Ok((false, "relation leaves the value envelope".into()));
                }
            }
        }
        Ok((true, "200 random cases".into()))
    })()));

    out.push(check("top-B selection", (|| {
        for _ in 0..200 {
            let n = rng.random_range(1..=8);
            let scored: Vec<(u64, f64)> = (0..n).map(|i| (i as u64 * 3 + 1, rng.random_range(0..5) as f64 / 4.0)).collect();
            let k = rng.random_range(1..=n);
            let sel = select_top(&scored, Budget::Count(k), ScoringStrategy::CrossModal)?;
            let mut ids = sel.ids.clone();
            ids.sort_unstable();
            if ids != brute_force_top(&scored, k) {
                return Ok((false, format!("mismatch on {scored:?}, k = {k}")));
            }
        }
        Ok((true, "200 random cases with ties".into()))
    })()));

    out.push(check("mIoU worked case", (|| {
        let cm = confusion(&[Some(0), Some(0), Some(1), Some(1)], &[0, 1, 1, 1], 2)?;
        let (_, m) = miou(&cm)?;
        Ok(((m - 7.0 / 12.0).abs() < 1e-15, format!("mIoU {m}")))
    })()));

    out.push(check("bundled class mappings", (|| {
        let a = ClassMapping::bundled("a2d2")?;
        let k = ClassMapping::bundled("semantickitti")?;
        Ok((a.get("Car 1") == Some("car") && k.get("moving-truck") == Some("truck"), format!("{} + {} rows", a.len(), k.len())))
    })()));

    out.push(check("frame round trip", (|| {
        let frame = generate_frame(&DomainSpec::source(), 3, 0, Domain::Source)?.frame;
        let bytes = encode_frame(&frame)?;
        let back = decode_frame(&bytes, std::path::Path::new("<memory>"))?;
        Ok((back == frame, format!("{} bytes", bytes.len())))
    })()));
    out
}
