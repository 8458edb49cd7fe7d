//! XY-Pos geometric positional encoding and its ablation alternatives.

use crate::docmodel::BBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("configuration error: {0}")]
    Config(String),
}

/// `m` sweep steps per axis, tiled `n` times; the encoding width is `m * n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct XYPosConfig {
    pub m: usize,
    pub n: usize,
}

impl Default for XYPosConfig {
    fn default() -> Self {
        XYPosConfig { m: 32, n: 24 }
    }
}

impl XYPosConfig {
    pub fn new(m: usize, n: usize) -> Result<Self, GeoError> {
        let c = XYPosConfig { m, n };
        c.validate()?;
        Ok(c)
    }

    /// 16 x 8 = 128, the small-model width.
    pub fn small() -> Self {
        XYPosConfig { m: 16, n: 8 }
    }

    pub fn d_model(&self) -> usize {
        self.m * self.n
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if self.m == 0 || self.n == 0 {
            return Err(GeoError::Config(format!("xy-pos needs m >= 1 and n >= 1, got m={} n={}", self.m, self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeVariant {
    #[default]
    Xy,
    Linear,
    None,
}

impl PeVariant {
    pub const ALL: [PeVariant; 3] = [PeVariant::Xy, PeVariant::Linear, PeVariant::None];

    pub fn as_str(self) -> &'static str {
        match self {
            PeVariant::Xy => "xy",
            PeVariant::Linear => "linear",
            PeVariant::None => "none",
        }
    }
}

impl fmt::Display for PeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xy" => Ok(PeVariant::Xy),
            "linear" => Ok(PeVariant::Linear),
            "none" => Ok(PeVariant::None),
            _ => Err(format!("unknown positional encoding '{s}' (expected xy, linear or none)")),
        }
    }
}

/// The m sweep positions `(start + extent * l / m) / page` for `l = 1..=m`,
/// repeated as `n` whole copies.
fn sweep<S: Scalar>(start: f64, extent: f64, page: f64, cfg: XYPosConfig) -> Vec<S> {
    let block: Vec<S> = (1..=cfg.m).map(|l| S::lit((start + extent * l as f64 / cfg.m as f64) / page)).collect();
    let mut out = Vec::with_capacity(cfg.d_model());
    for _ in 0..cfg.n {
        out.extend_from_slice(&block);
    }
    out
}

pub fn xpos<S: Scalar>(b: &BBox, page_w: f64, cfg: XYPosConfig) -> Vec<S> {
    sweep(b.x, b.w, page_w, cfg)
}

pub fn ypos<S: Scalar>(b: &BBox, page_h: f64, cfg: XYPosConfig) -> Vec<S> {
    sweep(b.y, b.h, page_h, cfg)
}

/// `xpos + ypos` for each box, one row per box.
pub fn xy_pos_matrix<S: Scalar>(boxes: &[BBox], page_w: f64, page_h: f64, cfg: XYPosConfig) -> Tensor<S> {
    let d = cfg.d_model();
    let mut out = Tensor::zeros(boxes.len(), d);
    for (i, b) in boxes.iter().enumerate() {
        let x = xpos::<S>(b, page_w, cfg);
        let y = ypos::<S>(b, page_h, cfg);
        for ((o, a), c) in out.row_mut(i).iter_mut().zip(x).zip(y) {
            *o = a + c;
        }
    }
    out
}

/// `reps_i + xpos(b_i) + ypos(b_i)`.
pub fn apply_xy_pos<S: Scalar>(
    reps: &Tensor<S>,
    boxes: &[BBox],
    page_w: f64,
    page_h: f64,
    cfg: XYPosConfig,
) -> Result<Tensor<S>, GeoError> {
    if reps.rows != boxes.len() {
        return Err(GeoError::Config(format!("{} representations but {} boxes", reps.rows, boxes.len())));
    }
    if reps.cols != cfg.d_model() {
        return Err(GeoError::Config(format!(
            "representation width {} does not match xy-pos width {}x{}={}",
            reps.cols,
            cfg.m,
            cfg.n,
            cfg.d_model()
        )));
    }
    let mut out = xy_pos_matrix(boxes, page_w, page_h, cfg);
    out.add_assign(reps);
    Ok(out)
}

/// `(x/W, y/H, w/W, h/H)`.
pub fn normalized_box(b: &BBox, page_w: f64, page_h: f64) -> [f64; 4] {
    [b.x / page_w, b.y / page_h, b.w / page_w, b.h / page_h]
}

/// Normalized 4-tuples projected by a `4 x d_model` weight.
pub fn linear_pe<S: Scalar>(boxes: &[BBox], page_w: f64, page_h: f64, weight: &Tensor<S>, d_model: usize) -> Result<Tensor<S>, GeoError> {
    if weight.shape() != (4, d_model) {
        return Err(GeoError::Config(format!("linear positional weight is {}x{}, expected 4x{d_model}", weight.rows, weight.cols)));
    }
    let mut out = Tensor::zeros(boxes.len(), d_model);
    for (i, b) in boxes.iter().enumerate() {
        let nb = normalized_box(b, page_w, page_h);
        let row = out.row_mut(i);
        for (k, &c) in nb.iter().enumerate() {
            let c = S::lit(c);
            for (o, &w) in row.iter_mut().zip(weight.row(k)) {
                *o += c * w;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
    }

    #[test]
    fn full_width_box() {
        let c = XYPosConfig::new(4, 2).unwrap();
        let v = xpos::<f64>(&BBox::new(0.0, 0.0, 1000.0, 10.0), 1000.0, c);
        assert_eq!(v, vec![0.25, 0.5, 0.75, 1.0, 0.25, 0.5, 0.75, 1.0]);
        let v = ypos::<f64>(&BBox::new(0.0, 0.0, 10.0, 500.0), 500.0, c);
        assert_eq!(v, vec![0.25, 0.5, 0.75, 1.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn zero_width_box_is_constant() {
        let c = XYPosConfig::new(5, 3).unwrap();
        let v = xpos::<f64>(&BBox::new(250.0, 0.0, 0.0, 10.0), 1000.0, c);
        assert!(v.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn golden_blocks() {
        let c = XYPosConfig::new(4, 3).unwrap();
        let x = xpos::<f64>(&BBox::new(100.0, 0.0, 200.0, 10.0), 1000.0, c);
        for block in x.chunks(4) {
            assert!(close(block, &[0.15, 0.2, 0.25, 0.3]));
        }
        let y = ypos::<f64>(&BBox::new(0.0, 50.0, 10.0, 100.0), 1000.0, c);
        for block in y.chunks(4) {
            assert!(close(block, &[0.075, 0.1, 0.125, 0.15]));
        }
        let x32 = xpos::<f32>(&BBox::new(100.0, 0.0, 200.0, 10.0), 1000.0, c);
        assert_eq!(&x32[..4], &[0.15f32, 0.2, 0.25, 0.3]);
    }

    #[test]
    fn axis_symmetry() {
        let c = XYPosConfig::new(6, 2).unwrap();
        let b = BBox::new(30.0, 70.0, 120.0, 40.0);
        let t = BBox::new(70.0, 30.0, 40.0, 120.0);
        assert_eq!(xpos::<f64>(&b, 800.0, c), ypos::<f64>(&t, 800.0, c));
    }

    #[test]
    fn default_width_is_768() {
        assert_eq!(XYPosConfig::default().d_model(), 768);
        assert_eq!(xpos::<f32>(&BBox::new(1.0, 1.0, 1.0, 1.0), 10.0, XYPosConfig::default()).len(), 768);
        assert_eq!(XYPosConfig::small().d_model(), 128);
        assert!(XYPosConfig::new(0, 3).is_err());
    }

    #[test]
    fn apply_is_pure_offset() {
        let c = XYPosConfig::new(2, 2).unwrap();
        let boxes = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(20.0, 5.0, 30.0, 10.0), BBox::new(50.0, 50.0, 0.0, 0.0)];
        let zero = Tensor::<f64>::zeros(3, 4);
        let out = apply_xy_pos(&zero, &boxes, 100.0, 100.0, c).unwrap();
        for (i, b) in boxes.iter().enumerate() {
            let x = xpos::<f64>(b, 100.0, c);
            let y = ypos::<f64>(b, 100.0, c);
            let want: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            assert_eq!(out.row(i), &want[..]);
        }
        let reps = Tensor::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.37 - 2.0).collect());
        let shifted = apply_xy_pos(&reps, &boxes, 100.0, 100.0, c).unwrap();
        for (a, (b, r)) in out.data.iter().zip(shifted.data.iter().zip(&reps.data)) {
            assert!((a - (b - r)).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_rejects_mismatch() {
        let c = XYPosConfig::new(2, 2).unwrap();
        let reps = Tensor::<f32>::zeros(1, 5);
        assert!(matches!(apply_xy_pos(&reps, &[BBox::new(0.0, 0.0, 1.0, 1.0)], 10.0, 10.0, c), Err(GeoError::Config(_))));
        let reps = Tensor::<f32>::zeros(2, 4);
        assert!(apply_xy_pos(&reps, &[BBox::new(0.0, 0.0, 1.0, 1.0)], 10.0, 10.0, c).is_err());
    }

    #[test]
    fn linear_pe_cases() {
        let boxes = [BBox::new(10.0, 20.0, 30.0, 40.0)];
        let zero = Tensor::<f64>::zeros(4, 6);
        assert!(linear_pe(&boxes, 100.0, 200.0, &zero, 6).unwrap().data.iter().all(|&x| x == 0.0));

        let mut eye = Tensor::<f64>::zeros(4, 4);
        for i in 0..4 {
            eye.data[i * 4 + i] = 1.0;
        }
        assert_eq!(linear_pe(&boxes, 100.0, 200.0, &eye, 4).unwrap().data, vec![0.1, 0.1, 0.3, 0.2]);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Tensor::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let got = linear_pe(&boxes, 100.0, 200.0, &w, 3).unwrap();
        let nb = [0.1, 0.1, 0.3, 0.2];
        for j in 0..3 {
            let want = nb[0] * w.get(0, j) + nb[1] * w.get(1, j) + nb[2] * w.get(2, j) + nb[3] * w.get(3, j);
            assert!((got.get(0, j) - want).abs() < 1e-12);
        }
        assert!(linear_pe(&boxes, 100.0, 200.0, &w, 4).is_err());
    }

    #[test]
    fn variant_parse() {
        for v in PeVariant::ALL {
            assert_eq!(v.as_str().parse::<PeVariant>().unwrap(), v);
        }
        assert!("sinusoid".parse::<PeVariant>().is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0u32..800, 0u32..800, 0u32..200, 0u32..200).prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, w as f64, h as f64))
    }

    proptest! {
        #[test]
        fn translation_equivariance(b in arb_box(), dx in 0u32..100) {
            let c = XYPosConfig::new(8, 2).unwrap();
            let moved = b.translate(dx as f64, 0.0);
            let x0 = xpos::<f64>(&b, 1000.0, c);
            let x1 = xpos::<f64>(&moved, 1000.0, c);
            for (a, m) in x0.iter().zip(&x1) {
                prop_assert!((m - a - dx as f64 / 1000.0).abs() < 1e-12);
            }
            prop_assert_eq!(ypos::<f64>(&b, 1000.0, c), ypos::<f64>(&moved, 1000.0, c));
        }

        #[test]
        fn scale_invariance(b in arb_box(), k in 0i32..5) {
            let s = 2f64.powi(k - 2);
            let c = XYPosConfig::new(7, 3).unwrap();
            prop_assert_eq!(xpos::<f64>(&b, 1000.0, c), xpos::<f64>(&b.scale(s), 1000.0 * s, c));
            prop_assert_eq!(ypos::<f64>(&b, 1000.0, c), ypos::<f64>(&b.scale(s), 1000.0 * s, c));
        }

        #[test]
        fn injective_on_x_extent(a in arb_box(), b in arb_box(), m in 2usize..6) {
            prop_assume!((a.x, a.w) != (b.x, b.w));
            let c = XYPosConfig::new(m, 1).unwrap();
            prop_assert_ne!(xpos::<f64>(&a, 1000.0, c), xpos::<f64>(&b, 1000.0, c));
        }
    }
}
