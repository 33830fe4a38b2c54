#![allow(dead_code)]

use nightsynth::{BayerStack, CfaPattern, Illuminant, LightSource, RawImage, RawMeta};
use proptest::prelude::*;

pub const CFAS: [CfaPattern; 4] = [
    CfaPattern::Rggb,
    CfaPattern::Bggr,
    CfaPattern::Grbg,
    CfaPattern::Gbrg,
];

pub fn cfa() -> impl Strategy<Value = CfaPattern> {
    prop::sample::select(CFAS.to_vec())
}

/// Raw images with pixels anywhere in `[black, white]`.
pub fn raw_image() -> impl Strategy<Value = RawImage> {
    (cfa(), 0u16..4096, 1usize..8, 1usize..8)
        .prop_flat_map(|(cfa, black, hw, hh)| {
            let white = (black + 1)..=u16::MAX;
            (Just((cfa, black, hw, hh)), white)
        })
        .prop_flat_map(|((cfa, black, hw, hh), white)| {
            let n = 4 * hw * hh;
            (
                Just((cfa, black, white, hw, hh)),
                prop::collection::vec(black..=white, n),
                (0.1f64..8.0, 0.1f64..8.0, 0.1f64..8.0),
                any::<bool>(),
            )
        })
        .prop_map(|((cfa, black, white, hw, hh), pixels, gains, with_ccm)| {
            let mut meta = RawMeta::new(cfa, black, white);
            meta.wb_gains = [gains.0, gains.1, gains.2];
            if with_ccm {
                meta.ccm = Some([1.5, -0.3, -0.2, -0.2, 1.4, -0.2, 0.0, -0.5, 1.5]);
            }
            RawImage::new(2 * hw, 2 * hh, pixels, meta).unwrap()
        })
}

pub fn illuminant() -> impl Strategy<Value = Illuminant> {
    (0.1f64..3.0, 0.1f64..3.0).prop_map(|(r, b)| Illuminant::new(r, 1.0, b).unwrap())
}

pub fn stack(max_half: usize) -> impl Strategy<Value = BayerStack> {
    (1..=max_half, 1..=max_half).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::array::uniform4(0.0f64..1.0), w * h)
            .prop_map(move |data| BayerStack::new(w, h, data, CfaPattern::Rggb).unwrap())
    })
}

/// Ambient light first, then `1..max` local lights inside a `w × h` stack.
pub fn lights(w: usize, h: usize, max: usize) -> impl Strategy<Value = Vec<LightSource>> {
    let (wf, hf) = (w as f64, h as f64);
    let local = (
        illuminant(),
        0.5f64..1.5,
        0.0..wf,
        0.0..hf,
        0.5f64..1.0,
        0.5f64..1.0,
    )
        .prop_map(move |(c, s, cx, cy, fx, fy)| {
            LightSource::local(c, s, [cx, cy], [fx * wf, fy * hf])
        });
    (
        illuminant(),
        0.01f64..0.2,
        prop::collection::vec(local, 0..max),
    )
        .prop_map(|(c, s, locals)| {
            let mut all = vec![LightSource::ambient(c, s)];
            all.extend(locals);
            all
        })
}

pub fn max_abs_diff(a: &BayerStack, b: &BayerStack) -> f64 {
    a.pixels()
        .iter()
        .flatten()
        .zip(b.pixels().iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
