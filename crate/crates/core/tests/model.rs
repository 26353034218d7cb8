use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shadeforge::model::{decode_model, encode_model, Model, ModelConfig, Variant};
use shadeforge::nn::Mode;
use shadeforge::{Error, ShadowMask, Tensor};

const SIDE: usize = 32;

fn model(variant: Variant, seed: u64) -> Model {
    Model::build(
        ModelConfig {
            base_channels: 4,
            depth: 3,
            input_side: SIDE,
            rng_seed: seed,
            ..ModelConfig::default()
        }
        .with_variant(variant),
    )
    .unwrap()
}

fn image(seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([1, 3, SIDE, SIDE], |_, _, _, _| r.random())
}

fn half_mask() -> Tensor {
    Tensor::from_fn([1, 1, SIDE, SIDE], |_, _, _, x| if x < SIDE / 2 { 1.0 } else { 0.0 })
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn eval_forward_is_repeatable_and_seeded() {
    let mut a = model(Variant::Shau, 1);
    a.set_mode(Mode::Eval);
    let x = image(10);
    let first = a.forward(&x, &half_mask()).unwrap();
    let second = a.forward(&x, &half_mask()).unwrap();
    assert_eq!(first.shape(), [1, 3, SIDE, SIDE]);
    assert!(first.all_finite());
    assert_eq!(bits(&first), bits(&second));

    let mut b = model(Variant::Shau, 1);
    b.set_mode(Mode::Eval);
    assert_eq!(bits(&first), bits(&b.forward(&x, &half_mask()).unwrap()));

    let mut c = model(Variant::Shau, 2);
    c.set_mode(Mode::Eval);
    assert_ne!(bits(&first), bits(&c.forward(&x, &half_mask()).unwrap()));
}

#[test]
fn zero_mask_output_still_depends_on_the_image() {
    let mut m = model(Variant::Shau, 3);
    m.set_mode(Mode::Eval);
    let zeros = Tensor::zeros([1, 1, SIDE, SIDE]);
    let (out, g) = m.forward_instrumented(&image(11), Some(&zeros)).unwrap();
    for (name, t) in g.tags().filter(|(name, _)| name.starts_with("hard_attention.")) {
        assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
    }
    let first = out.data()[0];
    assert!(out.data().iter().any(|&v| v != first));
    let other = m.forward(&image(12), &zeros).unwrap();
    assert!(out.max_abs_diff(&other) > 0.0);
}

#[test]
fn untrained_output_sits_near_mid_gray() {
    for variant in Variant::ALL {
        let mut m = model(variant, 4);
        m.set_mode(Mode::Eval);
        let out = m.forward(&image(13), &half_mask()).unwrap();
        let mean = out.data().iter().sum::<f64>() / out.len() as f64;
        assert!((0.2..0.8).contains(&mean), "{variant:?} mean {mean}");
    }
}

#[test]
fn checkpoint_bytes_round_trip() {
    let mut m = model(Variant::Msb, 5);
    m.set_mode(Mode::Eval);
    let bytes = encode_model(&m).unwrap();
    let mut back = decode_model(&bytes).unwrap();
    back.set_mode(Mode::Eval);
    assert_eq!(back.config(), m.config());
    let x = image(14);
    let a = m.forward(&x, &half_mask()).unwrap();
    let b = back.forward(&x, &half_mask()).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn predict_keeps_odd_sizes() {
    let mut m = model(Variant::Baseline, 6);
    m.set_mode(Mode::Eval);
    let img = RgbImage::from_fn(37, 23, |x, y| Rgb([(x * 6) as u8, (y * 10) as u8, 128]));
    let mask = ShadowMask::from_fn(37, 23, |x, _| x > 20);
    let out = m.predict(&img, &mask).unwrap();
    assert_eq!(out.dimensions(), (37, 23));
}

#[test]
fn bad_inputs_are_rejected() {
    let m = model(Variant::Shau, 7);
    let x = image(15);
    let small_mask = Tensor::zeros([1, 1, SIDE / 2, SIDE / 2]);
    assert!(matches!(m.forward(&x, &small_mask), Err(Error::Shape(_))));
    let loud_mask = Tensor::full([1, 1, SIDE, SIDE], 2.0);
    assert!(matches!(m.forward(&x, &loud_mask), Err(Error::Validation(_))));
    let gray = Tensor::zeros([1, 1, SIDE, SIDE]);
    assert!(matches!(m.forward(&gray, &half_mask()), Err(Error::Shape(_))));

    let img = RgbImage::new(32, 32);
    let mask = ShadowMask::filled(16, 16, 0.0);
    assert!(matches!(m.predict(&img, &mask), Err(Error::Shape(_))));
}
