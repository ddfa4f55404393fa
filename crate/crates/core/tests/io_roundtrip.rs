use diffmf::image::{decode_pnm, encode_pnm, read_image, write_image, GrayImage, Image, RgbImage};
use diffmf::pipeline::{build_model, ModelConfig};
use diffmf::Error;
use proptest::prelude::*;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gray_files_round_trip_within_one_level(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let data: Vec<f64> = (0..w * h).map(|i| ((seed.wrapping_add(i as u64 * 2654435761) % 10007) as f64) / 10006.0).collect();
        let img = GrayImage::new(w, h, data.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        write_image(&Image::Gray(img), &path).unwrap();
        let back = read_image(&path).unwrap().into_gray();
        prop_assert_eq!((back.width, back.height), (w, h));
        prop_assert!(max_abs_diff(&back.data, &data) <= 1.0 / 255.0);
    }

    #[test]
    fn rgb_bytes_round_trip_within_one_level(w in 1usize..10, h in 1usize..10, seed in any::<u64>()) {
        let data: Vec<f64> = (0..3 * w * h).map(|i| ((seed.wrapping_mul(31).wrapping_add(i as u64 * 40503) % 9973) as f64) / 9972.0).collect();
        let img = Image::Rgb(RgbImage::new(w, h, data.clone()).unwrap());
        let bytes = encode_pnm(&img);
        let back = decode_pnm(&bytes).unwrap().into_rgb();
        prop_assert!(max_abs_diff(&back.data, &data) <= 1.0 / 255.0);
        // Quantised data is a fixed point of the codec.
        prop_assert_eq!(encode_pnm(&Image::Rgb(back)), bytes);
    }
}

#[test]
fn out_of_range_pixels_are_rejected_on_write() {
    let dir = tempfile::tempdir().unwrap();
    let img = GrayImage::new(2, 1, vec![0.5, 1.5]).unwrap();
    match write_image(&Image::Gray(img), dir.path().join("x.pgm")) {
        Err(Error::InFile { path, source }) => {
            assert!(path.ends_with("x.pgm"));
            assert!(matches!(*source, Error::Input(_)), "{source}");
        }
        other => panic!("expected an input error, got {other:?}"),
    }
}

#[test]
fn fused_colour_output_keeps_grey_visible_input_grey() {
    let cfg = ModelConfig { channels: 2, state: 4, seed: 3, ..ModelConfig::tiny() };
    let model = build_model(&cfg).unwrap();
    let ir = GrayImage::from_fn(9, 7, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
    let grey = GrayImage::from_fn(9, 7, |x, y| ((x + 2 * y) % 5) as f64 / 4.0);
    let fused = model.fuse(&ir, &RgbImage::from_gray(&grey)).unwrap();
    for i in 0..9 * 7 {
        let [r, g, b] = fused.pixel(i);
        assert!((r - g).abs() < 1e-12 && (g - b).abs() < 1e-12, "pixel {i}: {r} {g} {b}");
        assert!((0.0..=1.0).contains(&r));
    }
    let small = RgbImage::from_gray(&GrayImage::from_fn(8, 7, |_, _| 0.5));
    assert!(matches!(model.fuse(&ir, &small), Err(Error::Input(_))));
}
