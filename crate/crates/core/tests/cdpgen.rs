use mirig_core::cdpgen::*;
use mirig_core::tensor::Tensor;
use mirig_core::Error;
use proptest::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn image_hash(t: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn counts(n: u64, seed: u64) -> Vec<[usize; 3]> {
    (0..n)
        .map(|i| {
            let a = sample_attributes(seed, i);
            [a.color as usize, a.digit as usize, a.position as usize]
        })
        .collect()
}

#[test]
fn sampling_is_deterministic() {
    for i in [0u64, 1, 99, 1 << 40] {
        assert_eq!(sample_attributes(5, i), sample_attributes(5, i));
    }
}

#[test]
fn color_frequencies_are_uniform_at_65k() {
    let draws = counts(65_536, 1);
    for attr in 0..3 {
        let mut c = [0usize; 4];
        for d in &draws {
            c[d[attr]] += 1;
        }
        for &k in &c {
            let f = k as f64 / draws.len() as f64;
            assert!((0.24..=0.26).contains(&f), "attribute {attr}: {c:?}");
        }
    }
}

fn chi_square_p(draws: &[[usize; 3]], a: usize, b: usize) -> f64 {
    let n = draws.len() as f64;
    let mut table = [[0.0f64; 4]; 4];
    for d in draws {
        table[d[a]][d[b]] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..4).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let mut stat = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let e = rows[i] * cols[j] / n;
            stat += (table[i][j] - e).powi(2) / e;
        }
    }
    1.0 - ChiSquared::new(9.0).unwrap().cdf(stat)
}

#[test]
fn attributes_pass_chi_square_independence() {
    let draws = counts(65_536, 1);
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let p = chi_square_p(&draws, a, b);
        assert!(p > 0.001, "attributes {a},{b}: p = {p}");
    }
}

#[test]
fn marginals_and_correlations_within_three_sigma_at_4096() {
    let n = 4096;
    for seed in 0..5 {
        let draws = counts(n, seed);
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for attr in 0..3 {
            let mut c = [0usize; 4];
            for d in &draws {
                c[d[attr]] += 1;
            }
            for &k in &c {
                assert!(
                    (k as f64 - n as f64 / 4.0).abs() <= 3.0 * sigma,
                    "seed {seed} attr {attr}: {c:?}"
                );
            }
        }
        // sample correlation of independent variables has sd ~ 1/sqrt(n)
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let xs: Vec<f64> = draws.iter().map(|d| d[a] as f64).collect();
            let ys: Vec<f64> = draws.iter().map(|d| d[b] as f64).collect();
            let r = mirig_core::metrics::pearson(&xs, &ys).unwrap();
            assert!(r.abs() <= 3.0 / (n as f64).sqrt(), "seed {seed}: corr({a},{b}) = {r}");
        }
    }
}

#[test]
fn all_joint_classes_occupied_at_4096() {
    let ds = make_dataset(4096, 0, 16, 0.3).unwrap();
    let mut seen = [0usize; 64];
    for s in &ds.samples {
        seen[s.attributes.class_id(&TaskSpec::all())] += 1;
    }
    assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
}

#[test]
fn class_entropy_values() {
    assert_eq!(class_entropy(&TaskSpec::single(Attribute::Color)), 2.0);
    assert_eq!(class_entropy(&TaskSpec::all()), 6.0);
    assert_eq!(class_entropy(&TaskSpec::new([])), 0.0);
    assert_eq!(TaskSpec::all().num_classes(), 64);
    assert_eq!(TaskSpec::new([]).num_classes(), 1);
}

#[test]
fn entropy_is_additive_over_disjoint_subsets() {
    use Attribute::*;
    let subsets: Vec<Vec<Attribute>> = vec![
        vec![],
        vec![Color],
        vec![Digit],
        vec![Position],
        vec![Color, Digit],
        vec![Color, Position],
        vec![Digit, Position],
        vec![Color, Digit, Position],
    ];
    for a in &subsets {
        for b in &subsets {
            if a.iter().any(|x| b.contains(x)) {
                continue;
            }
            let (ta, tb) = (TaskSpec::new(a.clone()), TaskSpec::new(b.clone()));
            assert_eq!(class_entropy(&ta.union(&tb)), class_entropy(&ta) + class_entropy(&tb));
        }
    }
}

#[test]
fn split_is_ninety_ten() {
    let ds = make_dataset(10, 3, 16, 0.3).unwrap();
    assert_eq!(ds.len(), 10);
    assert_eq!(ds.train_range().len(), 9);
    assert_eq!(ds.eval_range().len(), 1);
}

#[test]
fn same_seed_gives_same_labels() {
    let a = make_dataset(64, 8, 16, 0.3).unwrap();
    let b = make_dataset(64, 8, 16, 0.3).unwrap();
    assert_eq!(a, b);
    let c = make_dataset(64, 9, 16, 0.3).unwrap();
    let la: Vec<_> = a.samples.iter().map(|s| s.attributes).collect();
    let lc: Vec<_> = c.samples.iter().map(|s| s.attributes).collect();
    assert_ne!(la, lc);
}

#[test]
fn mix_zero_red_two_upper_left_lies_in_quadrant() {
    let attrs = CdpAttributes {
        color: Color::Red,
        digit: Digit::Two,
        position: Position::UpperLeft,
    };
    for size in SUPPORTED_SIZES {
        let img = render(&attrs, 42, size, 0.0).unwrap();
        let px = size * size;
        let d = img.data();
        let mut lit = 0;
        for p in 0..px {
            let (r, g, b) = (d[p], d[px + p], d[2 * px + p]);
            if r != 0.0 || g != 0.0 || b != 0.0 {
                lit += 1;
                assert!(p / size < size / 2 && p % size < size / 2, "pixel {p} outside quadrant");
                assert!(r > 0.0 && g == 0.0 && b == 0.0);
            }
        }
        assert!(lit > 0);
    }
}

#[test]
fn mix_one_is_pure_background() {
    for seed in 0..5 {
        let attrs = sample_attributes(seed, 0);
        let img = render(&attrs, seed, 32, 1.0).unwrap();
        assert_eq!(img, background(seed, 32).unwrap());
    }
}

#[test]
fn golden_render_hash() {
    let attrs = CdpAttributes {
        color: Color::White,
        digit: Digit::Four,
        position: Position::LowerRight,
    };
    let img = render(&attrs, 1234, 32, 0.3).unwrap();
    assert_eq!(
        image_hash(&img),
        "bca51dd4838574420266f1079fc930d3194735e4e5249bbf4a36db3617f44d1a"
    );
    let ds = make_dataset(16, 7, 16, 0.3).unwrap();
    let mut h = Sha256::new();
    for s in &ds.samples {
        h.update(image_hash(&s.image).as_bytes());
    }
    assert_eq!(
        hex::encode(h.finalize()),
        "a070a25db305b0028fa3c26f353b8819bb2da2d44e3ccd4b702d3c24a734e027"
    );
}

#[test]
fn pixel_rule_classifier_is_exact_without_background() {
    for size in SUPPORTED_SIZES {
        for c in 0..4 {
            for d in 0..4 {
                for p in 0..4 {
                    let attrs = CdpAttributes::from_indices(c, d, p).unwrap();
                    let img = render(&attrs, (c * 16 + d * 4 + p) as u64, size, 0.0).unwrap();
                    assert_eq!(classify_pixels(&img), Some(attrs), "size {size}");
                }
            }
        }
    }
}

#[test]
fn pixel_rule_classifier_is_exact_at_default_mix() {
    let ds = make_dataset(2000, 4, 32, 0.3).unwrap();
    for s in &ds.samples {
        assert_eq!(classify_pixels(&s.image), Some(s.attributes), "sample {}", s.source_id);
    }
}

#[test]
fn images_are_in_unit_range() {
    let ds = make_dataset(200, 2, 16, 0.5).unwrap();
    for s in &ds.samples {
        assert_eq!(s.image.shape(), &[3, 16, 16]);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn render_rejects_bad_size_and_mix() {
    let a = sample_attributes(0, 0);
    assert!(render(&a, 0, 24, 0.3).is_err());
    assert!(render(&a, 0, 32, 1.5).is_err());
    assert!(make_dataset(0, 0, 32, 0.3).is_err());
}

#[test]
fn packed_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(25, 6, 16, 0.3).unwrap();
    save_dataset(dir.path(), &ds).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.samples.len(), ds.samples.len());
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.attributes, b.attributes);
        assert_eq!(a.image, b.image);
    }
    assert_eq!((back.size, back.mix, back.seed), (16, 0.3, 6));

    let bytes = std::fs::read(dir.path().join(PACKED_FILE)).unwrap();
    assert_eq!(&bytes[..4], b"CDP1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 25);
    assert_eq!(u16::from_le_bytes(bytes[8..10].try_into().unwrap()), 16);
    assert_eq!(bytes.len(), 10 + 25 * (3 + 4 * 3 * 16 * 16));
}

#[test]
fn truncated_or_padded_packed_file_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(3, 6, 16, 0.3).unwrap();
    let path = dir.path().join("x.bin");
    write_packed(&path, &ds.samples, 16).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 3, 9, 12, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(read_packed(&path), Err(Error::Format(_))), "cut at {cut}");
    }
    let mut padded = bytes.clone();
    padded.push(0);
    std::fs::write(&path, &padded).unwrap();
    assert!(matches!(read_packed(&path), Err(Error::Format(_))));
}

#[test]
fn manifest_version_checked() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_dataset(3, 6, 16, 0.3).unwrap();
    save_dataset(dir.path(), &ds).unwrap();
    let mpath = dir.path().join(MANIFEST_FILE);
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(&mpath).unwrap()).unwrap();
    m["format_version"] = serde_json::json!(FORMAT_VERSION + 1);
    std::fs::write(&mpath, serde_json::to_vec(&m).unwrap()).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Version { found, expected }) => {
            assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION));
        }
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn generation_is_pure(n in 1usize..20, seed in any::<u64>(), mix in 0.0f32..=1.0) {
        let a = make_dataset(n, seed, 16, mix).unwrap();
        let b = make_dataset(n, seed, 16, mix).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn glyph_stays_in_its_quadrant(c in 0u8..4, d in 0u8..4, p in 0u8..4, seed in any::<u64>()) {
        let attrs = CdpAttributes::from_indices(c, d, p).unwrap();
        let img = render(&attrs, seed, 32, 0.0).unwrap();
        let (qy, qx) = attrs.position.quadrant();
        let px = 32 * 32;
        for pix in 0..px {
            if (0..3).any(|ch| img.data()[ch * px + pix] != 0.0) {
                prop_assert_eq!((pix / 32 / 16, pix % 32 / 16), (qy, qx));
            }
        }
    }
}
