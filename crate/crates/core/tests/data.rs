use fmsr::data::{bicubic_resize, make_pair, make_pairs, PatchSampler};
use fmsr::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keys cubic kernel written out independently of the library.
fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x.powi(3) - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x.powi(3) + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Dense `[n_out, n_in]` antialiased downscale matrix with mirrored borders.
fn dense_weights(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let ratio = n_in as f64 / n_out as f64;
    let n = n_in as i64;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let mut row = vec![0.0; n_in];
            let mut total = 0.0;
            for j in -3 * n..4 * n {
                let k = keys((j as f64 - center) / ratio);
                let m = j.rem_euclid(2 * n);
                let src = if m < n { m } else { 2 * n - 1 - m };
                row[src as usize] += k;
                total += k;
            }
            row.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

#[test]
fn pair_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hr = Tensor::<f64>::rand_uniform(&[3, 35, 42], 0.0, 1.0, &mut rng);
    let pair = make_pair(&hr, 4, "img").unwrap().unwrap();
    // 35x42 → 32x40, offset (1, 1)
    assert_eq!(pair.crop, (1, 1));
    assert_eq!(pair.lr.shape(), &[3, 8, 10]);
    let wy = dense_weights(32, 8);
    let wx = dense_weights(40, 10);
    let mut digest = 0.0;
    let mut oracle_digest = 0.0;
    for c in 0..3 {
        for i in 0..8 {
            for j in 0..10 {
                let mut acc = 0.0;
                for (y, wyv) in wy[i].iter().enumerate() {
                    for (x, wxv) in wx[j].iter().enumerate() {
                        acc += wyv * wxv * hr.data()[(c * 35 + y + 1) * 42 + x + 1];
                    }
                }
                let got = pair.lr.data()[(c * 8 + i) * 10 + j];
                assert!((got - acc).abs() < 1e-12, "({c},{i},{j}) {got} vs {acc}");
                let weight = (1 + c * 80 + i * 10 + j) as f64;
                digest += weight * got;
                oracle_digest += weight * acc;
            }
        }
    }
    assert!((digest - oracle_digest).abs() < 1e-9);
}

#[test]
fn small_images_are_skipped() {
    let images = vec![
        ("big".to_string(), Tensor::<f32>::zeros(&[3, 64, 64])),
        ("small".to_string(), Tensor::<f32>::zeros(&[3, 64, 31])),
    ];
    let pairs = make_pairs(&images, 4).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].source, "big");
}

fn sinusoid(h: usize, w: usize, period: f64) -> Tensor<f64> {
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let phase = 2.0 * std::f64::consts::PI * (x as f64 + 0.5 * y as f64) / period;
                data.push(0.5 + 0.3 * (phase + c as f64).cos());
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

fn roundtrip_error(hr: &Tensor<f64>, border: usize) -> f64 {
    let (h, w) = (hr.dim(1), hr.dim(2));
    let pair = make_pair(hr, 4, "band").unwrap().unwrap();
    let up = bicubic_resize(&pair.lr, h, w, true).unwrap();
    let mut err = 0.0f64;
    for c in 0..3 {
        for y in border..h - border {
            for x in border..w - border {
                let i = (c * h + y) * w + x;
                err = err.max((up.data()[i] - hr.data()[i]).abs());
            }
        }
    }
    err
}

#[test]
fn band_limited_roundtrip() {
    // errors relative to the unit intensity range
    assert!(roundtrip_error(&Tensor::full(&[3, 64, 96], 0.7), 0) < 1e-12);
    let err = roundtrip_error(&sinusoid(128, 128, 256.0), 0);
    assert!(err <= 0.02, "max error {err}");
    // away from the borders a faster sinusoid also survives
    let err = roundtrip_error(&sinusoid(128, 128, 48.0), 8);
    assert!(err <= 0.002, "interior error {err}");
}

/// Upper tail of the chi-square distribution (Wilson–Hilferty).
fn chi2_sf(stat: f64, dof: f64) -> f64 {
    let z = ((stat / dof).cbrt() - (1.0 - 2.0 / (9.0 * dof))) / (2.0 / (9.0 * dof)).sqrt();
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

#[test]
fn offsets_are_uniform() {
    let hr = Tensor::<f32>::zeros(&[3, 640, 640]);
    let pair = make_pair(&hr, 4, "u").unwrap().unwrap();
    let mut sampler = PatchSampler::new(64, 1, 2024);
    let n = 97;
    let draws = 10_000;
    let mut cells = vec![0usize; n * n];
    let mut rows = vec![0usize; n];
    let mut cols = vec![0usize; n];
    for _ in 0..draws {
        let (i, j) = sampler.offset(&pair).unwrap();
        cells[i * n + j] += 1;
        rows[i] += 1;
        cols[j] += 1;
    }
    let chi2 = |counts: &[usize]| {
        let e = draws as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum::<f64>()
    };
    for (name, counts) in [("joint", &cells), ("rows", &rows), ("cols", &cols)] {
        let p = chi2_sf(chi2(counts), (counts.len() - 1) as f64);
        assert!(p > 0.01, "{name}: p = {p}");
    }
}

#[test]
fn sampler_stream_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let images: Vec<(String, Tensor<f32>)> = (0..3)
        .map(|k| (format!("im{k}"), Tensor::rand_uniform(&[3, 48, 40], 0.0, 1.0, &mut rng)))
        .collect();
    let pairs = make_pairs(&images, 2).unwrap();
    let run = |seed| {
        let mut s = PatchSampler::new(12, 4, seed);
        s.augment = true;
        (0..5).map(|_| s.sample(&pairs).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    let (lr, hr) = &run(1)[0];
    assert_eq!(lr.shape(), &[4, 3, 12, 12]);
    assert_eq!(hr.shape(), &[4, 3, 24, 24]);
}

