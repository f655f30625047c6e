use std::path::Path;

use image::{GrayImage as PngGray, Luma, Rgb, RgbImage};
use sopool_core::dataset::{load_corpus, resize_bilinear};
use sopool_core::Error;

fn write_pgm(path: &Path, w: usize, h: usize, px: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.push(px(y, x));
        }
    }
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
}

/// Straightforward per-pixel bilinear sampling at `(i·(src−1)/(dst−1))`.
fn reference_bilinear(src: &[f64], side: usize, out: usize) -> Vec<f64> {
    let mut res = vec![0.0; out * out];
    let scale = (side - 1) as f64 / (out - 1) as f64;
    for y in 0..out {
        for x in 0..out {
            let (sy, sx) = (y as f64 * scale, x as f64 * scale);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(side - 1), (x0 + 1).min(side - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let p = |r: usize, c: usize| src[r * side + c];
            res[y * out + x] = p(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + p(y0, x1) * (1.0 - fy) * fx
                + p(y1, x0) * fy * (1.0 - fx)
                + p(y1, x1) * fy * fx;
        }
    }
    res
}

#[test]
fn loads_two_subjects_in_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    for s in ["bob", "alice"] {
        for i in (0..7).rev() {
            write_pgm(&dir.path().join(s).join(format!("{i}.pgm")), 80, 80, |y, x| ((y * 3 + x + i) % 256) as u8);
        }
    }
    let corpus = load_corpus(dir.path(), 64).unwrap();
    assert!(corpus.failures.is_empty());
    assert_eq!(corpus.images.len(), 14);
    assert!(corpus.images.iter().all(|i| i.rows() == 64 && i.cols() == 64));
    let order: Vec<(String, String)> = corpus
        .images
        .iter()
        .map(|i| (i.subject_id.clone(), Path::new(&i.source_path).file_name().unwrap().to_string_lossy().into()))
        .collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
    assert_eq!(order[0].0, "alice");

    let again = load_corpus(dir.path(), 64).unwrap();
    assert_eq!(corpus.images, again.images);
}

#[test]
fn white_pgm_scales_to_one() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(&dir.path().join("s/white.pgm"), 10, 10, |_, _| 255);
    let corpus = load_corpus(dir.path(), 10).unwrap();
    assert!(corpus.images[0].pixels().iter().all(|&p| p == 1.0));
}

#[test]
fn png_resize_keeps_corners_and_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    let side = 121;
    let img = PngGray::from_fn(side as u32, side as u32, |x, y| Luma([((x + 2 * y) % 256) as u8]));
    std::fs::create_dir_all(dir.path().join("s")).unwrap();
    img.save(dir.path().join("s/grad.png")).unwrap();

    let corpus = load_corpus(dir.path(), 64).unwrap();
    let out = &corpus.images[0];
    let src: Vec<f64> = img.pixels().map(|p| p[0] as f64 / 255.0).collect();
    for (y, x) in [(0, 0), (0, 63), (63, 0), (63, 63)] {
        let (sy, sx) = (y * 120 / 63, x * 120 / 63);
        assert_eq!(out.get(y, x), src[sy * side + sx], "corner ({y}, {x})");
    }
    let want = reference_bilinear(&src, side, 64);
    for (a, b) in out.pixels().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rgb_png_uses_luma_weights() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("s")).unwrap();
    RgbImage::from_pixel(4, 4, Rgb([200, 100, 50])).save(dir.path().join("s/c.png")).unwrap();
    let corpus = load_corpus(dir.path(), 4).unwrap();
    let want = (0.299 * 200.0 + 0.587 * 100.0 + 0.114 * 50.0) / 255.0;
    assert!(corpus.images[0].pixels().iter().all(|p| (p - want).abs() < 1e-12));
}

#[test]
fn unreadable_files_are_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    write_pgm(&dir.path().join("s/ok.pgm"), 8, 8, |_, _| 10);
    std::fs::write(dir.path().join("s/broken.pgm"), b"P5\n8 8\n255\nshort").unwrap();
    std::fs::write(dir.path().join("s/notes.txt"), b"hello").unwrap();
    let corpus = load_corpus(dir.path(), 8).unwrap();
    assert_eq!(corpus.images.len(), 1);
    assert_eq!(corpus.failures.len(), 2);
}

#[test]
fn empty_corpus_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("nobody")).unwrap();
    assert!(matches!(load_corpus(dir.path(), 8), Err(Error::EmptyCorpus(_))));
    assert!(load_corpus(&dir.path().join("missing"), 8).is_err());
}

#[test]
fn same_size_resize_is_bit_identical() {
    let px: Vec<f64> = (0..64 * 64).map(|i| (i % 97) as f64 / 96.0).collect();
    assert_eq!(resize_bilinear(&px, 64, 64, 64, 64), px);
}
