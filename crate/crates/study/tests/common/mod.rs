#![allow(dead_code)]

use std::path::Path;

use colorfuse_study::{SourceSpec, StudySpec};

pub const TRUTH: &str = "label-groundtruth";
pub const BROKEN: &str = "label-corrupted";

fn pattern(i: u32, x: u32, y: u32) -> [u8; 3] {
    [(x * 31 + i * 17) as u8, (y * 23 + i * 5) as u8, ((x ^ y) * 7 + i * 41) as u8]
}

/// `n` distinct ground-truth images and channel-rotated twins.
pub fn fixture(root: &Path, n: u32) -> StudySpec {
    let truth = root.join("truth_dir");
    let broken = root.join("corrupted_dir");
    std::fs::create_dir_all(&truth).unwrap();
    std::fs::create_dir_all(&broken).unwrap();
    for i in 0..n {
        let img = image::RgbImage::from_fn(8, 8, |x, y| image::Rgb(pattern(i, x, y)));
        img.save(truth.join(format!("secret_truth_{i}.png"))).unwrap();
        let bad = image::RgbImage::from_fn(8, 8, |x, y| {
            let [r, g, b] = pattern(i, x, y);
            image::Rgb([g, b, r])
        });
        bad.save(broken.join(format!("secret_broken_{i}.png"))).unwrap();
    }
    StudySpec {
        name: "fixture".into(),
        sources: vec![SourceSpec { label: TRUTH.into(), dir: truth }, SourceSpec { label: BROKEN.into(), dir: broken }],
        trials_per_session: None,
    }
}

/// Pixels of every ground-truth image in the fixture.
pub fn truth_pixels(root: &Path) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root.join("truth_dir")).unwrap() {
        out.push(image::open(entry.unwrap().path()).unwrap().to_rgb8().into_raw());
    }
    out
}

pub fn decode(png: &[u8]) -> Vec<u8> {
    image::load_from_memory_with_format(png, image::ImageFormat::Png).unwrap().to_rgb8().into_raw()
}
