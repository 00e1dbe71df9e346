use std::collections::BTreeSet;
use std::path::Path;

use colorfuse::dataset::{
    batch_plan, load_example, load_rgb, read_class_list, scan, ExampleSource, Split, SplitSource,
};
use colorfuse::Error;

fn write_png(path: &Path, size: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::RgbImage::from_fn(size, size, |x, y| image::Rgb(f(x, y))).save(path).unwrap();
}

/// `splits x classes x 3` tiny PNGs.
fn toy_tree(root: &Path, classes: &[&str]) {
    for split in ["train", "val", "test"] {
        for (c, name) in classes.iter().enumerate() {
            for i in 0..3u8 {
                let p = root.join(split).join(name).join(format!("img{i}.png"));
                write_png(&p, 8, |x, y| [40 * c as u8 + i, (x * 20) as u8, (y * 20) as u8]);
            }
        }
    }
}

#[test]
fn toy_tree_scans_to_eighteen_entries() {
    let dir = tempfile::tempdir().unwrap();
    toy_tree(dir.path(), &["meadow", "coast"]);
    std::fs::write(dir.path().join("train/coast/notes.txt"), "not an image").unwrap();
    let m = scan(dir.path(), None).unwrap();
    assert_eq!(m.classes, ["coast", "meadow"]);
    assert_eq!(m.entries.len(), 18);
    assert_eq!(m.entries.iter().map(|e| e.class).collect::<BTreeSet<_>>(), BTreeSet::from([0, 1]));
    for split in Split::ALL {
        assert_eq!(m.split_indices(split).len(), 6);
    }
    assert!(m.entries.iter().all(|e| m.root.join(&e.path).is_file()));
    assert_eq!(scan(dir.path(), None).unwrap(), m);
}

#[test]
fn class_list_filters_and_reports_missing() {
    let dir = tempfile::tempdir().unwrap();
    toy_tree(dir.path(), &["meadow", "coast"]);
    let list = dir.path().join("classes.txt");
    std::fs::write(&list, "# landscape\nmeadow\n\nglacier\n").unwrap();
    let names = read_class_list(&list).unwrap();
    assert_eq!(names, ["meadow", "glacier"]);
    let m = scan(dir.path(), Some(&names)).unwrap();
    assert_eq!(m.classes, ["meadow"]);
    assert_eq!(m.missing_classes, ["glacier"]);
    assert_eq!(m.entries.len(), 9);
    assert!(m.entries.iter().all(|e| e.class == 0 && e.path.starts_with(Path::new(e.split.dir_name()).join("meadow"))));
}

#[test]
fn empty_or_missing_roots_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(scan(dir.path(), None), Err(Error::Dataset(_))));
    assert!(scan(&dir.path().join("absent"), None).is_err());
    toy_tree(dir.path(), &["meadow"]);
    assert!(scan(dir.path(), Some(&["glacier".to_string()])).is_err());
}

#[test]
fn gray_source_has_midpoint_chroma_and_replicated_lightness() {
    let dir = tempfile::tempdir().unwrap();
    write_png(&dir.path().join("test/gray/a.png"), 40, |x, y| {
        let v = (x * 5 + y) as u8;
        [v, v, v]
    });
    let m = scan(dir.path(), None).unwrap();
    let ex = load_example(&m, 0, 32).unwrap();
    assert_eq!(ex.input.shape(), [3, 32, 32]);
    assert_eq!(ex.target.shape(), [2, 32, 32]);
    let mid = 128.0 / 255.0;
    assert!(ex.target.data().iter().all(|&v| (f64::from(v) - mid).abs() <= 2.0 / 255.0));
    let plane = 32 * 32;
    let d = ex.input.data();
    assert_eq!(d[..plane], d[plane..2 * plane]);
    assert_eq!(d[..plane], d[2 * plane..]);
    assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn solid_color_is_resolution_independent() {
    let dir = tempfile::tempdir().unwrap();
    let color = [183, 64, 29];
    write_png(&dir.path().join("train/a/big.png"), 512, |_, _| color);
    write_png(&dir.path().join("train/a/small.png"), 256, |_, _| color);
    let m = scan(dir.path(), None).unwrap();
    let a = load_example(&m, 0, 256).unwrap();
    let b = load_example(&m, 1, 256).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decode_failure_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("val/a/broken.png");
    std::fs::create_dir_all(bad.parent().unwrap()).unwrap();
    std::fs::write(&bad, b"\x89PNG\r\n\x1a\nnot really").unwrap();
    let m = scan(dir.path(), None).unwrap();
    let source = SplitSource::new(&m, Split::Val, 16).unwrap();
    let err = source.load(0).unwrap_err();
    assert!(err.to_string().contains("broken.png"), "{err}");
    assert!(matches!(load_rgb(&bad, 16), Err(Error::Decode { .. })));
    assert!(SplitSource::new(&m, Split::Train, 16).is_err());
}

#[test]
fn batches_cover_each_epoch_once() {
    for epoch in 0..3 {
        let plan = batch_plan(37, 8, 11, epoch);
        let mut all: Vec<usize> = plan.concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_eq!(plan.iter().map(Vec::len).collect::<Vec<_>>(), [8, 8, 8, 8, 5]);
    }
    assert_ne!(batch_plan(100, 100, 11, 1), batch_plan(100, 100, 11, 2));
    assert_ne!(batch_plan(100, 100, 11, 1), batch_plan(100, 100, 12, 1));
}
