//! Sanity checks on the bundled 8x8 handwritten-digits IDX files.

use std::path::PathBuf;

use impsgd::datasets::{self, Dataset};
use impsgd::losses::Targets;

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn bundled_digits_have_expected_header_fields() {
    // header fields independently verified against a hex dump of the files:
    // image magic 0x00000803, 1797 items of 8x8; label magic 0x00000801, 1797
    let ds: Dataset<f64> = datasets::load_idx(
        data_path("digits-images-idx3-ubyte"),
        data_path("digits-labels-idx1-ubyte"),
    )
    .expect("bundled fixture loads");
    assert_eq!(ds.len(), 1797);
    assert_eq!(ds.dim(), 64);
    assert_eq!(ds.image_shape(), Some((8, 8)));
    assert_eq!(ds.num_classes(), Some(10));
    assert!(ds.inputs().iter().all(|&v| (0.0..=1.0).contains(&v)));
    match ds.targets() {
        Targets::Classes(classes) => {
            for c in 0..10usize {
                assert!(classes.iter().any(|&x| x == c), "class {c} missing");
            }
        }
        _ => panic!("digit labels must be classes"),
    }
}

#[test]
fn bundled_digits_round_trip_byte_exactly() {
    let images = data_path("digits-images-idx3-ubyte");
    let labels = data_path("digits-labels-idx1-ubyte");
    let ds: Dataset<f64> = datasets::load_idx(&images, &labels).expect("loads");

    let dir = tempfile::tempdir().unwrap();
    let images2 = dir.path().join("img");
    let labels2 = dir.path().join("lbl");
    datasets::write_idx(&ds, &images2, &labels2).expect("writes");
    assert_eq!(std::fs::read(&images).unwrap(), std::fs::read(&images2).unwrap());
    assert_eq!(std::fs::read(&labels).unwrap(), std::fs::read(&labels2).unwrap());
}
