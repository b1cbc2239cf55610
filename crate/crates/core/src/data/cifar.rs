//! CIFAR-10 / CIFAR-100 binary batches.
//!
//! CIFAR-10 records are one label byte followed by 3072 pixel bytes (red,
//! green and blue planes of a 32×32 image). CIFAR-100 records carry a coarse
//! and a fine label byte before the pixels. Pixels are scaled to `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::dataset::{concat, Dataset, Labels, Split};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const IMAGE_SHAPE: [usize; 3] = [3, 32, 32];
pub const PIXELS: usize = 3072;
pub const CIFAR10_RECORD: usize = 1 + PIXELS;
pub const CIFAR100_RECORD: usize = 2 + PIXELS;

/// Environment variable naming the directory that holds the extracted batches.
pub const DATA_ROOT_ENV: &str = "FORGETTING_DATA_ROOT";

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub const CIFAR10_ANIMALS: [&str; 6] = ["bird", "cat", "deer", "dog", "frog", "horse"];
pub const CIFAR10_OBJECTS: [&str; 4] = ["airplane", "automobile", "ship", "truck"];

pub const CIFAR100_COARSE: [&str; 20] = [
    "aquatic_mammals",
    "fish",
    "flowers",
    "food_containers",
    "fruit_and_vegetables",
    "household_electrical_devices",
    "household_furniture",
    "insects",
    "large_carnivores",
    "large_man-made_outdoor_things",
    "large_natural_outdoor_scenes",
    "large_omnivores_and_herbivores",
    "medium_mammals",
    "non-insect_invertebrates",
    "people",
    "reptiles",
    "small_mammals",
    "trees",
    "vehicles_1",
    "vehicles_2",
];

pub const CIFAR100_FINE: [&str; 100] = [
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle", "bicycle", "bottle",
    "bowl", "boy", "bridge", "bus", "butterfly", "camel", "can", "castle", "caterpillar", "cattle",
    "chair", "chimpanzee", "clock", "cloud", "cockroach", "couch", "crab", "crocodile", "cup", "dinosaur",
    "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster", "house", "kangaroo", "keyboard",
    "lamp", "lawn_mower", "leopard", "lion", "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain",
    "mouse", "mushroom", "oak_tree", "orange", "orchid", "otter", "palm_tree", "pear", "pickup_truck", "pine_tree",
    "plain", "plate", "poppy", "porcupine", "possum", "rabbit", "raccoon", "ray", "road", "rocket",
    "rose", "sea", "seal", "shark", "shrew", "skunk", "skyscraper", "snail", "snake", "spider",
    "squirrel", "streetcar", "sunflower", "sweet_pepper", "table", "tank", "telephone", "television", "tiger", "tractor",
    "train", "trout", "tulip", "turtle", "wardrobe", "whale", "willow_tree", "wolf", "woman", "worm",
];

/// Fine classes of each superclass, in superclass order.
pub const CIFAR100_HIERARCHY: [[&str; 5]; 20] = [
    ["beaver", "dolphin", "otter", "seal", "whale"],
    ["aquarium_fish", "flatfish", "ray", "shark", "trout"],
    ["orchid", "poppy", "rose", "sunflower", "tulip"],
    ["bottle", "bowl", "can", "cup", "plate"],
    ["apple", "mushroom", "orange", "pear", "sweet_pepper"],
    ["clock", "keyboard", "lamp", "telephone", "television"],
    ["bed", "chair", "couch", "table", "wardrobe"],
    ["bee", "beetle", "butterfly", "caterpillar", "cockroach"],
    ["bear", "leopard", "lion", "tiger", "wolf"],
    ["bridge", "castle", "house", "road", "skyscraper"],
    ["cloud", "forest", "mountain", "plain", "sea"],
    ["camel", "cattle", "chimpanzee", "elephant", "kangaroo"],
    ["fox", "porcupine", "possum", "raccoon", "skunk"],
    ["crab", "lobster", "snail", "spider", "worm"],
    ["baby", "boy", "girl", "man", "woman"],
    ["crocodile", "dinosaur", "lizard", "snake", "turtle"],
    ["hamster", "mouse", "rabbit", "shrew", "squirrel"],
    ["maple_tree", "oak_tree", "palm_tree", "pine_tree", "willow_tree"],
    ["bicycle", "bus", "motorcycle", "pickup_truck", "train"],
    ["lawn_mower", "rocket", "streetcar", "tank", "tractor"],
];

/// Superclass of a fine class name.
pub fn superclass_of(fine: &str) -> Option<&'static str> {
    CIFAR100_HIERARCHY
        .iter()
        .position(|subs| subs.contains(&fine))
        .map(|i| CIFAR100_COARSE[i])
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn check_len(len: usize, record: usize) -> Result<usize> {
    if len == 0 || len % record != 0 {
        let offset = (len - len % record) as u64;
        return Err(Error::Format {
            offset,
            reason: format!("{len} bytes is not a whole number of {record}-byte records"),
        });
    }
    Ok(len / record)
}

fn pixels(rec: &[u8], out: &mut Vec<f64>) {
    out.extend(rec.iter().map(|&b| f64::from(b) / 255.0));
}

/// Parses CIFAR-10 records from memory.
pub fn parse_cifar10(bytes: &[u8], split: Split) -> Result<Dataset> {
    let n = check_len(bytes.len(), CIFAR10_RECORD)?;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        let y = rec[0] as usize;
        if y >= 10 {
            return Err(Error::Format {
                offset: (i * CIFAR10_RECORD) as u64,
                reason: format!("label byte {y} is not a CIFAR-10 class"),
            });
        }
        labels.push(y);
        pixels(&rec[1..], &mut data);
    }
    Dataset::new(
        Tensor::from_parts(vec![n, PIXELS], data),
        IMAGE_SHAPE.to_vec(),
        Labels::Hard(labels),
        names(&CIFAR10_CLASSES),
        split,
    )
}

/// Parses CIFAR-100 records; labels are fine classes and the coarse labels are attached.
pub fn parse_cifar100(bytes: &[u8], split: Split) -> Result<Dataset> {
    let n = check_len(bytes.len(), CIFAR100_RECORD)?;
    let mut coarse = Vec::with_capacity(n);
    let mut fine = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR100_RECORD).enumerate() {
        let (c, f) = (rec[0] as usize, rec[1] as usize);
        if c >= 20 || f >= 100 {
            return Err(Error::Format {
                offset: (i * CIFAR100_RECORD) as u64,
                reason: format!("label bytes ({c}, {f}) out of range"),
            });
        }
        coarse.push(c);
        fine.push(f);
        pixels(&rec[2..], &mut data);
    }
    Dataset::new(
        Tensor::from_parts(vec![n, PIXELS], data),
        IMAGE_SHAPE.to_vec(),
        Labels::Hard(fine),
        names(&CIFAR100_FINE),
        split,
    )?
    .with_coarse(coarse, names(&CIFAR100_COARSE))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_cifar10(path: &Path, split: Split) -> Result<Dataset> {
    parse_cifar10(&read(path)?, split)
}

pub fn load_cifar100(path: &Path, split: Split) -> Result<Dataset> {
    parse_cifar100(&read(path)?, split)
}

/// Loads the standard batch files below `root` (`cifar-10-batches-bin` layout).
pub fn load_cifar10_dir(root: &Path) -> Result<(Dataset, Dataset)> {
    let dir = subdir(root, "cifar-10-batches-bin");
    let mut train = Vec::new();
    for i in 1..=5 {
        train.push(load_cifar10(&dir.join(format!("data_batch_{i}.bin")), Split::Train)?);
    }
    let refs: Vec<&Dataset> = train.iter().collect();
    Ok((concat(&refs)?, load_cifar10(&dir.join("test_batch.bin"), Split::Test)?))
}

/// Loads `train.bin` and `test.bin` below `root` (`cifar-100-binary` layout).
pub fn load_cifar100_dir(root: &Path) -> Result<(Dataset, Dataset)> {
    let dir = subdir(root, "cifar-100-binary");
    Ok((
        load_cifar100(&dir.join("train.bin"), Split::Train)?,
        load_cifar100(&dir.join("test.bin"), Split::Test)?,
    ))
}

fn subdir(root: &Path, name: &str) -> PathBuf {
    let nested = root.join(name);
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn name_tables_are_consistent() {
        assert_eq!(CIFAR100_FINE.len(), 100);
        let mut all: Vec<&str> = CIFAR100_HIERARCHY.iter().flatten().copied().collect();
        all.sort_unstable();
        let mut fine = CIFAR100_FINE.to_vec();
        fine.sort_unstable();
        assert_eq!(all, fine);
        assert_eq!(superclass_of("possum"), Some("medium_mammals"));
    }

    #[test]
    fn ten_cifar10_records() {
        let mut bytes = vec![0u8; 10 * CIFAR10_RECORD];
        for i in 0..10 {
            bytes[i * CIFAR10_RECORD] = i as u8;
            bytes[i * CIFAR10_RECORD + 1] = 255;
        }
        let d = parse_cifar10(&bytes, Split::Train).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.hard_labels().unwrap()[7], 7);
        assert_eq!(d.inputs().get(3, 0), 1.0);
        assert_eq!(d.inputs().get(3, 1), 0.0);
    }

    #[test]
    fn one_cifar100_record() {
        let mut bytes = vec![0u8; CIFAR100_RECORD];
        bytes[0] = 12;
        bytes[1] = 64;
        let d = parse_cifar100(&bytes, Split::Test).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.coarse().unwrap(), &[12]);
        assert_eq!(d.class_names()[64], "possum");
    }

    #[test]
    fn truncated_file_is_format_error() {
        let bytes = vec![0u8; 2 * CIFAR10_RECORD - 5];
        match parse_cifar10(&bytes, Split::Train) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, CIFAR10_RECORD as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
