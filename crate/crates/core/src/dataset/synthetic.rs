//! Procedural endoscopy-like frames for smoke tests and benchmarks.
//!
//! Each frame shows a textured reddish background with a dark instrument
//! shaft entering from one edge and a bright manipulator at its tip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loader::{Frame, Sequence, Sequences};
use super::mask::{ClassMap, ImageTensor, LabelMask};
use crate::tensor_ops::Tensor;

const BACKGROUND: [f32; 3] = [0.72, 0.32, 0.30];
const SHAFT: [f32; 3] = [0.22, 0.22, 0.26];
const MANIPULATOR: [f32; 3] = [0.86, 0.86, 0.90];

/// One synthetic frame with 3-class labels.
pub fn tool_frame(height: usize, width: usize, rng: &mut impl Rng) -> Frame {
    // Shaft: horizontal or vertical band from one edge to ~60% of the extent.
    let vertical = rng.random_bool(0.5);
    let from_start = rng.random_bool(0.5);
    let (along, across) = if vertical { (height, width) } else { (width, height) };
    let band = (across as f32 * rng.random_range(0.28..0.38)) as usize;
    let offset = rng.random_range(across / 8..across - across / 8 - band);
    let tip = (along as f32 * rng.random_range(0.5..0.65)) as usize;
    let head = (along as f32 * rng.random_range(0.22..0.3)) as usize;
    let (shaft_range, head_range) = if from_start {
        (0..tip, tip..(tip + head).min(along))
    } else {
        (along - tip..along, along.saturating_sub(tip + head)..along - tip)
    };
    let tint: f32 = rng.random_range(-0.06..0.06);

    let mut labels = vec![0u8; height * width];
    let mut pixels = vec![0f32; height * width * 3];
    for y in 0..height {
        for x in 0..width {
            let (a, c) = if vertical { (y, x) } else { (x, y) };
            let in_band = c >= offset && c < offset + band;
            let label = if in_band && shaft_range.contains(&a) {
                ClassMap::SHAFT
            } else if in_band && head_range.contains(&a) {
                ClassMap::MANIPULATOR
            } else {
                ClassMap::BACKGROUND
            };
            labels[y * width + x] = label;
            let base = match label {
                ClassMap::SHAFT => SHAFT,
                ClassMap::MANIPULATOR => MANIPULATOR,
                _ => BACKGROUND,
            };
            // Low-frequency shading plus per-pixel noise.
            let shade = 0.05 * ((x as f32 * 0.15).sin() + (y as f32 * 0.11).cos());
            for ch in 0..3 {
                let noise: f32 = rng.random_range(-0.04..0.04);
                pixels[(y * width + x) * 3 + ch] = (base[ch] + tint + shade + noise).clamp(0.0, 1.0);
            }
        }
    }
    Frame {
        image: ImageTensor::new(Tensor::new(vec![height, width, 3], pixels).expect("image size"))
            .expect("values clamped to [0, 1]"),
        mask: LabelMask::new(height, width, 3, labels).expect("labels below 3"),
    }
}

/// `sequences × frames_per_sequence` synthetic frames, deterministic in `seed`.
pub fn tool_dataset(
    sequences: usize,
    frames_per_sequence: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Sequences<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sequences {
        sequences: (0..sequences)
            .map(|s| Sequence {
                id: format!("seq{}", s + 1),
                frames: (0..frames_per_sequence)
                    .map(|_| tool_frame(height, width, &mut rng))
                    .collect(),
            })
            .collect(),
        class_map: ClassMap::multiclass(),
    }
}

/// Write a dataset in the on-disk layout (`<seq>/images`, `<seq>/masks`).
pub fn write_dataset(dataset: &Sequences<Frame>, root: &std::path::Path) -> crate::Result<()> {
    for seq in &dataset.sequences {
        let images = root.join(&seq.id).join("images");
        let masks = root.join(&seq.id).join("masks");
        for dir in [&images, &masks] {
            std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir.as_path(), e))?;
        }
        for (i, frame) in seq.frames.iter().enumerate() {
            let name = format!("frame{i:04}.png");
            frame.image.save(&images.join(&name))?;
            frame.mask.save(&masks.join(&name))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_contain_all_classes() {
        let ds = tool_dataset(1, 8, 64, 64, 3);
        for frame in &ds.sequences[0].frames {
            for class in 0..3u8 {
                assert!(frame.mask.labels().contains(&class));
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(tool_dataset(2, 2, 32, 40, 9), tool_dataset(2, 2, 32, 40, 9));
    }
}
