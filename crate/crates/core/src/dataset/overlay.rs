use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::mask::{ImageTensor, LabelMask};
use crate::error::{Error, Result};
use crate::tensor_ops::Tensor;

/// Display colour per class ID. Parsed from text lines `class_id R G B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: BTreeMap<u8, [u8; 3]>,
}

impl Palette {
    pub fn new(colors: impl IntoIterator<Item = (u8, [u8; 3])>) -> Self {
        Self {
            colors: colors.into_iter().collect(),
        }
    }

    /// Black background, green shaft (or tool), red manipulator.
    pub fn default_for(num_classes: usize) -> Self {
        let all = [(0, [0, 0, 0]), (1, [0, 200, 0]), (2, [220, 30, 30])];
        Self::new(all.into_iter().take(num_classes))
    }

    pub fn color(&self, class: u8) -> Option<[u8; 3]> {
        self.colors.get(&class).copied()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut colors = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<u8> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse("palette", format!("line {}: {e}", lineno + 1)))?;
            let [id, r, g, b] = fields[..] else {
                return Err(Error::parse(
                    "palette",
                    format!("line {}: expected `class_id R G B`", lineno + 1),
                ));
            };
            colors.insert(id, [r, g, b]);
        }
        Ok(Self { colors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Alpha-blend the palette colour of every non-background pixel over the
/// image; background pixels are copied unchanged.
pub fn render_overlay(
    image: &ImageTensor,
    mask: &LabelMask,
    palette: &Palette,
    alpha: f32,
) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} is not in [0, 1]")));
    }
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch(format!(
            "image is {}×{}, mask is {}×{}",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        )));
    }
    let mut colors = vec![None; mask.num_classes()];
    for (class, slot) in colors.iter_mut().enumerate().skip(1) {
        let c = palette
            .color(class as u8)
            .ok_or_else(|| Error::invalid(format!("palette has no colour for class {class}")))?;
        *slot = Some(c.map(|v| f32::from(v) / 255.0));
    }
    let mut data = image.tensor().data().to_vec();
    for (px, &label) in data.chunks_exact_mut(3).zip(mask.labels()) {
        if let Some(color) = colors[usize::from(label)] {
            for (v, c) in px.iter_mut().zip(color) {
                *v = (1.0 - alpha) * *v + alpha * c;
            }
        }
    }
    ImageTensor::new(Tensor::new(image.tensor().shape().to_vec(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: u8) -> ImageTensor {
        ImageTensor::new(Tensor::full(vec![h, w, 3], f32::from(v) / 255.0)).unwrap()
    }

    #[test]
    fn zero_alpha_is_identity() {
        let img = gray(4, 4, 100);
        let mask = LabelMask::filled(4, 4, 3, 1).unwrap();
        let out = render_overlay(&img, &mask, &Palette::default_for(3), 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn full_alpha_paints_class_colour() {
        let img = gray(2, 3, 100);
        let mask = LabelMask::filled(2, 3, 3, 1).unwrap();
        let out = render_overlay(&img, &mask, &Palette::default_for(3), 1.0).unwrap();
        assert!(out.to_rgb8().pixels().all(|p| p.0 == [0, 200, 0]));
    }

    #[test]
    fn half_blend() {
        let img = gray(1, 2, 100);
        let mask = LabelMask::from_rows(&[&[0, 2]], 3).unwrap();
        let palette = Palette::new([(1, [0, 0, 0]), (2, [200, 200, 200])]);
        let out = render_overlay(&img, &mask, &palette, 0.5).unwrap().to_rgb8();
        assert_eq!(out.get_pixel(0, 0).0, [100; 3]);
        assert_eq!(out.get_pixel(1, 0).0, [150; 3]);
    }

    #[test]
    fn missing_colour_rejected() {
        let img = gray(1, 1, 0);
        let mask = LabelMask::filled(1, 1, 3, 0).unwrap();
        let palette = Palette::new([(1, [1, 2, 3])]);
        assert!(matches!(
            render_overlay(&img, &mask, &palette, 0.5),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn palette_file_format() {
        let p = Palette::parse("# comment\n1 0 255 0\n2 255 0 0\n").unwrap();
        assert_eq!(p.color(2), Some([255, 0, 0]));
        assert!(Palette::parse("1 2 3").is_err());
        assert!(Palette::parse("1 2 3 300").is_err());
    }
}
