use std::path::Path;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_ops::Tensor;

/// Class names indexed by ID.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub const BACKGROUND: u8 = 0;
    pub const SHAFT: u8 = 1;
    pub const MANIPULATOR: u8 = 2;
    pub const TOOL: u8 = 1;

    /// `{0: background, 1: shaft, 2: manipulator}`.
    pub fn multiclass() -> Self {
        Self::new(["background", "shaft", "manipulator"])
    }

    /// `{0: background, 1: tool}`.
    pub fn binary() -> Self {
        Self::new(["background", "tool"])
    }

    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// RGB image, `h × w × 3`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor<f32>);

impl ImageTensor {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        match tensor.shape() {
            [_, _, 3] => {}
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "image must be h×w×3, got {other:?}"
                )))
            }
        }
        if tensor.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        Ok(Self(tensor))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
        Self(Tensor::new(vec![h as usize, w as usize, 3], data).expect("rgb buffer size"))
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .0
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.width() as u32, self.height() as u32, bytes)
            .expect("rgb buffer size")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    /// Copy of the `h × w` window at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        let src = &self.0;
        Self(Tensor::from_fn(vec![h, w, 3], |ix| {
            *src.get(&[top + ix[0], left + ix[1], ix[2]])
        }))
    }
}

/// Per-channel standardisation applied after scaling to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// ImageNet statistics.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalization {
    pub fn apply(&self, image: &ImageTensor) -> Tensor<f32> {
        let t = image.tensor();
        let mut out = t.clone();
        for px in out.data_mut().chunks_exact_mut(3) {
            for ((v, m), s) in px.iter_mut().zip(self.mean).zip(self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Per-pixel class IDs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}×{width} mask needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::invalid("num_classes must be in 1..=256"));
        }
        if let Some((pixel, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| usize::from(l) >= num_classes)
        {
            return Err(Error::InvalidLabel {
                label: label.into(),
                pixel,
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn from_rows(rows: &[&[u8]], num_classes: usize) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::ShapeMismatch("ragged mask rows".into()));
        }
        Self::new(h, w, num_classes, rows.concat())
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, label: u8) -> Result<Self> {
        Self::new(height, width, num_classes, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Argmax over the last axis of `h × w × C` scores; ties go to the lowest
    /// class index.
    pub fn argmax(scores: &Tensor<f32>) -> Result<Self> {
        let &[h, w, c] = scores.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "expected h×w×C scores, got {:?}",
                scores.shape()
            )));
        };
        let labels = scores
            .data()
            .chunks_exact(c)
            .map(|px| {
                let mut best = 0;
                for (k, &v) in px.iter().enumerate().skip(1) {
                    if v > px[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        Self::new(h, w, c, labels)
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        let labels = (0..h)
            .flat_map(|r| {
                let start = (top + r) * self.width + left;
                self.labels[start..start + w].iter().copied()
            })
            .collect();
        Self {
            height: h,
            width: w,
            num_classes: self.num_classes,
            labels,
        }
    }

    /// Read an 8-bit single-channel PNG of class IDs.
    pub fn read(path: &Path, num_classes: usize) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, num_classes, img.into_raw())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("mask buffer size")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })
    }
}

/// `h × w × C` indicator array; every pixel holds exactly one 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OneHotMask {
    height: usize,
    width: usize,
    num_classes: usize,
    values: Vec<u8>,
}

impl OneHotMask {
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.num_classes]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let start = (row * self.width + col) * self.num_classes;
        &self.values[start..start + self.num_classes]
    }

    /// Inverse of [`encode_one_hot`].
    pub fn decode(&self) -> LabelMask {
        let labels = self
            .values
            .chunks_exact(self.num_classes)
            .map(|px| px.iter().position(|&v| v == 1).unwrap_or(0) as u8)
            .collect();
        LabelMask {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            labels,
        }
    }
}

/// `out[p][c] = 1` iff `mask[p] == c`.
pub fn encode_one_hot(mask: &LabelMask, num_classes: usize) -> Result<OneHotMask> {
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be positive"));
    }
    let mut values = vec![0u8; mask.labels.len() * num_classes];
    for (pixel, &label) in mask.labels.iter().enumerate() {
        if usize::from(label) >= num_classes {
            return Err(Error::InvalidLabel {
                label: label.into(),
                pixel,
                num_classes,
            });
        }
        values[pixel * num_classes + usize::from(label)] = 1;
    }
    Ok(OneHotMask {
        height: mask.height,
        width: mask.width,
        num_classes,
        values,
    })
}

/// Collapse shaft and manipulator into a single tool class.
pub fn to_binary(mask: &LabelMask) -> Result<LabelMask> {
    if mask.num_classes > 3 {
        return Err(Error::invalid(format!(
            "binary mapping expects the 3-class map, mask declares {} classes",
            mask.num_classes
        )));
    }
    LabelMask::new(
        mask.height,
        mask.width,
        2,
        mask.labels.iter().map(|&l| u8::from(l != 0)).collect(),
    )
}
