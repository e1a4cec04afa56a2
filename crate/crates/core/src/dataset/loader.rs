use std::fs;
use std::path::{Path, PathBuf};

use super::mask::{to_binary, ClassMap, ImageTensor, LabelMask};
use crate::error::{Error, Result};

/// One annotated frame on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePaths {
    pub stem: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// One annotated frame in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: ImageTensor,
    pub mask: LabelMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence<F> {
    pub id: String,
    pub frames: Vec<F>,
}

/// Ordered sequences of frames sharing one class map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequences<F> {
    pub sequences: Vec<Sequence<F>>,
    pub class_map: ClassMap,
}

pub type SequenceDataset = Sequences<FramePaths>;

impl<F> Sequences<F> {
    pub fn num_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_frames() == 0
    }
}

/// Random access to annotated frames, grouped by sequence.
pub trait FrameSource: Sync {
    fn class_map(&self) -> &ClassMap;
    fn num_sequences(&self) -> usize;
    fn sequence_id(&self, sequence: usize) -> &str;
    fn sequence_len(&self, sequence: usize) -> usize;
    fn frame(&self, sequence: usize, index: usize) -> Result<Frame>;

    fn num_classes(&self) -> usize {
        self.class_map().len()
    }

    fn total_frames(&self) -> usize {
        (0..self.num_sequences()).map(|s| self.sequence_len(s)).sum()
    }

    /// `(sequence, frame)` pairs in dataset order.
    fn frame_index(&self) -> Vec<(usize, usize)> {
        (0..self.num_sequences())
            .flat_map(|s| (0..self.sequence_len(s)).map(move |i| (s, i)))
            .collect()
    }
}

impl FrameSource for Sequences<FramePaths> {
    fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    fn num_sequences(&self) -> usize {
        self.sequences.len()
    }

    fn sequence_id(&self, sequence: usize) -> &str {
        &self.sequences[sequence].id
    }

    fn sequence_len(&self, sequence: usize) -> usize {
        self.sequences[sequence].frames.len()
    }

    fn frame(&self, sequence: usize, index: usize) -> Result<Frame> {
        let paths = &self.sequences[sequence].frames[index];
        let image = ImageTensor::read(&paths.image)?;
        let mask = LabelMask::read(&paths.mask, self.class_map.len())?;
        check_frame_shape(&paths.image, (image.height(), image.width()), &mask)?;
        Ok(Frame { image, mask })
    }
}

impl FrameSource for Sequences<Frame> {
    fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    fn num_sequences(&self) -> usize {
        self.sequences.len()
    }

    fn sequence_id(&self, sequence: usize) -> &str {
        &self.sequences[sequence].id
    }

    fn sequence_len(&self, sequence: usize) -> usize {
        self.sequences[sequence].frames.len()
    }

    fn frame(&self, sequence: usize, index: usize) -> Result<Frame> {
        Ok(self.sequences[sequence].frames[index].clone())
    }
}

/// View of a 3-class source with shaft and manipulator merged into "tool".
pub struct Binarized<S> {
    inner: S,
    class_map: ClassMap,
}

impl<S: FrameSource> Binarized<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            class_map: ClassMap::binary(),
        }
    }
}

impl<S: FrameSource> FrameSource for Binarized<S> {
    fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    fn num_sequences(&self) -> usize {
        self.inner.num_sequences()
    }

    fn sequence_id(&self, sequence: usize) -> &str {
        self.inner.sequence_id(sequence)
    }

    fn sequence_len(&self, sequence: usize) -> usize {
        self.inner.sequence_len(sequence)
    }

    fn frame(&self, sequence: usize, index: usize) -> Result<Frame> {
        let frame = self.inner.frame(sequence, index)?;
        Ok(Frame {
            mask: to_binary(&frame.mask)?,
            image: frame.image,
        })
    }
}

impl<S: FrameSource> FrameSource for &S {
    fn class_map(&self) -> &ClassMap {
        (**self).class_map()
    }

    fn num_sequences(&self) -> usize {
        (**self).num_sequences()
    }

    fn sequence_id(&self, sequence: usize) -> &str {
        (**self).sequence_id(sequence)
    }

    fn sequence_len(&self, sequence: usize) -> usize {
        (**self).sequence_len(sequence)
    }

    fn frame(&self, sequence: usize, index: usize) -> Result<Frame> {
        (**self).frame(sequence, index)
    }
}

fn check_frame_shape(image: &Path, (h, w): (usize, usize), mask: &LabelMask) -> Result<()> {
    if (h, w) != (mask.height(), mask.width()) {
        return Err(Error::ShapeMismatch(format!(
            "frame {}: image is {h}×{w}, mask is {}×{}",
            image.display(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Scan `root/<sequence>/{images,masks}` and validate every frame.
///
/// Sequences and frames are ordered lexicographically. Each image needs a
/// mask with the same stem and spatial size, and mask IDs must be below the
/// class count.
pub fn load_dataset(root: &Path, class_map: ClassMap) -> Result<SequenceDataset> {
    if class_map.is_empty() {
        return Err(Error::invalid("class map is empty"));
    }
    let mut sequences = Vec::new();
    for seq_dir in sorted_entries(root)? {
        if !seq_dir.is_dir() {
            continue;
        }
        let id = seq_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::invalid(format!("non-UTF-8 sequence name {}", seq_dir.display())))?
            .to_string();
        let images_dir = seq_dir.join("images");
        let masks_dir = seq_dir.join("masks");
        for dir in [&images_dir, &masks_dir] {
            if !dir.is_dir() {
                return Err(Error::io(
                    dir.as_path(),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
                ));
            }
        }
        let mut frames = Vec::new();
        for image in sorted_entries(&images_dir)? {
            if !is_png(&image) {
                continue;
            }
            let stem = image
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let mask = masks_dir.join(format!("{stem}.png"));
            if !mask.is_file() {
                return Err(Error::MissingAnnotation(image));
            }
            let (w, h) = image::image_dimensions(&image).map_err(|source| Error::Image {
                path: image.clone(),
                source,
            })?;
            let labels = LabelMask::read(&mask, class_map.len())?;
            check_frame_shape(&image, (h as usize, w as usize), &labels)?;
            frames.push(FramePaths { stem, image, mask });
        }
        sequences.push(Sequence { id, frames });
    }
    if sequences.is_empty() {
        return Err(Error::invalid(format!(
            "no sequence directories under {}",
            root.display()
        )));
    }
    Ok(Sequences {
        sequences,
        class_map,
    })
}

/// Hold out the last `round(len · val_fraction)` frames of every sequence.
///
/// The tail split keeps temporally adjacent, near-duplicate frames on one side.
/// It involves no randomness, so `_seed` does not change the result; it is
/// accepted so callers can record it uniformly.
pub fn split_train_val<F: Clone>(
    dataset: &Sequences<F>,
    val_fraction: f64,
    _seed: u64,
) -> Result<(Sequences<F>, Sequences<F>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {val_fraction} is not in (0, 1)"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for seq in &dataset.sequences {
        let n = seq.frames.len();
        let n_val = ((n as f64) * val_fraction).round() as usize;
        let (head, tail) = seq.frames.split_at(n - n_val.min(n));
        if !head.is_empty() {
            train.push(Sequence {
                id: seq.id.clone(),
                frames: head.to_vec(),
            });
        }
        if !tail.is_empty() {
            val.push(Sequence {
                id: seq.id.clone(),
                frames: tail.to_vec(),
            });
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!(
            "validation fraction {val_fraction} leaves the {} side empty",
            if train.is_empty() { "training" } else { "validation" }
        )));
    }
    let wrap = |sequences| Sequences {
        sequences,
        class_map: dataset.class_map.clone(),
    };
    Ok((wrap(train), wrap(val)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(lengths: &[usize]) -> Sequences<usize> {
        Sequences {
            sequences: lengths
                .iter()
                .enumerate()
                .map(|(s, &n)| Sequence {
                    id: format!("seq{s}"),
                    frames: (0..n).collect(),
                })
                .collect(),
            class_map: ClassMap::multiclass(),
        }
    }

    #[test]
    fn tail_split() {
        let (train, val) = split_train_val(&numbered(&[10]), 0.2, 0).unwrap();
        assert_eq!(train.sequences[0].frames, (0..8).collect::<Vec<_>>());
        assert_eq!(val.sequences[0].frames, vec![8, 9]);
    }

    #[test]
    fn split_is_deterministic() {
        let ds = numbered(&[7, 12, 5]);
        assert_eq!(
            split_train_val(&ds, 0.3, 1).unwrap(),
            split_train_val(&ds, 0.3, 1).unwrap()
        );
    }

    #[test]
    fn empty_side_is_rejected() {
        assert!(matches!(
            split_train_val(&numbered(&[2]), 0.999, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(split_train_val(&numbered(&[2]), 0.1, 0).is_err());
        assert!(split_train_val(&numbered(&[4]), 0.0, 0).is_err());
        assert!(split_train_val(&numbered(&[4]), 1.0, 0).is_err());
    }
}
