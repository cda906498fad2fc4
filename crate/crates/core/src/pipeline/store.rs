//! Where images and label files come from.
//!
//! On disk a dataset is a directory with `images/<id>.fkdi`,
//! `labels/<id>.fkdl` and `manifest.txt` (one `image-id label-path M mode`
//! line per image, in image order).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::label_store::{decode, encode, LabelFile, Manifest, ManifestEntry};

pub const MANIFEST: &str = "manifest.txt";

pub trait ImageSource: Sync {
    fn len(&self) -> usize;
    fn load_image(&self, id: usize) -> Result<Image>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub trait LabelRepository: Sync {
    fn load_labels(&self, id: usize) -> Result<LabelFile>;
}

impl ImageSource for [Image] {
    fn len(&self) -> usize {
        <[Image]>::len(self)
    }

    fn load_image(&self, id: usize) -> Result<Image> {
        self.get(id)
            .cloned()
            .ok_or_else(|| Error::OutOfBounds(format!("image {id} of {}", <[Image]>::len(self))))
    }
}

impl ImageSource for Vec<Image> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load_image(&self, id: usize) -> Result<Image> {
        self.as_slice().load_image(id)
    }
}

/// Label files held as encoded bytes; every load decodes, like a read from disk.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    files: Vec<Vec<u8>>,
}

impl MemoryStore {
    pub fn from_files(files: &[LabelFile]) -> Result<Self> {
        Ok(MemoryStore {
            files: files.iter().map(encode).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.files.iter().map(|f| f.len() as u64).sum()
    }
}

impl LabelRepository for MemoryStore {
    fn load_labels(&self, id: usize) -> Result<LabelFile> {
        let bytes = self
            .files
            .get(id)
            .ok_or_else(|| Error::OutOfBounds(format!("label file {id} of {}", self.files.len())))?;
        decode(bytes)
    }
}

pub fn image_name(id: usize) -> String {
    format!("img_{id:06}")
}

/// A dataset directory written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DiskDataset {
    root: PathBuf,
    manifest: Manifest,
}

impl DiskDataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::parse(&text)?;
        if manifest.entries.is_empty() {
            return Err(Error::invalid(format!("{} lists no images", path.display())));
        }
        Ok(DiskDataset { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn entry(&self, id: usize) -> Result<&ManifestEntry> {
        self.manifest
            .entries
            .get(id)
            .ok_or_else(|| Error::OutOfBounds(format!("image {id} of {}", self.manifest.entries.len())))
    }

    pub fn image_path(&self, id: usize) -> Result<PathBuf> {
        Ok(self
            .root
            .join("images")
            .join(format!("{}.fkdi", self.entry(id)?.image_id)))
    }
}

impl ImageSource for DiskDataset {
    fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    fn load_image(&self, id: usize) -> Result<Image> {
        Image::read(&self.image_path(id)?)
    }
}

impl LabelRepository for DiskDataset {
    fn load_labels(&self, id: usize) -> Result<LabelFile> {
        let entry = self.entry(id)?;
        let path = self.root.join(&entry.label_path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let file = decode(&bytes).map_err(|e| match e {
            Error::Format(f) => Error::invalid(format!("{}: {f}", path.display())),
            other => other,
        })?;
        if file.mode != entry.mode || file.crops() != entry.crops as usize {
            return Err(Error::invalid(format!(
                "{} disagrees with the manifest ({} x{} vs {} x{})",
                path.display(),
                file.mode,
                file.crops(),
                entry.mode,
                entry.crops
            )));
        }
        Ok(file)
    }
}

/// Bytes written by [`write_dataset`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WrittenBytes {
    pub images: u64,
    pub labels: u64,
    pub manifest: u64,
}

/// Writes images, label files and the manifest under `root`.
pub fn write_dataset<S: ImageSource + ?Sized>(root: &Path, images: &S, labels: &[LabelFile]) -> Result<WrittenBytes> {
    if images.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: images.len(),
            got: labels.len(),
        });
    }
    for dir in ["images", "labels"] {
        let p = root.join(dir);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut written = WrittenBytes::default();
    let mut manifest = Manifest::default();
    for (id, file) in labels.iter().enumerate() {
        let name = image_name(id);
        let image_bytes = images.load_image(id)?.to_bytes();
        let ip = root.join("images").join(format!("{name}.fkdi"));
        fs::write(&ip, &image_bytes).map_err(|e| Error::io(&ip, e))?;
        written.images += image_bytes.len() as u64;

        let label_path = format!("labels/{name}.fkdl");
        let bytes = encode(file)?;
        let lp = root.join(&label_path);
        fs::write(&lp, &bytes).map_err(|e| Error::io(&lp, e))?;
        written.labels += bytes.len() as u64;

        manifest.entries.push(ManifestEntry {
            image_id: name,
            label_path,
            crops: file.crops() as u32,
            mode: file.mode,
        });
    }
    let text = manifest.to_text();
    let mp = root.join(MANIFEST);
    fs::write(&mp, &text).map_err(|e| Error::io(&mp, e))?;
    written.manifest = text.len() as u64;
    Ok(written)
}

/// Counts every image and label-file load passing through it.
#[derive(Debug, Default)]
pub struct Counting<T> {
    inner: T,
    images: AtomicUsize,
    labels: AtomicUsize,
}

impl<T> Counting<T> {
    pub fn new(inner: T) -> Self {
        Counting {
            inner,
            images: AtomicUsize::new(0),
            labels: AtomicUsize::new(0),
        }
    }

    /// `(images, label files)` loaded since the last reset.
    pub fn counts(&self) -> (usize, usize) {
        (self.images.load(Ordering::SeqCst), self.labels.load(Ordering::SeqCst))
    }

    pub fn reset(&self) {
        self.images.store(0, Ordering::SeqCst);
        self.labels.store(0, Ordering::SeqCst);
    }
}

impl<T: ImageSource> ImageSource for Counting<T> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn load_image(&self, id: usize) -> Result<Image> {
        self.images.fetch_add(1, Ordering::SeqCst);
        self.inner.load_image(id)
    }
}

impl<T: LabelRepository> LabelRepository for Counting<T> {
    fn load_labels(&self, id: usize) -> Result<LabelFile> {
        self.labels.fetch_add(1, Ordering::SeqCst);
        self.inner.load_labels(id)
    }
}
