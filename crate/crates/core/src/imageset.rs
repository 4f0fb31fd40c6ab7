//! Input image collections and ground-truth masks.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Smallest accepted image side, in pixels.
pub const MIN_IMAGE_SIDE: u32 = 64;

#[derive(Debug, Error)]
pub enum ImageSetError {
    #[error("image set needs at least 2 images, found {0}")]
    SetTooSmall(usize),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("image {id} is {width}x{height}, both sides must be at least {MIN_IMAGE_SIDE}")]
    TooSmall { id: String, width: u32, height: u32 },
    #[error("duplicate image id {0}")]
    DuplicateId(String),
    #[error("mask {path} is {got:?} but image is {expected:?}")]
    MaskDimensions {
        path: PathBuf,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("mask {path} has unknown code {value} at ({x}, {y})")]
    UnknownMaskCode { path: PathBuf, value: u8, x: u32, y: u32 },
}

/// An 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(id: impl Into<String>, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageSetError> {
        let id = id.into();
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(ImageSetError::TooSmall { id, width, height });
        }
        assert_eq!(pixels.len(), (width * height * 3) as usize, "pixel buffer size");
        Ok(Self {
            id,
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer size checked at construction")
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.to_rgb_image().save_with_format(path, image::ImageFormat::Png)
    }
}

/// An ordered collection of images of one scene.
#[derive(Debug, Clone)]
pub struct ImageSet {
    pub name: String,
    pub images: Vec<Image>,
}

impl ImageSet {
    pub fn new(name: impl Into<String>, images: Vec<Image>) -> Result<Self, ImageSetError> {
        if images.len() < 2 {
            return Err(ImageSetError::SetTooSmall(images.len()));
        }
        let mut seen = BTreeSet::new();
        for img in &images {
            if !seen.insert(img.id.as_str()) {
                return Err(ImageSetError::DuplicateId(img.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.images.iter().position(|i| i.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.images.iter().map(|i| i.id.clone()).collect()
    }
}

/// Per-pixel ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Static,
    Dynamic,
    DontCare,
}

impl Label {
    pub const STATIC_CODE: u8 = 0;
    pub const DYNAMIC_CODE: u8 = 255;
    pub const DONT_CARE_CODE: u8 = 128;

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            Self::STATIC_CODE => Some(Label::Static),
            Self::DYNAMIC_CODE => Some(Label::Dynamic),
            Self::DONT_CARE_CODE => Some(Label::DontCare),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Label::Static => Self::STATIC_CODE,
            Label::Dynamic => Self::DYNAMIC_CODE,
            Label::DontCare => Self::DONT_CARE_CODE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub static_px: usize,
    pub dynamic_px: usize,
    pub dont_care_px: usize,
}

impl GroundTruthMask {
    pub fn filled(width: u32, height: u32, label: Label) -> Self {
        Self {
            width,
            height,
            labels: vec![label; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Label {
        self.labels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, label: Label) {
        self.labels[(y * self.width + x) as usize] = label;
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for l in &self.labels {
            match l {
                Label::Static => c.static_px += 1,
                Label::Dynamic => c.dynamic_px += 1,
                Label::DontCare => c.dont_care_px += 1,
            }
        }
        c
    }

    pub fn to_gray_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.labels.iter().map(|l| l.code()).collect())
            .expect("label buffer matches dimensions")
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        self.to_gray_image().save_with_format(path, image::ImageFormat::Png)
    }
}

fn is_supported_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

pub fn load_image(path: &Path) -> Result<Image, ImageSetError> {
    let bytes = std::fs::read(path).map_err(|source| ImageSetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| ImageSetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = decoded.into_rgb8();
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let (w, h) = rgb.dimensions();
    Image::new(id, w, h, rgb.into_raw())
}

/// Loads every PNG/JPEG directly inside `dir`, ordered by file name.
pub fn load_image_set(dir: &Path) -> Result<ImageSet, ImageSetError> {
    let entries = std::fs::read_dir(dir).map_err(|source| ImageSetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| ImageSetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let p = entry.path();
        if p.is_file() && is_supported_image(&p) {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.len() < 2 {
        return Err(ImageSetError::SetTooSmall(paths.len()));
    }
    let images = paths.iter().map(|p| load_image(p)).collect::<Result<Vec<_>, _>>()?;
    let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("set").to_string();
    ImageSet::new(name, images)
}

/// Reads a single-channel mask: 0 static, 255 dynamic, 128 don't-care.
pub fn load_ground_truth(mask_path: &Path, image: &Image) -> Result<GroundTruthMask, ImageSetError> {
    let bytes = std::fs::read(mask_path).map_err(|source| ImageSetError::Io {
        path: mask_path.to_path_buf(),
        source,
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| ImageSetError::Decode {
        path: mask_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let gray = decoded.into_luma8();
    let (w, h) = gray.dimensions();
    if (w, h) != (image.width, image.height) {
        return Err(ImageSetError::MaskDimensions {
            path: mask_path.to_path_buf(),
            got: (w, h),
            expected: (image.width, image.height),
        });
    }
    let mut labels = Vec::with_capacity((w * h) as usize);
    for (x, y, p) in gray.enumerate_pixels() {
        let value = p.0[0];
        let label = Label::from_code(value).ok_or_else(|| ImageSetError::UnknownMaskCode {
            path: mask_path.to_path_buf(),
            value,
            x,
            y,
        })?;
        labels.push(label);
    }
    Ok(GroundTruthMask {
        width: w,
        height: h,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(id: &str, w: u32, h: u32, v: u8) -> Image {
        Image::new(id, w, h, vec![v; (w * h * 3) as usize]).unwrap()
    }

    #[test]
    fn rejects_small_images() {
        let err = Image::new("a", 63, 64, vec![0; 63 * 64 * 3]).unwrap_err();
        assert!(matches!(err, ImageSetError::TooSmall { .. }));
    }

    #[test]
    fn set_requires_two_unique_images() {
        assert!(matches!(
            ImageSet::new("s", vec![solid("a", 64, 64, 0)]),
            Err(ImageSetError::SetTooSmall(1))
        ));
        assert!(matches!(
            ImageSet::new("s", vec![solid("a", 64, 64, 0), solid("a", 64, 64, 1)]),
            Err(ImageSetError::DuplicateId(_))
        ));
    }

    #[test]
    fn single_image_directory_is_too_small() {
        let dir = tempfile::tempdir().unwrap();
        solid("only", 64, 64, 9).save_png(&dir.path().join("only.png")).unwrap();
        assert!(matches!(load_image_set(dir.path()), Err(ImageSetError::SetTooSmall(1))));
    }

    #[test]
    fn png_round_trip_is_pixel_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..64 * 70 * 3).map(|i| (i * 7 % 251) as u8).collect();
        let a = Image::new("a", 64, 70, pixels).unwrap();
        let b = solid("b", 80, 64, 3);
        a.save_png(&dir.path().join("a.png")).unwrap();
        b.save_png(&dir.path().join("b.png")).unwrap();
        std::fs::write(dir.path().join("notes.json"), "{}").unwrap();
        let set = load_image_set(dir.path()).unwrap();
        assert_eq!(set.ids(), vec!["a", "b"]);
        assert_eq!(set.images[0], a);
        assert_eq!((set.images[1].width, set.images[1].height), (80, 64));
    }

    #[test]
    fn undecodable_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        solid("a", 64, 64, 0).save_png(&dir.path().join("a.png")).unwrap();
        std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        let err = load_image_set(dir.path()).unwrap_err();
        assert!(err.to_string().contains("broken.png"), "{err}");
    }

    #[test]
    fn ground_truth_codes() {
        let dir = tempfile::tempdir().unwrap();
        let img = solid("a", 64, 64, 0);
        let path = dir.path().join("a.png");

        image::GrayImage::new(64, 64).save(&path).unwrap();
        let gt = load_ground_truth(&path, &img).unwrap();
        assert_eq!(gt.counts().static_px, 64 * 64);

        let mut m = image::GrayImage::new(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                let v = if y < 8 {
                    128
                } else if (20..30).contains(&x) && (20..40).contains(&y) {
                    255
                } else {
                    0
                };
                m.put_pixel(x, y, image::Luma([v]));
            }
        }
        m.save(&path).unwrap();
        let gt = load_ground_truth(&path, &img).unwrap();
        let c = gt.counts();
        assert_eq!(c.dont_care_px, 8 * 64);
        assert_eq!(c.dynamic_px, 10 * 20);
        assert_eq!(c.static_px + c.dynamic_px + c.dont_care_px, 64 * 64);
        assert_eq!(gt.get(25, 25), Label::Dynamic);

        m.put_pixel(0, 63, image::Luma([7]));
        m.save(&path).unwrap();
        assert!(matches!(
            load_ground_truth(&path, &img),
            Err(ImageSetError::UnknownMaskCode { value: 7, .. })
        ));

        image::GrayImage::new(65, 64).save(&path).unwrap();
        assert!(matches!(
            load_ground_truth(&path, &img),
            Err(ImageSetError::MaskDimensions { .. })
        ));
    }
}
