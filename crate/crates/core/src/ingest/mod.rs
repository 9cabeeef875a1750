//! Image dataset ingestion: decoding, grayscale conversion, resizing and
//! row-major vectorization into a labeled [`DatasetMatrix`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::RowMatrix;
use crate::par::{self, Execution};

pub mod container;
pub mod pnm;

pub use container::{load_matrix, save_matrix};

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} pixels do not form a {rows}x{cols} image",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged image rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    /// Row-major vectorization.
    pub fn vectorize(&self) -> Vec<f64> {
        self.data.iter().map(|&p| p as f64).collect()
    }
}

/// 8-bit interleaved RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols * 3 {
            return Err(Error::invalid(format!(
                "{} samples do not form a {rows}x{cols} RGB image",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub pixels: GrayImage,
    pub label: u32,
    /// Path relative to the dataset root, `/`-separated.
    pub source_id: String,
}

/// Vectorized image dataset: row `i` is image `i`, `n = rows * cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMatrix {
    pub data: RowMatrix,
    pub labels: Vec<u32>,
    pub class_names: BTreeMap<u32, String>,
}

impl DatasetMatrix {
    pub fn new(
        data: RowMatrix,
        labels: Vec<u32>,
        class_names: BTreeMap<u32, String>,
    ) -> Result<Self> {
        let ds = Self {
            data,
            labels,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn m(&self) -> usize {
        self.data.rows()
    }

    pub fn n(&self) -> usize {
        self.data.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_names
            .keys()
            .next_back()
            .map_or(0, |&k| k as usize + 1)
            .max(
                self.labels
                    .iter()
                    .map(|&l| l as usize + 1)
                    .max()
                    .unwrap_or(0),
            )
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.m() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.m()
            )));
        }
        if let Some(l) = self
            .labels
            .iter()
            .find(|l| !self.class_names.contains_key(l))
        {
            return Err(Error::invalid(format!("label {l} has no class name")));
        }
        Ok(())
    }
}

/// BT.601 luma, rounded and clamped.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    GrayImage {
        rows: rgb.rows,
        cols: rgb.cols,
        data,
    }
}

/// Corner-aligned sample positions of `target` points over `src` pixels.
fn sample_positions(src: usize, target: usize) -> Vec<f64> {
    if target == 1 {
        return vec![(src - 1) as f64 / 2.0];
    }
    let step = (src - 1) as f64 / (target - 1) as f64;
    (0..target).map(|i| i as f64 * step).collect()
}

/// Bilinear resize to `target x target`; the source corners map onto the
/// target corners.
pub fn resize_bilinear(img: &GrayImage, target: usize) -> Result<GrayImage> {
    if target == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    if img.rows == target && img.cols == target {
        return Ok(img.clone());
    }
    let ys = sample_positions(img.rows, target);
    let xs = sample_positions(img.cols, target);
    let mut data = Vec::with_capacity(target * target);
    for &y in &ys {
        let y0 = (y.floor() as usize).min(img.rows - 1);
        let y1 = (y0 + 1).min(img.rows - 1);
        let fy = y - y0 as f64;
        for &x in &xs {
            let x0 = (x.floor() as usize).min(img.cols - 1);
            let x1 = (x0 + 1).min(img.cols - 1);
            let fx = x - x0 as f64;
            let p = |r, c| img.get(r, c) as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(GrayImage {
        rows: target,
        cols: target,
        data,
    })
}

fn is_hidden(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

fn is_supported_image(p: &Path) -> bool {
    let ext = p
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm" | "ppm" | "pnm") => true,
        Some("png") => cfg!(feature = "png"),
        _ => false,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if !is_hidden(&p) {
            out.push(p);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

fn decode_file(path: &Path) -> Result<pnm::Decoded> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    #[cfg(feature = "png")]
    if path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        return decode_png(path, &bytes);
    }
    pnm::decode(path, &bytes)
}

#[cfg(feature = "png")]
fn decode_png(path: &Path, bytes: &[u8]) -> Result<pnm::Decoded> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let bit_depth = match img.color() {
        image::ColorType::L16 | image::ColorType::Rgb16 | image::ColorType::Rgba16 => 16,
        _ => 8,
    };
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let raster = pnm::Raster::Rgb(RgbImage::new(h as usize, w as usize, rgb.into_raw())?);
    Ok(pnm::Decoded { raster, bit_depth })
}

/// Reads every image under `root/<class>/`, converted to grayscale and
/// resized to `resolution x resolution`.
///
/// Classes are labeled in lexicographic order of their directory names and
/// records are ordered by (class, file name).
pub fn load_records(
    root: &Path,
    resolution: usize,
    exec: Execution,
) -> Result<(Vec<ImageRecord>, BTreeMap<u32, String>)> {
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let classes: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if classes.is_empty() {
        return Err(Error::Layout(format!(
            "{} contains no class subdirectories",
            root.display()
        )));
    }
    let mut class_names = BTreeMap::new();
    let mut files = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let images: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_supported_image(p))
            .collect();
        if images.is_empty() {
            return Err(Error::Layout(format!(
                "class directory {} contains no supported images",
                dir.display()
            )));
        }
        for img in images {
            let id = format!(
                "{name}/{}",
                img.file_name().unwrap_or_default().to_string_lossy()
            );
            files.push((label as u32, id, img));
        }
        class_names.insert(label as u32, name);
    }

    let decoded = par::try_map_indexed(files.len(), exec, |idx| decode_file(&files[idx].2))?;
    let depth = decoded[0].bit_depth;
    let mut records = Vec::with_capacity(files.len());
    for ((label, id, path), dec) in files.into_iter().zip(decoded) {
        if dec.bit_depth != depth {
            return Err(Error::Image {
                path,
                reason: format!(
                    "bit depth {} differs from the dataset's {depth}",
                    dec.bit_depth
                ),
            });
        }
        let gray = match dec.raster {
            pnm::Raster::Gray(g) => g,
            pnm::Raster::Rgb(c) => to_grayscale(&c),
        };
        records.push(ImageRecord {
            pixels: resize_bilinear(&gray, resolution)?,
            label,
            source_id: id,
        });
    }
    Ok((records, class_names))
}

pub fn load_dataset(root: &Path, resolution: usize) -> Result<DatasetMatrix> {
    let (records, class_names) = load_records(root, resolution, Execution::Parallel)?;
    from_records(&records, class_names)
}

pub fn from_records(
    records: &[ImageRecord],
    class_names: BTreeMap<u32, String>,
) -> Result<DatasetMatrix> {
    let n = records.first().map_or(0, |r| r.pixels.as_slice().len());
    let mut data = Vec::with_capacity(records.len() * n);
    for r in records {
        if r.pixels.as_slice().len() != n {
            return Err(Error::Structure(format!(
                "{} has a different size from the first image",
                r.source_id
            )));
        }
        data.extend(r.pixels.vectorize());
    }
    DatasetMatrix::new(
        RowMatrix::from_vec(records.len(), n, data)?,
        records.iter().map(|r| r.label).collect(),
        class_names,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_pgm(path: &Path, img: &GrayImage) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, pnm::encode_pgm(img)).unwrap();
    }

    #[test]
    fn grayscale_weights() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
        assert_eq!(luma(255, 0, 0), 76);
        let rgb = RgbImage::new(1, 2, vec![255, 0, 0, 0, 0, 255]).unwrap();
        assert_eq!(to_grayscale(&rgb).as_slice(), &[76, 29]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::new(4, 4, (0..16).map(|v| v * 10).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 4).unwrap(), img);
        let c = GrayImage::new(5, 3, vec![77; 15]).unwrap();
        for t in [1, 2, 7, 13] {
            assert!(resize_bilinear(&c, t)
                .unwrap()
                .as_slice()
                .iter()
                .all(|&v| v == 77));
        }
        assert!(resize_bilinear(&img, 0).is_err());
    }

    #[test]
    fn resize_midpoint() {
        let img = GrayImage::from_rows(&[&[0, 100], &[100, 200]]).unwrap();
        let out = resize_bilinear(&img, 3).unwrap();
        assert_eq!(out.get(1, 1), 100);
        assert_eq!(out.get(0, 0), 0);
        assert_eq!(out.get(2, 2), 200);
        assert_eq!(out.get(0, 1), 50);
    }

    #[test]
    fn loads_tree_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let a = GrayImage::from_rows(&[&[0, 255], &[255, 0]]).unwrap();
        let b = GrayImage::new(2, 2, vec![9; 4]).unwrap();
        write_pgm(&root.join("zeta/b.pgm"), &b);
        write_pgm(&root.join("zeta/a.pgm"), &a);
        write_pgm(&root.join("alpha/x.pgm"), &b);
        std::fs::write(root.join("alpha/readme.txt"), "ignored").unwrap();
        let ds = load_dataset(root, 2).unwrap();
        assert_eq!(ds.m(), 3);
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.labels, vec![0, 1, 1]);
        assert_eq!(ds.class_names[&0], "alpha");
        assert_eq!(ds.data.row(1), &[0.0, 255.0, 255.0, 0.0]);
        assert_eq!(load_dataset(root, 2).unwrap(), ds);
    }

    #[test]
    fn black_image_and_resize_on_load() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(
            &dir.path().join("c/0.pgm"),
            &GrayImage::new(128, 128, vec![0; 128 * 128]).unwrap(),
        );
        let ds = load_dataset(dir.path(), 128).unwrap();
        assert_eq!((ds.m(), ds.n()), (1, 16384));
        assert!(ds.data.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(ds.labels, vec![0]);
        let small = load_dataset(dir.path(), 8).unwrap();
        assert_eq!(small.n(), 64);
    }

    #[test]
    fn structural_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), 4), Err(Error::Layout(_))));

        std::fs::write(dir.path().join("loose.pgm"), b"").unwrap();
        std::fs::create_dir_all(dir.path().join("c")).unwrap();
        std::fs::write(dir.path().join("c/bad.pgm"), b"P5 garbage").unwrap();
        let err = load_dataset(dir.path(), 4).unwrap_err();
        assert!(err.to_string().contains("bad.pgm"), "{err}");
    }

    #[test]
    fn mixed_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(
            &dir.path().join("c/a.pgm"),
            &GrayImage::new(1, 1, vec![3]).unwrap(),
        );
        let mut b16 = b"P5 1 1 65535\n".to_vec();
        b16.extend_from_slice(&[0, 1]);
        std::fs::write(dir.path().join("c/b.pgm"), b16).unwrap();
        let err = load_dataset(dir.path(), 1).unwrap_err();
        assert!(err.to_string().contains("bit depth"), "{err}");
    }

    #[test]
    fn color_ppm_is_converted() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("c")).unwrap();
        let mut ppm = b"P6 1 1 255\n".to_vec();
        ppm.extend_from_slice(&[255, 0, 0]);
        std::fs::write(dir.path().join("c/r.ppm"), ppm).unwrap();
        let ds = load_dataset(dir.path(), 1).unwrap();
        assert_eq!(ds.data.row(0), &[76.0]);
    }

    proptest! {
        #[test]
        fn vectorize_reshape_round_trip(rows in 1usize..6, cols in 1usize..6, seed in proptest::collection::vec(any::<u8>(), 36)) {
            let px = seed[..rows * cols].to_vec();
            let img = GrayImage::new(rows, cols, px.clone()).unwrap();
            let v = img.vectorize();
            let back: Vec<u8> = v.iter().map(|&x| x as u8).collect();
            prop_assert_eq!(GrayImage::new(rows, cols, back).unwrap(), img);
        }
    }
}
