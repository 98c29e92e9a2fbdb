//! Procedural face-like images and ingestion of aligned image folders.
//!
//! Faces are flat raster drawings: an elliptical head with hair, eyes, brows,
//! a nose line and a mouth curve. Identity parameters fix geometry and colour;
//! yaw moves the inner features sideways, expression bends the mouth and
//! lighting darkens the image from left to right.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::types::{FaceSpec, IdentityParams, ImageTensor, LabeledImage};

pub const MIN_RENDER_SIZE: usize = 16;

const BACKGROUND: [f64; 3] = [0.16, 0.19, 0.24];
const EYE_WHITE: [f64; 3] = [0.95, 0.95, 0.92];
const LIP: [f64; 3] = [0.55, 0.12, 0.15];

/// Ranges from which per-image attributes are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRanges {
    pub pose_yaw: (f64, f64),
    pub expression: (f64, f64),
    pub lighting: (f64, f64),
}

impl Default for AttributeRanges {
    fn default() -> Self {
        Self {
            pose_yaw: (-45.0, 45.0),
            expression: (0.0, 1.0),
            lighting: (0.0, 1.0),
        }
    }
}

/// Per-pixel masks of what the renderer drew.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceGeometry {
    pub size: usize,
    /// Inside the head ellipse.
    pub head: Vec<bool>,
    /// Covered by an eye, brow, nose or mouth stroke.
    pub features: Vec<bool>,
}

pub fn sample_identity(rng: &mut impl Rng) -> IdentityParams {
    let mut colour = |lo: f64, hi: f64| {
        [
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
            rng.gen_range(lo..hi),
        ]
    };
    let skin_tone = colour(0.0, 1.0);
    let skin = [
        0.45 + 0.45 * skin_tone[0],
        0.30 + 0.40 * skin_tone[0] * (0.8 + 0.2 * skin_tone[1]),
        0.20 + 0.35 * skin_tone[0] * (0.7 + 0.3 * skin_tone[2]),
    ];
    let hair = colour(0.02, 0.8);
    let iris = colour(0.05, 0.7);
    IdentityParams {
        head_rx: rng.gen_range(0.24..0.34),
        head_ry: rng.gen_range(0.32..0.42),
        skin,
        hair,
        hairline: rng.gen_range(0.18..0.42),
        eye_spacing: rng.gen_range(0.30..0.52),
        eye_size: rng.gen_range(0.10..0.18),
        iris,
        nose_length: rng.gen_range(0.18..0.38),
        mouth_width: rng.gen_range(0.25..0.5),
        brow_tilt: rng.gen_range(-0.3..0.3),
    }
}

pub fn sample_attributes(
    identity_id: usize,
    identity_params: &IdentityParams,
    ranges: &AttributeRanges,
    rng: &mut impl Rng,
) -> FaceSpec {
    let draw = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    };
    FaceSpec {
        identity_id,
        identity_params: identity_params.clone(),
        pose_yaw: draw(rng, ranges.pose_yaw),
        expression: draw(rng, ranges.expression),
        lighting: draw(rng, ranges.lighting),
    }
}

pub fn render(spec: &FaceSpec, size: usize) -> Result<ImageTensor> {
    render_with_geometry(spec, size).map(|(img, _)| img)
}

pub fn render_with_geometry(spec: &FaceSpec, size: usize) -> Result<(ImageTensor, FaceGeometry)> {
    if size < MIN_RENDER_SIZE {
        return Err(Error::InvalidInput(format!(
            "render size must be at least {MIN_RENDER_SIZE}, got {size}"
        )));
    }
    let p = &spec.identity_params;
    let yaw = spec.pose_yaw.to_radians().sin();
    let (cx, cy) = (0.5, 0.52);
    let (rx, ry) = (p.head_rx, p.head_ry);
    let shift = 0.45 * yaw * rx;
    let eye_y = cy - 0.12 * ry;
    let eye_r = p.eye_size * rx;
    let eyes = [-1.0, 1.0].map(|side: f64| {
        // the eye turned away from the viewer looks narrower
        let squash = 1.0 - 0.35 * (side * yaw).max(0.0);
        (cx + side * p.eye_spacing * rx + shift, eye_r * squash)
    });
    let brow_y = eye_y - 1.7 * eye_r;
    let nose_top = eye_y + 0.4 * eye_r;
    let nose_bottom = nose_top + p.nose_length * ry;
    let nose_x = cx + 1.3 * shift;
    let mouth_y = (nose_bottom + 0.12 * ry).min(cy + 0.75 * ry);
    let mouth_hw = 0.5 * p.mouth_width * 2.0 * rx;
    let mouth_x = cx + shift;
    let stroke = (1.5 / size as f64).max(0.022);

    let mut data = Vec::with_capacity(size * size * 3);
    let mut head_mask = Vec::with_capacity(size * size);
    let mut feature_mask = Vec::with_capacity(size * size);
    for py in 0..size {
        for px in 0..size {
            let x = (px as f64 + 0.5) / size as f64;
            let y = (py as f64 + 0.5) / size as f64;
            let head_d = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
            let in_head = head_d <= 1.0;
            let hair_d =
                ((x - cx) / (rx * 1.1)).powi(2) + ((y - cy + 0.04 * ry) / (ry * 1.08)).powi(2);
            let above_hairline = y < cy - ry + 2.0 * ry * p.hairline;
            let mut c = BACKGROUND;
            let mut feature = false;
            if hair_d <= 1.0 && (!in_head || above_hairline) {
                c = p.hair;
            }
            if in_head && !above_hairline {
                c = p.skin;
                for &(ex, er) in &eyes {
                    let d = ((x - ex) / er).powi(2) + ((y - eye_y) / (0.6 * eye_r)).powi(2);
                    if d <= 1.0 {
                        feature = true;
                        c = if ((x - ex - 0.25 * shift).powi(2) + (y - eye_y).powi(2)).sqrt()
                            <= 0.45 * eye_r
                        {
                            p.iris
                        } else {
                            EYE_WHITE
                        };
                    }
                    let side = (ex - cx).signum();
                    let by = brow_y + p.brow_tilt * eye_r * (x - ex) / er * side;
                    if (x - ex).abs() <= 1.1 * er && (y - by).abs() <= 0.5 * stroke {
                        feature = true;
                        c = p.hair.map(|v| v * 0.7);
                    }
                }
                if (x - nose_x).abs() <= 0.5 * stroke && y >= nose_top && y <= nose_bottom {
                    feature = true;
                    c = p.skin.map(|v| v * 0.65);
                }
                let u = (x - mouth_x) / mouth_hw;
                if u.abs() <= 1.0 {
                    let curve = mouth_y - spec.expression * 0.06 * (u * u - 0.5);
                    if (y - curve).abs() <= 0.6 * stroke + 0.004 * (1.0 - u * u) {
                        feature = true;
                        c = LIP;
                    }
                }
            }
            let light = 1.0 - 0.55 * spec.lighting * x;
            data.extend(
                c.iter()
                    .map(|&v| ((v * light).clamp(0.0, 1.0) * 2.0 - 1.0) as f32),
            );
            head_mask.push(in_head);
            feature_mask.push(feature);
        }
    }
    let image = ImageTensor::new(size, size, data)?;
    Ok((
        image,
        FaceGeometry {
            size,
            head: head_mask,
            features: feature_mask,
        },
    ))
}

/// A fixed set of synthetic identities with pre-drawn training and held-out
/// attribute samples. Images are rendered on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub image_size: usize,
    pub identities: Vec<IdentityParams>,
    pub ranges: AttributeRanges,
    pub train: Vec<FaceSpec>,
    pub held_out: Vec<FaceSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSize {
    pub n_identities: usize,
    pub train_per_identity: usize,
    pub held_out_per_identity: usize,
}

impl Default for DatasetSize {
    fn default() -> Self {
        Self {
            n_identities: 8,
            train_per_identity: 500,
            held_out_per_identity: 50,
        }
    }
}

/// A source/target pair with the specs that produced it.
#[derive(Clone, Debug)]
pub struct FacePair {
    pub source: ImageTensor,
    pub target: ImageTensor,
    pub source_spec: FaceSpec,
    pub target_spec: FaceSpec,
}

impl SyntheticDataset {
    pub fn generate(size: &DatasetSize, image_size: usize, seed: u64) -> Result<Self> {
        if size.n_identities == 0 {
            return Err(Error::InvalidInput(
                "dataset needs at least one identity".into(),
            ));
        }
        if image_size < MIN_RENDER_SIZE {
            return Err(Error::InvalidInput(format!(
                "image_size must be at least {MIN_RENDER_SIZE}"
            )));
        }
        let mut rng = seeded_rng(seed);
        let ranges = AttributeRanges::default();
        let identities: Vec<IdentityParams> = (0..size.n_identities)
            .map(|_| sample_identity(&mut rng))
            .collect();
        let mut draw = |per: usize| -> Vec<FaceSpec> {
            identities
                .iter()
                .enumerate()
                .flat_map(|(id, p)| (0..per).map(move |_| (id, p)))
                .map(|(id, p)| sample_attributes(id, p, &ranges, &mut rng))
                .collect()
        };
        let train = draw(size.train_per_identity);
        let held_out = draw(size.held_out_per_identity);
        Ok(Self {
            image_size,
            identities,
            ranges,
            train,
            held_out,
        })
    }

    pub fn n_identities(&self) -> usize {
        self.identities.len()
    }

    pub fn render(&self, spec: &FaceSpec) -> Result<ImageTensor> {
        render(spec, self.image_size)
    }

    fn train_indices_by_identity(&self) -> Vec<Vec<usize>> {
        let mut by_id = vec![Vec::new(); self.n_identities()];
        for (i, s) in self.train.iter().enumerate() {
            by_id[s.identity_id].push(i);
        }
        by_id
    }

    /// Draws a pair of training specs; same-identity pairs use two different
    /// samples when the identity has more than one.
    pub fn sample_pair_specs(
        &self,
        same_identity: bool,
        rng: &mut impl Rng,
    ) -> Result<(FaceSpec, FaceSpec)> {
        let by_id = self.train_indices_by_identity();
        let populated: Vec<usize> = (0..by_id.len()).filter(|&i| !by_id[i].is_empty()).collect();
        if populated.len() < 2 {
            return Err(Error::InvalidInput(
                "pair sampling needs at least 2 identities with samples".into(),
            ));
        }
        let a = *populated.choose(rng).expect("non-empty");
        let b = if same_identity {
            a
        } else {
            let others: Vec<usize> = populated.iter().copied().filter(|&i| i != a).collect();
            *others.choose(rng).expect("at least one other identity")
        };
        let si = *by_id[a].choose(rng).expect("non-empty");
        let ti = if same_identity && by_id[a].len() > 1 {
            loop {
                let t = *by_id[b].choose(rng).expect("non-empty");
                if t != si {
                    break t;
                }
            }
        } else {
            *by_id[b].choose(rng).expect("non-empty")
        };
        Ok((self.train[si].clone(), self.train[ti].clone()))
    }

    pub fn sample_pair(&self, same_identity: bool, rng: &mut impl Rng) -> Result<FacePair> {
        let (source_spec, target_spec) = self.sample_pair_specs(same_identity, rng)?;
        Ok(FacePair {
            source: self.render(&source_spec)?,
            target: self.render(&target_spec)?,
            source_spec,
            target_spec,
        })
    }

    pub fn sample_batch(
        &self,
        batch: usize,
        same_identity: bool,
        rng: &mut impl Rng,
    ) -> Result<Vec<FacePair>> {
        (0..batch)
            .map(|_| self.sample_pair(same_identity, rng))
            .collect()
    }

    /// Renders a list of specs as labelled images.
    pub fn labeled(&self, specs: &[FaceSpec]) -> Result<Vec<LabeledImage>> {
        specs
            .iter()
            .map(|s| {
                Ok(LabeledImage {
                    image: self.render(s)?,
                    identity: s.identity_id,
                })
            })
            .collect()
    }
}

/// Images read from `root/<identity>/<file>`.
#[derive(Clone, Debug)]
pub struct ImageFolder {
    pub labels: Vec<String>,
    pub images: Vec<LabeledImage>,
    pub paths: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    identity: &'a str,
    path: String,
}

impl ImageFolder {
    pub fn n_identities(&self) -> usize {
        self.labels.len()
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let entries: Vec<ManifestEntry> = self
            .images
            .iter()
            .zip(&self.paths)
            .map(|(img, p)| ManifestEntry {
                identity: &self.labels[img.identity],
                path: p.display().to_string(),
            })
            .collect();
        let text = serde_json::to_string_pretty(&entries)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Converts 8-bit RGB to `[-1, 1]` via `2x/255 - 1`.
pub fn image_from_rgb8(img: &image::RgbImage) -> Result<ImageTensor> {
    let data = img
        .pixels()
        .flat_map(|p| p.0)
        .map(|v| v as f32 * 2.0 / 255.0 - 1.0)
        .collect();
    ImageTensor::new(img.height() as usize, img.width() as usize, data)
}

pub fn image_to_rgb8(img: &ImageTensor) -> image::RgbImage {
    let buf = img
        .data()
        .iter()
        .map(|&v| (((v + 1.0) * 0.5 * 255.0).round()).clamp(0.0, 255.0) as u8)
        .collect();
    image::RgbImage::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer matches dimensions")
}

pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    image_to_rgb8(img).save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads an image file, resizing it to `size x size` when a size is given.
pub fn load_image(path: &Path, size: Option<usize>) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    let rgb = match size {
        Some(s) if rgb.width() as usize != s || rgb.height() as usize != s => {
            image::imageops::resize(
                &rgb,
                s as u32,
                s as u32,
                image::imageops::FilterType::Triangle,
            )
        }
        _ => rgb,
    };
    image_from_rgb8(&rgb)
}

/// Loads every decodable image under `root/<identity>/`, resized to
/// `size x size`. Files smaller than `min_size` on either side and files that
/// fail to decode are skipped with a warning.
pub fn load_image_folder(root: &Path, size: usize, min_size: u32) -> Result<ImageFolder> {
    let mut by_label: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        by_label.insert(entry.file_name().to_string_lossy().into_owned(), files);
    }

    let mut folder = ImageFolder {
        labels: Vec::new(),
        images: Vec::new(),
        paths: Vec::new(),
    };
    for (label, files) in by_label {
        let mut loaded = Vec::new();
        for path in files {
            match image::image_dimensions(&path) {
                Ok((w, h)) if w < min_size || h < min_size => {
                    log::warn!(
                        "skipping {}: {w}x{h} is below --min-size {min_size}",
                        path.display()
                    );
                    continue;
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    continue;
                }
                Ok(_) => {}
            }
            match load_image(&path, Some(size)) {
                Ok(img) => loaded.push((img, path)),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        if loaded.is_empty() {
            continue;
        }
        let identity = folder.labels.len();
        folder.labels.push(label);
        for (image, path) in loaded {
            folder.images.push(LabeledImage { image, identity });
            folder.paths.push(path);
        }
    }
    if folder.images.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no readable images under {}",
            root.display()
        )));
    }
    Ok(folder)
}
