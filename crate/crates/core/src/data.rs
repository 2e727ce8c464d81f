//! Dataset indexing, deterministic splitting, preprocessing,
//! augmentation, class balancing, and volume slice selection.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::RngState;
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 128;

// ── manifest ─────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ManifestEntry {
    /// Image path; augmented copies carry a `#aug=<id>` suffix.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

impl ManifestEntry {
    /// Source path and augmentation id, if this is an augmented copy.
    pub fn augmentation(&self) -> Option<(&str, u64)> {
        let (src, id) = self.path.rsplit_once("#aug=")?;
        id.parse().ok().map(|id| (src, id))
    }
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for e in &self.entries {
            if e.split == split {
                counts[e.label] += 1;
            }
        }
        counts
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("path,label,split\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{}\n",
                e.path,
                self.class_names[e.label],
                e.split.as_str()
            ));
        }
        fs::write(path, out).map_err(|e| Error::file(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("path,label,split") => {}
            other => {
                return Err(Error::Data(format!(
                    "manifest {}: expected header path,label,split, got {other:?}",
                    path.display()
                )))
            }
        }
        let mut raw = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.rsplitn(3, ',');
            let split = parts.next();
            let label = parts.next();
            let p = parts.next();
            let (Some(split), Some(label), Some(p)) = (split, label, p) else {
                return Err(Error::Data(format!(
                    "manifest {}: malformed line {}",
                    path.display(),
                    lineno + 2
                )));
            };
            if !labels.iter().any(|l| l == label) {
                labels.push(label.to_string());
            }
            raw.push((p.to_string(), label.to_string(), Split::parse(split)?));
        }
        labels.sort();
        let entries = raw
            .into_iter()
            .map(|(p, label, split)| ManifestEntry {
                path: p,
                label: labels.iter().position(|l| *l == label).unwrap(),
                split,
            })
            .collect();
        Ok(DatasetManifest { entries, class_names: labels, seed: 0 })
    }
}

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Index `root/<class>/<images>`, optionally folding classes together
/// via `merge`: keys are directory names, values the class they join.
pub fn scan_dataset(
    root: &Path,
    merge: Option<&IndexMap<String, String>>,
) -> Result<DatasetManifest> {
    let mut dirs: Vec<String> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::file(root, e))? {
        let entry = entry.map_err(|e| Error::file(root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    if dirs.is_empty() {
        return Err(Error::Data(format!("{} has no class directories", root.display())));
    }
    dirs.sort();
    if let Some(m) = merge {
        for key in m.keys() {
            if !dirs.contains(key) {
                return Err(Error::Data(format!("merge source {key:?} is not a class directory")));
            }
        }
    }
    let class_of = |dir: &str| -> String {
        match merge.and_then(|m| m.get(dir)) {
            Some(target) => target.clone(),
            None => dir.to_string(),
        }
    };
    let mut class_names: Vec<String> = dirs.iter().map(|d| class_of(d)).collect();
    class_names.sort();
    class_names.dedup();

    let mut entries = Vec::new();
    for dir in &dirs {
        let label = class_names.iter().position(|c| *c == class_of(dir)).unwrap();
        let dir_path = root.join(dir);
        let mut files: Vec<String> = Vec::new();
        for f in fs::read_dir(&dir_path).map_err(|e| Error::file(&dir_path, e))? {
            let f = f.map_err(|e| Error::file(&dir_path, e))?;
            let p = f.path();
            let ext = p.extension().map(|e| e.to_string_lossy().to_lowercase());
            if p.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                files.push(p.to_string_lossy().into_owned());
            }
        }
        if files.is_empty() {
            return Err(Error::Data(format!("class directory {} has no images", dir_path.display())));
        }
        files.sort();
        for path in files {
            entries.push(ManifestEntry { path, label, split: Split::Train });
        }
    }
    Ok(DatasetManifest { entries, class_names, seed: 0 })
}

/// Largest-remainder apportionment: per-bucket floor(frac·nᵏ), then
/// distribute the shortfall against round(frac·Σn) by fractional part.
fn apportion(counts: &[usize], frac: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let want = (frac * total as f64).round() as usize;
    let mut take: Vec<usize> = counts.iter().map(|&n| (frac * n as f64).floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| (i, frac * n as f64 - (frac * n as f64).floor()))
        .collect();
    rem.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let assigned: usize = take.iter().sum();
    for (i, _) in rem.iter().take(want.saturating_sub(assigned)) {
        take[*i] += 1;
    }
    // never take more than available
    for (t, &n) in take.iter_mut().zip(counts) {
        *t = (*t).min(n);
    }
    take
}

/// Stratified split: per class, shuffle with the seeded generator,
/// carve the test fraction from the full set, then the validation
/// fraction from the remainder.
pub fn split(
    manifest: &DatasetManifest,
    seed: u64,
    test_frac: f64,
    val_frac: f64,
) -> Result<DatasetManifest> {
    if !(0.0..1.0).contains(&test_frac)
        || !(0.0..1.0).contains(&val_frac)
        || test_frac <= 0.0
        || val_frac <= 0.0
    {
        return Err(Error::Config(format!(
            "split fractions must lie in (0,1), got test={test_frac} val={val_frac}"
        )));
    }
    let k = manifest.class_names.len();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, e) in manifest.entries.iter().enumerate() {
        per_class[e.label].push(i);
    }
    for (c, idxs) in per_class.iter_mut().enumerate() {
        if idxs.len() < 3 {
            eprintln!(
                "warning: class {:?} has {} samples; cannot populate every split",
                manifest.class_names[c],
                idxs.len()
            );
        }
        let mut rng = RngState::new(seed, c as u64);
        rng.shuffle(idxs);
    }
    let counts: Vec<usize> = per_class.iter().map(|v| v.len()).collect();
    let test_take = apportion(&counts, test_frac);
    let remainder: Vec<usize> = counts.iter().zip(&test_take).map(|(&n, &t)| n - t).collect();
    let val_take = apportion(&remainder, val_frac);

    let mut entries = manifest.entries.clone();
    for c in 0..k {
        for (rank, &i) in per_class[c].iter().enumerate() {
            entries[i].split = if rank < test_take[c] {
                Split::Test
            } else if rank < test_take[c] + val_take[c] {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    Ok(DatasetManifest {
        entries,
        class_names: manifest.class_names.clone(),
        seed,
    })
}

// ── preprocessing ────────────────────────────────────────────────────

/// 3×3 cross sharpening (center 5, 4-neighbors −1), replicate padding,
/// clamped to [0,1]. Channels are filtered independently.
pub fn sharpen<E: crate::Element>(img: &Tensor<E>) -> Result<Tensor<E>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("sharpen expects [H,W,C], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let at = |y: isize, x: isize, ch: usize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        img.data()[(y * w + x) * c + ch].as_f64()
    };
    let mut out = Tensor::zeros(&[h, w, c]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let (yi, xi) = (y as isize, x as isize);
                let v = 5.0 * at(yi, xi, ch)
                    - at(yi - 1, xi, ch)
                    - at(yi + 1, xi, ch)
                    - at(yi, xi - 1, ch)
                    - at(yi, xi + 1, ch);
                out.data_mut()[(y * w + x) * c + ch] = E::from_f64(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Bilinear resize with half-pixel sample centers. Same-size resize is
/// the identity.
pub fn resize_bilinear<E: crate::Element>(
    img: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("resize expects [H,W,C], got {s:?}")));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize target must be positive".into()));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Tensor::zeros(&[out_h, out_w, c]);
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let p = |y: usize, x: usize| img.data()[(y * w + x) * c + ch].as_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.data_mut()[(oy * out_w + ox) * c + ch] =
                    E::from_f64(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Original,
    Augmented { source: String, params: AugmentParams },
}

#[derive(Clone, Debug)]
pub struct ImageSample {
    /// [128,128,3] pixels in [0,1].
    pub pixels: Tensor<f32>,
    pub label: usize,
    pub provenance: Provenance,
}

/// Decode any supported image into an [H,W,3] tensor in [0,1],
/// expanding grayscale to RGB.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::<f32>::zeros(&[h, w, 3]);
    for (i, px) in rgb.pixels().enumerate() {
        for ch in 0..3 {
            t.data_mut()[i * 3 + ch] = px.0[ch] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// Decode an image file into a normalized 128×128 RGB sample:
/// gray → RGB expansion, bilinear resize, scale by 1/255, optional
/// sharpening.
pub fn preprocess(path: &Path, label: usize, apply_sharpen: bool) -> Result<ImageSample> {
    let t = decode_image(path)?;
    let mut t = resize_bilinear(&t, IMAGE_SIZE, IMAGE_SIZE)?;
    if apply_sharpen {
        t = sharpen(&t)?;
    }
    Ok(ImageSample { pixels: t, label, provenance: Provenance::Original })
}

// ── augmentation ─────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub width_shift: f64,
    pub height_shift: f64,
    pub shear: f64,
    pub zoom: f64,
    pub hflip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        width_shift: 0.0,
        height_shift: 0.0,
        shear: 0.0,
        zoom: 1.0,
        hflip: false,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.rotation_deg.abs() <= 15.0
            && self.width_shift.abs() <= 0.1
            && self.height_shift.abs() <= 0.1
            && self.shear.abs() <= 0.2
            && (0.8..=1.2).contains(&self.zoom);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("augmentation parameters out of range: {self:?}")))
        }
    }

    pub fn random(rng: &mut RngState) -> AugmentParams {
        AugmentParams {
            rotation_deg: rng.uniform(-15.0, 15.0),
            width_shift: rng.uniform(-0.1, 0.1),
            height_shift: rng.uniform(-0.1, 0.1),
            shear: rng.uniform(-0.2, 0.2),
            zoom: rng.uniform(0.8, 1.2),
            hflip: rng.bernoulli(0.5),
        }
    }

    /// Parameters for augmented copy `id`, derived from the run seed
    /// so parallel materialization order never changes results.
    pub fn for_id(seed: u64, id: u64) -> AugmentParams {
        // dedicated stream offset keeps these draws clear of the
        // training streams
        AugmentParams::random(&mut RngState::new(seed, 0x4155_0000 + id))
    }
}

/// Continuous bilinear lookup with edge clamping.
fn sample_bilinear(img: &Tensor<f32>, y: f64, x: f64, ch: usize) -> f32 {
    let (h, w, c) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let y = y.clamp(0.0, h as f64 - 1.0);
    let x = x.clamp(0.0, w as f64 - 1.0);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let p = |yy: usize, xx: usize| img.data()[(yy * w + xx) * c + ch] as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

/// Affine warp (rotation ∘ shear ∘ zoom about the center, then shift),
/// bilinear resampling with nearest-edge fill, then optional
/// horizontal flip.
pub fn augment(sample: &ImageSample, params: &AugmentParams) -> Result<ImageSample> {
    params.validate()?;
    let src = &sample.pixels;
    let (h, w, c) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = params.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    // forward map: p' = R · Sh · Z · (p − c) + c + t
    let z = params.zoom;
    let sh = params.shear;
    // R·Sh·Z as a 2×2 over (x, y)
    let m = [
        [cos * z + (-sin) * 0.0, cos * (sh * z) - sin * z],
        [sin * z + cos * 0.0, sin * (sh * z) + cos * z],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::Config("degenerate augmentation transform".into()));
    }
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let (tx, ty) = (params.width_shift * w as f64, params.height_shift * h as f64);
    let mut out = Tensor::<f32>::zeros(&[h, w, c]);
    for oy in 0..h {
        for ox in 0..w {
            let dx = ox as f64 - cx - tx;
            let dy = oy as f64 - cy - ty;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            for ch in 0..c {
                out.data_mut()[(oy * w + ox) * c + ch] = sample_bilinear(src, sy, sx, ch);
            }
        }
    }
    if params.hflip {
        let mut flipped = Tensor::<f32>::zeros(&[h, w, c]);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    flipped.data_mut()[(y * w + x) * c + ch] =
                        out.data()[(y * w + (w - 1 - x)) * c + ch];
                }
            }
        }
        out = flipped;
    }
    let source = match &sample.provenance {
        Provenance::Original => String::new(),
        Provenance::Augmented { source, .. } => source.clone(),
    };
    Ok(ImageSample {
        pixels: out,
        label: sample.label,
        provenance: Provenance::Augmented { source, params: *params },
    })
}

// ── class balancing ──────────────────────────────────────────────────

/// Raise under-represented training classes toward the second-largest
/// class count S₂ by appending augmented copies. A class smaller than
/// S₂/threshold is only raised to ceil(S₂/3). Val/test are untouched
/// and no class is ever downsampled.
pub fn balance_training_set(
    manifest: &DatasetManifest,
    threshold: f64,
) -> Result<DatasetManifest> {
    let k = manifest.class_names.len();
    if k < 2 {
        return Err(Error::Data("balancing needs at least two classes".into()));
    }
    let counts = manifest.class_counts(Split::Train);
    let mut sorted = counts.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let s2 = sorted[1];
    let mut out = manifest.clone();
    let mut next_id: u64 = 0;
    for c in 0..k {
        let n = counts[c];
        if n == 0 || n >= s2 {
            continue;
        }
        let target = if s2 as f64 / n as f64 <= threshold {
            s2
        } else {
            (s2 + 2) / 3 // ceil(S₂/3)
        };
        if target <= n {
            continue;
        }
        let sources: Vec<String> = manifest
            .entries
            .iter()
            .filter(|e| e.split == Split::Train && e.label == c)
            .map(|e| e.path.clone())
            .collect();
        for i in 0..target - n {
            let src = &sources[i % sources.len()];
            out.entries.push(ManifestEntry {
                path: format!("{src}#aug={next_id}"),
                label: c,
                split: Split::Train,
            });
            next_id += 1;
        }
    }
    Ok(out)
}

// ── volumes ──────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Axial,
    Sagittal,
    Coronal,
}

/// Raw grayscale volume with u16 voxels stored as f32.
#[derive(Clone, Debug)]
pub struct Volume {
    pub voxels: Tensor<f32>,
    pub plane: Plane,
}

const VOLUME_MAGIC: &[u8; 4] = b"AVOL";

impl Volume {
    pub fn new(voxels: Tensor<f32>, plane: Plane) -> Result<Volume> {
        let s = voxels.shape();
        if s.len() != 3 || s.contains(&0) {
            return Err(Error::Shape(format!("volume must be [D,H,W] with D,H,W ≥ 1, got {s:?}")));
        }
        Ok(Volume { voxels, plane })
    }

    /// Header: magic "AVOL", u32 D,H,W little-endian; body: u16
    /// little-endian voxels in row-major order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let s = self.voxels.shape();
        let mut buf = Vec::with_capacity(16 + self.voxels.len() * 2);
        buf.extend_from_slice(VOLUME_MAGIC);
        for &d in &[s[0], s[1], s[2]] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in self.voxels.data() {
            buf.extend_from_slice(&(v.clamp(0.0, u16::MAX as f32) as u16).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    pub fn read(path: &Path, plane: Plane) -> Result<Volume> {
        let mut f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let mut header = [0u8; 16];
        f.read_exact(&mut header).map_err(|e| Error::file(path, e))?;
        if &header[..4] != VOLUME_MAGIC {
            return Err(Error::Data(format!("{}: not a volume file", path.display())));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (d, h, w) = (dim(0), dim(1), dim(2));
        let mut body = Vec::new();
        f.read_to_end(&mut body).map_err(|e| Error::file(path, e))?;
        if body.len() != d * h * w * 2 {
            return Err(Error::Data(format!(
                "{}: expected {} voxels, file holds {} bytes",
                path.display(),
                d * h * w,
                body.len()
            )));
        }
        let voxels: Vec<f32> = body
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as f32)
            .collect();
        Volume::new(Tensor::new(vec![d, h, w], voxels)?, plane)
    }

    fn plane_axis(&self) -> usize {
        match self.plane {
            Plane::Axial => 0,
            Plane::Coronal => 1,
            Plane::Sagittal => 2,
        }
    }

    pub fn depth(&self) -> usize {
        self.voxels.shape()[self.plane_axis()]
    }
}

/// The k centered slices along the volume's plane axis, starting at
/// floor((D−k)/2).
pub fn select_middle_slices(vol: &Volume, k: usize) -> Result<Vec<Tensor<f32>>> {
    let d = vol.depth();
    if k == 0 || k > d {
        return Err(Error::Data(format!("cannot take {k} middle slices from depth {d}")));
    }
    let start = (d - k) / 2;
    let s = vol.voxels.shape().to_vec();
    let axis = vol.plane_axis();
    let mut out = Vec::with_capacity(k);
    for i in start..start + k {
        let (rows, cols) = match axis {
            0 => (s[1], s[2]),
            1 => (s[0], s[2]),
            _ => (s[0], s[1]),
        };
        let mut slice = Tensor::<f32>::zeros(&[rows, cols]);
        for r in 0..rows {
            for c in 0..cols {
                let idx = match axis {
                    0 => [i, r, c],
                    1 => [r, i, c],
                    _ => [r, c, i],
                };
                slice.data_mut()[r * cols + c] = vol.voxels.at(&idx);
            }
        }
        out.push(slice);
    }
    Ok(out)
}

/// Stable fingerprint of a manifest's content (order-sensitive).
pub fn manifest_hash(m: &DatasetManifest) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for e in &m.entries {
        h.update(e.path.as_bytes());
        h.update([e.label as u8]);
        h.update(e.split.as_str().as_bytes());
        h.update([b'\n']);
    }
    format!("{:x}", h.finalize())
}

/// Materialize one manifest entry into pixels: decode + preprocess,
/// then apply the entry's deterministic augmentation if present.
pub fn load_entry(
    entry: &ManifestEntry,
    seed: u64,
    apply_sharpen: bool,
) -> Result<ImageSample> {
    match entry.augmentation() {
        None => preprocess(Path::new(&entry.path), entry.label, apply_sharpen),
        Some((src, id)) => {
            let base = preprocess(Path::new(src), entry.label, apply_sharpen)?;
            let params = AugmentParams::for_id(seed, id);
            augment(&base, &params)
        }
    }
}

/// Per-class sample counts as a readable map.
pub fn count_by_class(m: &DatasetManifest, split: Split) -> BTreeMap<String, usize> {
    let counts = m.class_counts(split);
    m.class_names
        .iter()
        .cloned()
        .zip(counts)
        .collect()
}
