//! Label-to-image rendering.
//!
//! [`render_palette`] paints each class in a fixed color with optional
//! Gaussian noise; with zero noise it is exactly inverted by
//! [`invert_palette`]. [`render_external`] hands a label map to any
//! label-to-image program through files: the map is written as P5, the
//! program writes a P6 image of the same size.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, GeneratorError, Result};
use crate::labelmap::{self, pnm, LabelMap};
use crate::seed;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub id: u8,
    pub rgb: [u8; 3],
}

/// Injective map from class id to color.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PaletteDoc", into = "PaletteDoc")]
pub struct Palette {
    colors: BTreeMap<u8, [u8; 3]>,
}

#[derive(Serialize, Deserialize)]
struct PaletteDoc {
    colors: Vec<PaletteEntry>,
}

impl TryFrom<PaletteDoc> for Palette {
    type Error = Error;

    fn try_from(doc: PaletteDoc) -> Result<Self> {
        Palette::new(doc.colors)
    }
}

impl From<Palette> for PaletteDoc {
    fn from(p: Palette) -> Self {
        PaletteDoc {
            colors: p
                .colors
                .into_iter()
                .map(|(id, rgb)| PaletteEntry { id, rgb })
                .collect(),
        }
    }
}

/// Cityscapes colors for train ids 0..=18.
const CITYSCAPES_COLORS: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

impl Palette {
    pub fn new(entries: impl IntoIterator<Item = PaletteEntry>) -> Result<Self> {
        let mut colors = BTreeMap::new();
        let mut used: HashMap<[u8; 3], u8> = HashMap::new();
        for e in entries {
            if colors.insert(e.id, e.rgb).is_some() {
                return Err(Error::Config(format!("palette lists class {} twice", e.id)));
            }
            if let Some(other) = used.insert(e.rgb, e.id) {
                return Err(Error::Config(format!(
                    "palette color {:?} used by classes {other} and {}",
                    e.rgb, e.id
                )));
            }
        }
        Ok(Palette { colors })
    }

    /// Cityscapes colors, with black for the ignore id 255.
    pub fn cityscapes() -> Self {
        let entries = CITYSCAPES_COLORS
            .iter()
            .enumerate()
            .map(|(id, rgb)| PaletteEntry { id: id as u8, rgb: *rgb })
            .chain([PaletteEntry { id: 255, rgb: [0, 0, 0] }]);
        Palette::new(entries).expect("static palette is injective")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn color(&self, id: u8) -> Option<[u8; 3]> {
        self.colors.get(&id).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u8, [u8; 3])> + '_ {
        self.colors.iter().map(|(&id, &rgb)| (id, rgb))
    }
}

/// Row-major RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct RenderedImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RenderedImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RenderedImage({}x{})", self.width, self.height)
    }
}

impl RenderedImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::Config(format!(
                "{width}x{height} RGB image cannot hold {} bytes",
                data.len()
            )));
        }
        Ok(RenderedImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        pnm::encode_p6(self.width, self.height, &self.data)
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let r = pnm::decode_p6(bytes)?;
        RenderedImage::new(r.width, r.height, r.samples)
    }
}

/// Paints every pixel with its class color plus rounded N(0, sigma) noise
/// per channel, clamped to [0, 255].
pub fn render_palette(
    map: &LabelMap,
    palette: &Palette,
    noise_sigma: f64,
    seed: u64,
) -> Result<RenderedImage> {
    let mut lut = [None; 256];
    for &v in map.data() {
        if lut[v as usize].is_none() {
            lut[v as usize] = Some(palette.color(v).ok_or(Error::Render(v))?);
        }
    }
    let mut data = Vec::with_capacity(3 * map.data().len());
    for &v in map.data() {
        data.extend_from_slice(&lut[v as usize].expect("filled above"));
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::Config(format!("noise sigma {noise_sigma}: {e}")))?;
        let mut rng = seed::rng(seed);
        for b in &mut data {
            let n = normal.sample(&mut rng).round();
            *b = (f64::from(*b) + n).clamp(0.0, 255.0) as u8;
        }
    } else if noise_sigma < 0.0 || noise_sigma.is_nan() {
        return Err(Error::Config(format!("noise sigma {noise_sigma} is negative")));
    }
    RenderedImage::new(map.width(), map.height(), data)
}

/// Nearest palette color per pixel: exact match first, otherwise minimal
/// squared RGB distance with ties going to the lowest class id.
pub fn invert_palette(img: &RenderedImage, palette: &Palette) -> LabelMap {
    let exact: HashMap<[u8; 3], u8> = palette.entries().map(|(id, rgb)| (rgb, id)).collect();
    let nearest = |px: [u8; 3]| -> u8 {
        if let Some(&id) = exact.get(&px) {
            return id;
        }
        let mut best = (u32::MAX, 0u8);
        for (id, rgb) in palette.entries() {
            let d: u32 = px
                .iter()
                .zip(rgb)
                .map(|(&a, b)| (i32::from(a) - i32::from(b)).pow(2) as u32)
                .sum();
            if d < best.0 {
                best = (d, id);
            }
        }
        best.1
    };
    let data = img
        .data
        .chunks_exact(3)
        .map(|c| nearest([c[0], c[1], c[2]]))
        .collect();
    LabelMap::new(img.width, img.height, data).expect("dimensions carried over")
}

/// Shell-quotes a path for substitution into the command template.
fn quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

/// Runs an external label-to-image program.
///
/// `{in}` in the template is replaced by a P5 label file and `{out}` by the
/// path where the program must write a P6 image. Both live in a fresh
/// temporary directory; the command runs under `sh -c` in the caller's
/// working directory.
pub fn render_external(map: &LabelMap, command: &str, timeout: Duration) -> Result<RenderedImage> {
    if !command.contains("{in}") || !command.contains("{out}") {
        return Err(GeneratorError::Template(command.to_string()).into());
    }
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("label.pgm");
    let output = dir.path().join("image.ppm");
    std::fs::write(&input, labelmap::save_labelmap(map)).map_err(|e| Error::io(&input, e))?;
    let cmd = command
        .replace("{in}", &quote(&input))
        .replace("{out}", &quote(&output));

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| GeneratorError::Spawn(e.to_string()))?;

    // Drain stderr on a thread so a chatty child cannot block on a full pipe.
    let mut stderr_pipe = child.stderr.take().expect("stderr is piped");
    let stderr_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr_pipe.read_to_string(&mut s);
        s
    });

    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if started.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(GeneratorError::Timeout(timeout).into());
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(GeneratorError::Spawn(e.to_string()).into()),
        }
    };
    let stderr = stderr_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(GeneratorError::Exit {
            code: status.code(),
            stderr,
        }
        .into());
    }
    let bytes = std::fs::read(&output)
        .map_err(|e| GeneratorError::Malformed(format!("reading {}: {e}", output.display())))?;
    let img = RenderedImage::from_ppm(&bytes).map_err(|e| GeneratorError::Malformed(e.to_string()))?;
    if img.dims() != map.dims() {
        return Err(GeneratorError::DimensionMismatch {
            expected: map.dims(),
            got: img.dims(),
        }
        .into());
    }
    Ok(img)
}

/// [`render_external`] over many maps with at most `jobs` concurrent children.
pub fn render_external_batch(
    maps: &[LabelMap],
    command: &str,
    timeout: Duration,
    jobs: usize,
) -> Result<Vec<RenderedImage>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        maps.par_iter()
            .map(|m| render_external(m, command, timeout))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_map(seed: u64, w: usize, h: usize) -> LabelMap {
        let mut rng = seed::rng(seed);
        let d = (0..w * h)
            .map(|_| if rng.random_bool(0.1) { 255 } else { rng.random_range(0..19) })
            .collect();
        LabelMap::new(w, h, d).unwrap()
    }

    #[test]
    fn uniform_render() {
        let p = Palette::cityscapes();
        let img = render_palette(&LabelMap::filled(3, 2, 5).unwrap(), &p, 0.0, 0).unwrap();
        assert!(img.data().chunks(3).all(|c| c == [153, 153, 153]));
    }

    #[test]
    fn palette_must_be_injective() {
        let dup = [
            PaletteEntry { id: 0, rgb: [1, 2, 3] },
            PaletteEntry { id: 1, rgb: [1, 2, 3] },
        ];
        assert!(Palette::new(dup).is_err());
        let again = [
            PaletteEntry { id: 0, rgb: [1, 2, 3] },
            PaletteEntry { id: 0, rgb: [1, 2, 4] },
        ];
        assert!(Palette::new(again).is_err());
        let p = Palette::cityscapes();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(Palette::from_json(&text).unwrap(), p);
    }

    #[test]
    fn missing_palette_entry() {
        let p = Palette::new([PaletteEntry { id: 0, rgb: [0, 0, 0] }]).unwrap();
        let m = LabelMap::new(2, 1, vec![0, 4]).unwrap();
        assert!(matches!(render_palette(&m, &p, 0.0, 0), Err(Error::Render(4))));
    }

    #[test]
    fn noiseless_roundtrip() {
        let p = Palette::cityscapes();
        for s in 0..20 {
            let m = random_map(s, 9, 7);
            let img = render_palette(&m, &p, 0.0, s).unwrap();
            assert_eq!(invert_palette(&img, &p), m);
        }
    }

    #[test]
    fn nearest_color_rule() {
        let p = Palette::cityscapes();
        let m = LabelMap::new(2, 1, vec![15, 16]).unwrap();
        let img = render_palette(&m, &p, 0.0, 0).unwrap();
        let mut data = img.data().to_vec();
        data[1] += 1; // bus (0,60,100) -> (0,61,100)
        data[4] -= 1; // train (0,80,100) -> (0,79,100)
        let img = RenderedImage::new(2, 1, data).unwrap();
        assert_eq!(invert_palette(&img, &p).data(), &[15, 16]);
        // Equidistant from bus and train: lower id wins.
        let mid = RenderedImage::new(1, 1, vec![0, 70, 100]).unwrap();
        assert_eq!(invert_palette(&mid, &p).data(), &[15]);
    }

    #[test]
    fn noise_statistics() {
        let gray = Palette::new([PaletteEntry { id: 0, rgb: [128, 128, 128] }]).unwrap();
        let m = LabelMap::filled(64, 64, 0).unwrap();
        let img = render_palette(&m, &gray, 8.0, 11).unwrap();
        let mad = img.data().iter().map(|&b| (f64::from(b) - 128.0).abs()).sum::<f64>()
            / img.data().len() as f64;
        // E|N(0, 8)| = 8 * sqrt(2 / pi) ~ 6.38
        assert!((6.0..=10.5).contains(&mad), "mean abs deviation {mad}");
        assert_eq!(img, render_palette(&m, &gray, 8.0, 11).unwrap());
        assert_ne!(img, render_palette(&m, &gray, 8.0, 12).unwrap());
    }

    #[test]
    fn noise_is_clamped() {
        let p = Palette::new([PaletteEntry { id: 0, rgb: [0, 255, 0] }]).unwrap();
        let img = render_palette(&LabelMap::filled(16, 16, 0).unwrap(), &p, 30.0, 1).unwrap();
        assert!(img.data().chunks(3).any(|c| c[0] == 0 && c[1] == 255));
    }

    #[test]
    fn template_needs_placeholders() {
        let m = LabelMap::filled(2, 2, 0).unwrap();
        assert!(matches!(
            render_external(&m, "cat {in}", DEFAULT_TIMEOUT),
            Err(Error::Generator(GeneratorError::Template(_)))
        ));
    }
}
