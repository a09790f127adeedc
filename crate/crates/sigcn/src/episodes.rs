//! Episode data model for the 1-way K-shot protocol, masked pooling
//! primitives, fixture I/O, and the synthetic generator that stands in
//! for a CNN backbone.
//!
//! Episodes live on disk as a `manifest.json` of relative paths plus
//! one STNSR1 file per feature map / mask. The generator works in f32
//! precision (values are rounded through f32 before use) so that a
//! generated episode and its saved-then-loaded copy are bit-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::io;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Binary H×W mask; every value is exactly 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    tensor: Tensor,
}

impl Mask {
    pub fn from_tensor(t: Tensor) -> Result<Mask> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!(
                "mask must be rank 2, got {:?}",
                t.dims()
            )));
        }
        if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Input(
                "mask values must be exactly 0 or 1".into(),
            ));
        }
        Ok(Mask { tensor: t })
    }

    pub fn from_bools(h: usize, w: usize, on: &[bool]) -> Result<Mask> {
        let data = on.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Mask::from_tensor(Tensor::new(vec![h, w], data)?)
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[1]
    }

    /// Row-major foreground test.
    pub fn is_fg(&self, idx: usize) -> bool {
        self.tensor.data()[idx] == 1.0
    }

    pub fn fg_count(&self) -> usize {
        self.tensor.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// One support example: two feature levels plus the annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub feat_mid: Tensor,
    pub feat_high: Tensor,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub feat_mid: Tensor,
    pub feat_high: Tensor,
    /// Ground truth; absent for pure inference fixtures.
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub class_id: u32,
    pub support: Vec<Shot>,
    pub query: Query,
}

impl Episode {
    /// Validate the shared-dims and non-empty-support invariants.
    pub fn new(class_id: u32, support: Vec<Shot>, query: Query) -> Result<Episode> {
        if support.is_empty() {
            return Err(Error::Input("episode needs at least one support shot".into()));
        }
        let dims = query.feat_mid.dims().to_vec();
        if dims.len() != 3 {
            return Err(Error::Shape(format!(
                "feature maps must be [C,H,W], got {dims:?}"
            )));
        }
        let (h, w) = (dims[1], dims[2]);
        let check_feat = |f: &Tensor, what: &str| -> Result<()> {
            if f.dims() != dims.as_slice() {
                return Err(Error::Shape(format!(
                    "{what} dims {:?} differ from {dims:?}",
                    f.dims()
                )));
            }
            Ok(())
        };
        let check_mask = |m: &Mask, what: &str| -> Result<()> {
            if (m.height(), m.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "{what} mask is {}x{}, features are {h}x{w}",
                    m.height(),
                    m.width()
                )));
            }
            Ok(())
        };
        check_feat(&query.feat_high, "query high")?;
        if let Some(m) = &query.mask {
            check_mask(m, "query")?;
        }
        for (i, shot) in support.iter().enumerate() {
            check_feat(&shot.feat_mid, "support mid")?;
            check_feat(&shot.feat_high, "support high")?;
            check_mask(&shot.mask, "support")?;
            if shot.mask.fg_count() == 0 {
                return Err(Error::ForegroundEmpty(format!(
                    "support shot {i} has no foreground pixels"
                )));
            }
        }
        Ok(Episode {
            class_id,
            support,
            query,
        })
    }

    pub fn shots(&self) -> usize {
        self.support.len()
    }

    /// (C, H, W) shared by every feature map in the episode.
    pub fn dims(&self) -> (usize, usize, usize) {
        let d = self.query.feat_mid.dims();
        (d[0], d[1], d[2])
    }
}

/// Per-channel mean of `f` over the pixels where `m` is foreground.
pub fn masked_average_pool(f: &Tensor, m: &Mask) -> Result<Tensor> {
    let seq = foreground_sequence(f, m)?;
    let (n, c) = (seq.dims()[0], seq.dims()[1]);
    let mut out = vec![0.0; c];
    for row in 0..n {
        for (o, &v) in out.iter_mut().zip(&seq.data()[row * c..(row + 1) * c]) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n as f64;
    }
    Tensor::new(vec![c], out)
}

/// Feature vectors of the foreground pixels, one row per pixel in
/// row-major scan order.
pub fn foreground_sequence(f: &Tensor, m: &Mask) -> Result<Tensor> {
    let (c, h, w) = match f.dims() {
        [c, h, w] => (*c, *h, *w),
        d => return Err(Error::Shape(format!("features must be [C,H,W], got {d:?}"))),
    };
    if (m.height(), m.width()) != (h, w) {
        return Err(Error::Shape(format!(
            "mask {}x{} vs features {h}x{w}",
            m.height(),
            m.width()
        )));
    }
    let mut rows = Vec::new();
    for p in 0..h * w {
        if m.is_fg(p) {
            for ci in 0..c {
                rows.push(f.data()[ci * h * w + p]);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::ForegroundEmpty(
            "mask selects no foreground pixels".into(),
        ));
    }
    let n = rows.len() / c;
    Tensor::new(vec![n, c], rows)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub shots: usize,
    /// Appearance variation: magnitude of the offset added to the
    /// query's foreground mean.
    pub sigma: f64,
    /// Per-value Gaussian noise scale around the class means.
    pub noise: f64,
    pub class_id: u32,
}

impl Default for GeneratorConfig {
    fn default() -> GeneratorConfig {
        GeneratorConfig {
            channels: 8,
            height: 16,
            width: 16,
            shots: 1,
            sigma: 0.5,
            // Comparable to the class-mean separation, so single pixels
            // are ambiguous and evidence has to be aggregated.
            noise: 1.5,
            class_id: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || self.height < 2 || self.width < 2 {
            return Err(Error::Config(format!(
                "generator needs C,H,W >= 2, got {}x{}x{}",
                self.channels, self.height, self.width
            )));
        }
        if self.shots < 1 {
            return Err(Error::Config("generator needs shots >= 1".into()));
        }
        if self.sigma < 0.0 || self.noise < 0.0 {
            return Err(Error::Config(format!(
                "sigma and noise must be >= 0, got {} and {}",
                self.sigma, self.noise
            )));
        }
        Ok(())
    }
}

/// Deterministic synthetic episode: foreground/background pixels are
/// drawn around distinct class means per feature level, masks are
/// random axis-aligned ellipses, and the query's foreground mean is
/// shifted by a random direction of magnitude `sigma`.
pub fn generate_episode(seed: u64, cfg: &GeneratorConfig) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(seed);
    let c = cfg.channels;

    // Class means per level, then the query's appearance offset.
    let mut means = Vec::new();
    for _ in 0..2 {
        let fg: Vec<f64> = (0..c).map(|_| rng.gaussian()).collect();
        let bg: Vec<f64> = (0..c).map(|_| rng.gaussian()).collect();
        means.push((fg, bg));
    }
    let mut offsets = Vec::new();
    for _ in 0..2 {
        let dir: Vec<f64> = (0..c).map(|_| rng.gaussian()).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        offsets.push(dir.iter().map(|v| cfg.sigma * v / norm).collect::<Vec<f64>>());
    }

    let mut draw = |is_query: bool| -> (Mask, Tensor, Tensor) {
        let mask = random_ellipse_mask(&mut rng, cfg.height, cfg.width);
        let mut feats = Vec::new();
        for (level, (fg, bg)) in means.iter().enumerate() {
            let mut data = Vec::with_capacity(c * cfg.height * cfg.width);
            for ci in 0..c {
                let fg_mean = fg[ci] + if is_query { offsets[level][ci] } else { 0.0 };
                for p in 0..cfg.height * cfg.width {
                    let mean = if mask.is_fg(p) { fg_mean } else { bg[ci] };
                    let v = mean + cfg.noise * rng.gaussian();
                    // Round through f32 so the saved copy loads back
                    // bit-identically.
                    data.push(v as f32 as f64);
                }
            }
            feats.push(
                Tensor::new(vec![c, cfg.height, cfg.width], data).expect("generated dims"),
            );
        }
        let high = feats.pop().unwrap();
        let mid = feats.pop().unwrap();
        (mask, mid, high)
    };

    let mut support = Vec::new();
    for _ in 0..cfg.shots {
        let (mask, feat_mid, feat_high) = draw(false);
        support.push(Shot {
            feat_mid,
            feat_high,
            mask,
        });
    }
    let (mask, feat_mid, feat_high) = draw(true);
    let query = Query {
        feat_mid,
        feat_high,
        mask: Some(mask),
    };
    Episode::new(cfg.class_id, support, query)
}

fn random_ellipse_mask(rng: &mut SplitMix64, h: usize, w: usize) -> Mask {
    let cy = rng.uniform(0.25, 0.75) * (h - 1) as f64;
    let cx = rng.uniform(0.25, 0.75) * (w - 1) as f64;
    let ry = rng.uniform(0.15, 0.4) * h as f64;
    let rx = rng.uniform(0.15, 0.4) * w as f64;
    let mut on = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            on[y * w + x] = dy * dy + dx * dx <= 1.0;
        }
    }
    if !on.iter().any(|&b| b) {
        // Tiny grids can miss every pixel center; keep the invariant.
        let y = (cy.round() as usize).min(h - 1);
        let x = (cx.round() as usize).min(w - 1);
        on[y * w + x] = true;
    }
    Mask::from_bools(h, w, &on).expect("generated mask dims")
}

#[derive(Serialize, Deserialize)]
struct ManifestShot {
    feat_mid: String,
    feat_high: String,
    mask: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestQuery {
    feat_mid: String,
    feat_high: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    class_id: u32,
    shots: Vec<ManifestShot>,
    query: ManifestQuery,
}

/// Write the episode into `dir` as `manifest.json` plus one STNSR1
/// file per tensor.
pub fn save_episode(ep: &Episode, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| error::io(dir, e))?;
    let mut shots = Vec::new();
    for (i, shot) in ep.support.iter().enumerate() {
        let names = (
            format!("shot{i}_mid.stnsr"),
            format!("shot{i}_high.stnsr"),
            format!("shot{i}_mask.stnsr"),
        );
        io::save_tensor(&dir.join(&names.0), &shot.feat_mid)?;
        io::save_tensor(&dir.join(&names.1), &shot.feat_high)?;
        io::save_tensor(&dir.join(&names.2), shot.mask.tensor())?;
        shots.push(ManifestShot {
            feat_mid: names.0,
            feat_high: names.1,
            mask: names.2,
        });
    }
    io::save_tensor(&dir.join("query_mid.stnsr"), &ep.query.feat_mid)?;
    io::save_tensor(&dir.join("query_high.stnsr"), &ep.query.feat_high)?;
    let mut query = ManifestQuery {
        feat_mid: "query_mid.stnsr".into(),
        feat_high: "query_high.stnsr".into(),
        mask: None,
    };
    if let Some(m) = &ep.query.mask {
        io::save_tensor(&dir.join("query_mask.stnsr"), m.tensor())?;
        query.mask = Some("query_mask.stnsr".into());
    }
    let manifest = Manifest {
        class_id: ep.class_id,
        shots,
        query,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| error::io(&path, e))
}

/// Load an episode from its manifest; relative paths resolve against
/// the manifest's directory.
pub fn load_episode(manifest_path: &Path) -> Result<Episode> {
    let text = fs::read_to_string(manifest_path).map_err(|e| error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let base: PathBuf = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let load = |rel: &str| io::load_tensor(&base.join(rel));
    let mut support = Vec::new();
    for shot in &manifest.shots {
        support.push(Shot {
            feat_mid: load(&shot.feat_mid)?,
            feat_high: load(&shot.feat_high)?,
            mask: Mask::from_tensor(load(&shot.mask)?)?,
        });
    }
    let query = Query {
        feat_mid: load(&manifest.query.feat_mid)?,
        feat_high: load(&manifest.query.feat_high)?,
        mask: match &manifest.query.mask {
            Some(rel) => Some(Mask::from_tensor(load(rel)?)?),
            None => None,
        },
    };
    Episode::new(manifest.class_id, support, query)
}
