//! Synthetic manifold datasets with known regression functions, the additive
//! Gaussian noise model, dataset CSV I/O and the image-manifold loader.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid_input, invalid_param, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Default noise standard deviation.
pub const DEFAULT_SIGMA: f64 = 0.1;

const NOISE_STREAM: u64 = 0x6e6f697365;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
    /// Per-point component labels for union datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    pub f_star: Vec<f64>,
    pub sigma: f64,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let x = Mat::from_fn(indices.len(), self.dim(), |i, j| self.x[(indices[i], j)]);
        let mut meta = self.meta.clone();
        meta.labels = meta.labels.map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset {
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            f_star: indices.iter().map(|&i| self.f_star[i]).collect(),
            sigma: self.sigma,
            meta,
        }
    }

    /// Writes `x1,...,xD,y,fstar`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        header.push("fstar".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row: Vec<String> = (0..self.dim()).map(|j| format!("{:e}", self.x[(i, j)])).collect();
            row.push(format!("{:e}", self.y[i]));
            row.push(format!("{:e}", self.f_star[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dataset CSV; `sigma` is not stored in the file.
    pub fn read_csv<R: Read>(input: R, sigma: f64) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let d = cols.len().checked_sub(2).filter(|&d| d > 0);
        let Some(d) = d else {
            return invalid_input("dataset CSV needs x columns plus y and fstar");
        };
        for (j, c) in cols[..d].iter().enumerate() {
            if *c != format!("x{}", j + 1) {
                return invalid_input(format!("unexpected column {c:?} at position {}", j + 1));
            }
        }
        if cols[d] != "y" || cols[d + 1] != "fstar" {
            return invalid_input("last two columns must be y,fstar");
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| crate::Error::InvalidInput(format!("bad number {s:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != d + 2 {
                return invalid_input("ragged dataset CSV row");
            }
            rows.push(vals);
        }
        let x = Mat::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Ok(Dataset {
            x,
            y: rows.iter().map(|r| r[d]).collect(),
            f_star: rows.iter().map(|r| r[d + 1]).collect(),
            sigma,
            meta: DatasetMeta { generator: "csv".into(), params: serde_json::Value::Null, seed: 0, labels: None, notes: vec![] },
        })
    }
}

/// `Y = f* + σ·z` with `z` i.i.d. standard normal from the seeded stream.
pub fn add_noise(f_star: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return invalid_param(format!("noise level must be nonnegative, got {sigma}"));
    }
    let mut rng = rng_from_seed(seed);
    Ok(f_star
        .iter()
        .map(|&f| {
            let z: f64 = rng.sample(StandardNormal);
            f + sigma * z
        })
        .collect())
}

fn noise_seed(seed: u64) -> u64 {
    derive_seed(seed, &[NOISE_STREAM])
}

/// Swiss Roll parameter ranges.
pub const SWISS_U_RANGE: (f64, f64) = (PI, 4.5 * PI);
pub const SWISS_V_RANGE: (f64, f64) = (0.0, 15.0);

/// `[u cos u, v, u sin u]` before rescaling.
pub fn swiss_roll_point(u: f64, v: f64) -> [f64; 3] {
    [u * u.cos(), v, u * u.sin()]
}

/// `4((u − 7π/2)/(3π/2))² + (π/45)·v`.
pub fn f_swiss(u: f64, v: f64) -> f64 {
    let a = (u - 3.5 * PI) / (1.5 * PI);
    4.0 * a * a + PI / 45.0 * v
}

/// `f_swiss(√(x₁² + x₃²), x₂)` on unrescaled coordinates.
pub fn f_swiss_ambient(p: [f64; 3]) -> f64 {
    f_swiss((p[0] * p[0] + p[2] * p[2]).sqrt(), p[1])
}

/// Maps a raw Swiss Roll point into the unit cube.
pub fn rescale_swiss(p: [f64; 3]) -> [f64; 3] {
    [(p[0] + 15.0) / 30.0, p[1] / 15.0, (p[2] + 15.0) / 30.0]
}

/// Rescaling used for the Swiss-Roll-plus-curve union. The curve's second
/// coordinate reaches `7π`, so that axis is divided by `7π` instead of 15.
pub fn rescale_union(p: [f64; 3]) -> [f64; 3] {
    [(p[0] + 15.0) / 30.0, p[1] / (7.0 * PI), (p[2] + 15.0) / 30.0]
}

/// `(7π/2)[cos(πs)cos(4πs), 1 + cos(πs)sin(4πs), sin(πs)]` for `s ∈ (−1, 1)`.
pub fn union_curve_point(s: f64) -> [f64; 3] {
    let c = 3.5 * PI;
    [c * (PI * s).cos() * (4.0 * PI * s).cos(), c * (1.0 + (PI * s).cos() * (4.0 * PI * s).sin()), c * (PI * s).sin()]
}

fn from_points(points: &[[f64; 3]]) -> Mat<f64> {
    Mat::from_fn(points.len(), 3, |i, j| points[i][j])
}

pub fn gen_swiss_roll(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return invalid_input("n must be positive");
    }
    let mut rng = rng_from_seed(seed);
    let mut pts = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.gen_range(SWISS_U_RANGE.0..SWISS_U_RANGE.1);
        let v = rng.gen_range(SWISS_V_RANGE.0..SWISS_V_RANGE.1);
        pts.push(rescale_swiss(swiss_roll_point(u, v)));
        f.push(f_swiss(u, v));
    }
    let y = add_noise(&f, sigma, noise_seed(seed))?;
    Ok(Dataset {
        x: from_points(&pts),
        y,
        f_star: f,
        sigma,
        meta: DatasetMeta {
            generator: "swiss-roll".into(),
            params: serde_json::json!({ "n": n, "sigma": sigma }),
            seed,
            labels: None,
            notes: vec![],
        },
    })
}

/// Swiss Roll (label 0) and a closed space curve (label 1), each picked with probability 1/2.
pub fn gen_mixed_union(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return invalid_input("n must be at least 2");
    }
    let mut rng = rng_from_seed(seed);
    let mut pts = Vec::with_capacity(n);
    let mut f = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = if rng.gen_bool(0.5) {
            let u = rng.gen_range(SWISS_U_RANGE.0..SWISS_U_RANGE.1);
            let v = rng.gen_range(SWISS_V_RANGE.0..SWISS_V_RANGE.1);
            labels.push(0u8);
            swiss_roll_point(u, v)
        } else {
            let s = rng.gen_range(-1.0..1.0);
            labels.push(1u8);
            union_curve_point(s)
        };
        f.push(f_swiss_ambient(raw));
        pts.push(rescale_union(raw));
    }
    let y = add_noise(&f, sigma, noise_seed(seed))?;
    Ok(Dataset {
        x: from_points(&pts),
        y,
        f_star: f,
        sigma,
        meta: DatasetMeta {
            generator: "mixed-union".into(),
            params: serde_json::json!({ "n": n, "sigma": sigma }),
            seed,
            labels: Some(labels),
            notes: vec![
                "the curve intersects the Swiss Roll surface, so the union is not a disjoint union of manifolds".into(),
                "second coordinate rescaled by 1/(7*pi) so the curve fits the unit cube".into(),
            ],
        },
    })
}

/// How circle angles are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircleSampling {
    #[default]
    Uniform,
    /// `θ_i = 2πi/n`.
    Equispaced,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CircleSpec {
    pub radius: f64,
    pub ambient_dim: usize,
    pub sampling: CircleSampling,
}

impl Default for CircleSpec {
    fn default() -> Self {
        CircleSpec { radius: 0.4, ambient_dim: 2, sampling: CircleSampling::Uniform }
    }
}

impl CircleSpec {
    pub fn circumference(&self) -> f64 {
        2.0 * PI * self.radius
    }

    /// Uniform density `1/L` with respect to arc length.
    pub fn density(&self) -> f64 {
        1.0 / self.circumference()
    }

    /// Embedded point at angle `θ`: centred at `(½, …, ½)`, circle in the first two axes.
    pub fn point(&self, theta: f64) -> Vec<f64> {
        let mut p = vec![0.5; self.ambient_dim];
        p[0] += self.radius * theta.cos();
        p[1] += self.radius * theta.sin();
        p
    }
}

/// Circle of the given radius in `[0,1]^D`; `f*` defaults to `cos θ`.
pub fn gen_circle(n: usize, spec: CircleSpec, sigma: f64, seed: u64, f_star: Option<&dyn Fn(f64) -> f64>) -> Result<Dataset> {
    if n == 0 {
        return invalid_input("n must be positive");
    }
    if spec.ambient_dim < 2 {
        return invalid_param("circle needs ambient dimension >= 2");
    }
    if !(spec.radius > 0.0 && spec.radius <= 0.5) {
        return invalid_param(format!("radius {} does not fit the unit cube (need 0 < r <= 0.5)", spec.radius));
    }
    let mut rng = rng_from_seed(seed);
    let thetas: Vec<f64> = (0..n)
        .map(|i| match spec.sampling {
            CircleSampling::Uniform => rng.gen_range(0.0..2.0 * PI),
            CircleSampling::Equispaced => 2.0 * PI * i as f64 / n as f64,
        })
        .collect();
    let f: Vec<f64> = thetas.iter().map(|&th| f_star.map_or(th.cos(), |g| g(th))).collect();
    let x = Mat::from_fn(n, spec.ambient_dim, |i, j| match j {
        0 => 0.5 + spec.radius * thetas[i].cos(),
        1 => 0.5 + spec.radius * thetas[i].sin(),
        _ => 0.5,
    });
    let y = add_noise(&f, sigma, noise_seed(seed))?;
    Ok(Dataset {
        x,
        y,
        f_star: f,
        sigma,
        meta: DatasetMeta {
            generator: "circle".into(),
            params: serde_json::json!({
                "n": n, "radius": spec.radius, "ambient_dim": spec.ambient_dim,
                "sampling": spec.sampling, "sigma": sigma, "density": spec.density(),
            }),
            seed,
            labels: None,
            notes: vec![],
        },
    })
}

/// Noise and seed applied to loaded image data.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResponseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ResponseSpec {
    fn default() -> Self {
        ResponseSpec { sigma: DEFAULT_SIGMA, seed: 0 }
    }
}

/// Name of the optional angle manifest inside an image directory.
pub const MANIFEST_NAME: &str = "manifest.csv";

const IMAGE_EXTENSIONS: [&str; 4] = ["pgm", "pnm", "png", "raw"];

fn trailing_index(stem: &str) -> Option<usize> {
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

fn load_gray(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw()))
}

/// Loads a directory of equal-size grayscale views of a rotating object.
///
/// Angles come from `manifest.csv` (`filename,theta_radians`) when present;
/// otherwise every file name must end in an integer index `i` and
/// `θ_i = 2πi/m` for `m` files. Pixels are scaled to `[0,1]` and `f* = cos θ`.
pub fn load_image_manifold(dir: &Path, response: ResponseSpec) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST_NAME);
    let entries: Vec<(String, f64)> = if manifest.exists() {
        let mut r = csv::Reader::from_path(&manifest)?;
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let (Some(name), Some(theta)) = (rec.get(0), rec.get(1)) else {
                return invalid_input("manifest row needs filename and theta_radians");
            };
            let theta: f64 = theta
                .trim()
                .parse()
                .map_err(|_| crate::Error::InvalidInput(format!("missing or invalid angle for {name:?}")))?;
            out.push((name.trim().to_string(), theta));
        }
        out
    } else {
        let mut files: Vec<(usize, String)> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
            if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                continue;
            }
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Some(idx) = trailing_index(stem) else {
                return invalid_input(format!("no angle metadata for {name:?}: no manifest and no index in the name"));
            };
            files.push((idx, name));
        }
        files.sort();
        let m = files.len();
        files.into_iter().map(|(i, name)| (name, 2.0 * PI * i as f64 / m as f64)).collect()
    };
    if entries.is_empty() {
        return invalid_input(format!("no images found in {}", dir.display()));
    }
    let mut pixels: Vec<Vec<f64>> = Vec::with_capacity(entries.len());
    let mut size = None;
    for (name, _) in &entries {
        let (w, h, raw) = load_gray(&dir.join(name))?;
        match size {
            None => size = Some((w, h)),
            Some(s) if s != (w, h) => {
                return invalid_input(format!("{name} is {w}x{h}, expected {}x{}", s.0, s.1));
            }
            _ => {}
        }
        pixels.push(raw.iter().map(|&p| p as f64 / 255.0).collect());
    }
    let (w, h) = size.expect("at least one image");
    let d = (w * h) as usize;
    let x = Mat::from_fn(entries.len(), d, |i, j| pixels[i][j]);
    let f: Vec<f64> = entries.iter().map(|(_, th)| th.cos()).collect();
    let y = add_noise(&f, response.sigma, noise_seed(response.seed))?;
    Ok(Dataset {
        x,
        y,
        f_star: f,
        sigma: response.sigma,
        meta: DatasetMeta {
            generator: "image-manifold".into(),
            params: serde_json::json!({
                "dir": dir.display().to_string(), "width": w, "height": h,
                "pixel_scale": "value/255", "sigma": response.sigma,
                "thetas": entries.iter().map(|e| e.1).collect::<Vec<_>>(),
            }),
            seed: response.seed,
            labels: None,
            notes: vec![],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swiss_function_values() {
        assert_eq!(f_swiss(3.5 * PI, 0.0), 0.0);
        assert!((f_swiss(2.0 * PI, 15.0) - (4.0 + PI / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn swiss_roll_in_unit_cube() {
        let ds = gen_swiss_roll(2000, 0.1, 4).unwrap();
        assert_eq!(ds.dim(), 3);
        for i in 0..ds.n() {
            for j in 0..3 {
                assert!((0.0..=1.0).contains(&ds.x[(i, j)]));
            }
        }
    }

    #[test]
    fn curve_at_zero() {
        let p = union_curve_point(0.0);
        let c = 3.5 * PI;
        assert!((p[0] - c).abs() < 1e-12 && (p[1] - c).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn curve_response_matches_swiss_function() {
        for &s in &[-0.7, -0.2, 0.1, 0.55] {
            let p = union_curve_point(s);
            let (u, v) = ((p[0] * p[0] + p[2] * p[2]).sqrt(), p[1]);
            assert_eq!(f_swiss_ambient(p), f_swiss(u, v));
        }
    }

    #[test]
    fn equispaced_circle_responses() {
        let spec = CircleSpec { sampling: CircleSampling::Equispaced, ..CircleSpec::default() };
        let ds = gen_circle(4, spec, 0.0, 1, None).unwrap();
        let expected = [1.0, 0.0, -1.0, 0.0];
        for (f, e) in ds.f_star.iter().zip(expected) {
            assert!((f - e).abs() < 1e-12);
        }
        assert_eq!(ds.y, ds.f_star);
        assert!((spec.density() - 1.0 / (2.0 * PI * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn circle_radius_must_fit() {
        let spec = CircleSpec { radius: 0.6, ..CircleSpec::default() };
        assert!(gen_circle(10, spec, 0.1, 0, None).is_err());
        let spec = CircleSpec { ambient_dim: 1, ..CircleSpec::default() };
        assert!(gen_circle(10, spec, 0.1, 0, None).is_err());
    }

    #[test]
    fn noise_basics() {
        let f = vec![0.5, -1.0, 2.0];
        assert_eq!(add_noise(&f, 0.0, 9).unwrap(), f);
        assert_eq!(add_noise(&f, 0.3, 9).unwrap(), add_noise(&f, 0.3, 9).unwrap());
        assert_ne!(add_noise(&f, 0.3, 9).unwrap(), add_noise(&f, 0.3, 10).unwrap());
        assert!(add_noise(&f, -0.1, 9).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_mixed_union(17, 0.1, 2).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x1,x2,x3,y,fstar\n"));
        let back = Dataset::read_csv(buf.as_slice(), 0.1).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
        assert_eq!(back.f_star, ds.f_star);
    }

    #[test]
    fn trailing_indices() {
        assert_eq!(trailing_index("obj5__12"), Some(12));
        assert_eq!(trailing_index("view"), None);
    }
}
