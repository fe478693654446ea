//! Lithography simulation: rasterization, aerial image formation, resist
//! thresholding, edge placement error, and process-variation band.
//!
//! The aerial image is a convolution of the binary mask grid with either a
//! normalized Gaussian kernel (intensity scales linearly with dose) or a set
//! of weighted complex kernels summed as `dose^2 * sum_k w_k |mask * h_k|^2`.
//! Convolutions run through zero-padded FFTs; [`aerial_direct`] keeps the
//! quadratic spatial-domain evaluation around as an oracle for the transform
//! path. Printing applies a constant threshold expressed as a fraction of the
//! open-frame (fully clear mask) intensity at nominal dose, inclusive at
//! equality.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use once_cell::sync::Lazy;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::layout::{LayoutError, MaskState, RectilinearPolygon, Segment};

#[derive(Debug, Error)]
pub enum LithoError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("bad simulation config: {0}")]
    Config(String),
    #[error("kernel file line {line}: {msg}")]
    KernelParse { line: usize, msg: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Non-negative intensity samples at pixel centers, indexed `[y][x]` with row
/// 0 at the bottom of the clip.
pub type AerialImage = Array2<f64>;

#[derive(Debug, Clone)]
pub struct SocsTerm {
    pub weight: f64,
    pub values: Array2<Complex<f64>>,
}

/// A sum-of-coherent-systems kernel set: square complex kernels with scalar
/// weights, all sharing one grid size.
#[derive(Debug, Clone)]
pub struct SocsKernels {
    pub grid: usize,
    pub terms: Vec<SocsTerm>,
}

#[derive(Debug, Clone)]
pub enum Kernel {
    Gaussian { sigma_nm: f64 },
    Socs(SocsKernels),
}

#[derive(Debug, Clone)]
pub struct LithoConfig {
    /// Square pixel pitch; must divide the clip width and height.
    pub pixel_nm: i32,
    pub kernel: Kernel,
    /// Print threshold as a fraction of the open-frame intensity, in (0, 1).
    pub resist_threshold: f64,
    /// Dose corners (inner, nominal, outer), ascending.
    pub dose_corners: (f64, f64, f64),
    /// How far along the outward normal the contour search extends.
    pub epe_search_range_nm: f64,
}

impl Default for LithoConfig {
    fn default() -> Self {
        LithoConfig {
            pixel_nm: 2,
            kernel: Kernel::Gaussian { sigma_nm: 25.0 },
            resist_threshold: 0.5,
            dose_corners: (0.98, 1.0, 1.02),
            epe_search_range_nm: 40.0,
        }
    }
}

impl LithoConfig {
    pub fn validate(&self) -> Result<(), LithoError> {
        if self.pixel_nm <= 0 {
            return Err(LithoError::Config("pixel_nm must be positive".into()));
        }
        if !(self.resist_threshold > 0.0 && self.resist_threshold < 1.0) {
            return Err(LithoError::Config(
                "resist_threshold must lie in (0, 1)".into(),
            ));
        }
        let (a, b, c) = self.dose_corners;
        if !(a > 0.0 && a <= b && b <= c) || !c.is_finite() {
            return Err(LithoError::Config(
                "dose corners must be positive and ascending".into(),
            ));
        }
        if !(self.epe_search_range_nm > 0.0) {
            return Err(LithoError::Config(
                "epe_search_range_nm must be positive".into(),
            ));
        }
        match &self.kernel {
            Kernel::Gaussian { sigma_nm } => {
                if !(*sigma_nm > 0.0) {
                    return Err(LithoError::Config("sigma_nm must be positive".into()));
                }
            }
            Kernel::Socs(socs) => {
                if socs.grid == 0 || socs.terms.is_empty() {
                    return Err(LithoError::Config(
                        "socs kernel set needs a positive grid and at least one term".into(),
                    ));
                }
                for (i, term) in socs.terms.iter().enumerate() {
                    if term.values.dim() != (socs.grid, socs.grid) {
                        return Err(LithoError::Config(format!(
                            "socs term {i} has grid {:?}, expected {0}x{0}",
                            socs.grid,
                        )));
                    }
                    if !term.weight.is_finite() {
                        return Err(LithoError::Config(format!(
                            "socs term {i} weight is not finite"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One edge placement error sample. When no contour crossing lies within the
/// search range, `nm` is clamped to the signed range and `found` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpeSample {
    pub nm: f64,
    pub found: bool,
}

#[derive(Debug, Clone)]
pub struct LithoResult {
    pub printed_inner: Array2<bool>,
    pub printed_nominal: Array2<bool>,
    pub printed_outer: Array2<bool>,
    /// One sample per measure point, in canonical segment order.
    pub epe: Vec<EpeSample>,
    /// Sum of absolute EPE over all measure points.
    pub epe_total: f64,
    /// Process-variation band area in nm^2.
    pub pvb_nm2: f64,
}

fn ceil_div(a: i64, b: i64) -> i64 {
    let d = a.div_euclid(b);
    if a.rem_euclid(b) != 0 {
        d + 1
    } else {
        d
    }
}

/// Rasterizes the union of the polygons onto the clip pixel grid: a pixel is
/// set iff its center lies inside some polygon (left/bottom boundary
/// inclusive). Geometry outside the clip is dropped.
pub fn rasterize(
    polygons: &[RectilinearPolygon],
    width_nm: i32,
    height_nm: i32,
    pixel_nm: i32,
) -> Array2<bool> {
    let nx = (width_nm / pixel_nm) as usize;
    let ny = (height_nm / pixel_nm) as usize;
    let px = pixel_nm as i64;
    let mut grid = Array2::from_elem((ny, nx), false);
    for poly in polygons {
        let ring = poly.vertices();
        let n = ring.len();
        let mut vedges = Vec::new();
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            if a.x == b.x {
                vedges.push((a.x as i64, a.y.min(b.y) as i64, a.y.max(b.y) as i64));
            }
        }
        let bbox = poly.bbox();
        let iy_min = ceil_div(2 * bbox.y0 as i64 - px, 2 * px).max(0);
        let iy_max = ceil_div(2 * bbox.y1 as i64 - px, 2 * px).min(ny as i64);
        for iy in iy_min..iy_max {
            let yc2 = (2 * iy + 1) * px; // twice the row center
            let mut xs: Vec<i64> = vedges
                .iter()
                .filter(|&&(_, y0, y1)| 2 * y0 <= yc2 && yc2 < 2 * y1)
                .map(|&(x, _, _)| x)
                .collect();
            xs.sort_unstable();
            for pair in xs.chunks_exact(2) {
                let ix_lo = ceil_div(2 * pair[0] - px, 2 * px).max(0);
                let ix_hi = ceil_div(2 * pair[1] - px, 2 * px).min(nx as i64);
                for ix in ix_lo..ix_hi {
                    grid[(iy as usize, ix as usize)] = true;
                }
            }
        }
    }
    grid
}

/// Smallest length >= `n` whose prime factors are all in {2, 3, 5, 7}.
fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

static FFT_PLANNER: Lazy<Mutex<FftPlanner<f64>>> = Lazy::new(|| Mutex::new(FftPlanner::new()));
static FFT_PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn fft_plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut plans = FFT_PLANS.lock().unwrap();
    plans
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FFT_PLANNER.lock().unwrap();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut dst = vec![Complex::default(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

/// In-place 2D FFT over a row-major `rows x cols` buffer. Unnormalized; a
/// forward/inverse round trip scales by `rows * cols`.
fn fft2(buf: &mut Vec<Complex<f64>>, rows: usize, cols: usize, inverse: bool) {
    fft_plan(cols, inverse).process(buf);
    let mut t = transpose(buf, rows, cols);
    fft_plan(rows, inverse).process(&mut t);
    *buf = transpose(&t, cols, rows);
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = if seed == 0 { 0xcbf29ce484222325 } else { seed };
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn kernel_fingerprint(cfg: &LithoConfig) -> u64 {
    let mut h = fnv1a(0, &cfg.pixel_nm.to_le_bytes());
    match &cfg.kernel {
        Kernel::Gaussian { sigma_nm } => {
            h = fnv1a(h, b"g");
            h = fnv1a(h, &sigma_nm.to_bits().to_le_bytes());
        }
        Kernel::Socs(socs) => {
            h = fnv1a(h, b"s");
            h = fnv1a(h, &(socs.grid as u64).to_le_bytes());
            for term in &socs.terms {
                h = fnv1a(h, &term.weight.to_bits().to_le_bytes());
                for v in term.values.iter() {
                    h = fnv1a(h, &v.re.to_bits().to_le_bytes());
                    h = fnv1a(h, &v.im.to_bits().to_le_bytes());
                }
            }
        }
    }
    h
}

type KernelFftKey = (u64, usize, usize, usize);
static KERNEL_FFTS: Lazy<Mutex<HashMap<KernelFftKey, Arc<Vec<Complex<f64>>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn gaussian_kernel(sigma_px: f64) -> Array2<Complex<f64>> {
    let radius = (4.0 * sigma_px).ceil().max(1.0) as i64;
    let k = (2 * radius + 1) as usize;
    let mut values = Array2::from_elem((k, k), Complex::default());
    let mut sum = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_px * sigma_px)).exp();
            sum += w;
            values[((dy + radius) as usize, (dx + radius) as usize)] = Complex::new(w, 0.0);
        }
    }
    values.mapv_inplace(|v| v / sum);
    values
}

fn config_kernels(cfg: &LithoConfig) -> Vec<(f64, Array2<Complex<f64>>)> {
    match &cfg.kernel {
        Kernel::Gaussian { sigma_nm } => {
            vec![(1.0, gaussian_kernel(sigma_nm / cfg.pixel_nm as f64))]
        }
        Kernel::Socs(socs) => socs
            .terms
            .iter()
            .map(|t| (t.weight, t.values.clone()))
            .collect(),
    }
}

/// True 2D convolution of `mask` with each kernel, zero padding outside the
/// grid, kernel centered at `(k/2, k/2)`. Output matches the mask shape.
fn convolve_all(mask: &Array2<bool>, cfg: &LithoConfig) -> Vec<Array2<Complex<f64>>> {
    let (ny, nx) = mask.dim();
    let kernels = config_kernels(cfg);
    let kmax = kernels.iter().map(|(_, k)| k.dim().0).max().unwrap();
    let ph = next_fast_len(ny + kmax - 1);
    let pw = next_fast_len(nx + kmax - 1);

    let mut padded = vec![Complex::default(); ph * pw];
    for y in 0..ny {
        for x in 0..nx {
            if mask[(y, x)] {
                padded[y * pw + x] = Complex::new(1.0, 0.0);
            }
        }
    }
    fft2(&mut padded, ph, pw, false);

    let fingerprint = kernel_fingerprint(cfg);
    let norm = 1.0 / (ph * pw) as f64;
    let mut outputs = Vec::with_capacity(kernels.len());
    for (idx, (_, kernel)) in kernels.iter().enumerate() {
        let (kh, kw) = kernel.dim();
        let key = (fingerprint, idx, ph, pw);
        let kernel_fft = {
            let cached = KERNEL_FFTS.lock().unwrap().get(&key).cloned();
            match cached {
                Some(k) => k,
                None => {
                    let mut buf = vec![Complex::default(); ph * pw];
                    for y in 0..kh {
                        for x in 0..kw {
                            buf[y * pw + x] = kernel[(y, x)];
                        }
                    }
                    fft2(&mut buf, ph, pw, false);
                    let arc = Arc::new(buf);
                    KERNEL_FFTS.lock().unwrap().insert(key, arc.clone());
                    arc
                }
            }
        };
        let mut product: Vec<Complex<f64>> = padded
            .iter()
            .zip(kernel_fft.iter())
            .map(|(a, b)| a * b)
            .collect();
        fft2(&mut product, ph, pw, true);
        let (cy, cx) = (kh / 2, kw / 2);
        let mut out = Array2::from_elem((ny, nx), Complex::default());
        for y in 0..ny {
            for x in 0..nx {
                out[(y, x)] = product[(y + cy) * pw + (x + cx)] * norm;
            }
        }
        outputs.push(out);
    }
    outputs
}

/// Dose-independent intensity base: `mask * G` for the Gaussian model,
/// `sum_k w_k |mask * h_k|^2` for SOCS. Multiply by dose (Gaussian) or
/// dose^2 (SOCS) to get an aerial image.
fn aerial_base(mask: &Array2<bool>, cfg: &LithoConfig) -> Result<Array2<f64>, LithoError> {
    let convs = convolve_all(mask, cfg);
    let base = match &cfg.kernel {
        Kernel::Gaussian { .. } => convs[0].mapv(|c| c.re.max(0.0)),
        Kernel::Socs(socs) => {
            let (ny, nx) = mask.dim();
            let mut acc = Array2::zeros((ny, nx));
            for (term, conv) in socs.terms.iter().zip(&convs) {
                for (a, c) in acc.iter_mut().zip(conv.iter()) {
                    *a += term.weight * c.norm_sqr();
                }
            }
            acc
        }
    };
    if base.iter().any(|v| !v.is_finite()) {
        return Err(LithoError::Numeric("aerial image is not finite".into()));
    }
    Ok(base)
}

fn dose_scale(cfg: &LithoConfig, dose: f64) -> f64 {
    match cfg.kernel {
        Kernel::Gaussian { .. } => dose,
        Kernel::Socs(_) => dose * dose,
    }
}

/// Aerial image at the nominal dose corner.
pub fn aerial(mask: &Array2<bool>, cfg: &LithoConfig) -> Result<AerialImage, LithoError> {
    cfg.validate()?;
    let scale = dose_scale(cfg, cfg.dose_corners.1);
    Ok(aerial_base(mask, cfg)?.mapv(|v| v * scale))
}

/// Spatial-domain reference for [`aerial`]: same convention, quadratic cost.
/// Kept as an independent oracle for the FFT path.
pub fn aerial_direct(mask: &Array2<bool>, cfg: &LithoConfig) -> Result<AerialImage, LithoError> {
    cfg.validate()?;
    let (ny, nx) = mask.dim();
    let kernels = config_kernels(cfg);
    let mut base: Array2<f64> = Array2::zeros((ny, nx));
    for (weight, kernel) in &kernels {
        let (kh, kw) = kernel.dim();
        let (cy, cx) = (kh as i64 / 2, kw as i64 / 2);
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                let mut acc = Complex::new(0.0, 0.0);
                for a in 0..kh as i64 {
                    for b in 0..kw as i64 {
                        let my = y - (a - cy);
                        let mx = x - (b - cx);
                        if my >= 0
                            && my < ny as i64
                            && mx >= 0
                            && mx < nx as i64
                            && mask[(my as usize, mx as usize)]
                        {
                            acc += kernel[(a as usize, b as usize)];
                        }
                    }
                }
                let cell = &mut base[(y as usize, x as usize)];
                match cfg.kernel {
                    Kernel::Gaussian { .. } => *cell += acc.re,
                    Kernel::Socs(_) => *cell += weight * acc.norm_sqr(),
                }
            }
        }
    }
    let scale = dose_scale(cfg, cfg.dose_corners.1);
    Ok(base.mapv(|v| (v * scale).max(0.0)))
}

/// Open-frame (fully clear mask) intensity at nominal dose; the print
/// threshold is `resist_threshold` times this level.
pub fn open_frame_level(cfg: &LithoConfig) -> f64 {
    let nominal = cfg.dose_corners.1;
    match &cfg.kernel {
        Kernel::Gaussian { .. } => nominal,
        Kernel::Socs(socs) => {
            let sum: f64 = socs
                .terms
                .iter()
                .map(|t| t.weight * t.values.iter().sum::<Complex<f64>>().norm_sqr())
                .sum();
            nominal * nominal * sum
        }
    }
}

/// Constant-threshold resist model, inclusive at equality.
pub fn print(image: &AerialImage, cfg: &LithoConfig) -> Array2<bool> {
    let threshold = cfg.resist_threshold * open_frame_level(cfg);
    image.mapv(|v| v >= threshold)
}

fn bilinear(image: &AerialImage, pixel_nm: i32, x_nm: f64, y_nm: f64) -> f64 {
    let (ny, nx) = image.dim();
    let px = pixel_nm as f64;
    let gx = (x_nm / px - 0.5).clamp(0.0, (nx - 1) as f64);
    let gy = (y_nm / px - 0.5).clamp(0.0, (ny - 1) as f64);
    let ix = gx.floor() as usize;
    let iy = gy.floor() as usize;
    let ix1 = (ix + 1).min(nx - 1);
    let iy1 = (iy + 1).min(ny - 1);
    let fx = gx - ix as f64;
    let fy = gy - iy as f64;
    let v00 = image[(iy, ix)];
    let v01 = image[(iy, ix1)];
    let v10 = image[(iy1, ix)];
    let v11 = image[(iy1, ix1)];
    v00 * (1.0 - fx) * (1.0 - fy)
        + v01 * fx * (1.0 - fy)
        + v10 * (1.0 - fx) * fy
        + v11 * fx * fy
}

/// Measures signed EPE at every measure point against the nominal aerial
/// image: intensity is sampled at 1nm steps along the outward normal, the
/// threshold crossing nearest the target edge is located by linear
/// interpolation, and its signed offset is the EPE (positive when the printed
/// contour lies outside the target edge). Without a crossing in range the
/// value clamps to the signed search range with `found = false`.
pub fn measure_epe(image: &AerialImage, segments: &[Segment], cfg: &LithoConfig) -> Vec<EpeSample> {
    let threshold = cfg.resist_threshold * open_frame_level(cfg);
    let range = cfg.epe_search_range_nm;
    let steps = (2.0 * range).round().max(2.0) as usize;
    let mut out = Vec::new();
    for seg in segments {
        let Some((mx, my)) = seg.measure_point else {
            continue;
        };
        let (ox, oy) = (seg.outward.0 as f64, seg.outward.1 as f64);
        let ts: Vec<f64> = (0..=steps)
            .map(|i| -range + (2.0 * range) * i as f64 / steps as f64)
            .collect();
        let values: Vec<f64> = ts
            .iter()
            .map(|t| bilinear(image, cfg.pixel_nm, mx + t * ox, my + t * oy))
            .collect();
        let printed: Vec<bool> = values.iter().map(|&v| v >= threshold).collect();

        let mut best: Option<f64> = None;
        for i in 1..ts.len() {
            if printed[i] != printed[i - 1] {
                let (t0, t1) = (ts[i - 1], ts[i]);
                let (v0, v1) = (values[i - 1], values[i]);
                let t = t0 + (threshold - v0) * (t1 - t0) / (v1 - v0);
                let better = match best {
                    None => true,
                    Some(b) => {
                        t.abs() < b.abs() - 1e-12 || (t.abs() - b.abs()).abs() <= 1e-12 && t < b
                    }
                };
                if better {
                    best = Some(t);
                }
            }
        }
        let sample = match best {
            Some(t) => EpeSample { nm: t, found: true },
            None => {
                let at_edge = printed[ts.len() / 2];
                EpeSample {
                    nm: if at_edge { range } else { -range },
                    found: false,
                }
            }
        };
        out.push(sample);
    }
    out
}

/// PV band area: pixels printed at one dose corner but not the other, times
/// the pixel area.
pub fn pv_band(inner: &Array2<bool>, outer: &Array2<bool>, pixel_nm: i32) -> f64 {
    let differing = inner
        .iter()
        .zip(outer.iter())
        .filter(|(a, b)| a != b)
        .count();
    differing as f64 * (pixel_nm as f64) * (pixel_nm as f64)
}

pub fn epe_total(epe: &[EpeSample]) -> f64 {
    epe.iter().map(|s| s.nm.abs()).sum()
}

/// Full simulation of a mask state: rasterize, form the aerial image once,
/// print at the three dose corners, measure EPE on the nominal corner, and
/// accumulate the PV band.
pub fn simulate(mask: &MaskState, cfg: &LithoConfig) -> Result<LithoResult, LithoError> {
    cfg.validate()?;
    let layout = mask.layout();
    if layout.width_nm % cfg.pixel_nm != 0 || layout.height_nm % cfg.pixel_nm != 0 {
        return Err(LithoError::Config(format!(
            "pixel_nm {} does not divide clip {}x{}",
            cfg.pixel_nm, layout.width_nm, layout.height_nm
        )));
    }
    let polys = mask.full_mask()?;
    let grid = rasterize(&polys, layout.width_nm, layout.height_nm, cfg.pixel_nm);
    let base = aerial_base(&grid, cfg)?;

    let (d_in, d_nom, d_out) = cfg.dose_corners;
    let image_at = |dose: f64| -> AerialImage {
        let s = dose_scale(cfg, dose);
        base.mapv(|v| v * s)
    };
    let nominal = image_at(d_nom);
    let printed_inner = print(&image_at(d_in), cfg);
    let printed_nominal = print(&nominal, cfg);
    let printed_outer = print(&image_at(d_out), cfg);

    let epe = measure_epe(&nominal, mask.segments(), cfg);
    let pvb_nm2 = pv_band(&printed_inner, &printed_outer, cfg.pixel_nm);
    Ok(LithoResult {
        epe_total: epe_total(&epe),
        printed_inner,
        printed_nominal,
        printed_outer,
        epe,
        pvb_nm2,
    })
}

const KF_KERNELS: &str = "kernels";
const KF_GRID: &str = "grid";
const KF_WEIGHT: &str = "weight";

/// Parses the SOCS kernel text format: a `kernels K` count, a `grid N` size,
/// then per kernel a `weight w` line followed by N rows of N `re im` pairs.
pub fn read_socs_str(text: &str) -> Result<SocsKernels, LithoError> {
    let mut lines = text.lines().enumerate();
    let mut next_line = |what: &str| -> Result<(usize, &str), LithoError> {
        lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| LithoError::KernelParse {
                line: text.lines().count() + 1,
                msg: format!("missing {what}"),
            })
    };

    let parse_kv = |line: usize, raw: &str, key: &str| -> Result<String, LithoError> {
        let mut tok = raw.split_ascii_whitespace();
        match (tok.next(), tok.next(), tok.next()) {
            (Some(k), Some(v), None) if k == key => Ok(v.to_string()),
            _ => Err(LithoError::KernelParse {
                line,
                msg: format!("expected \"{key} <value>\", got {raw:?}"),
            }),
        }
    };

    let (l, raw) = next_line(KF_KERNELS)?;
    let count: usize = parse_kv(l, raw, KF_KERNELS)?
        .parse()
        .map_err(|_| LithoError::KernelParse {
            line: l,
            msg: "kernel count is not an integer".into(),
        })?;
    let (l, raw) = next_line(KF_GRID)?;
    let grid: usize = parse_kv(l, raw, KF_GRID)?
        .parse()
        .map_err(|_| LithoError::KernelParse {
            line: l,
            msg: "grid size is not an integer".into(),
        })?;
    if count == 0 || grid == 0 {
        return Err(LithoError::KernelParse {
            line: l,
            msg: "kernel count and grid size must be positive".into(),
        });
    }

    let mut terms = Vec::with_capacity(count);
    for _ in 0..count {
        let (l, raw) = next_line(KF_WEIGHT)?;
        let weight: f64 = parse_kv(l, raw, KF_WEIGHT)?
            .parse()
            .map_err(|_| LithoError::KernelParse {
                line: l,
                msg: "weight is not a number".into(),
            })?;
        let mut values = Array2::from_elem((grid, grid), Complex::default());
        for row in 0..grid {
            let (l, raw) = next_line("kernel row")?;
            let nums: Vec<f64> = raw
                .split_ascii_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| LithoError::KernelParse {
                        line: l,
                        msg: format!("entry {t:?} is not a number"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if nums.len() != 2 * grid {
                return Err(LithoError::KernelParse {
                    line: l,
                    msg: format!("expected {} re/im values, got {}", 2 * grid, nums.len()),
                });
            }
            for col in 0..grid {
                values[(row, col)] = Complex::new(nums[2 * col], nums[2 * col + 1]);
            }
        }
        terms.push(SocsTerm { weight, values });
    }
    if let Some((i, _)) = lines.next() {
        return Err(LithoError::KernelParse {
            line: i + 1,
            msg: "trailing content after last kernel".into(),
        });
    }
    let socs = SocsKernels { grid, terms };
    for term in &socs.terms {
        if term.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())
            || !term.weight.is_finite()
        {
            return Err(LithoError::KernelParse {
                line: 0,
                msg: "kernel values must be finite".into(),
            });
        }
    }
    Ok(socs)
}

pub fn read_socs(path: &Path) -> Result<SocsKernels, LithoError> {
    read_socs_str(&std::fs::read_to_string(path)?)
}

pub fn write_socs_str(socs: &SocsKernels) -> String {
    let mut out = String::new();
    out.push_str(&format!("{KF_KERNELS} {}\n", socs.terms.len()));
    out.push_str(&format!("{KF_GRID} {}\n", socs.grid));
    for term in &socs.terms {
        out.push_str(&format!("{KF_WEIGHT} {}\n", term.weight));
        for row in 0..socs.grid {
            let cells: Vec<String> = (0..socs.grid)
                .map(|col| {
                    let v = term.values[(row, col)];
                    format!("{} {}", v.re, v.im)
                })
                .collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out
}
