//! Exact 1-NN dataset distance.
//!
//! `one_nn_distance` evaluates `‖x − y‖² = ‖x‖² + ‖y‖² − 2·x·y` over
//! register tiles of inner products, streaming the training set in panels
//! sized by a memory budget. `one_nn_distance_naive` is the plain double loop
//! kept as a reference.
//!
//! Every inner product, including the squared norms, goes through the same
//! lane-accumulation order, so a pair's value does not depend on its tile
//! position, on the panel split or on threading. Identical rows therefore
//! get distance exactly zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};

const LANES: usize = 8;
const MR: usize = 4;
const NR: usize = 2;
const TRAIN_BLOCK: usize = 64;
const SHIFT_CHUNK: usize = 32;

/// Default memory budget for panels, 1 GiB.
pub const DEFAULT_BUDGET: usize = 1 << 30;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 − cos(x, y)`.
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(invalid(format!("unknown metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NnConfig {
    /// Bytes available for the training panel plus the shift set.
    pub memory_budget: usize,
    pub parallel: bool,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            memory_budget: DEFAULT_BUDGET,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnResult {
    pub mean_distance: f64,
    pub per_point: Vec<f64>,
    pub argmin_indices: Vec<usize>,
    pub metric: Metric,
}

#[inline(always)]
fn reduce_lanes(v: &[f32; LANES]) -> f32 {
    ((v[0] + v[4]) + (v[2] + v[6])) + ((v[1] + v[5]) + (v[3] + v[7]))
}

/// `M × N` inner products with a fixed per-pair accumulation order.
#[inline(always)]
fn tile<const M: usize, const N: usize>(a: &[&[f32]; M], b: &[&[f32]; N]) -> [[f32; N]; M] {
    let d = a[0].len();
    let body = d - d % LANES;
    let mut acc = [[[0.0f32; LANES]; N]; M];
    let mut k = 0;
    while k < body {
        let mut bv = [[0.0f32; LANES]; N];
        for j in 0..N {
            bv[j].copy_from_slice(&b[j][k..k + LANES]);
        }
        for i in 0..M {
            let mut av = [0.0f32; LANES];
            av.copy_from_slice(&a[i][k..k + LANES]);
            for j in 0..N {
                for l in 0..LANES {
                    acc[i][j][l] += av[l] * bv[j][l];
                }
            }
        }
        k += LANES;
    }
    for k in body..d {
        let l = k - body;
        for i in 0..M {
            for j in 0..N {
                acc[i][j][l] += a[i][k] * b[j][k];
            }
        }
    }
    let mut out = [[0.0f32; N]; M];
    for i in 0..M {
        for j in 0..N {
            out[i][j] = reduce_lanes(&acc[i][j]);
        }
    }
    out
}

/// Squared norm with the blocked kernel's accumulation order.
pub fn sq_norm(x: &[f32]) -> f32 {
    tile::<1, 1>(&[x], &[x])[0][0]
}

#[inline(always)]
fn pair_key(metric: Metric, dot: f32, shift_norm: f32, train_norm: f32) -> f32 {
    match metric {
        Metric::Euclidean => (shift_norm + train_norm - 2.0 * dot).max(0.0),
        Metric::Cosine => {
            let denom = (shift_norm as f64 * train_norm as f64).sqrt();
            ((1.0 - dot as f64 / denom) as f32).clamp(0.0, 2.0)
        }
    }
}

/// Inputs of one (shift chunk × train panel) scan.
struct Scan<'a> {
    metric: Metric,
    row_len: usize,
    shift: &'a [f32],
    shift_norms: &'a [f32],
    panel: &'a [f32],
    panel_norms: &'a [f32],
    offset: usize,
}

#[inline(always)]
fn scan_impl(s: &Scan<'_>, best_key: &mut [f32], best_idx: &mut [usize]) {
    let d = s.row_len;
    let ns = s.shift_norms.len();
    let nt = s.panel_norms.len();
    let srow = |i: usize| &s.shift[i * d..(i + 1) * d];
    let trow = |j: usize| &s.panel[j * d..(j + 1) * d];

    let mut tb = 0;
    while tb < nt {
        let te = (tb + TRAIN_BLOCK).min(nt);
        let mut i = 0;
        while i < ns {
            let rows = if i + MR <= ns { MR } else { 1 };
            let mut j = tb;
            while j < te {
                let cols = if j + NR <= te { NR } else { 1 };
                let mut dots = [[0.0f32; NR]; MR];
                match (rows, cols) {
                    (MR, NR) => {
                        let a = [srow(i), srow(i + 1), srow(i + 2), srow(i + 3)];
                        let t = tile::<MR, NR>(&a, &[trow(j), trow(j + 1)]);
                        dots = t;
                    }
                    (MR, _) => {
                        let a = [srow(i), srow(i + 1), srow(i + 2), srow(i + 3)];
                        let t = tile::<MR, 1>(&a, &[trow(j)]);
                        for r in 0..MR {
                            dots[r][0] = t[r][0];
                        }
                    }
                    (_, NR) => {
                        let t = tile::<1, NR>(&[srow(i)], &[trow(j), trow(j + 1)]);
                        dots[0] = t[0];
                    }
                    _ => {
                        dots[0][0] = tile::<1, 1>(&[srow(i)], &[trow(j)])[0][0];
                    }
                }
                for r in 0..rows {
                    for c in 0..cols {
                        let key = pair_key(
                            s.metric,
                            dots[r][c],
                            s.shift_norms[i + r],
                            s.panel_norms[j + c],
                        );
                        if key < best_key[i + r] {
                            best_key[i + r] = key;
                            best_idx[i + r] = s.offset + j + c;
                        }
                    }
                }
                j += cols;
            }
            i += rows;
        }
        tb = te;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn scan_avx2(s: &Scan<'_>, best_key: &mut [f32], best_idx: &mut [usize]) {
    scan_impl(s, best_key, best_idx)
}

fn scan(s: &Scan<'_>, best_key: &mut [f32], best_idx: &mut [usize]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked above.
        unsafe { scan_avx2(s, best_key, best_idx) };
        return;
    }
    scan_impl(s, best_key, best_idx)
}

/// A training set that can be visited in row panels, possibly from disk.
pub trait TrainSource {
    fn sample_shape(&self) -> &[usize];
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Calls `visit(first_row_index, rows)` for consecutive panels of at most
    /// `max_rows` rows each.
    fn for_each_panel(
        &mut self,
        max_rows: usize,
        visit: &mut dyn FnMut(usize, &[f32]) -> Result<()>,
    ) -> Result<()>;
}

impl TrainSource for &Dataset {
    fn sample_shape(&self) -> &[usize] {
        self.shape()
    }

    fn len(&self) -> usize {
        Dataset::len(self)
    }

    fn for_each_panel(
        &mut self,
        max_rows: usize,
        visit: &mut dyn FnMut(usize, &[f32]) -> Result<()>,
    ) -> Result<()> {
        let d = self.row_len();
        for (p, chunk) in self.data().chunks(max_rows * d).enumerate() {
            visit(p * max_rows, chunk)?;
        }
        Ok(())
    }
}

fn check_inputs(train_shape: &[usize], train_len: usize, shift: &Dataset, metric: Metric) -> Result<()> {
    if train_len == 0 || shift.is_empty() {
        return Err(invalid("1-NN distance needs nonempty train and shift sets"));
    }
    if train_shape != shift.shape() {
        return Err(Error::ShapeMismatch(format!(
            "train samples have shape {train_shape:?}, shift samples {:?}",
            shift.shape()
        )));
    }
    if metric == Metric::Cosine && shift.rows().any(|r| r.iter().all(|v| *v == 0.0)) {
        return Err(invalid("cosine distance is undefined for zero vectors"));
    }
    Ok(())
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BASE: usize = 32;
    if v.len() <= BASE {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn finish(metric: Metric, keys: Vec<f32>, argmin: Vec<usize>) -> NnResult {
    let per_point: Vec<f64> = keys
        .into_iter()
        .map(|k| match metric {
            Metric::Euclidean => k.sqrt() as f64,
            Metric::Cosine => k as f64,
        })
        .collect();
    NnResult {
        mean_distance: pairwise_sum(&per_point) / per_point.len() as f64,
        per_point,
        argmin_indices: argmin,
        metric,
    }
}

/// Exact mean nearest-neighbor distance from each shift sample to the
/// training set, using in-memory data.
pub fn one_nn_distance(train: &Dataset, shift: &Dataset, metric: Metric) -> Result<NnResult> {
    one_nn_distance_with(train, shift, metric, NnConfig::default())
}

pub fn one_nn_distance_with(
    train: &Dataset,
    shift: &Dataset,
    metric: Metric,
    cfg: NnConfig,
) -> Result<NnResult> {
    let mut source = train;
    one_nn_distance_streaming(&mut source, train.norms(), shift, metric, cfg)
}

/// Blocked 1-NN over any [`TrainSource`]. `train_norms`, when given, must
/// come from [`sq_norm`].
pub fn one_nn_distance_streaming(
    train: &mut dyn TrainSource,
    train_norms: Option<&[f32]>,
    shift: &Dataset,
    metric: Metric,
    cfg: NnConfig,
) -> Result<NnResult> {
    let shape = train.sample_shape().to_vec();
    check_inputs(&shape, train.len(), shift, metric)?;
    let d = shift.row_len();
    let ns = shift.len();

    let shift_norms: Vec<f32> = match shift.norms() {
        Some(n) => n.to_vec(),
        None => shift.rows().map(sq_norm).collect(),
    };
    let resident = shift.data().len() * 4 + ns * (4 + 8 + 4);
    let panel_rows = (cfg.memory_budget.saturating_sub(resident) / (d * 4 + 4)).max(TRAIN_BLOCK);

    let mut best_key = vec![f32::INFINITY; ns];
    let mut best_idx = vec![0usize; ns];

    train.for_each_panel(panel_rows, &mut |offset, panel| {
        let rows = panel.len() / d;
        let computed;
        let panel_norms = match train_norms {
            Some(n) => &n[offset..offset + rows],
            None => {
                computed = panel.chunks_exact(d).map(sq_norm).collect::<Vec<_>>();
                &computed[..]
            }
        };
        if metric == Metric::Cosine && panel_norms.contains(&0.0) {
            return Err(invalid("cosine distance is undefined for zero vectors"));
        }
        let work = |(c, (keys, idx)): (usize, (&mut [f32], &mut [usize]))| {
            let lo = c * SHIFT_CHUNK;
            let hi = lo + keys.len();
            let s = Scan {
                metric,
                row_len: d,
                shift: &shift.data()[lo * d..hi * d],
                shift_norms: &shift_norms[lo..hi],
                panel,
                panel_norms,
                offset,
            };
            scan(&s, keys, idx);
        };
        if cfg.parallel {
            best_key
                .par_chunks_mut(SHIFT_CHUNK)
                .zip(best_idx.par_chunks_mut(SHIFT_CHUNK))
                .enumerate()
                .for_each(work);
        } else {
            best_key
                .chunks_mut(SHIFT_CHUNK)
                .zip(best_idx.chunks_mut(SHIFT_CHUNK))
                .enumerate()
                .for_each(work);
        }
        Ok(())
    })?;
    Ok(finish(metric, best_key, best_idx))
}

/// Reference double loop: `d(x, y)` evaluated directly in `f64` for every
/// pair.
pub fn one_nn_distance_naive(train: &Dataset, shift: &Dataset, metric: Metric) -> Result<NnResult> {
    check_inputs(train.shape(), train.len(), shift, metric)?;
    if metric == Metric::Cosine && train.rows().any(|r| r.iter().all(|v| *v == 0.0)) {
        return Err(invalid("cosine distance is undefined for zero vectors"));
    }
    let (per_point, argmin): (Vec<f64>, Vec<usize>) = shift
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for (i, y) in train.rows().enumerate() {
                let dist = match metric {
                    Metric::Euclidean => naive_sq_dist(x, y).sqrt(),
                    Metric::Cosine => {
                        let (xy, xx, yy) = naive_dots(x, y);
                        (1.0 - xy / (xx * yy).sqrt()).clamp(0.0, 2.0)
                    }
                };
                if dist < best {
                    best = dist;
                    arg = i;
                }
            }
            (best, arg)
        })
        .unzip();
    Ok(NnResult {
        mean_distance: pairwise_sum(&per_point) / per_point.len() as f64,
        per_point,
        argmin_indices: argmin,
        metric,
    })
}

fn naive_sq_dist(x: &[f32], y: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut xs = x.chunks_exact(4);
    let mut ys = y.chunks_exact(4);
    for (a, b) in (&mut xs).zip(&mut ys) {
        for l in 0..4 {
            let t = a[l] as f64 - b[l] as f64;
            acc[l] += t * t;
        }
    }
    for (a, b) in xs.remainder().iter().zip(ys.remainder()) {
        let t = *a as f64 - *b as f64;
        acc[0] += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

fn naive_dots(x: &[f32], y: &[f32]) -> (f64, f64, f64) {
    x.iter().zip(y).fold((0.0, 0.0, 0.0), |(xy, xx, yy), (a, b)| {
        let (a, b) = (*a as f64, *b as f64);
        (xy + a * b, xx + a * a, yy + b * b)
    })
}
