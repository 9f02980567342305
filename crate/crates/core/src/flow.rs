//! Spectral flow of a path of Hermitian matrices by subdivision and
//! counting ranks of the spectral projections onto `[0, ε)`.
//!
//! Every segment of the subdivision gets its own ε chosen from bounds on how
//! far each sorted eigenvalue can travel across the segment. With a
//! Lipschitz hint `L` the bound is Weyl's inequality; without one it is
//! estimated from the midpoint and guarded by a branch-pairing check.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, eigvalsh, spectral_norm, CMatrix, SelfAdjointOp, UnitaryOp, C64};

/// Eigenvalues within this multiple of `max(1, ‖H‖_max)` of zero count as zero.
pub const ZERO_TOL: f64 = 1e-12;
/// Segments containing a sign change are bisected down to this width.
pub const CROSSING_RESOLUTION: f64 = 1.0 / 1024.0;

type Sampler = dyn Fn(f64) -> Result<SelfAdjointOp> + Send + Sync;

/// A continuous path `t ∈ [0, 1] ↦ SelfAdjointOp`.
#[derive(Clone)]
pub struct OperatorPath {
    dim: usize,
    sampler: Arc<Sampler>,
    lipschitz_hint: Option<f64>,
}

impl std::fmt::Debug for OperatorPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorPath")
            .field("dim", &self.dim)
            .field("lipschitz_hint", &self.lipschitz_hint)
            .finish_non_exhaustive()
    }
}

impl OperatorPath {
    pub fn new<F>(dim: usize, lipschitz_hint: Option<f64>, sampler: F) -> Self
    where
        F: Fn(f64) -> Result<SelfAdjointOp> + Send + Sync + 'static,
    {
        Self {
            dim,
            sampler: Arc::new(sampler),
            lipschitz_hint,
        }
    }

    pub fn constant(op: SelfAdjointOp) -> Self {
        let dim = op.dim();
        Self::new(dim, Some(0.0), move |_| Ok(op.clone()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    pub fn without_hint(&self) -> Self {
        Self {
            lipschitz_hint: None,
            ..self.clone()
        }
    }

    pub fn sample(&self, t: f64) -> Result<SelfAdjointOp> {
        let op = (self.sampler)(t)?;
        if op.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: op.dim(),
            });
        }
        Ok(op)
    }

    /// `t ↦ f(1 − t)`.
    pub fn reversed(&self) -> Self {
        let inner = self.clone();
        Self::new(self.dim, self.lipschitz_hint, move |t| inner.sample(1.0 - t))
    }

    /// The restriction to `[a, b]`, reparametrised over `[0, 1]`.
    pub fn sub_path(&self, a: f64, b: f64) -> Self {
        let inner = self.clone();
        let hint = self.lipschitz_hint.map(|l| l * (b - a).abs());
        Self::new(self.dim, hint, move |t| inner.sample(a + (b - a) * t))
    }

    /// `t ↦ W f(t) W⁻¹`.
    pub fn conjugated(&self, w: &UnitaryOp) -> Result<Self> {
        if w.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: w.dim(),
            });
        }
        let inner = self.clone();
        let w = w.entries().clone();
        Ok(Self::new(self.dim, self.lipschitz_hint, move |t| {
            let op = inner.sample(t)?;
            Ok(SelfAdjointOp::from_hermitian_part(
                &w * op.entries() * w.adjoint(),
            ))
        }))
    }

    /// `t ↦ f(t) − c`.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.clone();
        Self::new(self.dim, self.lipschitz_hint, move |t| {
            Ok(inner.sample(t)?.shifted(c))
        })
    }

    /// Concatenation, each piece traversed on an equal share of `[0, 1]`.
    pub fn concat(pieces: &[OperatorPath]) -> Result<Self> {
        let first = pieces
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty concatenation".into()))?;
        let dim = first.dim;
        for p in pieces {
            if p.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim,
                });
            }
        }
        let k = pieces.len();
        let hint = pieces
            .iter()
            .map(|p| p.lipschitz_hint)
            .try_fold(0.0f64, |acc, h| h.map(|h| acc.max(h)))
            .map(|l| l * k as f64);
        let pieces = pieces.to_vec();
        Ok(Self::new(dim, hint, move |t| {
            let s = (t.clamp(0.0, 1.0) * k as f64).min(k as f64);
            let idx = (s.floor() as usize).min(k - 1);
            pieces[idx].sample(s - idx as f64)
        }))
    }
}

/// `u ↦ D + u·V`.
pub fn conjugation_path(d: &SelfAdjointOp, v: &SelfAdjointOp) -> Result<OperatorPath> {
    if d.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            found: v.dim(),
        });
    }
    let hint = spectral_norm(v.entries());
    let d = d.clone();
    let v = v.clone();
    Ok(OperatorPath::new(d.dim(), Some(hint), move |u| {
        d.add_scaled(&v, u)
    }))
}

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    pub init_samples: usize,
    pub max_depth: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            init_samples: 17,
            max_depth: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub eps_gap: f64,
    pub rank_start: usize,
    pub rank_end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub branch: usize,
    pub direction: i32,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralFlowResult {
    pub value: i64,
    pub segments: Vec<Segment>,
    pub crossings: Vec<Crossing>,
    pub refinement_depth: usize,
    pub samples: usize,
    /// Smallest `|λ|` over every sample taken.
    pub min_abs_eigenvalue: f64,
    /// Smallest `|λ|` the sweep bounds allow anywhere on the path.
    pub gap_lower_bound: f64,
}

impl SpectralFlowResult {
    /// The flow summed again from the stored segment ranks.
    pub fn recompute(&self) -> i64 {
        self.segments
            .iter()
            .map(|s| s.rank_end as i64 - s.rank_start as i64)
            .sum()
    }

    pub fn write_crossings_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "branch", "direction", "slope"])?;
        for c in &self.crossings {
            w.write_record([
                c.t.to_string(),
                c.branch.to_string(),
                c.direction.to_string(),
                c.slope.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Sample {
    t: f64,
    values: Vec<f64>,
    zero_tol: f64,
}

fn evaluate(path: &OperatorPath, t: f64) -> Result<Sample> {
    let op = path.sample(t)?;
    let zero_tol = ZERO_TOL * op.max_abs().max(1.0);
    let mut values = eigvalsh(&op)?;
    for v in values.iter_mut() {
        if v.abs() <= zero_tol {
            *v = 0.0;
        }
    }
    Ok(Sample { t, values, zero_tol })
}

#[cfg(feature = "parallel")]
fn evaluate_all(path: &OperatorPath, ts: &[f64]) -> Vec<Result<Sample>> {
    use rayon::prelude::*;
    ts.par_iter().map(|&t| evaluate(path, t)).collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all(path: &OperatorPath, ts: &[f64]) -> Vec<Result<Sample>> {
    ts.iter().map(|&t| evaluate(path, t)).collect()
}

/// Chooses ε in the first gap of the swept `|λ|` intervals that leaves a
/// margin of ε/10 on both sides and sits above the noise floor.
fn choose_eps(mut abs_intervals: Vec<(f64, f64)>, floor: f64) -> f64 {
    abs_intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut covered = 0.0f64;
    for &(lo, hi) in &abs_intervals {
        if lo > covered && lo - covered >= (lo + covered) / 10.0 {
            let eps = 0.5 * (lo + covered);
            if eps >= floor {
                return eps;
            }
        }
        covered = covered.max(hi);
    }
    if covered > 0.0 {
        (2.0 * covered).max(floor)
    } else {
        floor.max(1.0)
    }
}

fn min_distinct_gap(values: &[f64], tol: f64) -> f64 {
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > tol)
        .fold(f64::INFINITY, f64::min)
}

struct Walker<'a> {
    path: &'a OperatorPath,
    opts: FlowOptions,
    segments: Vec<Segment>,
    crossings: Vec<Crossing>,
    depth: usize,
    samples: usize,
    min_abs: f64,
    gap_lb: f64,
}

impl Walker<'_> {
    fn sample(&mut self, t: f64) -> Result<Sample> {
        let s = evaluate(self.path, t)?;
        self.note(&s);
        Ok(s)
    }

    fn note(&mut self, s: &Sample) {
        self.samples += 1;
        let m = s.values.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        self.min_abs = self.min_abs.min(m);
    }

    fn walk(&mut self, a: &Sample, b: &Sample, depth: usize) -> Result<()> {
        self.depth = self.depth.max(depth);
        let h = b.t - a.t;
        let n = a.values.len();
        let pinned = (0..n).any(|i| a.values[i] == 0.0 && b.values[i] == 0.0);
        let crosses = (0..n).any(|i| (a.values[i] < 0.0) != (b.values[i] < 0.0));
        let can_split = depth < self.opts.max_depth;

        if pinned && (!can_split || h <= CROSSING_RESOLUTION) {
            return Err(Error::PinnedZero {
                t_start: a.t,
                t_end: b.t,
            });
        }
        let mut mid: Option<Sample> = None;
        if pinned || (crosses && h > CROSSING_RESOLUTION && can_split) {
            let m = self.sample(0.5 * (a.t + b.t))?;
            self.walk(a, &m, depth + 1)?;
            return self.walk(&m, b, depth + 1);
        }

        let hint = self.path.lipschitz_hint;
        let intervals: Vec<(f64, f64)> = match hint {
            Some(l) => (0..n)
                .map(|i| {
                    let c = 0.5 * (a.values[i] + b.values[i]);
                    let r = 0.5 * l * h;
                    (c - r, c + r)
                })
                .collect(),
            None => {
                let m = self.sample(0.5 * (a.t + b.t))?;
                let iv = (0..n)
                    .map(|i| {
                        let (x, y, z) = (a.values[i], m.values[i], b.values[i]);
                        let dev = (y - 0.5 * (x + z)).abs();
                        (x.min(y).min(z) - dev, x.max(y).max(z) + dev)
                    })
                    .collect();
                mid = Some(m);
                iv
            }
        };
        let abs_intervals: Vec<(f64, f64)> = intervals
            .iter()
            .map(|&(lo, hi)| {
                if lo <= 0.0 && hi >= 0.0 {
                    (0.0, hi.max(-lo))
                } else {
                    (lo.abs().min(hi.abs()), lo.abs().max(hi.abs()))
                }
            })
            .collect();
        let floor = 10.0 * a.zero_tol.max(b.zero_tol);
        let eps = choose_eps(abs_intervals.clone(), floor);

        if let Some(m) = mid.take() {
            let gap = min_distinct_gap(&a.values, floor).min(min_distinct_gap(&b.values, floor));
            let paired = (0..n).all(|i| {
                if abs_intervals[i].0 >= 2.0 * eps {
                    return true;
                }
                let movement = (intervals[i].1 - intervals[i].0).abs();
                movement < 0.5 * gap
            });
            if !paired && can_split {
                self.walk(a, &m, depth + 1)?;
                return self.walk(&m, b, depth + 1);
            }
        }

        let lb = abs_intervals.iter().fold(f64::INFINITY, |acc, iv| acc.min(iv.0));
        self.gap_lb = self.gap_lb.min(lb);
        let rank = |s: &Sample| s.values.iter().filter(|&&v| v >= 0.0 && v < eps).count();
        self.segments.push(Segment {
            t_start: a.t,
            t_end: b.t,
            eps_gap: eps,
            rank_start: rank(a),
            rank_end: rank(b),
        });
        for i in 0..n {
            let (x, y) = (a.values[i], b.values[i]);
            if (x < 0.0) == (y < 0.0) {
                continue;
            }
            let frac = if x == y { 0.0 } else { (-x / (y - x)).clamp(0.0, 1.0) };
            self.crossings.push(Crossing {
                t: a.t + frac * h,
                branch: i,
                direction: if y >= 0.0 { 1 } else { -1 },
                slope: (y - x) / h,
            });
        }
        Ok(())
    }
}

struct SegmentOutcome {
    segments: Vec<Segment>,
    crossings: Vec<Crossing>,
    depth: usize,
    samples: usize,
    min_abs: f64,
    gap_lb: f64,
}

fn walk_initial(
    path: &OperatorPath,
    opts: FlowOptions,
    a: &Sample,
    b: &Sample,
) -> Result<SegmentOutcome> {
    let mut w = Walker {
        path,
        opts,
        segments: Vec::new(),
        crossings: Vec::new(),
        depth: 0,
        samples: 0,
        min_abs: f64::INFINITY,
        gap_lb: f64::INFINITY,
    };
    w.walk(a, b, 0)?;
    Ok(SegmentOutcome {
        segments: w.segments,
        crossings: w.crossings,
        depth: w.depth,
        samples: w.samples,
        min_abs: w.min_abs,
        gap_lb: w.gap_lb,
    })
}

/// Spectral flow of `path` over `[0, 1]`.
///
/// Zero eigenvalues at a sample are counted in `[0, ε)`. A branch that stays
/// at zero across a segment bisected down to [`CROSSING_RESOLUTION`] (or
/// `max_depth`) is reported as [`Error::PinnedZero`].
pub fn spectral_flow(path: &OperatorPath, opts: &FlowOptions) -> Result<SpectralFlowResult> {
    if path.dim() == 0 {
        return Err(Error::InvalidParameter("path dimension must be positive".into()));
    }
    let opts = FlowOptions {
        init_samples: opts.init_samples.max(2),
        max_depth: opts.max_depth,
    };
    let k = opts.init_samples;
    let ts: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
    let samples = evaluate_all(path, &ts)
        .into_iter()
        .collect::<Result<Vec<Sample>>>()?;

    let pairs: Vec<(usize, usize)> = (0..k - 1).map(|i| (i, i + 1)).collect();
    #[cfg(feature = "parallel")]
    let outcomes: Vec<SegmentOutcome> = {
        use rayon::prelude::*;
        pairs
            .par_iter()
            .map(|&(i, j)| walk_initial(path, opts, &samples[i], &samples[j]))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<SegmentOutcome> = pairs
        .iter()
        .map(|&(i, j)| walk_initial(path, opts, &samples[i], &samples[j]))
        .collect::<Result<_>>()?;

    let mut result = SpectralFlowResult {
        value: 0,
        segments: Vec::new(),
        crossings: Vec::new(),
        refinement_depth: 0,
        samples: k,
        min_abs_eigenvalue: samples
            .iter()
            .flat_map(|s| s.values.iter())
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs())),
        gap_lower_bound: f64::INFINITY,
    };
    for o in outcomes {
        result.segments.extend(o.segments);
        result.crossings.extend(o.crossings);
        result.refinement_depth = result.refinement_depth.max(o.depth);
        result.samples += o.samples;
        result.min_abs_eigenvalue = result.min_abs_eigenvalue.min(o.min_abs);
        result.gap_lower_bound = result.gap_lower_bound.min(o.gap_lb);
    }
    result.value = result.recompute();
    Ok(result)
}

/// `‖(T₁ + i)⁻¹ − (T₂ + i)⁻¹‖₂`.
pub fn resolvent_distance(t1: &SelfAdjointOp, t2: &SelfAdjointOp) -> Result<f64> {
    if t1.dim() != t2.dim() {
        return Err(Error::DimensionMismatch {
            expected: t1.dim(),
            found: t2.dim(),
        });
    }
    let r = |t: &SelfAdjointOp| -> Result<CMatrix> {
        let s = eigh(t)?;
        Ok(s.apply_function(|l| C64::new(1.0, 0.0) / C64::new(l, 1.0)))
    };
    Ok(spectral_norm(&(r(t1)? - r(t2)?)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomotopyReport {
    pub s_grid: Vec<f64>,
    pub flows: Vec<i64>,
    pub all_equal: bool,
    /// Flow around the boundary of the square: bottom, right side up, top
    /// reversed, left side down.
    pub loop_value: i64,
    /// Largest resolvent distance between grid neighbours.
    pub continuity_modulus: f64,
}

/// Spectral flow of every `t`-line of a two-parameter family.
pub fn homotopy_check<F>(
    dim: usize,
    family: F,
    s_grid: &[f64],
    t_check: usize,
    opts: &FlowOptions,
) -> Result<HomotopyReport>
where
    F: Fn(f64, f64) -> Result<SelfAdjointOp> + Send + Sync + Clone + 'static,
{
    if s_grid.len() < 2 {
        return Err(Error::InvalidParameter("need at least two s values".into()));
    }
    let line = |s: f64| {
        let f = family.clone();
        OperatorPath::new(dim, None, move |t| f(s, t))
    };
    let column = |t: f64| {
        let f = family.clone();
        let (s0, s1) = (s_grid[0], s_grid[s_grid.len() - 1]);
        OperatorPath::new(dim, None, move |r| f(s0 + (s1 - s0) * r, t))
    };
    let mut flows = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        flows.push(spectral_flow(&line(s), opts)?.value);
    }
    let all_equal = flows.windows(2).all(|w| w[0] == w[1]);
    let f1 = spectral_flow(&line(s_grid[0]), opts)?.value;
    let f2 = spectral_flow(&column(1.0), opts)?.value;
    let f3 = spectral_flow(&line(s_grid[s_grid.len() - 1]).reversed(), opts)?.value;
    let f4 = spectral_flow(&column(0.0).reversed(), opts)?.value;

    let tn = t_check.max(2);
    let ts: Vec<f64> = (0..tn).map(|i| i as f64 / (tn - 1) as f64).collect();
    let mut modulus = 0.0f64;
    for (si, &s) in s_grid.iter().enumerate() {
        for (ti, &t) in ts.iter().enumerate() {
            let here = family(s, t)?;
            if ti + 1 < tn {
                modulus = modulus.max(resolvent_distance(&here, &family(s, ts[ti + 1])?)?);
            }
            if si + 1 < s_grid.len() {
                modulus = modulus.max(resolvent_distance(&here, &family(s_grid[si + 1], t)?)?);
            }
        }
    }
    Ok(HomotopyReport {
        s_grid: s_grid.to_vec(),
        flows,
        all_equal,
        loop_value: f1 + f2 + f3 + f4,
        continuity_modulus: modulus,
    })
}
