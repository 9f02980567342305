//! Heat-trace estimate of spectral flow:
//! `√(ε/π) ∫₀¹ Tr(V e^{−ε(D+uV)²}) du`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, eigvalsh, expectation_values, CMatrix, SelfAdjointOp};
use crate::quadrature::gauss_legendre_on;

pub const PLATEAU_SPREAD: f64 = 0.05;

#[derive(Clone, Copy, Debug)]
pub struct GetzlerOptions {
    pub tol: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
}

impl Default for GetzlerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            min_nodes: 8,
            max_nodes: 1024,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub eps_low: f64,
    pub eps_high: f64,
    pub spread: f64,
    pub value: f64,
}

impl Plateau {
    pub fn sf_estimate(&self) -> i64 {
        self.value.round() as i64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GetzlerEstimate {
    pub eps: f64,
    pub value: f64,
    pub quadrature_nodes: usize,
    pub quadrature_error_estimate: f64,
    /// False when the node cap was reached before the tolerance.
    pub converged: bool,
    pub shift: Option<f64>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub plateau: Option<Plateau>,
}

impl GetzlerEstimate {
    pub fn write_sweep_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["eps", "value"])?;
        for p in self.sweep.iter().flatten() {
            w.write_record([p.eps.to_string(), p.value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct NodeData {
    eigenvalues: Vec<f64>,
    expectations: Vec<f64>,
}

/// Integrand evaluator for one or more independent blocks `(D_b, V_b)`,
/// summed. The per-node spectra are cached so that an ε-sweep reuses them.
#[derive(Clone, Debug)]
pub struct GetzlerSolver {
    blocks: Vec<(SelfAdjointOp, SelfAdjointOp)>,
    observables: Option<Vec<CMatrix>>,
    cache: BTreeMap<u64, Vec<NodeData>>,
    shift: Option<f64>,
}

fn node_data(d: &SelfAdjointOp, v: &SelfAdjointOp, a: &CMatrix, u: f64) -> Result<NodeData> {
    let s = eigh(&d.add_scaled(v, u)?)?;
    let ex = expectation_values(a, &s)?;
    Ok(NodeData {
        eigenvalues: s.eigenvalues,
        expectations: ex.iter().map(|z| z.re).collect(),
    })
}

impl GetzlerSolver {
    pub fn new(d: &SelfAdjointOp, v: &SelfAdjointOp) -> Result<Self> {
        Self::from_blocks(vec![(d.clone(), v.clone())])
    }

    pub fn from_blocks(blocks: Vec<(SelfAdjointOp, SelfAdjointOp)>) -> Result<Self> {
        for (d, v) in &blocks {
            if d.dim() != v.dim() {
                return Err(Error::DimensionMismatch {
                    expected: d.dim(),
                    found: v.dim(),
                });
            }
        }
        Ok(Self {
            blocks,
            observables: None,
            cache: BTreeMap::new(),
            shift: None,
        })
    }

    /// Integrates `Tr(A e^{−ε(D+uV)²})` instead of `Tr(V e^{−ε(D+uV)²})`.
    pub fn with_observable(d: &SelfAdjointOp, v: &SelfAdjointOp, a: &CMatrix) -> Result<Self> {
        if a.nrows() != d.dim() || a.ncols() != d.dim() {
            return Err(Error::DimensionMismatch {
                expected: d.dim(),
                found: a.nrows(),
            });
        }
        let mut s = Self::new(d, v)?;
        s.observables = Some(vec![a.clone()]);
        Ok(s)
    }

    /// Replaces every `D_b` by `D_b − shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|(d, v)| (d.shifted(shift), v.clone()))
                .collect(),
            observables: self.observables.clone(),
            cache: BTreeMap::new(),
            shift: Some(self.shift.unwrap_or(0.0) + shift),
        }
    }

    fn ensure(&mut self, us: &[f64]) -> Result<()> {
        let missing: Vec<f64> = us
            .iter()
            .copied()
            .filter(|u| !self.cache.contains_key(&u.to_bits()))
            .collect();
        let blocks = &self.blocks;
        let observables = &self.observables;
        let compute = |u: f64| -> Result<Vec<NodeData>> {
            blocks
                .iter()
                .enumerate()
                .map(|(i, (d, v))| {
                    let a = observables.as_ref().map_or(v.entries(), |o| &o[i]);
                    node_data(d, v, a, u)
                })
                .collect()
        };
        #[cfg(feature = "parallel")]
        let fresh: Vec<Result<Vec<NodeData>>> = {
            use rayon::prelude::*;
            missing.par_iter().map(|&u| compute(u)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let fresh: Vec<Result<Vec<NodeData>>> = missing.iter().map(|&u| compute(u)).collect();
        for (u, data) in missing.into_iter().zip(fresh) {
            self.cache.insert(u.to_bits(), data?);
        }
        Ok(())
    }

    /// `Σ_b Tr(V_b e^{−ε(D_b+uV_b)²})` from cached spectra.
    fn trace_at(&self, u: f64, eps: f64) -> f64 {
        self.cache[&u.to_bits()]
            .iter()
            .map(|nd| {
                nd.expectations
                    .iter()
                    .zip(&nd.eigenvalues)
                    .map(|(a, l)| a * (-eps * l * l).exp())
                    .sum::<f64>()
            })
            .sum()
    }

    fn rule_value(&mut self, n: usize, eps: f64) -> Result<f64> {
        let (us, ws) = gauss_legendre_on(n, 0.0, 1.0);
        self.ensure(&us)?;
        let integral: f64 = us.iter().zip(&ws).map(|(&u, &w)| w * self.trace_at(u, eps)).sum();
        Ok((eps / std::f64::consts::PI).sqrt() * integral)
    }

    pub fn estimate(&mut self, eps: f64, opts: &GetzlerOptions) -> Result<GetzlerEstimate> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        let mut n = opts.min_nodes.max(1);
        let mut prev = self.rule_value(n, eps)?;
        loop {
            let next_n = 2 * n;
            if next_n > opts.max_nodes {
                return Ok(GetzlerEstimate {
                    eps,
                    value: prev,
                    quadrature_nodes: n,
                    quadrature_error_estimate: f64::NAN,
                    converged: false,
                    shift: self.shift,
                    sweep: None,
                    plateau: None,
                });
            }
            let value = self.rule_value(next_n, eps)?;
            let err = (value - prev).abs();
            n = next_n;
            if err < opts.tol {
                return Ok(GetzlerEstimate {
                    eps,
                    value,
                    quadrature_nodes: n,
                    quadrature_error_estimate: err,
                    converged: true,
                    shift: self.shift,
                    sweep: None,
                    plateau: None,
                });
            }
            prev = value;
        }
    }

    /// Estimates on every ε of an ascending grid and locates the plateau.
    ///
    /// The returned estimate is the one at the largest ε of the plateau, or
    /// at the last grid point when there is none.
    pub fn sweep(&mut self, eps_grid: &[f64], opts: &GetzlerOptions) -> Result<GetzlerEstimate> {
        if eps_grid.is_empty() {
            return Err(Error::InvalidParameter("empty eps grid".into()));
        }
        if eps_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("eps grid must be ascending".into()));
        }
        let mut estimates = Vec::with_capacity(eps_grid.len());
        for &eps in eps_grid {
            estimates.push(self.estimate(eps, opts)?);
        }
        let points: Vec<SweepPoint> = estimates
            .iter()
            .map(|e| SweepPoint {
                eps: e.eps,
                value: e.value,
            })
            .collect();
        let plateau = find_plateau(&points, PLATEAU_SPREAD);
        let pick = plateau
            .and_then(|p| estimates.iter().position(|e| e.eps == p.eps_high))
            .unwrap_or(estimates.len() - 1);
        let mut out = estimates.swap_remove(pick);
        out.sweep = Some(points);
        out.plateau = plateau;
        Ok(out)
    }
}

/// Widest contiguous run of at least two points with `max − min < spread`;
/// the earliest wins ties.
pub fn find_plateau(points: &[SweepPoint], spread: f64) -> Option<Plateau> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..points.len() {
        let (mut lo, mut hi) = (points[i].value, points[i].value);
        for j in i + 1..points.len() {
            lo = lo.min(points[j].value);
            hi = hi.max(points[j].value);
            if !(hi - lo < spread) {
                break;
            }
            let better = match best {
                None => true,
                Some((bi, bj, _)) => j - i > bj - bi,
            };
            if better {
                best = Some((i, j, hi - lo));
            }
        }
    }
    best.map(|(i, j, s)| Plateau {
        eps_low: points[i].eps,
        eps_high: points[j].eps,
        spread: s,
        value: points[i..=j].iter().map(|p| p.value).sum::<f64>() / (j - i + 1) as f64,
    })
}

pub fn getzler_estimate(
    d: &SelfAdjointOp,
    v: &SelfAdjointOp,
    eps: f64,
    opts: &GetzlerOptions,
) -> Result<GetzlerEstimate> {
    GetzlerSolver::new(d, v)?.estimate(eps, opts)
}

pub fn eps_sweep(
    d: &SelfAdjointOp,
    v: &SelfAdjointOp,
    eps_grid: &[f64],
    opts: &GetzlerOptions,
) -> Result<GetzlerEstimate> {
    GetzlerSolver::new(d, v)?.sweep(eps_grid, opts)
}

/// Estimate for the path `(D − shift) + uV`.
pub fn shifted_estimate(
    d: &SelfAdjointOp,
    v: &SelfAdjointOp,
    eps: f64,
    shift: f64,
    opts: &GetzlerOptions,
) -> Result<GetzlerEstimate> {
    GetzlerSolver::new(d, v)?.shifted(shift).estimate(eps, opts)
}

/// `½ Σ_i [erf(√ε λ_i(1)) − erf(√ε λ_i(0))]`, the closed form of the
/// estimate in finite dimensions.
pub fn erf_identity(d: &SelfAdjointOp, v: &SelfAdjointOp, eps: f64) -> Result<f64> {
    let start = eigvalsh(d)?;
    let end = eigvalsh(&d.add_scaled(v, 1.0)?)?;
    let se = eps.sqrt();
    let total: f64 = end
        .iter()
        .zip(&start)
        .map(|(b, a)| libm::erf(se * b) - libm::erf(se * a))
        .sum();
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ladder(m: i64) -> SelfAdjointOp {
        SelfAdjointOp::diagonal(&(-m..=m).map(|x| x as f64).collect::<Vec<_>>())
    }

    #[test]
    fn zero_perturbation_gives_zero() {
        let d = ladder(3);
        let e = getzler_estimate(&d, &SelfAdjointOp::zeros(7), 2.0, &GetzlerOptions::default()).unwrap();
        assert_eq!(e.value, 0.0);
        let s = eps_sweep(&d, &SelfAdjointOp::zeros(7), &[1.0, 2.0, 3.0], &GetzlerOptions::default()).unwrap();
        let p = s.plateau.unwrap();
        assert_eq!((p.eps_low, p.eps_high), (1.0, 3.0));
    }

    #[test]
    fn integer_model_telescopes() {
        let d = ladder(20);
        let v = SelfAdjointOp::identity(41);
        let e = getzler_estimate(&d, &v, 9.0, &GetzlerOptions::default()).unwrap();
        let exact = 0.5 * (libm::erf(63.0) + libm::erf(60.0));
        assert!((e.value - exact).abs() < 1e-12, "{}", e.value);
        assert!((e.value - 1.0).abs() < 1e-12);
        assert!(e.converged);
    }

    #[test]
    fn shifted_integer_model() {
        let d = ladder(20);
        let v = SelfAdjointOp::identity(41);
        let e = shifted_estimate(&d, &v, 9.0, 0.5, &GetzlerOptions::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-9);
        assert_eq!(e.shift, Some(0.5));
    }

    #[test]
    fn plateau_rules() {
        let pts: Vec<SweepPoint> = [0.2, 0.9, 1.0, 0.98, 1.3]
            .iter()
            .enumerate()
            .map(|(i, &v)| SweepPoint { eps: i as f64 + 1.0, value: v })
            .collect();
        let p = find_plateau(&pts, 0.05).unwrap();
        assert_eq!((p.eps_low, p.eps_high), (3.0, 4.0));
        assert!(find_plateau(&pts[..1], 0.05).is_none());
    }

    #[test]
    fn sweep_csv_rows() {
        let d = ladder(2);
        let s = eps_sweep(&d, &SelfAdjointOp::identity(5), &[1.0, 4.0], &GetzlerOptions::default()).unwrap();
        let mut buf = Vec::new();
        s.write_sweep_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 3);
        let sweep = s.sweep.unwrap();
        assert_eq!(rows[1], format!("1,{}", sweep[0].value));
    }
}
