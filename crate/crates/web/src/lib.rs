//! wasm-bindgen entry points for the static demo page in `www/`.

use spectral_flow::circle::{
    analytic_gauge_commutator, boundary_sf, build_boundary_dirac, CircleGrid, CircleOperator, GaugeMap, GaugeSpec,
};
use spectral_flow::getzler::{eps_sweep, GetzlerOptions};
use spectral_flow::halfcyl::{ImageHeatKernel, ImageSign};
use spectral_flow::linalg::eigvalsh;
use spectral_flow::{FlowOptions, SelfAdjointOp};
use wasm_bindgen::prelude::*;

fn js_err(e: spectral_flow::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn setup(n_theta: usize, windings: &[i32]) -> Result<(CircleOperator, GaugeMap, SelfAdjointOp), spectral_flow::Error> {
    let ks: Vec<i64> = windings.iter().map(|&k| k as i64).collect();
    let grid = CircleGrid::new(n_theta)?;
    let g = GaugeSpec::diagonal(&ks).sample(grid)?;
    let d = build_boundary_dirac(grid, g.fiber_dim);
    let v = analytic_gauge_commutator(&d, &g)?;
    Ok((d, g, v))
}

/// Eigenvalues of `D + u·V` for `u` on `steps + 1` equally spaced points of
/// `[0, 1]`, row-major with one row per `u`.
pub fn branches(n_theta: usize, windings: &[i32], steps: usize) -> Result<Vec<f64>, spectral_flow::Error> {
    let (d, _, v) = setup(n_theta, windings)?;
    let steps = steps.max(1);
    let mut out = Vec::with_capacity((steps + 1) * d.dim());
    for i in 0..=steps {
        let u = i as f64 / steps as f64;
        out.extend(eigvalsh(&d.op.add_scaled(&v, u)?)?);
    }
    Ok(out)
}

#[wasm_bindgen]
pub struct CircleFlow {
    value: i32,
    dim: usize,
    branches: Vec<f64>,
}

#[wasm_bindgen]
impl CircleFlow {
    #[wasm_bindgen(getter)]
    pub fn value(&self) -> i32 {
        self.value
    }

    #[wasm_bindgen(getter)]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[wasm_bindgen(getter)]
    pub fn branches(&self) -> Vec<f64> {
        self.branches.clone()
    }
}

/// Spectral flow along the gauge path, with the eigenvalue branches for
/// plotting.
#[wasm_bindgen(js_name = circleFlow)]
pub fn circle_flow(n_theta: usize, windings: Vec<i32>, steps: usize) -> Result<CircleFlow, JsError> {
    let (d, g, _) = setup(n_theta, &windings).map_err(js_err)?;
    let sf = boundary_sf(&d, &g, &FlowOptions::default()).map_err(js_err)?;
    Ok(CircleFlow {
        value: sf.value as i32,
        dim: d.dim(),
        branches: branches(n_theta, &windings, steps).map_err(js_err)?,
    })
}

/// Heat-trace estimate at each scale in `eps`.
#[wasm_bindgen(js_name = getzlerSweep)]
pub fn getzler_sweep(n_theta: usize, windings: Vec<i32>, eps: Vec<f64>) -> Result<Vec<f64>, JsError> {
    let (d, _, v) = setup(n_theta, &windings).map_err(js_err)?;
    let est = eps_sweep(&d.op, &v, &eps, &GetzlerOptions::default()).map_err(js_err)?;
    Ok(est.sweep.unwrap_or_default().iter().map(|p| p.value).collect())
}

/// Half-line heat kernel `k(x, y)` at the points `xs`, Neumann image when
/// `neumann` is set, Dirichlet otherwise.
#[wasm_bindgen(js_name = imageKernel)]
pub fn image_kernel(eps: f64, y: f64, neumann: bool, xs: Vec<f64>) -> Result<Vec<f64>, JsError> {
    let sign = if neumann { ImageSign::Plus } else { ImageSign::Minus };
    let k = ImageHeatKernel::new(eps, sign).map_err(js_err)?;
    Ok(xs.iter().map(|&x| k.eval(x, y)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branches_shape_and_endpoints() {
        let b = branches(9, &[1], 4).unwrap();
        assert_eq!(b.len(), 5 * 9);
        // Every mode moves up by the winding.
        for (a, z) in b[..9].iter().zip(&b[4 * 9..]) {
            assert!((z - a - 1.0).abs() < 1e-9, "{a} {z}");
        }
    }

    #[test]
    fn flow_and_sweep() {
        let f = circle_flow(17, vec![2], 8).ok().unwrap();
        assert_eq!(f.value().abs(), 2);
        let s = getzler_sweep(17, vec![2], vec![1.0, 4.0]).ok().unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|v| (v.abs() - 2.0).abs() < 1e-6));
    }

    #[test]
    fn dirichlet_vanishes_on_boundary() {
        let k = image_kernel(0.1, 0.7, false, vec![0.0, 0.5]).ok().unwrap();
        assert!(k[0].abs() < 1e-15);
        assert!(k[1] > 0.0);
    }
}
