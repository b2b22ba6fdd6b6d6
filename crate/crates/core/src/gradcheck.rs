//! Central finite-difference gradient checks in `f64`.

use rand::Rng;

use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Coordinate `(parameter index, flat element index)`.
pub type Coord = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Worst coordinate: name, element, analytic, numeric.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn all_coordinates(params: &ParamSet<f64>) -> Vec<Coord> {
    (0..params.len())
        .flat_map(|i| (0..params.value(i).len()).map(move |j| (i, j)))
        .collect()
}

/// Up to `per_tensor` distinct random elements from every parameter tensor.
pub fn sample_coordinates<R: Rng + ?Sized>(params: &ParamSet<f64>, per_tensor: usize, rng: &mut R) -> Vec<Coord> {
    let mut out = Vec::new();
    for i in 0..params.len() {
        let n = params.value(i).len();
        if n <= per_tensor {
            out.extend((0..n).map(|j| (i, j)));
        } else {
            out.extend(rand::seq::index::sample(rng, n, per_tensor).into_iter().map(|j| (i, j)));
        }
    }
    out
}

/// Compares `analytic` against central differences of `loss` at `coords`.
pub fn check_gradients<F>(
    params: &mut ParamSet<f64>,
    analytic: &[Tensor<f64>],
    coords: &[Coord],
    h: f64,
    floor: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ParamSet<f64>) -> f64,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for &(i, j) in coords {
        let x = params.value(i).data()[j];
        params.value_mut(i).data_mut()[j] = x + h;
        let up = loss(params);
        params.value_mut(i).data_mut()[j] = x - h;
        let down = loss(params);
        params.value_mut(i).data_mut()[j] = x;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].data()[j];
        let err = relative_error(a, numeric, floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((params.name(i).to_string(), j, a, numeric));
        }
    }
    report
}
