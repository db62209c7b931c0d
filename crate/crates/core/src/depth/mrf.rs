//! Depth labeling energy: `-log` probability data term plus an
//! intensity-weighted `|s_p - s_q|` penalty over the 8-neighbourhood,
//! minimized by alpha-expansion.

use super::maxflow::FlowGraph;
use super::{DepthMap, DepthVolume};
use crate::error::{Error, Result};
use crate::image::Image;

/// Maximum number of full alpha-expansion sweeps.
pub const MAX_SWEEPS: usize = 10;
const ICM_SWEEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrfParams {
    pub lambda0: f64,
    pub sigma_lambda: f64,
    /// Standard deviation of the smoothing over scale indices.
    pub gauss_std: f64,
    pub prob_floor: f64,
}

impl Default for MrfParams {
    fn default() -> Self {
        Self {
            lambda0: 1000.0,
            sigma_lambda: 0.006,
            gauss_std: 0.1,
            prob_floor: 1e-6,
        }
    }
}

impl MrfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda0 >= 0.0 && self.sigma_lambda > 0.0 && self.gauss_std > 0.0 && self.prob_floor > 0.0;
        if !ok || !(self.lambda0.is_finite() && self.sigma_lambda.is_finite()) {
            return Err(Error::Config(format!("invalid MRF parameters {self:?}")));
        }
        Ok(())
    }
}

/// Per-pixel costs `D_p(s)` with the scale legend they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTerm {
    pub width: usize,
    pub height: usize,
    pub legend: Vec<i32>,
    /// Pixel-major like [`DepthVolume`].
    pub costs: Vec<f64>,
}

impl DataTerm {
    pub fn new(width: usize, height: usize, legend: Vec<i32>, costs: Vec<f64>) -> Result<Self> {
        if legend.is_empty() || costs.len() != width * height * legend.len() {
            return Err(Error::Dimension(format!(
                "data term {width}x{height}x{} with {} costs",
                legend.len(),
                costs.len()
            )));
        }
        if costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("data term has non-finite costs".into()));
        }
        Ok(Self {
            width,
            height,
            legend,
            costs,
        })
    }

    fn at(&self, pixel: usize, label: usize) -> f64 {
        self.costs[pixel * self.legend.len() + label]
    }

    /// Per-pixel cheapest label, ties to the smaller `|s|` then positive.
    pub fn argmin(&self) -> Vec<usize> {
        let s = self.legend.len();
        self.costs
            .chunks(s)
            .map(|px| {
                (0..s)
                    .min_by(|&a, &b| {
                        px[a]
                            .total_cmp(&px[b])
                            .then_with(|| super::prefer(self.legend[a], self.legend[b]))
                    })
                    .unwrap()
            })
            .collect()
    }
}

/// Discrete Gaussian over scale indices, truncated at three standard
/// deviations and renormalized.
fn gaussian_taps(std: f64) -> Vec<f64> {
    let radius = (3.0 * std).floor() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Smooths each pixel's probabilities along the scale axis, floors them
/// and takes `-log`. Mass falling past either end is redistributed over the
/// in-range taps so the smoothed vector still sums to one.
pub fn smooth_probabilities(volume: &DepthVolume, std: f64) -> Vec<f64> {
    let s = volume.scales().len();
    let taps = gaussian_taps(std);
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; volume.probs().len()];
    for (src, dst) in volume.probs().chunks(s).zip(out.chunks_mut(s)) {
        for (i, &p) in src.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let range = |d: isize| {
                let j = i as isize + d;
                (0..s as isize).contains(&j)
            };
            let norm: f64 = (-r..=r).filter(|&d| range(d)).map(|d| taps[(d + r) as usize]).sum();
            for d in (-r..=r).filter(|&d| range(d)) {
                dst[(i as isize + d) as usize] += p * taps[(d + r) as usize] / norm;
            }
        }
    }
    out
}

pub fn data_term(volume: &DepthVolume, params: &MrfParams) -> Result<DataTerm> {
    params.validate()?;
    let costs = smooth_probabilities(volume, params.gauss_std)
        .into_iter()
        .map(|p| -p.max(params.prob_floor).ln())
        .collect();
    DataTerm::new(volume.width(), volume.height(), volume.scales().to_vec(), costs)
}

/// Edge weight `lambda0 * exp(-(g_p - g_q)^2 / sigma^2)`, flushed to zero
/// in the far tail.
pub fn smoothness_lambda(gp: f64, gq: f64, params: &MrfParams) -> f64 {
    let d = gp - gq;
    let v = params.lambda0 * (-(d * d) / (params.sigma_lambda * params.sigma_lambda)).exp();
    if v < 1e-300 {
        0.0
    } else {
        v
    }
}

/// Each unordered 8-neighbour pair once, with its weight.
fn neighbour_pairs(img: &Image, params: &MrfParams) -> Vec<(usize, usize, f64)> {
    let (w, h) = img.dims();
    let mut pairs = Vec::with_capacity(4 * w * h);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut push = |qx: usize, qy: usize| {
                let q = qy * w + qx;
                pairs.push((p, q, smoothness_lambda(img.get(x, y), img.get(qx, qy), params)));
            };
            if x + 1 < w {
                push(x + 1, y);
            }
            if y + 1 < h {
                push(x, y + 1);
                if x + 1 < w {
                    push(x + 1, y + 1);
                }
                if x > 0 {
                    push(x - 1, y + 1);
                }
            }
        }
    }
    pairs
}

fn check_inputs(data: &DataTerm, img: &Image, params: &MrfParams) -> Result<()> {
    params.validate()?;
    if img.dims() != (data.width, data.height) {
        return Err(Error::Dimension(format!(
            "guide image {:?} vs data term {}x{}",
            img.dims(),
            data.width,
            data.height
        )));
    }
    Ok(())
}

fn pair_cost(legend: &[i32], a: usize, b: usize) -> f64 {
    (legend[a] - legend[b]).unsigned_abs() as f64
}

fn labeling_energy(data: &DataTerm, pairs: &[(usize, usize, f64)], labels: &[usize]) -> f64 {
    let unary: f64 = labels.iter().enumerate().map(|(p, &l)| data.at(p, l)).sum();
    let pairwise: f64 = pairs
        .iter()
        .map(|&(p, q, w)| w * pair_cost(&data.legend, labels[p], labels[q]))
        .sum();
    unary + pairwise
}

/// Energy of a labeling under the data term and the image-guided smoothness.
pub fn energy(data: &DataTerm, img: &Image, labels: &[usize], params: &MrfParams) -> Result<f64> {
    check_inputs(data, img, params)?;
    if labels.len() != data.width * data.height {
        return Err(Error::Dimension("label count differs from pixel count".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= data.legend.len()) {
        return Err(Error::Legend(bad));
    }
    Ok(labeling_energy(data, &neighbour_pairs(img, params), labels))
}

/// Best labeling reachable in one expansion move towards `alpha`.
fn expand(data: &DataTerm, pairs: &[(usize, usize, f64)], labels: &[usize], alpha: usize) -> Vec<usize> {
    let n = labels.len();
    let legend = &data.legend;
    let mut graph = FlowGraph::new(n);
    // t[p] = cost(switch) - cost(keep), linear in the switch variable
    let mut t: Vec<f64> = (0..n).map(|p| data.at(p, alpha) - data.at(p, labels[p])).collect();
    for &(p, q, w) in pairs {
        if w == 0.0 {
            continue;
        }
        let a = w * pair_cost(legend, labels[p], labels[q]);
        let b = w * pair_cost(legend, labels[p], alpha);
        let c = w * pair_cost(legend, alpha, labels[q]);
        // E = a + (c - a) x_p + (0 - c) x_q + (b + c - a) (1 - x_p) x_q
        t[p] += c - a;
        t[q] -= c;
        let cross = b + c - a;
        if cross > 0.0 {
            graph.add_edge(p, q, cross);
        }
    }
    for (p, &tp) in t.iter().enumerate() {
        if tp > 0.0 {
            graph.add_terminal(p, tp, 0.0);
        } else if tp < 0.0 {
            graph.add_terminal(p, 0.0, -tp);
        }
    }
    graph.max_flow();
    let keep = graph.source_side();
    labels
        .iter()
        .zip(keep)
        .map(|(&l, k)| if k { l } else { alpha })
        .collect()
}

/// Alpha-expansion from the per-pixel argmin labeling. Moves are accepted
/// only when they lower the energy.
pub fn solve_mrf(data: &DataTerm, img: &Image, params: &MrfParams) -> Result<DepthMap> {
    check_inputs(data, img, params)?;
    let pairs = neighbour_pairs(img, params);
    let mut labels = data.argmin();
    let mut current = labeling_energy(data, &pairs, &labels);
    if data.legend.len() > 1 && pairs.iter().any(|p| p.2 > 0.0) {
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for alpha in 0..data.legend.len() {
                let candidate = expand(data, &pairs, &labels, alpha);
                let e = labeling_energy(data, &pairs, &candidate);
                if e < current - 1e-9 * current.abs().max(1.0) {
                    labels = candidate;
                    current = e;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }
    DepthMap::new(data.width, data.height, labels, data.legend.clone())
}

/// Iterated conditional modes from the argmin labeling; a baseline for
/// comparison with [`solve_mrf`].
pub fn icm(data: &DataTerm, img: &Image, params: &MrfParams) -> Result<Vec<usize>> {
    check_inputs(data, img, params)?;
    let pairs = neighbour_pairs(img, params);
    let n = data.width * data.height;
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(p, q, w) in &pairs {
        nbrs[p].push((q, w));
        nbrs[q].push((p, w));
    }
    let mut labels = data.argmin();
    for _ in 0..ICM_SWEEPS {
        let mut changed = false;
        for p in 0..n {
            let local = |l: usize| {
                data.at(p, l)
                    + nbrs[p]
                        .iter()
                        .map(|&(q, w)| w * pair_cost(&data.legend, l, labels[q]))
                        .sum::<f64>()
            };
            let mut best = labels[p];
            let mut best_cost = local(best);
            for l in 0..data.legend.len() {
                let c = local(l);
                if c < best_cost - 1e-12 {
                    best = l;
                    best_cost = c;
                }
            }
            if best != labels[p] {
                labels[p] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn onehot_volume(
        w: usize,
        h: usize,
        scales: Vec<i32>,
        pick: impl Fn(usize, usize) -> Vec<(usize, f64)>,
    ) -> DepthVolume {
        let s = scales.len();
        let mut probs = vec![0.0; w * h * s];
        for y in 0..h {
            for x in 0..w {
                for (i, p) in pick(x, y) {
                    probs[(y * w + x) * s + i] = p;
                }
            }
        }
        DepthVolume::new(w, h, scales, probs).unwrap()
    }

    #[test]
    fn lambda_values() {
        let p = MrfParams::default();
        assert_eq!(smoothness_lambda(0.3, 0.3, &p), 1000.0);
        let v = smoothness_lambda(0.5, 0.5 + 0.006, &p);
        assert!((v - 1000.0 * (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(smoothness_lambda(0.0, 1.0, &p), 0.0);
    }

    #[test]
    fn data_term_shapes() {
        let vol = onehot_volume(2, 1, vec![1, 2, 3, 4], |x, _| {
            if x == 0 {
                vec![(1, 1.0)]
            } else {
                vec![(0, 0.7), (3, 0.3)]
            }
        });
        let p = MrfParams::default();
        let d = data_term(&vol, &p).unwrap();
        let floor = -(1e-6f64).ln();
        assert_eq!(d.at(0, 1), 0.0);
        assert_eq!(d.at(0, 0), floor);
        assert_eq!(d.at(0, 3), floor);
        assert!(d.at(1, 0) < d.at(1, 3) && d.at(1, 3) < d.at(1, 1));

        // a wide kernel still conserves each pixel's mass
        let smooth = smooth_probabilities(&vol, 1.3);
        for px in smooth.chunks(4) {
            assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_cost_is_a_metric() {
        let legend = [-10, -3, -1, 1, 2, 7];
        for a in 0..6 {
            assert_eq!(pair_cost(&legend, a, a), 0.0);
            for b in 0..6 {
                assert_eq!(pair_cost(&legend, a, b), pair_cost(&legend, b, a));
                if a != b {
                    assert!(pair_cost(&legend, a, b) > 0.0);
                }
                for c in 0..6 {
                    assert!(pair_cost(&legend, a, c) <= pair_cost(&legend, a, b) + pair_cost(&legend, b, c));
                }
            }
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng, w: usize, h: usize, s: usize) -> (DataTerm, Image) {
        let legend: Vec<i32> = (1..=s as i32).collect();
        let costs = (0..w * h * s).map(|_| rng.random_range(0.0..3.0)).collect();
        let img = Image::from_fn(w, h, |_, _| rng.random_range(0.0..0.01)).unwrap();
        (DataTerm::new(w, h, legend, costs).unwrap(), img)
    }

    #[test]
    fn zero_smoothness_is_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, img) = random_problem(&mut rng, 6, 5, 4);
        let p = MrfParams {
            lambda0: 0.0,
            ..MrfParams::default()
        };
        assert_eq!(solve_mrf(&d, &img, &p).unwrap().labels(), d.argmin().as_slice());
    }

    #[test]
    fn single_label_is_constant() {
        let d = DataTerm::new(3, 3, vec![4], vec![0.5; 9]).unwrap();
        let img = Image::constant(3, 3, 0.2).unwrap();
        let m = solve_mrf(&d, &img, &MrfParams::default()).unwrap();
        assert!(m.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn expansion_reaches_global_optimum_on_tiny_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MrfParams {
            lambda0: 0.4,
            sigma_lambda: 0.05,
            ..MrfParams::default()
        };
        for _ in 0..10 {
            let (d, img) = random_problem(&mut rng, 3, 3, 3);
            let m = solve_mrf(&d, &img, &p).unwrap();
            let got = energy(&d, &img, m.labels(), &p).unwrap();
            // exhaustive search over 3^9 labelings
            let mut best = f64::INFINITY;
            for code in 0..3usize.pow(9) {
                let labels: Vec<usize> = (0..9).map(|i| code / 3usize.pow(i) % 3).collect();
                best = best.min(energy(&d, &img, &labels, &p).unwrap());
            }
            // alpha-expansion guarantees a factor of 2 for |s_p - s_q| with
            // unit spacing; on these sizes it should sit at or near the optimum
            assert!(got <= 2.0 * best + 1e-9);
            let init = energy(&d, &img, &d.argmin(), &p).unwrap();
            assert!(got <= init + 1e-9);
        }
    }

    #[test]
    fn expansion_beats_icm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = MrfParams {
            lambda0: 0.8,
            sigma_lambda: 0.05,
            ..MrfParams::default()
        };
        for _ in 0..5 {
            let (d, img) = random_problem(&mut rng, 12, 10, 5);
            let m = solve_mrf(&d, &img, &p).unwrap();
            let e_exp = energy(&d, &img, m.labels(), &p).unwrap();
            let e_icm = energy(&d, &img, &icm(&d, &img, &p).unwrap(), &p).unwrap();
            assert!(e_exp <= e_icm + 1e-9, "{e_exp} vs {e_icm}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DataTerm::new(1, 1, vec![1], vec![f64::NAN]).is_err());
        let d = DataTerm::new(2, 2, vec![1], vec![0.0; 4]).unwrap();
        let img = Image::constant(3, 2, 0.0).unwrap();
        assert!(solve_mrf(&d, &img, &MrfParams::default()).is_err());
    }
}
