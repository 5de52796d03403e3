//! Angular-error evaluation and the repeat-variance harness.

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::normal::{dot3, normalize3, NormalMap};

/// Per-pixel angular error in degrees; `mask[i]` is false where either
/// input is invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub height: usize,
    pub width: usize,
    pub degrees: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularErrorReport {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub pct_11_25: f64,
    pub pct_22_5: f64,
    pub pct_30: f64,
    pub n_valid: usize,
}

impl AngularErrorReport {
    pub fn to_config(&self) -> KvConfig {
        let mut c = KvConfig::new();
        c.set("mean_deg", self.mean_deg);
        c.set("median_deg", self.median_deg);
        c.set("pct_11_25", self.pct_11_25);
        c.set("pct_22_5", self.pct_22_5);
        c.set("pct_30", self.pct_30);
        c.set("n_valid", self.n_valid);
        c
    }
}

/// Angle between two unit directions in degrees, `acos(clamp(a . b, -1, 1))`.
/// Exactly equal or opposite inputs give exactly 0° or 180°; the rounded dot
/// product of a unit vector with itself can land an ulp short of 1.
pub fn angle_between_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    if a == b {
        return 0.0;
    }
    if a == [-b[0], -b[1], -b[2]] {
        return 180.0;
    }
    dot3(a, b).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn angular_error_map(pred: &NormalMap, gt: &NormalMap) -> Result<ErrorMap> {
    pred.same_dims(gt)?;
    let mut degrees = Vec::with_capacity(gt.len());
    let mut mask = Vec::with_capacity(gt.len());
    for (i, ((p, &pv), (g, &gv))) in pred.normals().iter().zip(pred.mask()).zip(gt.normals().iter().zip(gt.mask())).enumerate() {
        if !(pv && gv) {
            degrees.push(0.0);
            mask.push(false);
            continue;
        }
        let (p, g) = match (normalize3(*p), normalize3(*g)) {
            (Some(p), Some(g)) => (p, g),
            _ => return Err(Error::arg(format!("zero-length normal at valid pixel {i}"))),
        };
        degrees.push(angle_between_deg(p, g));
        mask.push(true);
    }
    Ok(ErrorMap { height: gt.height(), width: gt.width(), degrees, mask })
}

/// Mean, lower median and the share of pixels strictly below 11.25°, 22.5°
/// and 30°, over valid pixels in scan order.
pub fn summarize_errors(errors: &[f64], mask: &[bool]) -> Result<AngularErrorReport> {
    if errors.len() != mask.len() {
        return Err(Error::arg("error map and mask lengths differ"));
    }
    let mut valid: Vec<f64> = errors.iter().zip(mask).filter(|(_, &m)| m).map(|(&e, _)| e).collect();
    if valid.is_empty() {
        return Err(Error::arg("no valid pixels to summarize"));
    }
    if let Some(e) = valid.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::NonFinite(format!("angular error {e}")));
    }
    let n = valid.len();
    let mean = valid.iter().sum::<f64>() / n as f64;
    let pct = |th: f64| 100.0 * valid.iter().filter(|&&e| e < th).count() as f64 / n as f64;
    let (p1, p2, p3) = (pct(11.25), pct(22.5), pct(30.0));
    valid.sort_by(f64::total_cmp);
    Ok(AngularErrorReport {
        mean_deg: mean,
        median_deg: valid[(n - 1) / 2],
        pct_11_25: p1,
        pct_22_5: p2,
        pct_30: p3,
        n_valid: n,
    })
}

pub fn evaluate(pred: &NormalMap, gt: &NormalMap) -> Result<AngularErrorReport> {
    let e = angular_error_map(pred, gt)?;
    summarize_errors(&e.degrees, &e.mask)
}

/// Unbiased per-component variance across runs, averaged over the three
/// components; `mean_variance` averages that over valid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    pub height: usize,
    pub width: usize,
    pub variance: Vec<f64>,
    pub mask: Vec<bool>,
    pub mean_variance: f64,
    pub repeats: usize,
}

impl VarianceReport {
    pub fn to_config(&self) -> KvConfig {
        let mut c = KvConfig::new();
        c.set("repeats", self.repeats);
        c.set("mean_variance", self.mean_variance);
        c.set("n_valid", self.mask.iter().filter(|&&m| m).count());
        c.set("variance_definition", "unbiased-per-component-mean");
        c
    }
}

fn check_runs(runs: &[NormalMap]) -> Result<()> {
    let first = runs.first().ok_or_else(|| Error::arg("need at least one run"))?;
    for r in &runs[1..] {
        first.same_dims(r)?;
        if r.mask() != first.mask() {
            return Err(Error::arg("runs have different validity masks"));
        }
    }
    Ok(())
}

pub fn pixelwise_variance(runs: &[NormalMap]) -> Result<VarianceReport> {
    if runs.len() < 2 {
        return Err(Error::arg(format!("variance needs at least 2 runs, got {}", runs.len())));
    }
    check_runs(runs)?;
    let first = &runs[0];
    let r = runs.len() as f64;
    let variance = exec::map_range(first.len(), |i| {
        if !first.mask()[i] {
            return 0.0;
        }
        // Shifted by the first run: identical runs give exactly zero.
        let mut total = 0.0;
        for k in 0..3 {
            let origin = first.normals()[i][k];
            let (mut s, mut s2) = (0.0, 0.0);
            for m in runs {
                let d = m.normals()[i][k] - origin;
                s += d;
                s2 += d * d;
            }
            total += ((s2 - s * s / r) / (r - 1.0)).max(0.0);
        }
        total / 3.0
    });
    let n_valid = first.valid_count();
    let mean_variance = if n_valid == 0 {
        0.0
    } else {
        variance.iter().zip(first.mask()).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / n_valid as f64
    };
    Ok(VarianceReport {
        height: first.height(),
        width: first.width(),
        variance,
        mask: first.mask().to_vec(),
        mean_variance,
        repeats: runs.len(),
    })
}

/// Per-pixel vector mean, renormalised; zero means become invalid.
pub fn ensemble_mean(runs: &[NormalMap]) -> Result<NormalMap> {
    check_runs(runs)?;
    let first = &runs[0];
    let vectors: Vec<[f64; 3]> = (0..first.len())
        .map(|i| {
            let mut s = [0.0; 3];
            for m in runs {
                let v = m.normals()[i];
                s = [s[0] + v[0], s[1] + v[1], s[2] + v[2]];
            }
            s
        })
        .collect();
    NormalMap::from_vectors(first.height(), first.width(), &vectors, Some(first.mask()))
}

/// Ensemble size against output variance. Row `k` (1-based) forms R
/// ensembles from cyclic windows of k consecutive runs and reports the
/// mean pixelwise variance across those R ensembles.
pub fn ensemble_variance_curve(runs: &[NormalMap]) -> Result<Vec<(usize, f64)>> {
    if runs.len() < 2 {
        return Err(Error::arg("ensemble curve needs at least 2 runs"));
    }
    check_runs(runs)?;
    let r = runs.len();
    let mut rows = Vec::with_capacity(r);
    for k in 1..=r {
        let ensembles = (0..r)
            .map(|start| {
                let window: Vec<NormalMap> = (0..k).map(|j| runs[(start + j) % r].clone()).collect();
                ensemble_mean(&window)
            })
            .collect::<Result<Vec<_>>>()?;
        // A window whose mean cancels at some pixel drops it from that
        // ensemble; compare only pixels valid in every ensemble.
        let mask: Vec<bool> = (0..runs[0].len()).map(|i| ensembles.iter().all(|e| e.mask()[i])).collect();
        let masked = ensembles.iter().map(|e| e.with_mask(&mask)).collect::<Result<Vec<_>>>()?;
        rows.push((k, pixelwise_variance(&masked)?.mean_variance));
    }
    Ok(rows)
}

/// Tab-separated table with a header line.
pub fn format_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(vs: &[[f64; 3]]) -> NormalMap {
        NormalMap::from_vectors(1, vs.len(), vs, None).unwrap()
    }

    #[test]
    fn basic_angles() {
        let a = map(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let b = map(&[[0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]);
        let e = angular_error_map(&a, &b).unwrap();
        assert!((e.degrees[0] - 90.0).abs() < 1e-12);
        assert!((e.degrees[1] - 180.0).abs() < 1e-12);
        assert!(angular_error_map(&a, &a).unwrap().degrees.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn summary_examples() {
        let r = summarize_errors(&[10.0; 4], &[true; 4]).unwrap();
        assert_eq!((r.mean_deg, r.median_deg, r.pct_11_25), (10.0, 10.0, 100.0));
        let r = summarize_errors(&[0.0, 45.0, 0.0, 45.0], &[true; 4]).unwrap();
        assert_eq!((r.pct_22_5, r.pct_30, r.mean_deg, r.median_deg), (50.0, 50.0, 22.5, 0.0));
        assert!(summarize_errors(&[1.0], &[false]).is_err());
    }

    #[test]
    fn sign_flip_variance() {
        let a = map(&[[0.0, 0.0, 1.0], [0.6, 0.0, 0.8]]);
        let b = map(&[[0.0, 0.0, 1.0], [-0.6, 0.0, 0.8]]);
        let v = pixelwise_variance(&[a.clone(), b]).unwrap();
        assert_eq!(v.variance[0], 0.0);
        let expected = 2.0 / 3.0 * 0.6f64.powi(2);
        assert!((v.variance[1] - expected).abs() < 1e-15);
        assert!(pixelwise_variance(&[a]).is_err());
    }

    #[test]
    fn ensemble_examples() {
        let a = map(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let b = map(&[[0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]);
        assert_eq!(ensemble_mean(&[a.clone()]).unwrap(), a);
        let m = ensemble_mean(&[a, b]).unwrap();
        let s = 0.5f64.sqrt();
        let v = m.get(0, 0).unwrap();
        assert!((v[0] - s).abs() < 1e-15 && (v[1] - s).abs() < 1e-15);
        assert!(!m.mask()[1]);
    }

    #[test]
    fn curve_has_one_row_per_repeat_and_ends_at_zero() {
        let runs: Vec<NormalMap> = [0.1, 0.3, -0.2, 0.05]
            .iter()
            .map(|&x| map(&[[x, 0.0, 1.0], [0.0, x, 1.0]]))
            .collect();
        let rows = ensemble_variance_curve(&runs).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[3].1.abs() < 1e-30);
        assert!(rows[1].1 < rows[0].1);
    }
}
