//! Quantitative proxies for utility and privacy leakage.
//!
//! All reductions run in binary64 in index order.

use std::io::Write;

use crate::error::{Error, Result};
use crate::nnkernel::{clamp_prob, Matrix, Network};

/// Normalized squared error `||a - b||^2 / ||a||^2`, normalized by the energy
/// of the reference `a`. Not symmetric.
pub fn nmse(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("nmse of {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut energy = 0.0f64;
    let mut err = 0.0f64;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x as f64, y as f64);
        energy += x * x;
        err += (x - y) * (x - y);
    }
    if energy == 0.0 {
        return Err(Error::UndefinedMetric("nmse reference has zero energy".into()));
    }
    Ok(err / energy)
}

pub const SSIM_WINDOW: usize = 8;

/// Mean SSIM of two `height x width` single-channel images stored row-major.
///
/// Uses `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`, uniform 8x8 windows at stride 1
/// with population (1/N) moments. An image narrower or shorter than the
/// window is scored with one global window.
pub fn ssim(a: &[f32], b: &[f32], height: usize, width: usize, dynamic_range: f64) -> Result<f64> {
    if a.len() != b.len() || a.len() != height * width {
        return Err(Error::shape(format!(
            "ssim needs two {height}x{width} images, got {} and {} values",
            a.len(),
            b.len()
        )));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::config("ssim dynamic range must be positive"));
    }
    if height == 0 || width == 0 {
        return Err(Error::shape("ssim of an empty image"));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let (wh, ww) = if height < SSIM_WINDOW || width < SSIM_WINDOW {
        (height, width)
    } else {
        (SSIM_WINDOW, SSIM_WINDOW)
    };
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=height - wh {
        for x0 in 0..=width - ww {
            total += window_ssim(a, b, width, y0, x0, wh, ww, c1, c2);
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

#[allow(clippy::too_many_arguments)]
fn window_ssim(
    a: &[f32],
    b: &[f32],
    width: usize,
    y0: usize,
    x0: usize,
    wh: usize,
    ww: usize,
    c1: f64,
    c2: f64,
) -> f64 {
    let n = (wh * ww) as f64;
    let pixels = || {
        (y0..y0 + wh).flat_map(move |y| (x0..x0 + ww).map(move |x| y * width + x))
    };
    let (mut ma, mut mb) = (0.0, 0.0);
    for i in pixels() {
        ma += a[i] as f64;
        mb += b[i] as f64;
    }
    ma /= n;
    mb /= n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for i in pixels() {
        let da = a[i] as f64 - ma;
        let db = b[i] as f64 - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    va /= n;
    vb /= n;
    cov /= n;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean per-row SSIM between two batches of flattened images.
pub fn batch_ssim(a: &Matrix, b: &Matrix, height: usize, width: usize, dynamic_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim batches differ in shape"));
    }
    if a.rows() == 0 {
        return Err(Error::UndefinedMetric("ssim of an empty batch".into()));
    }
    let mut total = 0.0;
    for r in 0..a.rows() {
        total += ssim(a.row(r), b.row(r), height, width, dynamic_range)?;
    }
    Ok(total / a.rows() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows where the judge's argmax equals the label.
pub fn classify_accuracy(judge: &Network, samples: &Matrix, labels: &[usize]) -> Result<f64> {
    if samples.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} samples for {} labels",
            samples.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let logits = judge.forward(samples)?;
    let hits = (0..logits.rows())
        .filter(|&r| argmax(logits.row(r)) == labels[r])
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Pointwise `p / (p + q)`; `None` where both masses vanish.
pub fn optimal_discriminator(p: &[f64], q: &[f64]) -> Result<Vec<Option<f64>>> {
    if p.len() != q.len() {
        return Err(Error::shape("distributions have different supports"));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let s = pi + qi;
            (s > 0.0).then(|| pi / s)
        })
        .collect())
}

/// Empirical GAN value `mean log D(x_p) + mean log(1 - D(x_q))` with `D`
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn value_function<D>(d: D, p_samples: &Matrix, q_samples: &Matrix) -> Result<f64>
where
    D: Fn(&Matrix) -> Result<Vec<f64>>,
{
    let mean_log = |samples: &Matrix, fake: bool| -> Result<f64> {
        if samples.rows() == 0 {
            return Err(Error::UndefinedMetric("empty sample set".into()));
        }
        let out = d(samples)?;
        if out.len() != samples.rows() {
            return Err(Error::shape("discriminator returned wrong count"));
        }
        let sum: f64 = out
            .iter()
            .map(|&v| {
                let v = clamp_prob(v);
                if fake {
                    (1.0 - v).ln()
                } else {
                    v.ln()
                }
            })
            .sum();
        Ok(sum / samples.rows() as f64)
    };
    Ok(mean_log(p_samples, false)? + mean_log(q_samples, true)?)
}

/// Jensen-Shannon divergence (natural log) between histograms of two sample
/// sets over `[-1, 1]^d`, `bins` cells per axis, `d <= 2`. Values outside the
/// range land in the edge cells.
pub fn jsd_empirical(p: &Matrix, q: &Matrix, bins: usize) -> Result<f64> {
    let d = p.cols();
    if d != q.cols() {
        return Err(Error::shape("sample sets differ in dimension"));
    }
    if d == 0 || d > 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    if p.rows() == 0 || q.rows() == 0 || bins == 0 {
        return Err(Error::UndefinedMetric("jsd needs samples and bins".into()));
    }
    let hp = histogram(p, bins);
    let hq = histogram(q, bins);
    let mut jsd = 0.0;
    for (&a, &b) in hp.iter().zip(&hq) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            jsd += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            jsd += 0.5 * b * (b / m).ln();
        }
    }
    Ok(jsd.max(0.0))
}

fn histogram(x: &Matrix, bins: usize) -> Vec<f64> {
    let cell = |v: f32| -> usize {
        let t = ((v as f64 + 1.0) / 2.0 * bins as f64).floor();
        (t.max(0.0) as usize).min(bins - 1)
    };
    let mut h = vec![0.0; bins.pow(x.cols() as u32)];
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut k = 0;
        for &v in row {
            k = k * bins + cell(v);
        }
        h[k] += 1.0;
    }
    let n = x.rows() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Per-round summary written as one CSV row.
///
/// Attack columns are means over all configured attackers and are empty when
/// there are none.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub cl_accuracy: f64,
    /// Judge accuracy on each user's server generator, by user id.
    pub cloud_accuracy: Vec<f64>,
    /// Judge accuracy on each attacker's generator, in attacker order.
    pub attacker_accuracy: Vec<f64>,
    pub nmse: Option<f64>,
    pub ssim: Option<f64>,
    pub param_distance: Option<f64>,
    pub bytes_cumulative: u64,
    pub messages_cumulative: u64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "round,cl_accuracy,mean_cloud_acc,mean_attacker_acc,nmse,ssim,param_distance,bytes_cumulative,messages_cumulative";

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        writeln!(
            w,
            "{},{:.6},{},{},{},{},{},{},{}",
            self.round,
            self.cl_accuracy,
            opt(mean(&self.cloud_accuracy)),
            opt(mean(&self.attacker_accuracy)),
            opt(self.nmse),
            opt(self.ssim),
            opt(self.param_distance),
            self.bytes_cumulative,
            self.messages_cumulative
        )?;
        Ok(())
    }
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], mut w: W) -> Result<()> {
    writeln!(w, "{}", MetricsRecord::CSV_HEADER)?;
    for r in records {
        r.write_csv_row(&mut w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkernel::{LayerSpec, ParamVector, Rng};

    fn m(rows: &[Vec<f32>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn nmse_identities() {
        let a = m(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        assert_eq!(nmse(&a, &a).unwrap(), 0.0);
        assert_eq!(nmse(&a, &Matrix::zeros(2, 2)).unwrap(), 1.0);
        let mut b = a.clone();
        b.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
        assert_eq!(nmse(&a, &b).unwrap(), 1.0);
        assert!(matches!(
            nmse(&Matrix::zeros(2, 2), &a),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(nmse(&a, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = Rng::new(1);
        let mut img = vec![0.0f32; 100];
        rng.fill_normal(&mut img);
        assert!((ssim(&img, &img, 10, 10, 2.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let l = 2.0;
        let (c, d) = (-0.5f32, 1.5f32);
        let got = ssim(&[c; 64], &[d; 64], 8, 8, l).unwrap();
        let c1 = (0.01 * l).powi(2);
        let c2 = (0.03 * l).powi(2);
        let (mc, md) = (c as f64, d as f64);
        let want = (2.0 * mc * md + c1) * c2 / ((mc * mc + md * md + c1) * c2);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_small_images_use_one_window() {
        let a = [0.1f32, 0.4, -0.3, 0.9, 0.0, -1.0];
        let b = [0.2f32, 0.1, -0.5, 0.7, 0.3, -0.6];
        let ab = ssim(&a, &b, 2, 3, 2.0).unwrap();
        assert!((ab - ssim(&b, &a, 2, 3, 2.0).unwrap()).abs() < 1e-15);
        assert!(ab < 1.0 && ab > -1.0);
        assert!(ssim(&a, &b[..5], 2, 3, 2.0).is_err());
    }

    #[test]
    fn accuracy_with_constant_judge() {
        // Zero weights, bias favouring class 0.
        let mut p = ParamVector::zeros(&[LayerSpec::dense(2, 3)]).unwrap();
        p.dense_parts_mut(0).1[0] = 1.0;
        let judge = Network::new(p);
        let x = Matrix::zeros(5, 2);
        assert_eq!(classify_accuracy(&judge, &x, &[0; 5]).unwrap(), 1.0);
        assert_eq!(classify_accuracy(&judge, &x, &[1; 5]).unwrap(), 0.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn random_judge_near_chance() {
        let layers = [LayerSpec::dense(4, 10)];
        let mut rng = Rng::new(21);
        let judge = Network::init(&layers, Default::default(), &mut rng).unwrap();
        let mut x = Matrix::zeros(10_000, 4);
        rng.fill_normal(x.as_mut_slice());
        let labels: Vec<usize> = (0..10_000).map(|i| i % 10).collect();
        let acc = classify_accuracy(&judge, &x, &labels).unwrap();
        assert!((0.08..=0.12).contains(&acc), "{acc}");
    }

    #[test]
    fn optimal_discriminator_cases() {
        let eq = optimal_discriminator(&[0.2, 0.8], &[0.2, 0.8]).unwrap();
        assert_eq!(eq, vec![Some(0.5), Some(0.5)]);
        let d = optimal_discriminator(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(d, vec![Some(1.0), Some(0.0)]);
        let d = optimal_discriminator(&[0.75, 0.25], &[0.25, 0.75]).unwrap();
        assert_eq!(d, vec![Some(0.75), Some(0.25)]);
        let d = optimal_discriminator(&[0.0, 1.0], &[0.0, 0.5]).unwrap();
        assert_eq!(d[0], None);
    }

    #[test]
    fn value_function_at_half() {
        let p = Matrix::zeros(7, 1);
        let q = Matrix::zeros(3, 1);
        let v = value_function(|x: &Matrix| Ok(vec![0.5; x.rows()]), &p, &q).unwrap();
        assert!((v + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn value_function_at_clamp_limit() {
        let p = Matrix::zeros(4, 1);
        let q = Matrix::filled(4, 1, 1.0);
        let d = |x: &Matrix| Ok(x.as_slice().iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect());
        let v = value_function(d, &p, &q).unwrap();
        assert!((v - 2.0 * (1.0 - 1e-7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn jsd_bounds() {
        let a = Matrix::from_vec(4, 1, vec![-0.9, -0.8, -0.7, -0.6]).unwrap();
        let b = Matrix::from_vec(4, 1, vec![0.6, 0.7, 0.8, 0.9]).unwrap();
        assert_eq!(jsd_empirical(&a, &a, 10).unwrap(), 0.0);
        assert!((jsd_empirical(&a, &b, 10).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(
            jsd_empirical(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3), 5),
            Err(Error::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn jsd_same_distribution_small() {
        let mut r1 = Rng::new(1);
        let mut r2 = Rng::new(2);
        let draw = |rng: &mut Rng| {
            let mut v = vec![0.0f32; 10_000];
            rng.fill_normal(&mut v);
            v.iter_mut().for_each(|x| *x *= 0.3);
            Matrix::from_vec(10_000, 1, v).unwrap()
        };
        let j = jsd_empirical(&draw(&mut r1), &draw(&mut r2), 50).unwrap();
        // Observed 0.00093 for these seeds.
        assert!(j <= 0.02, "{j}");
    }

    #[test]
    fn csv_row_format() {
        let r = MetricsRecord {
            round: 2,
            cl_accuracy: 0.5,
            cloud_accuracy: vec![1.0, 0.5],
            attacker_accuracy: vec![],
            nmse: None,
            ssim: Some(0.25),
            param_distance: None,
            bytes_cumulative: 1024,
            messages_cumulative: 4,
        };
        let mut out = Vec::new();
        r.write_csv_row(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "2,0.500000,0.750000,,,0.250000,,1024,4\n"
        );
    }
}
