//! Latent-space analysis: PCA of encoded data, per-dimension traversals,
//! rank correlation and plot-ready exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::{sigmoid, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{hazard_ratio, HazardRatio, Likelihood};
use crate::network::CoxVaeNet;
use crate::survstats::SurvivalTable;
use crate::training::Checkpoint;

pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const TRAVERSAL_INDEX_FILE: &str = "traversal_index.csv";
pub const TRAVERSAL_GRID_FILE: &str = "traversal_grid.pgm";

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_MAX_DIM: usize = 64;

/// Posterior means of a dataset alongside its survival records.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub ids: Vec<u64>,
    /// `[n × d]`
    pub mu: Tensor,
    pub table: SurvivalTable,
    pub psi: Vec<f64>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn encode_dataset(net: &CoxVaeNet, ds: &Dataset) -> Result<Embedding> {
    let mu = net.encode_mean(&ds.images)?;
    if !mu.is_finite() {
        return Err(Error::Training("encoder produced non-finite means".into()));
    }
    Ok(Embedding {
        ids: ds.ids.clone(),
        mu,
        table: ds.table.clone(),
        psi: net.cox_weights().to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// `[k × d]`, orthonormal rows.
    pub components: Tensor,
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

impl PcaResult {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Scores of `points` `[n × d]` on the components: `[n × k]`.
    pub fn project(&self, points: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if points.rank() != 2 || points.shape()[1] != d {
            return Err(Error::Dimension(format!(
                "projection expects [n, {d}], got {:?}",
                points.shape()
            )));
        }
        let n = points.shape()[0];
        let k = self.k();
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let row = points.row(i);
            for c in 0..k {
                let comp = self.components.row(c);
                out[i * k + c] = row.iter().zip(&self.mean).zip(comp).map(|((x, m), w)| (x - m) * w).sum();
            }
        }
        Tensor::matrix(n, k, out)
    }

    /// Maps scores back to the input space.
    pub fn reconstruct(&self, scores: &Tensor) -> Result<Tensor> {
        let k = self.k();
        if scores.rank() != 2 || scores.shape()[1] != k {
            return Err(Error::Dimension(format!(
                "reconstruction expects [n, {k}], got {:?}",
                scores.shape()
            )));
        }
        let n = scores.shape()[0];
        let d = self.mean.len();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let s = scores.row(i);
            for j in 0..d {
                out.push(self.mean[j] + (0..k).map(|c| s[c] * self.components.row(c)[j]).sum::<f64>());
            }
        }
        Tensor::matrix(n, d, out)
    }
}

/// Eigen-decomposition of a symmetric row-major `d × d` matrix by cyclic
/// Jacobi rotations. Returns eigenvalues and eigenvectors as columns of a
/// row-major matrix, unsorted.
pub fn jacobi_eigen(matrix: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != d * d {
        return Err(Error::Dimension(format!("expected {d}x{d} matrix, got {} values", matrix.len())));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| a[p * d + q] * a[p * d + q])
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(((0..d).map(|i| a[i * d + i]).collect(), v))
}

/// Top-`k` principal components of `points` `[n × d]`. Each component's
/// largest-magnitude loading is positive.
pub fn pca(points: &Tensor, k: usize) -> Result<PcaResult> {
    if points.rank() != 2 {
        return Err(Error::Dimension(format!("pca expects a matrix, got {:?}", points.shape())));
    }
    let (n, d) = (points.shape()[0], points.shape()[1]);
    if n < 2 {
        return Err(Error::Config(format!("pca needs at least 2 points, got {n}")));
    }
    if k > d {
        return Err(Error::Config(format!("pca k={k} exceeds dimension {d}")));
    }
    if d > JACOBI_MAX_DIM {
        return Err(Error::Config(format!("pca supports at most {JACOBI_MAX_DIM} dimensions, got {d}")));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(points.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let row = points.row(i);
        for a in 0..d {
            let xa = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += xa * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= (n - 1) as f64;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    let (vals, vecs) = jacobi_eigen(&cov, d)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));

    let mut components = Vec::with_capacity(k * d);
    let mut eigenvalues = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut col: Vec<f64> = (0..d).map(|r| vecs[r * d + c]).collect();
        let lead = col
            .iter()
            .copied()
            .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(col);
        eigenvalues.push(vals[c].max(0.0));
    }
    Ok(PcaResult {
        components: Tensor::matrix(k, d, components)?,
        eigenvalues,
        mean,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of midranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("spearman inputs differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::Config(format!("spearman needs at least 3 values, got {}", a.len())));
    }
    let (ra, rb) = (midranks(a), midranks(b));
    let mean = (a.len() + 1) as f64 / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("spearman: zero rank variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// |Spearman| between the first principal component of the embedding and
/// the observed time of uncensored subjects.
pub fn pc1_time_correlation(emb: &Embedding) -> Result<f64> {
    let p = pca(&emb.mu, 1)?;
    let scores = p.project(&emb.mu)?;
    let (pc1, time): (Vec<f64>, Vec<f64>) = (0..emb.len())
        .filter(|&i| emb.table.event()[i])
        .map(|i| (scores.data()[i], emb.table.time()[i]))
        .unzip();
    Ok(spearman(&pc1, &time)?.abs())
}

/// Writes `id,pc1,pc2,time_days,event`.
pub fn export_embedding(emb: &Embedding, pca2: &PcaResult, path: impl AsRef<Path>) -> Result<()> {
    if pca2.k() < 2 {
        return Err(Error::Config(format!("embedding export needs 2 components, got {}", pca2.k())));
    }
    let scores = pca2.project(&emb.mu)?;
    let k = pca2.k();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "pc1", "pc2", "time_days", "event"])?;
    for i in 0..emb.len() {
        let s = &scores.data()[i * k..i * k + 2];
        w.write_record([
            emb.ids[i].to_string(),
            s[0].to_string(),
            s[1].to_string(),
            emb.table.time()[i].to_string(),
            u8::from(emb.table.event()[i]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Decoded images along one latent axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Traversal {
    pub dim: usize,
    pub values: Vec<f64>,
    /// One `side × side` image per value, in [0, 1].
    pub images: Vec<Vec<f64>>,
    pub side: usize,
    pub weight: f64,
    pub hazard: HazardRatio,
}

pub fn grid_values(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![(lo + hi) / 2.0],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

fn image_side(pixels: usize) -> Result<usize> {
    let side = (pixels as f64).sqrt().round() as usize;
    if side * side != pixels {
        return Err(Error::Dimension(format!("{pixels} pixels do not form a square image")));
    }
    Ok(side)
}

/// Decodes `z = value · e_dim` for each grid value.
pub fn latent_traversal(ckpt: &Checkpoint, dim: usize, lo: f64, hi: f64, steps: usize) -> Result<Traversal> {
    let net = &ckpt.net;
    let d = net.arch.latent_dim;
    if dim >= d {
        return Err(Error::Config(format!("traversal dimension {dim} out of range for latent size {d}")));
    }
    if steps == 0 || !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("invalid traversal grid [{lo}, {hi}] x {steps}")));
    }
    let side = image_side(net.arch.input_dim)?;
    let values = grid_values(lo, hi, steps);
    let mut z = vec![0.0; steps * d];
    for (i, v) in values.iter().enumerate() {
        z[i * d + dim] = *v;
    }
    let out = net.decode_logits(&Tensor::matrix(steps, d, z)?)?;
    let images = (0..steps)
        .map(|i| {
            out.row(i)
                .iter()
                .map(|&l| match ckpt.config.likelihood {
                    Likelihood::Bernoulli => sigmoid(l),
                    Likelihood::Gaussian => l.clamp(0.0, 1.0),
                })
                .collect()
        })
        .collect();
    let weight = net.cox_weights()[dim];
    Ok(Traversal {
        dim,
        values,
        images,
        side,
        weight,
        hazard: hazard_ratio(weight),
    })
}

fn to_byte(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM of rows of images laid side by side.
pub fn pgm_bytes(rows: &[&Traversal]) -> Vec<u8> {
    let (side, cols) = rows
        .first()
        .map(|t| (t.side, t.images.len()))
        .unwrap_or((0, 0));
    let (width, height) = (side * cols, side * rows.len());
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for t in rows {
        for y in 0..side {
            for img in &t.images {
                out.extend(img[y * side..(y + 1) * side].iter().map(|&p| to_byte(p)));
            }
        }
    }
    out
}

impl Traversal {
    pub fn file_name(&self) -> String {
        format!("traverse_dim{}_w{:+.3}.pgm", self.dim, self.weight)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        pgm_bytes(&[self])
    }
}

/// One PGM per latent dimension, a combined grid and the index CSV.
/// Returns the per-dimension files in order.
pub fn write_traversals(
    ckpt: &Checkpoint,
    dir: impl AsRef<Path>,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let all = (0..ckpt.net.arch.latent_dim)
        .map(|dim| latent_traversal(ckpt, dim, lo, hi, steps))
        .collect::<Result<Vec<_>>>()?;
    let mut index = String::from("dim,weight,hazard_ratio,percent_change\n");
    let mut paths = Vec::with_capacity(all.len());
    for t in &all {
        let path = dir.join(t.file_name());
        fs::write(&path, t.to_pgm())?;
        paths.push(path);
        let _ = writeln!(
            index,
            "{},{},{},{}",
            t.dim,
            t.weight,
            t.hazard.ratio,
            (t.hazard.percent_change * 10.0).round() / 10.0
        );
    }
    fs::write(dir.join(TRAVERSAL_INDEX_FILE), index)?;
    fs::write(dir.join(TRAVERSAL_GRID_FILE), pgm_bytes(&all.iter().collect::<Vec<_>>()))?;
    Ok(paths)
}
