//! Synthetic embedding streams under bounded temporal drift, with the
//! generating parameters kept as ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gda_head::argmax_rows;
use crate::stats::{gaussian_kl, gaussian_logpdf, SpdSummary};
use crate::stream::{ClassPrototypes, EmbeddingBatch, DEFAULT_TEMPERATURE};

pub const SPEC_FILE: &str = "drift_spec.txt";
const MAX_DOMAINS: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// Rigid rotation of every class mean in the `(i, j)` coordinate plane.
    Rotation { plane: (usize, usize), total_angle_deg: f64 },
    MeanTranslation { direction: DVector<f64>, magnitude: f64 },
    /// Covariance scale interpolated linearly from `start` to `end`.
    CovarianceInflation { start: f64, end: f64 },
}

impl Trajectory {
    fn name(&self) -> &'static str {
        match self {
            Trajectory::Rotation { .. } => "rotation",
            Trajectory::MeanTranslation { .. } => "mean_translation",
            Trajectory::CovarianceInflation { .. } => "covariance_inflation",
        }
    }

    fn plane(&self) -> (usize, usize) {
        match self {
            Trajectory::Rotation { plane, .. } => *plane,
            _ => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub classes: usize,
    pub dim: usize,
    pub domains: usize,
    pub batches_per_domain: usize,
    pub batch_size: usize,
    pub delta: f64,
    pub seed: u64,
    /// Noise variance inside the drift plane.
    pub plane_variance: f64,
    /// Noise variance in every other coordinate.
    pub noise_variance: f64,
    /// Squared norm of each class mean carried outside the drift plane.
    pub off_plane_fraction: f64,
    pub trajectory: Trajectory,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            classes: 10,
            dim: 32,
            domains: 9,
            batches_per_domain: 5,
            batch_size: 128,
            delta: 0.5,
            seed: 0,
            plane_variance: 0.025,
            noise_variance: 0.012,
            off_plane_fraction: 0.3,
            trajectory: Trajectory::Rotation {
                plane: (0, 1),
                total_angle_deg: 80.0,
            },
        }
    }
}

impl DriftSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn total_batches(&self) -> usize {
        self.domains * self.batches_per_domain
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim < 3 {
            return bad(format!("need dim >= 3, got {}", self.dim));
        }
        if self.domains == 0 || self.batches_per_domain == 0 || self.batch_size == 0 {
            return bad("domains, batches_per_domain and batch_size must be positive".into());
        }
        if u32::try_from(self.total_batches()).is_err() {
            return bad("too many batches".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        for (name, v) in [("plane_variance", self.plane_variance), ("noise_variance", self.noise_variance)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.off_plane_fraction) {
            return bad(format!("off_plane_fraction must lie in [0, 1), got {}", self.off_plane_fraction));
        }
        match &self.trajectory {
            Trajectory::Rotation { plane: (i, j), total_angle_deg } => {
                if i == j || *i >= self.dim || *j >= self.dim {
                    return bad(format!("invalid rotation plane ({i}, {j})"));
                }
                if !total_angle_deg.is_finite() {
                    return bad("rotation angle must be finite".into());
                }
            }
            Trajectory::MeanTranslation { direction, magnitude } => {
                if direction.len() != self.dim || !(direction.norm() > 0.0) {
                    return bad("translation direction must be a nonzero dim-vector".into());
                }
                if !magnitude.is_finite() {
                    return bad("translation magnitude must be finite".into());
                }
            }
            Trajectory::CovarianceInflation { start, end } => {
                if !(*start > 0.0 && *end > 0.0 && start.is_finite() && end.is_finite()) {
                    return bad("inflation scales must be positive".into());
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "classes={}", self.classes)?;
        writeln!(f, "dim={}", self.dim)?;
        writeln!(f, "domains={}", self.domains)?;
        writeln!(f, "batches_per_domain={}", self.batches_per_domain)?;
        writeln!(f, "batch_size={}", self.batch_size)?;
        writeln!(f, "delta={}", self.delta)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "plane_variance={}", self.plane_variance)?;
        writeln!(f, "noise_variance={}", self.noise_variance)?;
        writeln!(f, "off_plane_fraction={}", self.off_plane_fraction)?;
        writeln!(f, "trajectory={}", self.trajectory.name())?;
        match &self.trajectory {
            Trajectory::Rotation { plane, total_angle_deg } => {
                writeln!(f, "plane={},{}", plane.0, plane.1)?;
                writeln!(f, "angle_deg={total_angle_deg}")
            }
            Trajectory::MeanTranslation { direction, magnitude } => {
                let parts: Vec<String> = direction.iter().map(|v| v.to_string()).collect();
                writeln!(f, "direction={}", parts.join(","))?;
                writeln!(f, "magnitude={magnitude}")
            }
            Trajectory::CovarianceInflation { start, end } => {
                writeln!(f, "inflation_start={start}")?;
                writeln!(f, "inflation_end={end}")
            }
        }
    }
}

impl FromStr for DriftSpec {
    type Err = Error;

    /// `key=value` lines; `#` starts a comment; missing keys take defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |key: &str| map.remove(key);
        fn num<T: FromStr>(key: &str, v: Option<String>, default: T) -> Result<T> {
            match v {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}"))),
            }
        }
        let d = DriftSpec::default();
        let mut spec = DriftSpec {
            classes: num("classes", take("classes"), d.classes)?,
            dim: num("dim", take("dim"), d.dim)?,
            domains: num("domains", take("domains"), d.domains)?,
            batches_per_domain: num("batches_per_domain", take("batches_per_domain"), d.batches_per_domain)?,
            batch_size: num("batch_size", take("batch_size"), d.batch_size)?,
            delta: num("delta", take("delta"), d.delta)?,
            seed: num("seed", take("seed"), d.seed)?,
            plane_variance: num("plane_variance", take("plane_variance"), d.plane_variance)?,
            noise_variance: num("noise_variance", take("noise_variance"), d.noise_variance)?,
            off_plane_fraction: num("off_plane_fraction", take("off_plane_fraction"), d.off_plane_fraction)?,
            trajectory: d.trajectory,
        };
        let kind = take("trajectory").unwrap_or_else(|| "rotation".into());
        spec.trajectory = match kind.as_str() {
            "rotation" => {
                let plane = match take("plane") {
                    None => (0, 1),
                    Some(p) => {
                        let ij: Vec<usize> = p
                            .split(',')
                            .map(|x| x.trim().parse())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| Error::Config(format!("bad plane: {p:?}")))?;
                        match ij[..] {
                            [i, j] => (i, j),
                            _ => return Err(Error::Config(format!("plane needs two indices: {p:?}"))),
                        }
                    }
                };
                Trajectory::Rotation {
                    plane,
                    total_angle_deg: num("angle_deg", take("angle_deg"), 80.0)?,
                }
            }
            "mean_translation" => {
                let direction = match take("direction") {
                    None => {
                        let mut e = DVector::zeros(spec.dim);
                        e[0] = 1.0;
                        e
                    }
                    Some(p) => DVector::from_vec(
                        p.split(',')
                            .map(|x| x.trim().parse())
                            .collect::<std::result::Result<Vec<f64>, _>>()
                            .map_err(|_| Error::Config(format!("bad direction: {p:?}")))?,
                    ),
                };
                Trajectory::MeanTranslation {
                    direction,
                    magnitude: num("magnitude", take("magnitude"), 1.0)?,
                }
            }
            "covariance_inflation" => Trajectory::CovarianceInflation {
                start: num("inflation_start", take("inflation_start"), 1.0)?,
                end: num("inflation_end", take("inflation_end"), 2.0)?,
            },
            other => return Err(Error::Config(format!("unknown trajectory {other:?}"))),
        };
        if let Some(key) = map.keys().next() {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// True generating parameters of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTruth {
    pub domain_id: u32,
    pub means: DMatrix<f64>,
    pub covariances: Vec<DMatrix<f64>>,
    pub priors: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub domains: Vec<DomainTruth>,
    /// Labels of every generated sample in stream order.
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct GeneratedStream {
    pub batches: Vec<EmbeddingBatch>,
    pub prototypes: ClassPrototypes,
    pub truth: GroundTruth,
}

fn domain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Class means before any drift: unit vectors whose in-plane parts sit on a
/// circle of radius `sqrt(1 - a)` at evenly spaced angles, with the remaining
/// norm in a random direction orthogonal to the plane.
pub fn base_means(spec: &DriftSpec) -> DMatrix<f64> {
    let (pi, pj) = spec.trajectory.plane();
    let mut rng = domain_rng(spec.seed, 0);
    let radius = (1.0 - spec.off_plane_fraction).sqrt();
    let off = spec.off_plane_fraction.sqrt();
    let mut means = DMatrix::zeros(spec.classes, spec.dim);
    for k in 0..spec.classes {
        let phi = std::f64::consts::TAU * k as f64 / spec.classes as f64;
        let mut u: Vec<f64> = (0..spec.dim - 2).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let mut rest = u.into_iter();
        for j in 0..spec.dim {
            means[(k, j)] = if j == pi {
                radius * phi.cos()
            } else if j == pj {
                radius * phi.sin()
            } else {
                off * rest.next().unwrap()
            };
        }
    }
    means
}

fn base_covariance(spec: &DriftSpec) -> DMatrix<f64> {
    let (pi, pj) = spec.trajectory.plane();
    DMatrix::from_fn(spec.dim, spec.dim, |r, c| match (r == c, r == pi || r == pj) {
        (false, _) => 0.0,
        (true, true) => spec.plane_variance,
        (true, false) => spec.noise_variance,
    })
}

fn domain_truth(spec: &DriftSpec, base: &DMatrix<f64>, cov: &DMatrix<f64>, domain: usize, domains: usize) -> DomainTruth {
    let frac = if domains > 1 {
        domain as f64 / (domains - 1) as f64
    } else {
        0.0
    };
    let (means, sigma) = match &spec.trajectory {
        Trajectory::Rotation { plane: (i, j), total_angle_deg } => {
            let theta = (frac * total_angle_deg).to_radians();
            let mut r = DMatrix::identity(spec.dim, spec.dim);
            r[(*i, *i)] = theta.cos();
            r[(*i, *j)] = -theta.sin();
            r[(*j, *i)] = theta.sin();
            r[(*j, *j)] = theta.cos();
            (base * r.transpose(), &r * cov * r.transpose())
        }
        Trajectory::MeanTranslation { direction, magnitude } => {
            let step = direction.normalize() * (frac * magnitude);
            let mut m = base.clone();
            for mut row in m.row_iter_mut() {
                row += step.transpose();
            }
            (m, cov.clone())
        }
        Trajectory::CovarianceInflation { start, end } => (base.clone(), cov * (start + frac * (end - start))),
    };
    DomainTruth {
        domain_id: domain as u32,
        means,
        covariances: vec![sigma; spec.classes],
        priors: DVector::from_element(spec.classes, 1.0 / spec.classes as f64),
    }
}

fn truth_for(spec: &DriftSpec, domains: usize) -> Vec<DomainTruth> {
    let base = base_means(spec);
    let cov = base_covariance(spec);
    (0..domains).map(|d| domain_truth(spec, &base, &cov, d, domains)).collect()
}

fn max_class_kl(a: &DomainTruth, b: &DomainTruth) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..a.means.nrows() {
        let kl = gaussian_kl(
            &a.means.row(k).transpose(),
            &a.covariances[k],
            &b.means.row(k).transpose(),
            &b.covariances[k],
        )?;
        worst = worst.max(kl);
    }
    Ok(worst)
}

/// Largest per-step KL for a given domain count. Every supported trajectory
/// attains its maximum at the first or the last step.
fn worst_step_kl(spec: &DriftSpec, domains: usize) -> Result<f64> {
    if domains < 2 {
        return Ok(0.0);
    }
    let base = base_means(spec);
    let cov = base_covariance(spec);
    let at = |d| domain_truth(spec, &base, &cov, d, domains);
    let first = max_class_kl(&at(0), &at(1))?;
    let last = max_class_kl(&at(domains - 2), &at(domains - 1))?;
    Ok(first.max(last))
}

/// Smallest domain count whose per-step KL fits the budget.
pub fn minimal_domains(spec: &DriftSpec) -> Result<usize> {
    if worst_step_kl(spec, spec.domains.max(2))? <= spec.delta {
        let (mut lo, mut hi) = (1, spec.domains.max(2));
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if worst_step_kl(spec, mid)? <= spec.delta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Ok(hi);
    }
    let mut hi = spec.domains.max(2);
    while worst_step_kl(spec, hi)? > spec.delta {
        if hi >= MAX_DOMAINS {
            return Ok(MAX_DOMAINS);
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if worst_step_kl(spec, mid)? <= spec.delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Draw a labelled stream. Step indices start at 1 and run across domains;
/// each domain samples from its own RNG substream.
pub fn generate(spec: &DriftSpec) -> Result<GeneratedStream> {
    spec.validate()?;
    let domains = truth_for(spec, spec.domains);
    let mut worst: f64 = 0.0;
    for pair in domains.windows(2) {
        worst = worst.max(max_class_kl(&pair[0], &pair[1])?);
    }
    if worst > spec.delta {
        return Err(Error::InfeasibleDrift {
            max_step_kl: worst,
            budget: spec.delta,
            minimal_domains: minimal_domains(spec)?,
        });
    }

    let mut batches = Vec::with_capacity(spec.total_batches());
    let mut labels = Vec::with_capacity(spec.total_batches() * spec.batch_size);
    let mut step = 1u32;
    for truth in &domains {
        let mut rng = domain_rng(spec.seed, truth.domain_id as u64 + 1);
        let factors: Vec<DMatrix<f64>> = truth
            .covariances
            .iter()
            .map(|c| Cholesky::new(c.clone()).map(|ch| ch.unpack()).ok_or(Error::NotPositiveDefinite))
            .collect::<Result<_>>()?;
        for _ in 0..spec.batches_per_domain {
            let mut x = DMatrix::<f32>::zeros(spec.batch_size, spec.dim);
            let mut y = Vec::with_capacity(spec.batch_size);
            for i in 0..spec.batch_size {
                let k = rng.random_range(0..spec.classes);
                let eps = DVector::from_fn(spec.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = truth.means.row(k).transpose() + &factors[k] * eps;
                for j in 0..spec.dim {
                    x[(i, j)] = z[j] as f32;
                }
                y.push(k as u32);
            }
            labels.extend_from_slice(&y);
            batches.push(EmbeddingBatch::new(step, truth.domain_id, x, Some(y))?);
            step += 1;
        }
    }
    let prototypes = ClassPrototypes::unnamed(domains[0].means.map(|v| v as f32), DEFAULT_TEMPERATURE)?;
    Ok(GeneratedStream {
        batches,
        prototypes,
        truth: GroundTruth { domains, labels },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Largest class-conditional KL between domain `s` and domain `s + 1`.
    pub step_kls: Vec<f64>,
    pub max_kl: f64,
    /// First step whose KL exceeds the budget, or the largest step when none does.
    pub worst_step: Option<usize>,
    pub budget: f64,
    pub passed: bool,
}

impl fmt::Display for DriftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, kl) in self.step_kls.iter().enumerate() {
            writeln!(f, "step {s}->{}: kl={kl:.6}", s + 1)?;
        }
        writeln!(f, "max_kl={:.6} budget={} passed={}", self.max_kl, self.budget, self.passed)
    }
}

pub fn verify_drift_bound(truth: &GroundTruth, delta: f64) -> Result<DriftReport> {
    let step_kls = truth
        .domains
        .windows(2)
        .map(|p| max_class_kl(&p[0], &p[1]))
        .collect::<Result<Vec<_>>>()?;
    let max_kl = step_kls.iter().copied().fold(0.0, f64::max);
    let first_violation = step_kls.iter().position(|&kl| kl > delta);
    let worst_step = first_violation.or_else(|| {
        step_kls
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &kl)| match best {
                Some((_, b)) if b >= kl => best,
                _ => Some((i, kl)),
            })
            .map(|(i, _)| i)
    });
    Ok(DriftReport {
        step_kls,
        max_kl,
        worst_step,
        budget: delta,
        passed: first_violation.is_none(),
    })
}

/// Rebuild the ground truth a spec generates without drawing samples.
pub fn ground_truth_parameters(spec: &DriftSpec) -> Result<Vec<DomainTruth>> {
    spec.validate()?;
    Ok(truth_for(spec, spec.domains))
}

/// Argmax of `ln π_k + ln N(x; μ_k, Σ_k)` under the true parameters.
pub fn bayes_predictions(truth: &DomainTruth, features: &DMatrix<f64>) -> Result<Vec<usize>> {
    let summaries = truth
        .covariances
        .iter()
        .map(|c| SpdSummary::regularized(c, f64::MIN_POSITIVE))
        .collect::<Result<Vec<_>>>()?;
    let k = truth.means.nrows();
    let mut scores = DMatrix::zeros(features.nrows(), k);
    for i in 0..features.nrows() {
        let z = features.row(i).transpose();
        for c in 0..k {
            scores[(i, c)] = truth.priors[c].ln() + gaussian_logpdf(&z, &truth.means.row(c).transpose(), &summaries[c])?;
        }
    }
    Ok(argmax_rows(&scores))
}

/// Sample-weighted accuracy of the Bayes classifier over labelled batches.
pub fn bayes_accuracy(truth: &GroundTruth, batches: &[EmbeddingBatch]) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for b in batches {
        let domain = truth
            .domains
            .iter()
            .find(|d| d.domain_id == b.domain_id())
            .ok_or_else(|| Error::InvalidArgument(format!("no ground truth for domain {}", b.domain_id())))?;
        let labels = b.labels().ok_or(Error::MissingLabels {
            step: b.step_index() as u64,
        })?;
        let pred = bayes_predictions(domain, &b.features_f64())?;
        hits += pred.iter().zip(labels).filter(|(p, y)| **p == **y as usize).count();
        total += labels.len();
    }
    if total == 0 {
        return Err(Error::EmptyStream);
    }
    Ok(hits as f64 / total as f64)
}
