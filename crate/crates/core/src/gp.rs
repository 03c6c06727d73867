//! Squared-exponential Gaussian-process regression.
//!
//! [`posterior`] and [`posterior_covariance_matrix`] are one-shot dense
//! solves. [`GpModel`] conditions one measurement at a time by appending a
//! row to the Cholesky factor, and can keep a fixed query set (usually the
//! test grid) current in `O(t M)` per step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Steps between full refactorizations in [`GpModel`].
pub const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha: f64,
    pub length_scale: f64,
    pub noise_var: f64,
}

impl KernelParams {
    pub fn new(alpha: f64, length_scale: f64, noise_var: f64) -> Result<Self> {
        let p = KernelParams {
            alpha,
            length_scale,
            noise_var,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.alpha) {
            return Err(Error::arg("kernel alpha must be > 0"));
        }
        if !ok(self.length_scale) {
            return Err(Error::arg("kernel length_scale must be > 0"));
        }
        if !ok(self.noise_var) {
            return Err(Error::arg("kernel noise_var must be > 0"));
        }
        Ok(())
    }

    #[inline]
    pub fn prior_var(&self) -> f64 {
        self.alpha * self.alpha
    }

    #[inline]
    pub fn kernel(&self, x: &Point, y: &Point) -> f64 {
        self.prior_var() * (-x.dist2(y) / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

pub fn kernel(params: &KernelParams, x: &Point, y: &Point) -> f64 {
    params.kernel(x, y)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub locations: Vec<Point>,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn new(locations: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        if locations.len() != values.len() {
            return Err(Error::arg(format!(
                "dataset has {} locations but {} values",
                locations.len(),
                values.len()
            )));
        }
        Ok(Dataset { locations, values })
    }

    pub fn push(&mut self, x: Point, y: f64) {
        self.locations.push(x);
        self.values.push(y);
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Posterior {
    pub fn prior(params: &KernelParams, n: usize) -> Self {
        Posterior {
            mean: vec![0.0; n],
            variance: vec![params.prior_var(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std(&self, i: usize) -> f64 {
        self.variance[i].max(0.0).sqrt()
    }
}

pub fn gram(params: &KernelParams, pts: &[Point]) -> DMatrix<f64> {
    let n = pts.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.prior_var();
        for j in 0..i {
            let v = params.kernel(&pts[i], &pts[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `K(a, b)` with rows indexed by `a`.
pub fn cross(params: &KernelParams, a: &[Point], b: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| params.kernel(&a[i], &b[j]))
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky factor of `m`, escalating diagonal jitter on failure.
/// Returns the lower factor and the jitter that was added.
fn factor(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(c) = m.clone().cholesky() {
        return Ok((c.unpack(), 0.0));
    }
    for &j in &JITTER_LADDER {
        let mut mj = m.clone();
        for i in 0..mj.nrows() {
            mj[(i, i)] += j;
        }
        if let Some(c) = mj.cholesky() {
            log::debug!("cholesky needed jitter {j:e}");
            return Ok((c.unpack(), j));
        }
    }
    Err(Error::Numerical {
        condition: condition_estimate(m),
    })
}

fn noisy_gram(params: &KernelParams, pts: &[Point]) -> DMatrix<f64> {
    let mut k = gram(params, pts);
    for i in 0..pts.len() {
        k[(i, i)] += params.noise_var;
    }
    k
}

struct Solved {
    mean: Vec<f64>,
    /// `L^{-1} K(X, Q)`.
    v: DMatrix<f64>,
}

fn solve(params: &KernelParams, data: &Dataset, queries: &[Point]) -> Result<Solved> {
    let (l, _) = factor(&noisy_gram(params, &data.locations))?;
    let kq = cross(params, &data.locations, queries);
    let v = l.solve_lower_triangular(&kq).ok_or(Error::Numerical {
        condition: f64::INFINITY,
    })?;
    let y = DVector::from_column_slice(&data.values);
    let z = l.solve_lower_triangular(&y).ok_or(Error::Numerical {
        condition: f64::INFINITY,
    })?;
    let mean = (v.transpose() * z).iter().cloned().collect();
    Ok(Solved { mean, v })
}

/// Posterior mean and variance at `queries` given `data`.
pub fn posterior(params: &KernelParams, data: &Dataset, queries: &[Point]) -> Result<Posterior> {
    params.validate()?;
    if data.is_empty() {
        return Ok(Posterior::prior(params, queries.len()));
    }
    let s = solve(params, data, queries)?;
    let variance =
        s.v.column_iter()
            .map(|c| (params.prior_var() - c.norm_squared()).max(0.0))
            .collect();
    Ok(Posterior {
        mean: s.mean,
        variance,
    })
}

/// Full posterior covariance over `queries`.
pub fn posterior_covariance_matrix(
    params: &KernelParams,
    data: &Dataset,
    queries: &[Point],
) -> Result<DMatrix<f64>> {
    params.validate()?;
    let kqq = gram(params, queries);
    if data.is_empty() {
        return Ok(kqq);
    }
    let s = solve(params, data, queries)?;
    let sigma = kqq - s.v.transpose() * &s.v;
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// `1/2 ln det(I + K / noise_var)` in nats.
pub fn mutual_information(params: &KernelParams, locations: &[Point]) -> f64 {
    if locations.is_empty() {
        return 0.0;
    }
    let mut b = gram(params, locations) / params.noise_var;
    for i in 0..locations.len() {
        b[(i, i)] += 1.0;
    }
    match b.clone().cholesky() {
        Some(c) => c.l_dirty().diagonal().iter().map(|d| d.ln()).sum(),
        None => {
            0.5 * SymmetricEigen::new(b)
                .eigenvalues
                .iter()
                .map(|l| l.ln())
                .sum::<f64>()
        }
    }
}

/// Posterior kept current at a fixed set of query points.
#[derive(Debug, Clone)]
struct Tracked {
    points: Vec<Point>,
    /// Row `i` holds `(L^{-1} K(X, Q))[i, ..]`, flattened.
    w: Vec<f64>,
    post: Posterior,
}

/// Incrementally conditioned GP.
#[derive(Debug, Clone)]
pub struct GpModel {
    params: KernelParams,
    data: Dataset,
    /// Packed lower-triangular factor of `K + (noise_var + jitter) I`.
    l: Vec<f64>,
    /// `L^{-1} y`.
    z: Vec<f64>,
    jitter: f64,
    refactor_every: usize,
    tracked: Option<Tracked>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl GpModel {
    pub fn new(params: KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(GpModel {
            params,
            data: Dataset::default(),
            l: Vec::new(),
            z: Vec::new(),
            jitter: 0.0,
            refactor_every: REFACTOR_EVERY,
            tracked: None,
        })
    }

    /// A model that also maintains the posterior at `points`.
    pub fn tracking(params: KernelParams, points: Vec<Point>) -> Result<Self> {
        let mut m = GpModel::new(params)?;
        let post = Posterior::prior(&params, points.len());
        m.tracked = Some(Tracked {
            points,
            w: Vec::new(),
            post,
        });
        Ok(m)
    }

    pub fn with_refactor_every(mut self, every: usize) -> Self {
        self.refactor_every = every.max(1);
        self
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior at the tracked points, if any.
    pub fn tracked(&self) -> Option<&Posterior> {
        self.tracked.as_ref().map(|t| &t.post)
    }

    pub fn tracked_points(&self) -> Option<&[Point]> {
        self.tracked.as_ref().map(|t| t.points.as_slice())
    }

    /// Conditions on one more measurement.
    pub fn add(&mut self, x: Point, y: f64) -> Result<()> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::arg("non-finite measurement"));
        }
        self.data.push(x, y);
        let t = self.data.len();
        if t.is_multiple_of(self.refactor_every) || !self.extend() {
            if let Err(e) = self.refactor() {
                self.data.locations.pop();
                self.data.values.pop();
                self.refactor().ok();
                return Err(e);
            }
        }
        Ok(())
    }

    /// Forward substitution `L w = k`.
    fn forward(&self, k: &mut [f64]) {
        for i in 0..k.len() {
            let row = &self.l[row_start(i)..row_start(i) + i + 1];
            let s: f64 = row[..i].iter().zip(&k[..i]).map(|(a, b)| a * b).sum();
            k[i] = (k[i] - s) / row[i];
        }
    }

    /// Appends the newest datum as a factor row; false if it is not
    /// numerically positive.
    fn extend(&mut self) -> bool {
        let t = self.data.len() - 1;
        let x = self.data.locations[t];
        let mut c: Vec<f64> = self.data.locations[..t]
            .iter()
            .map(|p| self.params.kernel(p, &x))
            .collect();
        self.forward(&mut c);
        let d2 = self.params.prior_var() + self.params.noise_var + self.jitter
            - c.iter().map(|v| v * v).sum::<f64>();
        if d2.is_nan() || d2 <= 1e-12 * (self.params.prior_var() + self.params.noise_var) {
            return false;
        }
        let d = d2.sqrt();
        let zt = (self.data.values[t] - c.iter().zip(&self.z).map(|(a, b)| a * b).sum::<f64>()) / d;
        self.l.extend_from_slice(&c);
        self.l.push(d);
        self.z.push(zt);

        if let Some(tr) = self.tracked.as_mut() {
            let m = tr.points.len();
            let mut row: Vec<f64> = tr
                .points
                .iter()
                .map(|q| self.params.kernel(&x, q))
                .collect();
            for (i, ci) in c.iter().enumerate() {
                if *ci == 0.0 {
                    continue;
                }
                let wi = &tr.w[i * m..(i + 1) * m];
                for (r, w) in row.iter_mut().zip(wi) {
                    *r -= ci * w;
                }
            }
            for (j, r) in row.iter_mut().enumerate() {
                *r /= d;
                tr.post.mean[j] += *r * zt;
                tr.post.variance[j] = (tr.post.variance[j] - *r * *r).max(0.0);
            }
            tr.w.extend_from_slice(&row);
        }
        true
    }

    /// Rebuilds the factor, whitened targets and tracked posterior from scratch.
    fn refactor(&mut self) -> Result<()> {
        let t = self.data.len();
        let (lm, jitter) = factor(&noisy_gram(&self.params, &self.data.locations))?;
        self.jitter = jitter;
        self.l.clear();
        for i in 0..t {
            for j in 0..=i {
                self.l.push(lm[(i, j)]);
            }
        }
        let y = DVector::from_column_slice(&self.data.values);
        let z = lm.solve_lower_triangular(&y).ok_or(Error::Numerical {
            condition: f64::INFINITY,
        })?;
        self.z = z.iter().cloned().collect();

        if let Some(tr) = self.tracked.as_mut() {
            let m = tr.points.len();
            let kq = cross(&self.params, &self.data.locations, &tr.points);
            let w = lm.solve_lower_triangular(&kq).ok_or(Error::Numerical {
                condition: f64::INFINITY,
            })?;
            tr.w = Vec::with_capacity(t * m);
            for i in 0..t {
                tr.w.extend(w.row(i).iter());
            }
            for j in 0..m {
                let col = w.column(j);
                tr.post.mean[j] = col.dot(&z);
                tr.post.variance[j] = (self.params.prior_var() - col.norm_squared()).max(0.0);
            }
        }
        Ok(())
    }

    /// Posterior at arbitrary queries using the current factor.
    pub fn posterior(&self, queries: &[Point]) -> Posterior {
        let mut out = Posterior::default();
        for q in queries {
            let mut w: Vec<f64> = self
                .data
                .locations
                .iter()
                .map(|p| self.params.kernel(p, q))
                .collect();
            self.forward(&mut w);
            out.mean
                .push(w.iter().zip(&self.z).map(|(a, b)| a * b).sum());
            out.variance
                .push((self.params.prior_var() - w.iter().map(|v| v * v).sum::<f64>()).max(0.0));
        }
        out
    }
}
