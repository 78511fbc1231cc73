//! The invariant curve `Ω = {Φ = c}` of the planar example, traced by following
//! the plant flow, parameterized by arc length, and sampled in its intrinsic
//! metric.

use std::io::Write;
use std::sync::Arc;

use crate::dynamics::first_integral;
use crate::error::{Error, Result};
use crate::ode::Rk4;
use crate::par;
use crate::rkhs::CenterSet;

/// Default chord spacing of a traced polyline.
pub const DEFAULT_RESOLUTION: f64 = 1e-3;

/// Tracing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// Internal RK4 step.
    pub step: f64,
    /// Largest accepted miss distance when the orbit returns to the seed.
    pub closure_tol: f64,
    /// Largest accepted `|Φ(p) - c|` on stored points.
    pub level_tol: f64,
    /// Flow time after which the orbit is declared open.
    pub max_time: f64,
    /// Number of step halvings tried when `Φ` drifts.
    pub max_refinements: u32,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            closure_tol: 1e-4,
            level_tol: 1e-6,
            max_time: 1e3,
            max_refinements: 3,
        }
    }
}

/// `x1' = x2 + x1²`, `x2' = -x1`.
fn planar_field(_t: f64, y: &[f64], dy: &mut [f64]) {
    dy[0] = y[1] + y[0] * y[0];
    dy[1] = -y[0];
}

fn grad_first_integral(x: &[f64; 2]) -> [f64; 2] {
    let e = (2.0 * x[1]).exp();
    let bracket = x[1] + x[0] * x[0] - 0.5;
    [2.0 * x[0] * e, e * (1.0 + 2.0 * bracket)]
}

/// Moves `x` onto `Φ = c` along the gradient (a few Newton steps).
fn project_to_level(mut x: [f64; 2], c: f64) -> [f64; 2] {
    for _ in 0..4 {
        let r = first_integral(&x) - c;
        if r.abs() < 1e-15 {
            break;
        }
        let g = grad_first_integral(&x);
        let g2 = g[0] * g[0] + g[1] * g[1];
        if g2 == 0.0 {
            break;
        }
        x[0] -= r * g[0] / g2;
        x[1] -= r * g[1] / g2;
    }
    x
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn lerp(a: &[f64; 2], b: &[f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Closed polyline on a level set, parameterized by cumulative chord length.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPolyline {
    level: f64,
    points: Vec<[f64; 2]>,
    arclengths: Vec<f64>,
    total_length: f64,
    closure_gap: f64,
    spacing: f64,
    level_tol: f64,
}

impl ManifoldPolyline {
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn arclengths(&self) -> &[f64] {
        &self.arclengths
    }

    /// Length `L` of the closed curve, including the segment back to the start.
    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Distance between the seed and the point where the traced orbit returned.
    pub fn closure_gap(&self) -> f64 {
        self.closure_gap
    }

    /// Longest chord between consecutive points (wrapping around).
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn level_tol(&self) -> f64 {
        self.level_tol
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest `|Φ(p) - c|` over stored points.
    pub fn max_level_error(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (first_integral(p) - self.level).abs())
            .fold(0.0, f64::max)
    }

    /// Point at arc length `s` (taken modulo `L`), projected onto the level set.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.rem_euclid(self.total_length);
        let i = match self.arclengths.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => return self.points[i],
            Err(i) => i - 1,
        };
        let next = (i + 1) % self.points.len();
        let end = if next == 0 { self.total_length } else { self.arclengths[next] };
        let t = (s - self.arclengths[i]) / (end - self.arclengths[i]);
        project_to_level(lerp(&self.points[i], &self.points[next], t), self.level)
    }

    /// Arc length of the point on the polyline closest to `x`.
    pub fn locate(&self, x: &[f64; 2]) -> f64 {
        let n = self.points.len();
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n {
            let a = &self.points[i];
            let b = &self.points[(i + 1) % n];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = (((x[0] - a[0]) * ab[0] + (x[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
            let d = dist(&lerp(a, b, t), x);
            if d < best.0 {
                let seg = if i + 1 == n { self.total_length - self.arclengths[i] } else { self.arclengths[i + 1] - self.arclengths[i] };
                best = (d, (self.arclengths[i] + t * seg) % self.total_length);
            }
        }
        best.1
    }

    /// CSV with columns `s, x1, x2, phi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["s", "x1", "x2", "phi"])?;
        for (p, s) in self.points.iter().zip(&self.arclengths) {
            out.write_record(&[
                s.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                first_integral(p).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Traces `{Φ = c}` from `seed` with default [`TraceOptions`].
pub fn trace_level_set(c: f64, seed: [f64; 2], resolution: f64) -> Result<ManifoldPolyline> {
    trace_level_set_with(c, seed, resolution, &TraceOptions::default())
}

pub fn trace_level_set_with(
    c: f64,
    seed: [f64; 2],
    resolution: f64,
    opts: &TraceOptions,
) -> Result<ManifoldPolyline> {
    if !(resolution > 0.0) {
        return Err(Error::Input(format!("resolution must be positive, got {resolution}")));
    }
    let seed_drift = (first_integral(&seed) - c).abs();
    if seed_drift > opts.level_tol {
        return Err(Error::Input(format!(
            "seed is off the level set: |phi - c| = {seed_drift:e}"
        )));
    }
    let mut velocity = [0.0; 2];
    planar_field(0.0, &seed, &mut velocity);
    let speed = (velocity[0].powi(2) + velocity[1].powi(2)).sqrt();
    if speed < 1e-12 {
        return Err(Error::NotClosed("seed is an equilibrium of the flow".into()));
    }
    let normal = [velocity[0] / speed, velocity[1] / speed];

    let mut step = opts.step;
    let mut last_err = None;
    for _ in 0..=opts.max_refinements {
        match follow_orbit(c, seed, normal, step, opts) {
            Ok((raw, gap)) => return Ok(resample(c, raw, gap, resolution, opts.level_tol)),
            Err(e @ Error::Accuracy { .. }) => {
                last_err = Some(e);
                step *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Integrates the flow from `seed` until it crosses the section through the
/// seed (normal to the initial velocity) again. Returns the raw orbit, without
/// the return point, and the return miss distance.
fn follow_orbit(
    c: f64,
    seed: [f64; 2],
    normal: [f64; 2],
    step: f64,
    opts: &TraceOptions,
) -> Result<(Vec<[f64; 2]>, f64)> {
    let section = |y: &[f64]| (y[0] - seed[0]) * normal[0] + (y[1] - seed[1]) * normal[1];
    let max_steps = (opts.max_time / step).ceil() as usize;
    let mut rk = Rk4::new(2);
    let mut raw = vec![seed];
    let mut y = seed;
    let mut far = 0.0f64;
    for k in 0..max_steps {
        let prev = y;
        rk.step(&mut planar_field, k as f64 * step, &mut y, step);
        if !(y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::NotClosed("orbit escaped to infinity".into()));
        }
        let drift = (first_integral(&y) - c).abs();
        if drift > opts.level_tol {
            return Err(Error::Accuracy {
                drift,
                tolerance: opts.level_tol,
            });
        }
        far = far.max(dist(&y, &seed));
        let crossed = section(&prev) < 0.0 && section(&y) >= 0.0;
        if crossed && dist(&y, &seed) < 0.5 * far {
            // locate the crossing inside the last step by bisection on the sub-step
            let (mut lo, mut hi) = (0.0, step);
            let mut hit = y;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let mut z = prev;
                rk.step(&mut planar_field, 0.0, &mut z, mid);
                if section(&z) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                    hit = z;
                }
            }
            let gap = dist(&hit, &seed);
            if gap > opts.closure_tol {
                return Err(Error::NotClosed(format!(
                    "orbit returned {gap:e} away from the seed (tolerance {:e})",
                    opts.closure_tol
                )));
            }
            return Ok((raw, gap));
        }
        raw.push(y);
    }
    Err(Error::NotClosed(format!(
        "no return to the seed within flow time {}",
        opts.max_time
    )))
}

fn resample(c: f64, raw: Vec<[f64; 2]>, gap: f64, resolution: f64, level_tol: f64) -> ManifoldPolyline {
    let m = raw.len();
    let mut cum = Vec::with_capacity(m);
    cum.push(0.0);
    for w in raw.windows(2) {
        cum.push(cum.last().unwrap() + dist(&w[0], &w[1]));
    }
    let raw_length = cum[m - 1] + dist(&raw[m - 1], &raw[0]);
    let count = (raw_length / resolution).ceil().max(4.0) as usize;

    let mut points = Vec::with_capacity(count);
    let mut seg = 0usize;
    for j in 0..count {
        let s = j as f64 * raw_length / count as f64;
        while seg + 1 < m && cum[seg + 1] <= s {
            seg += 1;
        }
        let (a, b, end) = if seg + 1 < m {
            (&raw[seg], &raw[seg + 1], cum[seg + 1])
        } else {
            (&raw[m - 1], &raw[0], raw_length)
        };
        let t = (s - cum[seg]) / (end - cum[seg]);
        points.push(project_to_level(lerp(a, b, t), c));
    }

    let mut arclengths = Vec::with_capacity(count);
    arclengths.push(0.0);
    let mut spacing = 0.0f64;
    for w in points.windows(2) {
        let d = dist(&w[0], &w[1]);
        spacing = spacing.max(d);
        arclengths.push(arclengths.last().unwrap() + d);
    }
    let closing = dist(&points[count - 1], &points[0]);
    spacing = spacing.max(closing);
    let total_length = arclengths[count - 1] + closing;

    ManifoldPolyline {
        level: c,
        points,
        arclengths,
        total_length,
        closure_gap: gap,
        spacing,
        level_tol,
    }
}

/// Centers on the manifold together with their arc-length positions.
#[derive(Debug, Clone)]
pub struct ManifoldSamples {
    pub centers: Arc<CenterSet>,
    pub arclengths: Vec<f64>,
}

impl ManifoldSamples {
    pub fn len(&self) -> usize {
        self.arclengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arclengths.is_empty()
    }
}

fn samples_from(points: Vec<[f64; 2]>, arclengths: Vec<f64>) -> Result<ManifoldSamples> {
    let flat = points.iter().flat_map(|p| p.iter().copied()).collect();
    Ok(ManifoldSamples {
        centers: Arc::new(CenterSet::from_flat(2, flat)?),
        arclengths,
    })
}

/// `n` points at arc lengths `j L / n`, `j = 0..n`.
pub fn uniform_samples(m: &ManifoldPolyline, n: usize) -> Result<ManifoldSamples> {
    if n == 0 {
        return Err(Error::Input("need at least one sample".into()));
    }
    let max = m.len() / 4;
    if n > max {
        return Err(Error::Resolution { requested: n, max });
    }
    let arclengths: Vec<f64> = (0..n).map(|j| j as f64 * m.total_length() / n as f64).collect();
    let points = arclengths.iter().map(|&s| m.point_at(s)).collect();
    samples_from(points, arclengths)
}

/// `n` plant states `x(j Δt)`, `j = 0..n`, starting from the polyline's first
/// point. This is the data-driven alternative to [`uniform_samples`].
pub fn trajectory_samples(m: &ManifoldPolyline, n: usize, interval: f64) -> Result<ManifoldSamples> {
    if n == 0 {
        return Err(Error::Input("need at least one sample".into()));
    }
    if !(interval > 0.0) {
        return Err(Error::Input(format!("sampling interval must be positive, got {interval}")));
    }
    let sub = (interval / 1e-3).ceil().max(1.0) as usize;
    let h = interval / sub as f64;
    let mut rk = Rk4::new(2);
    let mut y = m.points()[0];
    let mut points = Vec::with_capacity(n);
    let mut t = 0.0;
    for _ in 0..n {
        let p = project_to_level(y, m.level());
        points.push(p);
        for _ in 0..sub {
            rk.step(&mut planar_field, t, &mut y, h);
            t += h;
        }
    }
    let arclengths = par::map(&points, |p| m.locate(p));
    samples_from(points, arclengths)
}

/// Geodesic distance on the closed curve between arc lengths `s1` and `s2`.
pub fn intrinsic_distance(m: &ManifoldPolyline, s1: f64, s2: f64) -> Result<f64> {
    let l = m.total_length();
    for s in [s1, s2] {
        if !(0.0..=l).contains(&s) {
            return Err(Error::Input(format!("arc length {s} outside [0, {l}]")));
        }
    }
    Ok(wrapped(s1, s2, l))
}

#[inline]
fn wrapped(s1: f64, s2: f64, l: f64) -> f64 {
    let d = (s1 - s2).abs();
    d.min(l - d)
}

/// `sup_{x ∈ Ω} min_i d(x, ξ_i)` evaluated by exhaustive search over the
/// polyline points.
pub fn fill_distance(m: &ManifoldPolyline, samples: &ManifoldSamples) -> Result<f64> {
    if samples.is_empty() || samples.centers.len() != samples.len() {
        return Err(Error::Input("samples must be nonempty and carry one arc length each".into()));
    }
    for (p, &s) in samples.centers.iter().zip(&samples.arclengths) {
        let drift = (first_integral(p) - m.level()).abs();
        if drift > m.level_tol() {
            return Err(Error::Input(format!(
                "sample ({}, {}) is off the manifold: |phi - c| = {drift:e}",
                p[0], p[1]
            )));
        }
        if !(0.0..=m.total_length()).contains(&s) {
            return Err(Error::Input(format!("sample arc length {s} out of range")));
        }
    }
    let l = m.total_length();
    let dense = m.arclengths();
    let targets = &samples.arclengths;
    Ok(par::max_range(dense.len(), |i| {
        targets
            .iter()
            .map(|&t| wrapped(dense[i], t, l))
            .fold(f64::INFINITY, f64::min)
    }))
}
