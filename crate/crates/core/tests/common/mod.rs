//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the code paths it checks: hulls are rebuilt by
//! gift wrapping, DBSCAN by brute force plus union-find, special functions
//! by adaptive quadrature with `statrs` normalizers.

#![allow(dead_code)]

use predsurf::Point2;

// ---------------------------------------------------------------------------
// geometry

fn orient(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Jarvis march; returns hull vertices counter-clockwise (collinear points
/// skipped in favor of the farthest one).
pub fn gift_wrap(points: &[Point2]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let start = pts[0];
    let mut hull = vec![start];
    let mut current = start;
    loop {
        let mut cand = if pts[0] == current { pts[1] } else { pts[0] };
        for &r in &pts {
            if r == current {
                continue;
            }
            let c = orient(current, cand, r);
            if c < 0.0 || (c == 0.0 && dist2(current, r) > dist2(current, cand)) {
                cand = r;
            }
        }
        if cand == start || hull.len() > pts.len() {
            break;
        }
        hull.push(cand);
        current = cand;
    }
    hull
}

pub fn shoelace(v: &[(f64, f64)]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..v.len() {
        let (x0, y0) = v[i];
        let (x1, y1) = v[(i + 1) % v.len()];
        s += (x1 - x0) * (y1 + y0);
    }
    (s / 2.0).abs()
}

pub fn gift_wrap_area(points: &[Point2]) -> f64 {
    shoelace(&gift_wrap(points))
}

// ---------------------------------------------------------------------------
// clustering

pub const NOISE: i64 = -1;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Brute-force DBSCAN: core flags from the full distance matrix, clusters as
/// connected components of the core graph, ordered by their lowest core
/// index; a border point joins the lowest-ordered adjacent component.
pub fn naive_dbscan(points: &[Point2], eps: f64, min_samples: usize) -> (Vec<i64>, Vec<bool>) {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let dx = points[i].x - points[j].x;
        let dy = points[i].y - points[j].y;
        dx * dx + dy * dy <= eps * eps
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_samples)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    let mut comp_id = vec![NOISE; n];
    let mut next = 0;
    let mut root_id = std::collections::HashMap::new();
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let id = *root_id.entry(r).or_insert_with(|| {
                next += 1;
                next - 1
            });
            comp_id[i] = id;
        }
    }

    let labels = (0..n)
        .map(|i| {
            if core[i] {
                comp_id[i]
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| comp_id[j])
                    .min()
                    .unwrap_or(NOISE)
            }
        })
        .collect();
    (labels, core)
}

/// Relabel clusters by order of first appearance.
pub fn canonical(labels: &[i64]) -> Vec<i64> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                NOISE
            } else {
                let k = map.len() as i64;
                *map.entry(l).or_insert(k)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// numerics

fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

struct Segment {
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    fm: f64,
    whole: f64,
}

fn adaptive(f: &dyn Fn(f64) -> f64, s: Segment, tol: f64, depth: u32) -> f64 {
    let m = (s.a + s.b) / 2.0;
    let flm = f((s.a + m) / 2.0);
    let frm = f((m + s.b) / 2.0);
    let left = simpson(s.a, s.fa, m, s.fm, flm);
    let right = simpson(m, s.fm, s.b, s.fb, frm);
    let delta = left + right - s.whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    let l = Segment {
        a: s.a,
        fa: s.fa,
        b: m,
        fb: s.fm,
        fm: flm,
        whole: left,
    };
    let r = Segment {
        a: m,
        fa: s.fm,
        b: s.b,
        fb: s.fb,
        fm: frm,
        whole: right,
    };
    adaptive(f, l, tol / 2.0, depth - 1) + adaptive(f, r, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f((a + b) / 2.0));
    let whole = simpson(a, fa, b, fb, fm);
    adaptive(
        f,
        Segment {
            a,
            fa,
            b,
            fb,
            fm,
            whole,
        },
        tol,
        50,
    )
}

/// `I_x(a, b)` from its defining integral, substituting `t = u^2` to remove
/// the `t^(a-1)` endpoint singularity for `a >= 1/2`.
pub fn incomplete_beta_by_quadrature(a: f64, b: f64, x: f64) -> f64 {
    let ln_b = statrs::function::beta::ln_beta(a, b);
    let f = move |u: f64| {
        if u == 0.0 {
            return if a == 0.5 { 2.0 * (-ln_b).exp() } else { 0.0 };
        }
        let t = u * u;
        2.0 * ((2.0 * a - 1.0) * u.ln() + (b - 1.0) * (1.0 - t).ln() - ln_b).exp()
    };
    integrate(&f, 0.0, x.sqrt(), 1e-13)
}

/// Two-sided Student-t tail `P(|T| >= |t|) = 1 - 2 * integral_0^|t| density`.
pub fn t_two_sided_by_quadrature(t: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_norm =
        ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = move |s: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + s * s / df).ln()).exp();
    1.0 - 2.0 * integrate(&density, 0.0, t.abs(), 1e-13)
}

/// Textbook two-pass sample variance.
pub fn two_pass_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mut mean = 0.0;
    for x in v {
        mean += x;
    }
    mean /= n;
    let mut ss = 0.0;
    for x in v {
        ss += (x - mean).powi(2);
    }
    ss / (n - 1.0)
}

/// Sample variance from all pairwise differences.
pub fn pairwise_variance(v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += (v[i] - v[j]).powi(2);
        }
    }
    s / (n * (n - 1)) as f64
}

/// Pearson's r from raw sums.
pub fn direct_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}
