//! Obstacle lattices: regular and perturbed triangular grids of rigid posts.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    /// A `width` x `height` rectangle centered at the origin.
    pub fn centered(width: f64, height: f64) -> Self {
        Bounds {
            min_x: -0.5 * width,
            min_y: -0.5 * height,
            max_x: 0.5 * width,
            max_y: 0.5 * height,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    /// True when a disc of radius `r` around `p` lies inside.
    pub fn contains_disc(&self, p: [f64; 2], r: f64) -> bool {
        p[0] - r >= self.min_x && p[0] + r <= self.max_x && p[1] - r >= self.min_y && p[1] + r <= self.max_y
    }

    /// The rectangle shrunk by `margin` on every side.
    pub fn inset(&self, margin: f64) -> Bounds {
        Bounds {
            min_x: self.min_x + margin,
            min_y: self.min_y + margin,
            max_x: self.max_x - margin,
            max_y: self.max_y - margin,
        }
    }

    fn is_valid(&self) -> bool {
        self.min_x.is_finite()
            && self.min_y.is_finite()
            && self.max_x.is_finite()
            && self.max_y.is_finite()
            && self.max_x > self.min_x
            && self.max_y > self.min_y
    }
}

/// Minimum free gap kept between perturbed posts (m); zero only forbids overlap.
pub const DEFAULT_CLEARANCE_MARGIN: f64 = 0.0;

/// A field of identical circular posts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub posts: Vec<[f64; 2]>,
    pub radius: f64,
    pub bounds: Bounds,
    pub spacing: f64,
    pub sigma: f64,
    pub seed: u64,
    #[serde(skip)]
    grid: PostGrid,
}

impl Lattice {
    /// A lattice from explicit post centers.
    pub fn from_posts(
        posts: Vec<[f64; 2]>,
        radius: f64,
        bounds: Bounds,
        spacing: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InfeasibleLattice(format!("post radius must be positive, got {radius}")));
        }
        if !bounds.is_valid() {
            return Err(Error::InfeasibleLattice(format!("degenerate bounds {bounds:?}")));
        }
        if let Some(p) = posts.iter().find(|p| !bounds.contains(**p)) {
            return Err(Error::InfeasibleLattice(format!("post {p:?} outside bounds")));
        }
        let grid = PostGrid::build(&posts, bounds, spacing.max(4.0 * radius));
        Ok(Lattice {
            posts,
            radius,
            bounds,
            spacing,
            sigma,
            seed,
            grid,
        })
    }

    /// The open-water case: bounds but no posts.
    pub fn empty(bounds: Bounds) -> Self {
        Lattice {
            posts: Vec::new(),
            radius: 0.045,
            bounds,
            spacing: 0.25,
            sigma: 0.0,
            seed: 0,
            grid: PostGrid::build(&[], bounds, 0.25),
        }
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Distance from `p` to the nearest post surface; negative inside a post.
    pub fn query_clearance(&self, p: [f64; 2]) -> Result<f64> {
        self.posts
            .iter()
            .map(|c| (p[0] - c[0]).hypot(p[1] - c[1]) - self.radius)
            .min_by(f64::total_cmp)
            .ok_or_else(|| Error::Query("lattice has no posts".into()))
    }

    /// Calls `f` with the index of every post whose center may lie within
    /// `reach` of the box `[lo, hi]`. Order is deterministic.
    #[inline]
    pub(crate) fn for_posts_near(&self, lo: [f64; 2], hi: [f64; 2], reach: f64, mut f: impl FnMut(usize)) {
        self.grid.visit(lo, hi, reach, &mut f);
    }

    /// Text serialization: a header `radius spacing seed sigma`, a bounds
    /// comment, then one `x y` record per post.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {} {}", self.radius, self.spacing, self.seed, self.sigma);
        let b = &self.bounds;
        let _ = writeln!(out, "# bounds {} {} {} {}", b.min_x, b.min_y, b.max_x, b.max_y);
        for p in &self.posts {
            let _ = writeln!(out, "{} {}", p[0], p[1]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("lattice file is empty".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "lattice header needs `radius spacing seed sigma`, got `{header}`"
            )));
        }
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad {what} `{s}` in lattice header")))
        };
        let radius = num(fields[0], "radius")?;
        let spacing = num(fields[1], "spacing")?;
        let seed = fields[2]
            .parse::<u64>()
            .map_err(|_| Error::Format(format!("bad seed `{}` in lattice header", fields[2])))?;
        let sigma = num(fields[3], "sigma")?;

        let mut bounds = None;
        let mut posts = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(vals) = rest.strip_prefix("bounds") {
                    let v: Vec<f64> = vals
                        .split_whitespace()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Format(format!("bad bounds line `{line}`")))?;
                    if v.len() != 4 {
                        return Err(Error::Format(format!("bad bounds line `{line}`")));
                    }
                    bounds = Some(Bounds {
                        min_x: v[0],
                        min_y: v[1],
                        max_x: v[2],
                        max_y: v[3],
                    });
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Format(format!("post record must be `x y`, got `{line}`")));
            };
            posts.push([num(x, "x")?, num(y, "y")?]);
        }
        let bounds = match bounds {
            Some(b) => b,
            None => {
                // Without a bounds record, take the posts' hull plus half a spacing.
                let pad = radius + 0.5 * spacing;
                let mut b = Bounds {
                    min_x: f64::INFINITY,
                    min_y: f64::INFINITY,
                    max_x: f64::NEG_INFINITY,
                    max_y: f64::NEG_INFINITY,
                };
                for p in &posts {
                    b.min_x = b.min_x.min(p[0] - pad);
                    b.min_y = b.min_y.min(p[1] - pad);
                    b.max_x = b.max_x.max(p[0] + pad);
                    b.max_y = b.max_y.max(p[1] + pad);
                }
                b
            }
        };
        Lattice::from_posts(posts, radius, bounds, spacing, sigma, seed)
    }
}

/// Equilateral triangular grid of posts, centred in `bounds`.
///
/// Rows are `spacing * sqrt(3) / 2` apart and alternate rows are shifted by
/// half a spacing. Only posts lying entirely inside the bounds are kept.
pub fn build_regular_lattice(spacing: f64, radius: f64, bounds: Bounds) -> Result<Lattice> {
    if !(radius > 0.0) || !(spacing > 2.0 * radius) || !spacing.is_finite() {
        return Err(Error::InfeasibleLattice(format!(
            "spacing {spacing} m must exceed the post diameter {} m",
            2.0 * radius
        )));
    }
    if !bounds.is_valid() {
        return Err(Error::InfeasibleLattice(format!("degenerate bounds {bounds:?}")));
    }
    let pitch = row_pitch(spacing);
    let [cx, cy] = bounds.center();
    let rows = (0.5 * bounds.height() / pitch).ceil() as i64 + 1;
    let cols = (0.5 * bounds.width() / spacing).ceil() as i64 + 1;
    let mut posts = Vec::new();
    for j in -rows..=rows {
        let y = cy + j as f64 * pitch;
        let shift = if j.rem_euclid(2) == 1 { 0.5 * spacing } else { 0.0 };
        for i in -cols..=cols {
            let p = [cx + i as f64 * spacing + shift, y];
            if bounds.contains_disc(p, radius) {
                posts.push(p);
            }
        }
    }
    Lattice::from_posts(posts, radius, bounds, spacing, 0.0, 0)
}

/// Vertical distance between lattice rows.
pub fn row_pitch(spacing: f64) -> f64 {
    spacing * 3f64.sqrt() / 2.0
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Displaces every post of `base` by an isotropic Gaussian offset.
///
/// Posts are visited in order; each offset is redrawn until the post keeps a
/// free gap of at least `clearance` to every other post and stays inside the
/// bounds.
pub fn build_perturbed_lattice(base: &Lattice, sigma: f64, seed: u64) -> Result<Lattice> {
    build_perturbed_lattice_with_clearance(base, sigma, seed, DEFAULT_CLEARANCE_MARGIN)
}

pub fn build_perturbed_lattice_with_clearance(
    base: &Lattice,
    sigma: f64,
    seed: u64,
    clearance: f64,
) -> Result<Lattice> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Argument(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        let mut out = base.clone();
        out.seed = seed;
        out.sigma = 0.0;
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_dist = 2.0 * base.radius + clearance;
    let mut posts = base.posts.clone();
    for i in 0..posts.len() {
        let origin = base.posts[i];
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cand = [
                origin[0] + normal.sample(&mut rng),
                origin[1] + normal.sample(&mut rng),
            ];
            if !base.bounds.contains_disc(cand, base.radius) {
                continue;
            }
            let clear = posts
                .iter()
                .enumerate()
                .all(|(j, q)| j == i || (cand[0] - q[0]).hypot(cand[1] - q[1]) >= min_dist);
            if clear {
                posts[i] = cand;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasiblePerturbation {
                post: i,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Lattice::from_posts(posts, base.radius, base.bounds, base.spacing, sigma, seed)
}

/// Uniform bucket grid over post centers for broad-phase contact queries.
#[derive(Debug, Clone, Default, PartialEq)]
struct PostGrid {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl PostGrid {
    fn build(posts: &[[f64; 2]], bounds: Bounds, cell: f64) -> Self {
        let nx = ((bounds.width() / cell).ceil() as usize).max(1);
        let ny = ((bounds.height() / cell).ceil() as usize).max(1);
        let origin = [bounds.min_x, bounds.min_y];
        let idx = |p: &[f64; 2]| {
            let ix = (((p[0] - origin[0]) / cell).floor().max(0.0) as usize).min(nx - 1);
            let iy = (((p[1] - origin[1]) / cell).floor().max(0.0) as usize).min(ny - 1);
            iy * nx + ix
        };
        let mut counts = vec![0usize; nx * ny + 1];
        for p in posts {
            counts[idx(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; posts.len()];
        for (i, p) in posts.iter().enumerate() {
            let c = idx(p);
            items[fill[c]] = i;
            fill[c] += 1;
        }
        PostGrid {
            origin,
            cell,
            nx,
            ny,
            starts: counts,
            items,
        }
    }

    #[inline]
    fn visit(&self, lo: [f64; 2], hi: [f64; 2], reach: f64, f: &mut impl FnMut(usize)) {
        if self.items.is_empty() {
            return;
        }
        let to_cell = |v: f64, o: f64, n: usize| -> Option<usize> {
            let c = ((v - o) / self.cell).floor();
            if c < 0.0 {
                Some(0)
            } else if c as usize >= n {
                Some(n - 1)
            } else {
                Some(c as usize)
            }
        };
        // Boxes entirely off the grid still clamp onto the border cells, which
        // hold every post that could be within reach.
        let (Some(x0), Some(x1), Some(y0), Some(y1)) = (
            to_cell(lo[0] - reach, self.origin[0], self.nx),
            to_cell(hi[0] + reach, self.origin[0], self.nx),
            to_cell(lo[1] - reach, self.origin[1], self.ny),
            to_cell(hi[1] + reach, self.origin[1], self.ny),
        ) else {
            return;
        };
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let c = iy * self.nx + ix;
                for &i in &self.items[self.starts[c]..self.starts[c + 1]] {
                    f(i);
                }
            }
        }
    }
}
