//! Workspace regions, reachability and the brute-force link-length search.
//!
//! All geometry is in millimetres in the base frame of [`crate::kinematics`].
//! Joint ranges start at zero; the search varies their upper bounds.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Vec2;
use crate::error::{Error, Result, Violation};
use crate::kinematics::{forward_kinematics, JointLimits, PlanarPose};

/// Axis-aligned rectangle, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn contains(&self, p: &PlanarPose) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x_min >= self.x_min && o.x_max <= self.x_max && o.y_min >= self.y_min && o.y_max <= self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    /// Closest point of the rectangle.
    pub fn project(&self, p: &PlanarPose) -> PlanarPose {
        PlanarPose::new(p.x.clamp(self.x_min, self.x_max), p.y.clamp(self.y_min, self.y_max))
    }

    /// Points along the boundary, at most `step` apart, corners included.
    pub fn boundary(&self, step: f64) -> Vec<PlanarPose> {
        let nx = ((self.x_max - self.x_min) / step).ceil().max(1.0) as usize;
        let ny = ((self.y_max - self.y_min) / step).ceil().max(1.0) as usize;
        let mut pts = Vec::with_capacity(2 * (nx + ny));
        for i in 0..nx {
            let x = self.x_min + (self.x_max - self.x_min) * i as f64 / nx as f64;
            pts.push(PlanarPose::new(x, self.y_min));
        }
        for i in 0..ny {
            let y = self.y_min + (self.y_max - self.y_min) * i as f64 / ny as f64;
            pts.push(PlanarPose::new(self.x_max, y));
        }
        for i in 0..nx {
            let x = self.x_max - (self.x_max - self.x_min) * i as f64 / nx as f64;
            pts.push(PlanarPose::new(x, self.y_max));
        }
        for i in 0..ny {
            let y = self.y_max - (self.y_max - self.y_min) * i as f64 / ny as f64;
            pts.push(PlanarPose::new(self.x_min, y));
        }
        pts
    }

    fn violations(&self, field: &str) -> Vec<Violation> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite {
            vec![Violation::new(field, "bounds must be finite")]
        } else if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            vec![Violation::new(field, "rectangle is degenerate (need min < max on both axes)")]
        } else {
            Vec::new()
        }
    }
}

/// Union of rectangles. The empty union is the empty region.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region(pub Vec<Rect>);

impl Region {
    pub fn rect(r: Rect) -> Self {
        Self(vec![r])
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, p: &PlanarPose) -> bool {
        self.0.iter().any(|r| r.contains(p))
    }

    /// Closest point of the region, or `None` if it is empty.
    pub fn project(&self, p: &PlanarPose) -> Option<PlanarPose> {
        self.0.iter().map(|r| r.project(p)).min_by(|a, b| a.distance(p).total_cmp(&b.distance(p)))
    }

    pub fn boundary(&self, step: f64) -> Vec<PlanarPose> {
        self.0.iter().flat_map(|r| r.boundary(step)).collect()
    }
}

/// Body dimensions and task regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkspaceSpec {
    /// Minimum horizontal reach, mm.
    #[serde(rename = "A")]
    pub a: f64,
    /// Harness and actuator offset, mm.
    #[serde(rename = "B")]
    pub b: f64,
    /// Reach range, mm.
    #[serde(rename = "C")]
    pub c: f64,
    /// Workspace breadth, mm.
    #[serde(rename = "D")]
    pub d: f64,
    /// Chest depth, mm.
    #[serde(rename = "E")]
    pub e: f64,
    pub main_region: Rect,
    pub cooperative_region: Region,
    pub human_region: Region,
    /// Largest shoulder angle that keeps link 1 clear of the body, deg.
    pub theta1_limit_deg: f64,
    /// Spacing of the boundary samples used by the constraint checks, mm.
    pub sample_step_mm: f64,
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        let (a, b, c, d, e) = (327.0, 240.0, 150.0, 589.0, 280.0);
        // The plate band sits 28 mm beyond the minimum reach A + B and keeps
        // the depth C. Laterally it runs from 539 mm on the far side of the
        // base to 160 mm toward the user.
        let coop = Rect::new(-539.0, 160.0, a + b + 28.0, a + b + 28.0 + c);
        Self {
            a,
            b,
            c,
            d,
            e,
            main_region: Rect::new(coop.x_min, coop.x_max, a + b, coop.y_max),
            cooperative_region: Region::rect(coop),
            // Torso: breadth D, depth E, in front of the base line on the
            // user's side of the plate band.
            human_region: Region::rect(Rect::new(coop.x_max, coop.x_max + d, 0.0, e)),
            theta1_limit_deg: 65.0,
            sample_step_mm: 2.0,
        }
    }
}

impl WorkspaceSpec {
    /// Minimum and maximum required reach from the base, mm.
    pub fn required_reach(&self) -> (f64, f64) {
        (self.a + self.b, self.a + self.b + self.c)
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = Vec::new();
        for (name, x) in [("A", self.a), ("B", self.b), ("C", self.c), ("D", self.d), ("E", self.e)] {
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("{prefix}.{name}"), "must be > 0"));
            }
        }
        v.extend(self.main_region.violations(&format!("{prefix}.main_region")));
        for (i, r) in self.cooperative_region.0.iter().enumerate() {
            let field = format!("{prefix}.cooperative_region[{i}]");
            let bad = r.violations(&field);
            if bad.is_empty() && !self.main_region.contains_rect(r) {
                v.push(Violation::new(field, "must lie inside main_region"));
            }
            v.extend(bad);
        }
        for (i, r) in self.human_region.0.iter().enumerate() {
            v.extend(r.violations(&format!("{prefix}.human_region[{i}]")));
        }
        if !(self.theta1_limit_deg.is_finite()) {
            v.push(Violation::new(format!("{prefix}.theta1_limit_deg"), "must be finite"));
        }
        if !(self.sample_step_mm.is_finite() && self.sample_step_mm > 0.0) {
            v.push(Violation::new(format!("{prefix}.sample_step_mm"), "must be > 0"));
        }
        v
    }
}

/// Whether `p` is the image of some joint vector inside `limits`.
///
/// Only the θ2 ≥ 0 branch is searched, so the lower θ2 bound must be ≥ 0.
pub fn reachable(l1: f64, l2: f64, limits: &JointLimits, p: &PlanarPose) -> bool {
    let r2 = p.x * p.x + p.y * p.y;
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return false;
    }
    let q2 = c2.acos();
    if q2 < limits.min[1] || q2 > limits.max[1] {
        return false;
    }
    let q1 = p.x.atan2(p.y) + (l2 * q2.sin()).atan2(l1 + l2 * c2);
    q1 >= limits.min[0] && q1 <= limits.max[0]
}

/// Sampled reachable workspace A_W.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    /// Images of the joint grid.
    pub points: Vec<PlanarPose>,
    /// Occupied raster cells (index of the cell whose centre is reachable).
    pub cells: BTreeSet<(i64, i64)>,
    pub cell_mm: f64,
}

/// Raster cell size for area accumulation, mm.
pub const CELL_MM: f64 = 5.0;

impl Workspace {
    pub fn area(&self) -> f64 {
        self.cells.len() as f64 * self.cell_mm * self.cell_mm
    }

    pub fn cell_center(&self, c: (i64, i64)) -> PlanarPose {
        PlanarPose::new((c.0 as f64 + 0.5) * self.cell_mm, (c.1 as f64 + 0.5) * self.cell_mm)
    }
}

fn joint_samples(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).ceil().max(0.0) as usize;
    (0..=n).map(|i| if i == n { hi } else { lo + step * i as f64 }).collect()
}

/// A_W for `limits`, sampled every `grid_step` (rad) in joint space, with
/// occupancy accumulated on a 5 mm raster.
pub fn reachable_workspace(l1: f64, l2: f64, limits: &JointLimits, grid_step: f64) -> Result<Workspace> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::OutOfRange { what: "grid_step", value: grid_step, min: 0.0, max: f64::INFINITY });
    }
    let mut points = Vec::new();
    for &a in &joint_samples(limits.min[0], limits.max[0], grid_step) {
        for &b in &joint_samples(limits.min[1], limits.max[1], grid_step) {
            points.push(forward_kinematics(l1, l2, &Vec2::new(a, b)));
        }
    }
    let mut cells = BTreeSet::new();
    let h = CELL_MM;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    // The sampled points can miss the outermost arcs by up to the chord sag.
    let pad = (l1 + l2) * (1.0 - (grid_step / 2.0).cos()) + h;
    for i in ((x0 - pad) / h).floor() as i64..=((x1 + pad) / h).ceil() as i64 {
        for j in ((y0 - pad) / h).floor() as i64..=((y1 + pad) / h).ceil() as i64 {
            let c = PlanarPose::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            if reachable(l1, l2, limits, &c) {
                cells.insert((i, j));
            }
        }
    }
    Ok(Workspace { points, cells, cell_mm: h })
}

/// Outcome of the three body constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    /// Link 1 stays clear of the body: θ1_max within the allowed sweep.
    pub shoulder_clear: bool,
    /// A_C ⊂ A_W.
    pub covers_cooperative: bool,
    /// A_W ∩ A_H = ∅.
    pub avoids_human: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.shoulder_clear && self.covers_cooperative && self.avoids_human
    }
}

/// Boundary of the joint box mapped through the forward kinematics.
fn workspace_boundary(l1: f64, l2: f64, limits: &JointLimits, step_mm: f64) -> Vec<PlanarPose> {
    // Joint step chosen so neighbouring images are at most `step_mm` apart.
    let dq = (step_mm / (l1 + l2)).min(0.01);
    let mut pts = Vec::new();
    for &a in &joint_samples(limits.min[0], limits.max[0], dq) {
        pts.push(forward_kinematics(l1, l2, &Vec2::new(a, limits.min[1])));
        pts.push(forward_kinematics(l1, l2, &Vec2::new(a, limits.max[1])));
    }
    for &b in &joint_samples(limits.min[1], limits.max[1], dq) {
        pts.push(forward_kinematics(l1, l2, &Vec2::new(limits.min[0], b)));
        pts.push(forward_kinematics(l1, l2, &Vec2::new(limits.max[0], b)));
    }
    pts
}

fn covers(l1: f64, l2: f64, limits: &JointLimits, samples: &[PlanarPose]) -> bool {
    samples.iter().all(|p| reachable(l1, l2, limits, p))
}

fn avoids(l1: f64, l2: f64, limits: &JointLimits, human: &Region, human_boundary: &[PlanarPose], step: f64) -> bool {
    if human.is_empty() {
        return true;
    }
    // Two planar regions without holes overlap only if a boundary of one
    // meets the other.
    !human_boundary.iter().any(|p| reachable(l1, l2, limits, p))
        && !workspace_boundary(l1, l2, limits, step).iter().any(|p| human.contains(p))
}

/// Samples that decide A_C ⊂ A_W. For θ2 ranges within [0, π] the map from
/// the joint box is one-to-one, so A_W has no holes and the boundary of A_C
/// suffices; otherwise the whole region is rastered.
fn cooperative_samples(spec: &WorkspaceSpec, limits: &JointLimits) -> Vec<PlanarPose> {
    let step = spec.sample_step_mm;
    if limits.min[1] >= 0.0 && limits.max[1] <= std::f64::consts::PI {
        return spec.cooperative_region.boundary(step);
    }
    let mut pts = Vec::new();
    for r in &spec.cooperative_region.0 {
        for &x in &joint_samples(r.x_min, r.x_max, step) {
            for &y in &joint_samples(r.y_min, r.y_max, step) {
                pts.push(PlanarPose::new(x, y));
            }
        }
    }
    pts
}

pub fn check_constraints(l1: f64, l2: f64, limits: &JointLimits, spec: &WorkspaceSpec) -> Feasibility {
    let step = spec.sample_step_mm;
    Feasibility {
        shoulder_clear: limits.max[0] <= spec.theta1_limit_deg.to_radians() + 1e-12,
        covers_cooperative: covers(l1, l2, limits, &cooperative_samples(spec, limits)),
        avoids_human: avoids(l1, l2, limits, &spec.human_region, &spec.human_region.boundary(step), step),
    }
}

/// Inclusive range sampled at a fixed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub const fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.min + self.step * i as f64).collect()
    }

    fn violations(&self, field: &str) -> Vec<Violation> {
        if ![self.min, self.max, self.step].iter().all(|v| v.is_finite()) {
            vec![Violation::new(field, "bounds must be finite")]
        } else if self.step <= 0.0 {
            vec![Violation::new(format!("{field}.step"), "must be > 0")]
        } else if self.min > self.max {
            vec![Violation::new(format!("{field}.min"), "must not exceed max")]
        } else {
            Vec::new()
        }
    }
}

/// Search grid: link lengths in mm, joint upper bounds in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchGrid {
    pub l1: GridAxis,
    pub l2: GridAxis,
    pub theta1_max_deg: GridAxis,
    pub theta2_max_deg: GridAxis,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            l1: GridAxis::new(500.0, 800.0, 2.0),
            l2: GridAxis::new(400.0, 700.0, 2.0),
            theta1_max_deg: GridAxis::new(65.0, 65.0, 5.0),
            theta2_max_deg: GridAxis::new(90.0, 140.0, 5.0),
        }
    }
}

impl SearchGrid {
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut v = self.l1.violations(&format!("{prefix}.l1"));
        v.extend(self.l2.violations(&format!("{prefix}.l2")));
        v.extend(self.theta1_max_deg.violations(&format!("{prefix}.theta1_max_deg")));
        v.extend(self.theta2_max_deg.violations(&format!("{prefix}.theta2_max_deg")));
        if self.l1.min <= 0.0 || self.l2.min <= 0.0 {
            v.push(Violation::new(format!("{prefix}.l1"), "link lengths must be > 0"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceResult {
    pub l1: f64,
    pub l2: f64,
    pub theta1_max: f64,
    pub theta2_max: f64,
    /// Rasterized area of A_W, mm².
    pub area_w: f64,
    pub feasible: Feasibility,
}

impl WorkspaceResult {
    pub fn limits(&self) -> JointLimits {
        JointLimits::from_max_deg(self.theta1_max, self.theta2_max)
    }
}

/// Exhaustive search for the feasible candidate with the smallest l1 + l2
/// (ties: smaller l1, then smaller θ2_max, then smaller θ1_max).
pub fn optimize_workspace(spec: &WorkspaceSpec, grid: &SearchGrid) -> Result<WorkspaceResult> {
    let bad = spec.violations("workspace").into_iter().chain(grid.violations("grid")).collect::<Vec<_>>();
    if !bad.is_empty() {
        return Err(Error::Invalid(bad));
    }
    let l1s = grid.l1.values();
    let l2s = grid.l2.values();
    let mut angles = Vec::new();
    for &t2 in &grid.theta2_max_deg.values() {
        for &t1 in &grid.theta1_max_deg.values() {
            angles.push((t1, t2));
        }
    }
    let step = spec.sample_step_mm;
    let human_boundary = spec.human_region.boundary(step);
    let pairs: Vec<(f64, f64)> = l1s.iter().flat_map(|&a| l2s.iter().map(move |&b| (a, b))).collect();

    let key = |c: &(f64, f64, f64, f64)| (c.0 + c.1, c.0, c.3, c.2);
    let best = pairs
        .par_iter()
        .filter_map(|&(l1, l2)| {
            // Angles are ordered by (θ2, θ1), so the first hit is this pair's best.
            angles.iter().find_map(|&(t1, t2)| {
                let lim = JointLimits::from_max_deg(t1, t2);
                if lim.max[0] > spec.theta1_limit_deg.to_radians() + 1e-12 {
                    return None;
                }
                let ok = covers(l1, l2, &lim, &cooperative_samples(spec, &lim))
                    && avoids(l1, l2, &lim, &spec.human_region, &human_boundary, step);
                ok.then_some((l1, l2, t1, t2))
            })
        })
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2)).then(ka.3.total_cmp(&kb.3))
        })
        .ok_or(Error::NoFeasibleCandidate)?;

    let (l1, l2, t1, t2) = best;
    let lim = JointLimits::from_max_deg(t1, t2);
    let ws = reachable_workspace(l1, l2, &lim, 1f64.to_radians())?;
    Ok(WorkspaceResult {
        l1,
        l2,
        theta1_max: t1,
        theta2_max: t2,
        area_w: ws.area(),
        feasible: check_constraints(l1, l2, &lim, spec),
    })
}

/// Region label of a raster cell, first match wins.
pub fn region_label(spec: &WorkspaceSpec, ws: &Workspace, cell: (i64, i64)) -> Option<&'static str> {
    let p = ws.cell_center(cell);
    if spec.human_region.contains(&p) {
        Some("human")
    } else if spec.cooperative_region.contains(&p) {
        Some("cooperative")
    } else if spec.main_region.contains(&p) {
        Some("main")
    } else if ws.cells.contains(&cell) {
        Some("workspace")
    } else {
        None
    }
}

/// Occupancy raster covering A_W and all configured regions, one row per
/// labelled 5 mm cell: `x_mm,y_mm,region_label`.
pub fn write_occupancy_csv<W: Write>(spec: &WorkspaceSpec, ws: &Workspace, w: W) -> Result<()> {
    let h = ws.cell_mm;
    let mut rects: Vec<Rect> = spec.cooperative_region.0.clone();
    rects.extend(spec.human_region.0.iter().copied());
    rects.push(spec.main_region);
    let mut cells = ws.cells.clone();
    for r in rects {
        for i in (r.x_min / h).floor() as i64..(r.x_max / h).ceil() as i64 {
            for j in (r.y_min / h).floor() as i64..(r.y_max / h).ceil() as i64 {
                cells.insert((i, j));
            }
        }
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x_mm", "y_mm", "region_label"])?;
    for c in cells {
        if let Some(label) = region_label(spec, ws, c) {
            let p = ws.cell_center(c);
            wr.write_record([p.x.to_string(), p.y.to_string(), label.to_string()])?;
        }
    }
    wr.flush()?;
    Ok(())
}
