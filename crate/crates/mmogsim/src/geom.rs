//! Plane geometry primitives shared by the workload and overlay code.

/// A point in the virtual world, in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// A closed disk; used both for hotspots and for AOIs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub center: Point,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Point, radius: f64) -> Self {
        Disk { center, radius }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.center.dist2(p) <= self.radius * self.radius
    }

    /// Strict interior test (boundary excluded).
    pub fn contains_strict(&self, p: &Point) -> bool {
        self.center.dist2(p) < self.radius * self.radius
    }

    /// True when the disk and the axis-aligned rectangle
    /// `[x0, x1] x [y0, y1]` share at least one point.
    pub fn intersects_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        let cx = self.center.x.clamp(x0, x1);
        let cy = self.center.y.clamp(y0, y1);
        let dx = self.center.x - cx;
        let dy = self.center.y - cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Uniform-cell spatial index over dynamic point sets; rebuilt per step.
///
/// Cell size is chosen by the caller (typically the query radius), so a
/// radius query touches at most a 3x3 block of cells.
pub struct SpatialGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<(u32, Point)>>,
}

impl SpatialGrid {
    pub fn new(width: f64, height: f64, cell: f64) -> Self {
        let cell = cell.max(1.0);
        let cols = (width / cell).ceil().max(1.0) as usize;
        let rows = (height / cell).ceil().max(1.0) as usize;
        SpatialGrid {
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
        }
    }

    fn bucket_of(&self, p: &Point) -> usize {
        let cx = ((p.x / self.cell) as usize).min(self.cols - 1);
        let cy = ((p.y / self.cell) as usize).min(self.rows - 1);
        cy * self.cols + cx
    }

    pub fn clear(&mut self) {
        for b in &mut self.buckets {
            b.clear();
        }
    }

    pub fn insert(&mut self, id: u32, p: Point) {
        let b = self.bucket_of(&p);
        self.buckets[b].push((id, p));
    }

    /// Count of inserted points within `radius` of `p` (boundary included).
    pub fn count_within(&self, p: &Point, radius: f64) -> u32 {
        let mut n = 0u32;
        self.for_each_within(p, radius, |_, _| n += 1);
        n
    }

    /// Visit every inserted point within `radius` of `p` in insertion-scan
    /// order (deterministic for a fixed build sequence).
    pub fn for_each_within<F: FnMut(u32, &Point)>(&self, p: &Point, radius: f64, mut f: F) {
        let r2 = radius * radius;
        let span = (radius / self.cell).ceil() as isize;
        let cx = (p.x / self.cell) as isize;
        let cy = (p.y / self.cell) as isize;
        for gy in (cy - span).max(0)..=(cy + span).min(self.rows as isize - 1) {
            for gx in (cx - span).max(0)..=(cx + span).min(self.cols as isize - 1) {
                let b = gy as usize * self.cols + gx as usize;
                for (id, q) in &self.buckets[b] {
                    if p.dist2(q) <= r2 {
                        f(*id, q);
                    }
                }
            }
        }
    }
}
