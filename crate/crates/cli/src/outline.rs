//! Instance outlines for hover hit-testing: the outer pixel-edge boundary of
//! the largest 4-connected component, simplified with Douglas-Peucker.

use std::collections::{HashMap, VecDeque};

use eraser_core::raster::BinaryMask;

/// Simplification tolerance in pixels.
pub const OUTLINE_TOLERANCE: f64 = 1.5;

/// Polygon vertices on pixel corners (pixel (x, y) spans [x, x+1] x [y, y+1]).
pub fn outline(mask: &BinaryMask, tolerance: f64) -> Vec<[f64; 2]> {
    let Some(component) = largest_component(mask) else {
        return Vec::new();
    };
    let ring = trace(&component);
    simplify_closed(&ring, tolerance)
}

/// `[x, y, width, height]` of the set pixels.
pub fn bbox(mask: &BinaryMask) -> Option<[u32; 4]> {
    let mut it = mask.iter_set();
    let (x0, y0) = it.next()?;
    let (mut lx, mut ly, mut hx, mut hy) = (x0, y0, x0, y0);
    for (x, y) in it {
        lx = lx.min(x);
        ly = ly.min(y);
        hx = hx.max(x);
        hy = hy.max(y);
    }
    Some([lx, ly, hx - lx + 1, hy - ly + 1])
}

fn largest_component(mask: &BinaryMask) -> Option<BinaryMask> {
    let (w, h) = mask.dims();
    let mut label = vec![0u32; (w * h) as usize];
    let mut best: Option<(usize, u32)> = None;
    let mut next = 0;
    for (sx, sy) in mask.iter_set() {
        if label[(sy * w + sx) as usize] != 0 {
            continue;
        }
        next += 1;
        let mut size = 0;
        let mut queue = VecDeque::from([(sx, sy)]);
        label[(sy * w + sx) as usize] = next;
        while let Some((x, y)) = queue.pop_front() {
            size += 1;
            let neighbors = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
            for (nx, ny) in neighbors {
                if nx < w && ny < h && mask.get(nx, ny) && label[(ny * w + nx) as usize] == 0 {
                    label[(ny * w + nx) as usize] = next;
                    queue.push_back((nx, ny));
                }
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, next));
        }
    }
    let (_, keep) = best?;
    Some(BinaryMask::from_fn(w, h, |x, y| label[(y * w + x) as usize] == keep))
}

type Corner = (i64, i64);

/// Clockwise (on screen) walk along pixel edges with the component on the
/// right. At corners where two diagonal pixels meet it turns right, which
/// keeps the walk on one 4-connected component.
fn trace(component: &BinaryMask) -> Vec<Corner> {
    let at = |x: i64, y: i64| component.get_signed(x, y);
    let mut edges: HashMap<Corner, Vec<Corner>> = HashMap::new();
    let mut start = None;
    for (x, y) in component.iter_set() {
        let (x, y) = (x as i64, y as i64);
        start.get_or_insert((x, y));
        let mut add = |a: Corner, b: Corner| edges.entry(a).or_default().push(b);
        if !at(x, y - 1) {
            add((x, y), (x + 1, y));
        }
        if !at(x + 1, y) {
            add((x + 1, y), (x + 1, y + 1));
        }
        if !at(x, y + 1) {
            add((x + 1, y + 1), (x, y + 1));
        }
        if !at(x - 1, y) {
            add((x, y + 1), (x, y));
        }
    }
    // iter_set is row-major, so the first pixel is top-most, then left-most
    let start = start.expect("component is non-empty");
    let mut ring = vec![start];
    let mut cur = start;
    let mut heading = (1i64, 0i64);
    loop {
        let outs = &edges[&cur];
        let next = if outs.len() == 1 {
            outs[0]
        } else {
            let right = (-heading.1, heading.0);
            *outs
                .iter()
                .find(|n| (n.0 - cur.0, n.1 - cur.1) == right)
                .unwrap_or(&outs[0])
        };
        heading = (next.0 - cur.0, next.1 - cur.1);
        if next == start {
            break;
        }
        ring.push(next);
        cur = next;
    }
    ring
}

fn point_segment_distance(p: Corner, a: Corner, b: Corner) -> f64 {
    let (px, py) = (p.0 as f64, p.1 as f64);
    let (ax, ay) = (a.0 as f64, a.1 as f64);
    let (dx, dy) = (b.0 as f64 - ax, b.1 as f64 - ay);
    let len_sq = dx * dx + dy * dy;
    if len_sq == 0.0 {
        return (px - ax).hypot(py - ay);
    }
    let t = (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0);
    (px - ax - t * dx).hypot(py - ay - t * dy)
}

fn douglas_peucker(points: &[Corner], tolerance: f64, out: &mut Vec<Corner>) {
    let (first, last) = (points[0], points[points.len() - 1]);
    let mut worst = (0.0, 0);
    for (i, &p) in points.iter().enumerate().take(points.len() - 1).skip(1) {
        let d = point_segment_distance(p, first, last);
        if d > worst.0 {
            worst = (d, i);
        }
    }
    if worst.0 > tolerance {
        douglas_peucker(&points[..=worst.1], tolerance, out);
        douglas_peucker(&points[worst.1..], tolerance, out);
    } else {
        out.push(first);
    }
}

fn simplify_closed(ring: &[Corner], tolerance: f64) -> Vec<[f64; 2]> {
    if ring.len() <= 4 {
        return ring.iter().map(|p| [p.0 as f64, p.1 as f64]).collect();
    }
    // split the loop at the vertex farthest from the start
    let far = (1..ring.len())
        .max_by(|&a, &b| {
            let d = |i: usize| (ring[i].0 - ring[0].0).pow(2) + (ring[i].1 - ring[0].1).pow(2);
            d(a).cmp(&d(b))
        })
        .expect("ring has several vertices");
    let mut closed = ring.to_vec();
    closed.push(ring[0]);
    let mut out = Vec::new();
    douglas_peucker(&closed[..=far], tolerance, &mut out);
    douglas_peucker(&closed[far..], tolerance, &mut out);
    out.into_iter().map(|p| [p.0 as f64, p.1 as f64]).collect()
}

/// Even-odd point-in-polygon test.
pub fn contains(polygon: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = polygon.len();
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + n - 1) % n]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
    }
    inside
}

/// Pixels whose centers fall inside the polygon.
pub fn rasterize(polygon: &[[f64; 2]], width: u32, height: u32) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| contains(polygon, x as f64 + 0.5, y as f64 + 0.5))
}
