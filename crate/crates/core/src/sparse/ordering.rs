//! Fill-reducing elimination orders for matrices whose unknowns live on a
//! structured 2D index grid (possibly a masked subset, possibly periodic).
//!
//! Nested dissection by recursive coordinate bisection: split the bounding
//! box of the current node set along its longer axis, recurse on the two
//! halves, and eliminate the one-line separator last. For periodic grids the
//! wrap row/column are chosen as top-level separators, which reduces the
//! torus to an open grid.

/// Nested-dissection order for nodes at the given (ix, iy) coordinates.
/// Returns `perm` with `perm[k]` = index (into `coords`) eliminated k-th.
pub fn nd_order(coords: &[(u32, u32)]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..coords.len() as u32).collect();
    let mut out = Vec::with_capacity(coords.len());
    recurse(&mut ids, coords, &mut out);
    out
}

/// Nested-dissection order for a periodic (torus) grid: all nodes with
/// ix == 0 or iy == 0 are eliminated last, cutting every wrap coupling.
pub fn nd_order_torus(coords: &[(u32, u32)]) -> Vec<u32> {
    let mut interior = Vec::new();
    let mut ring = Vec::new();
    for (id, &(x, y)) in coords.iter().enumerate() {
        if x == 0 || y == 0 {
            ring.push(id as u32);
        } else {
            interior.push(id as u32);
        }
    }
    let mut out = Vec::with_capacity(coords.len());
    recurse(&mut interior, coords, &mut out);
    ring.sort_unstable_by_key(|&i| (coords[i as usize].1, coords[i as usize].0, i));
    out.extend(ring);
    out
}

fn recurse(ids: &mut Vec<u32>, coords: &[(u32, u32)], out: &mut Vec<u32>) {
    const LEAF: usize = 48;
    if ids.len() <= LEAF {
        // Ties (duplicate coordinates from the complex embedding) break by id,
        // keeping the order fully specified.
        ids.sort_unstable_by_key(|&i| (coords[i as usize].1, coords[i as usize].0, i));
        out.extend(ids.iter());
        return;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (u32::MAX, 0u32, u32::MAX, 0u32);
    for &i in ids.iter() {
        let (x, y) = coords[i as usize];
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let split_x = (x1 - x0) >= (y1 - y0);
    let mid = if split_x {
        x0 + (x1 - x0) / 2
    } else {
        y0 + (y1 - y0) / 2
    };
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut sep = Vec::new();
    for &i in ids.iter() {
        let c = if split_x {
            coords[i as usize].0
        } else {
            coords[i as usize].1
        };
        if c < mid {
            left.push(i);
        } else if c > mid {
            right.push(i);
        } else {
            sep.push(i);
        }
    }
    if left.is_empty() && right.is_empty() {
        // Degenerate strip: nothing to dissect.
        sep.sort_unstable_by_key(|&i| (coords[i as usize].1, coords[i as usize].0, i));
        out.extend(sep);
        return;
    }
    recurse(&mut left, coords, out);
    recurse(&mut right, coords, out);
    sep.sort_unstable_by_key(|&i| (coords[i as usize].1, coords[i as usize].0, i));
    out.extend(sep);
}
