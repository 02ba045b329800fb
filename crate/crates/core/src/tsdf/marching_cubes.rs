//! Marching-cubes case table derived from face walks.
//!
//! Corners are numbered with the bottom square (z = 0) counter-clockwise
//! from the origin, then the top square above it.
//! A corner is inside when its value is negative. On every face the crossing
//! edges are paired so that each maximal run of inside corners is cut off by
//! one segment; ambiguous faces therefore isolate their inside corners, which
//! both cubes sharing the face agree on. Segments are directed so they chain
//! into closed loops, and each loop is fan-triangulated.

use std::sync::OnceLock;

pub(crate) const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

pub(crate) const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Faces with corners listed counter-clockwise as seen from outside the cube.
const FACES: [[usize; 4]; 6] =
    [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("face corners are cube edges")
}

fn triangles_for(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut next = [usize::MAX; 12];
    for face in FACES {
        for i in 0..4 {
            let (prev, cur) = (face[(i + 3) % 4], face[i]);
            if !inside(cur) || inside(prev) {
                continue;
            }
            let entry = edge_between(prev, cur);
            let mut j = i;
            while inside(face[(j + 1) % 4]) {
                j = (j + 1) % 4;
            }
            let exit = edge_between(face[j], face[(j + 1) % 4]);
            next[entry] = exit;
        }
    }
    let mut seen = [false; 12];
    let mut triangles = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            cycle.push(e as u8);
            e = next[e];
        }
        for k in 1..cycle.len() - 1 {
            triangles.push([cycle[0], cycle[k], cycle[k + 1]]);
        }
    }
    triangles
}

/// Triangles (as local edge triples) for each of the 256 sign cases.
pub(crate) fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(triangles_for).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases_are_empty() {
        assert!(case_table()[0].is_empty());
        assert!(case_table()[255].is_empty());
    }

    #[test]
    fn single_corner_gives_one_triangle() {
        for c in 0..8 {
            assert_eq!(case_table()[1 << c].len(), 1);
            assert_eq!(case_table()[255 ^ (1 << c)].len(), 1);
        }
    }

    #[test]
    fn every_crossing_edge_is_used_and_cycles_close() {
        for (case, tris) in case_table().iter().enumerate() {
            let inside = |c: usize| case >> c & 1 == 1;
            let crossing: Vec<usize> = (0..12).filter(|&e| inside(EDGES[e][0]) != inside(EDGES[e][1])).collect();
            let mut used: Vec<usize> = tris.iter().flatten().map(|e| *e as usize).collect();
            used.sort();
            used.dedup();
            assert_eq!(used, crossing, "case {case}");
        }
    }

    #[test]
    fn complementary_ambiguity_is_resolved_consistently() {
        // Two diagonal inside corners on the bottom face stay separated.
        assert_eq!(case_table()[0b0000_0101].len(), 2);
    }
}
