//! Design-rule and connectivity checks on encoded layouts.
//!
//! Rules:
//! - even metals (M4, M6) carry horizontal tracks, odd metals (M3, M5)
//!   vertical tracks;
//! - a via connects the metal directly below it to the metal directly above;
//! - all routed metal forms one connected net that touches every pin.
//!
//! These checks share no code with the router.

use std::fmt;

use crate::layout::{Axis, GridDims, LayerId, LayoutGrid, PinSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// A wire segment runs against its layer's track direction.
    Orthogonality,
    /// A via lacks the metal plate below or above it.
    ViaSupport,
    /// The routed metal splits into more than one component.
    Disconnected,
    /// A pin has no routed metal over it.
    UncoveredPin,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Orthogonality => "orthogonality",
            Rule::ViaSupport => "via-support",
            Rule::Disconnected => "connectivity",
            Rule::UncoveredPin => "pin-coverage",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub layer: LayerId,
    pub x: usize,
    pub y: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} at ({}, {}): {}",
            self.rule, self.layer, self.x, self.y, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DrcReport {
    pub violations: Vec<Violation>,
}

impl DrcReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Flags wires that run across their layer's track direction.
///
/// On a vertical metal, two horizontally adjacent pixels are a violation
/// unless both continue vertically (two parallel tracks side by side are
/// legal). Horizontal metals are checked symmetrically. Isolated single
/// pixels are legal everywhere.
pub fn check_orthogonality(grid: &LayoutGrid) -> Vec<Violation> {
    let dims = grid.dims();
    let mut out = Vec::new();
    for layer in LayerId::METALS {
        let Some(dir) = layer.track_direction() else {
            continue;
        };
        let on = |x: usize, y: usize| grid.get(layer, x, y);
        // Does (x, y) have a same-layer neighbour along the legal direction?
        let continues = |x: usize, y: usize| match dir {
            Axis::Vertical => (y > 0 && on(x, y - 1)) || (y + 1 < dims.height && on(x, y + 1)),
            Axis::Horizontal => (x > 0 && on(x - 1, y)) || (x + 1 < dims.width && on(x + 1, y)),
        };
        for y in 0..dims.height {
            for x in 0..dims.width {
                if !on(x, y) {
                    continue;
                }
                // Neighbour across the track direction (right or below).
                let (nx, ny) = match dir {
                    Axis::Vertical => (x + 1, y),
                    Axis::Horizontal => (x, y + 1),
                };
                if !dims.contains(nx, ny) || !on(nx, ny) {
                    continue;
                }
                if !(continues(x, y) && continues(nx, ny)) {
                    let across = match dir {
                        Axis::Vertical => "horizontally",
                        Axis::Horizontal => "vertically",
                    };
                    out.push(Violation {
                        rule: Rule::Orthogonality,
                        layer,
                        x,
                        y,
                        message: format!("wire runs {across} to ({nx}, {ny}) on a {dir:?} layer"),
                    });
                }
            }
        }
    }
    out
}

/// Every via pixel needs both of its metal plates at the same location.
pub fn check_via_support(grid: &LayoutGrid) -> Vec<Violation> {
    let dims = grid.dims();
    let mut out = Vec::new();
    for via in LayerId::VIAS {
        let (lower, upper) = via.via_plates().expect("via layer");
        for y in 0..dims.height {
            for x in 0..dims.width {
                if !grid.get(via, x, y) {
                    continue;
                }
                for plate in [lower, upper] {
                    if !grid.get(plate, x, y) {
                        out.push(Violation {
                            rule: Rule::ViaSupport,
                            layer: via,
                            x,
                            y,
                            message: format!("missing {plate} plate"),
                        });
                    }
                }
            }
        }
    }
    out
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// The routed metal must be one component and must cover every pin.
///
/// Same-layer pixels connect only along the layer's track direction; pixels
/// on adjacent metals connect only through an active via at the same spot.
pub fn check_connectivity(grid: &LayoutGrid, pins: &PinSet) -> Vec<Violation> {
    let dims = grid.dims();
    let cells = dims.cells();
    let node = |m: usize, x: usize, y: usize| m * cells + y * dims.width + x;
    let mut sets = DisjointSet::new(LayerId::METALS.len() * cells);

    for (m, &layer) in LayerId::METALS.iter().enumerate() {
        let dir = layer.track_direction().expect("metal layer");
        for y in 0..dims.height {
            for x in 0..dims.width {
                if !grid.get(layer, x, y) {
                    continue;
                }
                let next = match dir {
                    Axis::Horizontal => (x + 1, y),
                    Axis::Vertical => (x, y + 1),
                };
                if dims.contains(next.0, next.1) && grid.get(layer, next.0, next.1) {
                    sets.union(node(m, x, y), node(m, next.0, next.1));
                }
            }
        }
    }
    for (m, via) in LayerId::VIAS.iter().enumerate() {
        let (lower, upper) = via.via_plates().expect("via layer");
        for y in 0..dims.height {
            for x in 0..dims.width {
                if grid.get(*via, x, y) && grid.get(lower, x, y) && grid.get(upper, x, y) {
                    sets.union(node(m, x, y), node(m + 1, x, y));
                }
            }
        }
    }

    let mut out = Vec::new();
    let mut roots: Vec<(usize, LayerId, usize, usize)> = Vec::new();
    for (m, &layer) in LayerId::METALS.iter().enumerate() {
        for y in 0..dims.height {
            for x in 0..dims.width {
                if grid.get(layer, x, y) {
                    let r = sets.find(node(m, x, y));
                    if !roots.iter().any(|e| e.0 == r) {
                        roots.push((r, layer, x, y));
                    }
                }
            }
        }
    }
    if roots.len() > 1 {
        let (_, layer, x, y) = roots[1];
        out.push(Violation {
            rule: Rule::Disconnected,
            layer,
            x,
            y,
            message: format!("routed metal forms {} separate components", roots.len()),
        });
    }

    for p in pins.iter() {
        if !covers(grid, dims, p.x, p.y) {
            out.push(Violation {
                rule: Rule::UncoveredPin,
                layer: LayerId::Pin,
                x: p.x,
                y: p.y,
                message: "no routed metal over pin".into(),
            });
        }
    }
    out
}

fn covers(grid: &LayoutGrid, dims: GridDims, x: usize, y: usize) -> bool {
    dims.contains(x, y) && LayerId::METALS.iter().any(|&m| grid.get(m, x, y))
}

/// Runs every check.
pub fn run_drc(grid: &LayoutGrid, pins: &PinSet) -> DrcReport {
    let mut violations = check_orthogonality(grid);
    violations.extend(check_via_support(grid));
    violations.extend(check_connectivity(grid, pins));
    DrcReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Pin;

    fn grid_with(layer: LayerId, pixels: &[(usize, usize)]) -> LayoutGrid {
        let mut g = LayoutGrid::new(GridDims::default());
        for &(x, y) in pixels {
            g.set(layer, x, y, true);
        }
        g
    }

    fn pins(coords: &[(usize, usize)]) -> PinSet {
        PinSet::new(coords.iter().map(|&(x, y)| Pin::new(x, y)), GridDims::default()).unwrap()
    }

    #[test]
    fn vertical_run_on_vertical_layer_is_legal() {
        let g = grid_with(LayerId::M3, &[(3, 3), (3, 4), (3, 5)]);
        assert!(check_orthogonality(&g).is_empty());
    }

    #[test]
    fn horizontal_pair_on_vertical_layer_is_flagged() {
        let g = grid_with(LayerId::M3, &[(3, 3), (4, 3)]);
        let v = check_orthogonality(&g);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::Orthogonality);
        assert_eq!(v[0].layer, LayerId::M3);
    }

    #[test]
    fn horizontal_run_on_horizontal_layer_is_legal() {
        let g = grid_with(LayerId::M4, &[(3, 3), (4, 3), (5, 3)]);
        assert!(check_orthogonality(&g).is_empty());
    }

    #[test]
    fn vertical_pair_on_horizontal_layer_is_flagged() {
        let g = grid_with(LayerId::M6, &[(7, 1), (7, 2)]);
        assert_eq!(check_orthogonality(&g).len(), 1);
    }

    #[test]
    fn parallel_adjacent_tracks_are_legal() {
        let g = grid_with(LayerId::M5, &[(5, 3), (5, 4), (6, 4), (6, 5)]);
        assert!(check_orthogonality(&g).is_empty());
    }

    #[test]
    fn stub_beside_track_is_flagged() {
        let g = grid_with(LayerId::M5, &[(5, 3), (5, 4), (6, 4)]);
        assert_eq!(check_orthogonality(&g).len(), 1);
    }

    #[test]
    fn supported_via_passes() {
        let mut g = grid_with(LayerId::Via3, &[(5, 5)]);
        g.set(LayerId::M3, 5, 5, true);
        g.set(LayerId::M4, 5, 5, true);
        assert!(check_via_support(&g).is_empty());
    }

    #[test]
    fn via_missing_lower_plate() {
        let mut g = grid_with(LayerId::Via3, &[(5, 5)]);
        g.set(LayerId::M4, 5, 5, true);
        let v = check_via_support(&g);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("M3"));
    }

    #[test]
    fn floating_via_misses_both_plates() {
        let g = grid_with(LayerId::Via4, &[(2, 9)]);
        assert_eq!(check_via_support(&g).len(), 2);
    }

    #[test]
    fn empty_route_leaves_pins_uncovered() {
        let g = LayoutGrid::new(GridDims::default());
        let v = check_connectivity(&g, &pins(&[(1, 1), (9, 9)]));
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|v| v.rule == Rule::UncoveredPin));
        assert!(!run_drc(&g, &pins(&[(1, 1), (9, 9)])).passed());
    }

    #[test]
    fn single_branch_covering_both_pins() {
        let g = grid_with(LayerId::M4, &(2..=9).map(|x| (x, 4)).collect::<Vec<_>>());
        assert!(check_connectivity(&g, &pins(&[(2, 4), (9, 4)])).is_empty());
    }

    #[test]
    fn two_disjoint_segments_are_disconnected() {
        let mut pixels: Vec<_> = (2..=4).map(|x| (x, 4)).collect();
        pixels.extend((8..=9).map(|x| (x, 4)));
        let g = grid_with(LayerId::M4, &pixels);
        let v = check_connectivity(&g, &pins(&[(2, 4), (9, 4)]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::Disconnected);
    }

    #[test]
    fn overlap_without_via_is_disconnected() {
        let mut g = grid_with(LayerId::M4, &[(2, 4), (3, 4), (4, 4)]);
        for y in 4..=7 {
            g.set(LayerId::M3, 4, y, true);
        }
        let net = pins(&[(2, 4), (4, 7)]);
        assert_eq!(check_connectivity(&g, &net)[0].rule, Rule::Disconnected);
        g.set(LayerId::Via3, 4, 4, true);
        assert!(run_drc(&g, &net).passed());
    }

    #[test]
    fn dangling_via_fails_once() {
        let mut g = grid_with(LayerId::M4, &(2..=9).map(|x| (x, 4)).collect::<Vec<_>>());
        g.set(LayerId::Via4, 5, 4, true);
        let report = run_drc(&g, &pins(&[(2, 4), (9, 4)]));
        assert!(!report.passed());
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, Rule::ViaSupport);
    }
}
