//! Deterministic branch-leg router.
//!
//! The pin spread picks a dominant axis. A single branch runs along that
//! axis on the median track of the pins, and each off-branch pin gets a
//! perpendicular leg. The pair of metals carrying branch and legs is the
//! wire-class combination with the lowest modelled resistance for the
//! route's Manhattan length.

use crate::error::{Error, Result};
use crate::layout::{encode_pins, Axis, GridDims, LayerId, LayoutGrid, PinSet};

/// The pair of adjacent metals used by a route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WireClassCombo {
    M3M4,
    M4M5,
    M5M6,
}

impl WireClassCombo {
    /// Lowest to highest.
    pub const ALL: [WireClassCombo; 3] = [
        WireClassCombo::M3M4,
        WireClassCombo::M4M5,
        WireClassCombo::M5M6,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The metal of this combo running vertically (M3 or M5).
    pub fn vertical_metal(self) -> LayerId {
        match self {
            WireClassCombo::M3M4 => LayerId::M3,
            WireClassCombo::M4M5 | WireClassCombo::M5M6 => LayerId::M5,
        }
    }

    /// The metal of this combo running horizontally (M4 or M6).
    pub fn horizontal_metal(self) -> LayerId {
        match self {
            WireClassCombo::M3M4 | WireClassCombo::M4M5 => LayerId::M4,
            WireClassCombo::M5M6 => LayerId::M6,
        }
    }

    pub fn metal_for(self, axis: Axis) -> LayerId {
        match axis {
            Axis::Horizontal => self.horizontal_metal(),
            Axis::Vertical => self.vertical_metal(),
        }
    }

    pub fn via(self) -> LayerId {
        match self {
            WireClassCombo::M3M4 => LayerId::Via3,
            WireClassCombo::M4M5 => LayerId::Via4,
            WireClassCombo::M5M6 => LayerId::Via5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WireClassCombo::M3M4 => "M3M4",
            WireClassCombo::M4M5 => "M4M5",
            WireClassCombo::M5M6 => "M5M6",
        }
    }
}

/// Linear resistance cost per wire-class combination.
///
/// `cost(c, L) = rate[c] * L + overhead[c]`. Higher combos have cheaper
/// wires and a larger fixed via cost, which yields two break-even lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistanceModel {
    rates: [f64; 3],
    overheads: [f64; 3],
}

impl ResistanceModel {
    pub fn new(rates: [f64; 3], overheads: [f64; 3]) -> Result<ResistanceModel> {
        let finite = rates.iter().chain(&overheads).all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("resistance model values must be finite"));
        }
        if !(rates[0] > rates[1] && rates[1] > rates[2] && rates[2] > 0.0) {
            return Err(Error::validation(format!(
                "wire rates must be positive and strictly decreasing, got {rates:?}"
            )));
        }
        if !(0.0 <= overheads[0] && overheads[0] < overheads[1] && overheads[1] < overheads[2]) {
            return Err(Error::validation(format!(
                "via overheads must be non-negative and strictly increasing, got {overheads:?}"
            )));
        }
        Ok(ResistanceModel { rates, overheads })
    }

    pub fn rates(&self) -> [f64; 3] {
        self.rates
    }

    pub fn overheads(&self) -> [f64; 3] {
        self.overheads
    }

    pub fn cost(&self, combo: WireClassCombo, total_length: usize) -> f64 {
        let i = combo.index();
        self.rates[i] * total_length as f64 + self.overheads[i]
    }
}

impl Default for ResistanceModel {
    /// Break-even lengths at 11 and 22 pixels.
    fn default() -> Self {
        ResistanceModel {
            rates: [1.0, 0.5, 0.25],
            overheads: [0.0, 5.5, 11.0],
        }
    }
}

/// A perpendicular stub from the branch to one pin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leg {
    /// Coordinate along the dominant axis where the leg meets the branch.
    pub position: usize,
    /// Inclusive span on the non-dominant axis; one end is the branch track.
    pub span: (usize, usize),
}

impl Leg {
    pub fn length(&self) -> usize {
        self.span.1 - self.span.0
    }
}

/// Geometry of a branch-leg route before metals are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutePlan {
    pub axis: Axis,
    /// Row of a horizontal branch, column of a vertical one.
    pub branch_coord: usize,
    /// Inclusive extent of the branch along `axis`.
    pub branch_span: (usize, usize),
    pub legs: Vec<Leg>,
    /// Manhattan length: branch extent plus the sum of leg lengths.
    pub total_length: usize,
}

/// Result of a full route, kept for inspection and statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutedNet {
    pub plan: RoutePlan,
    pub combo: WireClassCombo,
    pub layout: LayoutGrid,
}

fn spread(pins: &PinSet, axis: Axis) -> usize {
    let coords = pins.iter().map(|p| p.along(axis));
    let (lo, hi) = coords.fold((usize::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
    hi - lo
}

/// Axis with the larger pin spread; horizontal on ties.
pub fn dominant_axis(pins: &PinSet) -> Axis {
    if spread(pins, Axis::Vertical) > spread(pins, Axis::Horizontal) {
        Axis::Vertical
    } else {
        Axis::Horizontal
    }
}

pub fn plan_geometry(pins: &PinSet) -> RoutePlan {
    let axis = dominant_axis(pins);
    let cross = axis.other();

    // Lower median of the cross coordinates minimizes the summed leg length.
    let mut tracks: Vec<usize> = pins.iter().map(|p| p.along(cross)).collect();
    tracks.sort_unstable();
    let branch_coord = tracks[(tracks.len() - 1) / 2];

    let along = pins.iter().map(|p| p.along(axis));
    let branch_span = along.fold((usize::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));

    let legs: Vec<Leg> = pins
        .iter()
        .filter(|p| p.along(cross) != branch_coord)
        .map(|p| {
            let c = p.along(cross);
            Leg {
                position: p.along(axis),
                span: (c.min(branch_coord), c.max(branch_coord)),
            }
        })
        .collect();

    let total_length =
        (branch_span.1 - branch_span.0) + legs.iter().map(Leg::length).sum::<usize>();

    RoutePlan {
        axis,
        branch_coord,
        branch_span,
        legs,
        total_length,
    }
}

/// Cheapest combo for a route of `total_length` pixels; ties go to the lower combo.
pub fn choose_combo(total_length: usize, model: &ResistanceModel) -> Result<WireClassCombo> {
    if total_length < 1 {
        return Err(Error::validation("route length must be at least 1 pixel"));
    }
    let mut best = WireClassCombo::M3M4;
    for combo in &WireClassCombo::ALL[1..] {
        if model.cost(*combo, total_length) < model.cost(best, total_length) {
            best = *combo;
        }
    }
    Ok(best)
}

/// Draws a plan on the metals of `combo`.
pub fn materialize(
    plan: &RoutePlan,
    combo: WireClassCombo,
    pins: &PinSet,
    dims: GridDims,
) -> Result<LayoutGrid> {
    let mut grid = LayoutGrid::new(dims);
    grid.set_pin_plane(&encode_pins(pins, dims)?)?;

    let axis = plan.axis;
    let branch_metal = combo.metal_for(axis);
    let leg_metal = combo.metal_for(axis.other());
    let via = combo.via();

    // (along, across) -> (x, y)
    let at = |along: usize, across: usize| match axis {
        Axis::Horizontal => (along, across),
        Axis::Vertical => (across, along),
    };
    let in_range = |along: usize, across: usize| {
        let (x, y) = at(along, across);
        dims.contains(x, y)
    };

    let (lo, hi) = plan.branch_span;
    if lo > hi || !in_range(hi, plan.branch_coord) || !in_range(lo, plan.branch_coord) {
        return Err(Error::Internal(format!(
            "branch span {:?} on track {} does not fit the grid",
            plan.branch_span, plan.branch_coord
        )));
    }
    for a in lo..=hi {
        let (x, y) = at(a, plan.branch_coord);
        grid.set(branch_metal, x, y, true);
    }

    for leg in &plan.legs {
        let (s0, s1) = leg.span;
        let meets_branch = s0 == plan.branch_coord || s1 == plan.branch_coord;
        let on_branch = (lo..=hi).contains(&leg.position);
        if !meets_branch || !on_branch || s0 >= s1 || !in_range(leg.position, s1) {
            return Err(Error::Internal(format!(
                "leg at {} spanning {:?} does not meet the branch",
                leg.position, leg.span
            )));
        }
        for c in s0..=s1 {
            let (x, y) = at(leg.position, c);
            grid.set(leg_metal, x, y, true);
        }
        let (x, y) = at(leg.position, plan.branch_coord);
        grid.set(via, x, y, true);
    }

    for p in pins.iter() {
        if !grid.get(branch_metal, p.x, p.y) && !grid.get(leg_metal, p.x, p.y) {
            return Err(Error::Internal(format!(
                "pin ({}, {}) is not reached by the plan",
                p.x, p.y
            )));
        }
    }
    Ok(grid)
}

pub fn route_detailed(pins: &PinSet, model: &ResistanceModel, dims: GridDims) -> Result<RoutedNet> {
    let plan = plan_geometry(pins);
    let combo = choose_combo(plan.total_length, model)?;
    let layout = materialize(&plan, combo, pins, dims)?;
    Ok(RoutedNet {
        plan,
        combo,
        layout,
    })
}

/// Routes a net end to end.
pub fn route(pins: &PinSet, model: &ResistanceModel, dims: GridDims) -> Result<LayoutGrid> {
    route_detailed(pins, model, dims).map(|r| r.layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Pin;

    fn pins(coords: &[(usize, usize)]) -> PinSet {
        PinSet::new(coords.iter().map(|&(x, y)| Pin::new(x, y)), GridDims::default()).unwrap()
    }

    #[test]
    fn dominant_axis_examples() {
        assert_eq!(dominant_axis(&pins(&[(4, 10), (28, 12)])), Axis::Horizontal);
        assert_eq!(dominant_axis(&pins(&[(3, 3), (3, 8)])), Axis::Vertical);
        assert_eq!(dominant_axis(&pins(&[(0, 0), (5, 5)])), Axis::Horizontal);
    }

    #[test]
    fn plan_examples() {
        let p = plan_geometry(&pins(&[(4, 10), (28, 12)]));
        assert_eq!(p.axis, Axis::Horizontal);
        assert_eq!(p.branch_coord, 10);
        assert_eq!(p.branch_span, (4, 28));
        assert_eq!(p.legs, vec![Leg { position: 28, span: (10, 12) }]);
        assert_eq!(p.total_length, 26);

        let p = plan_geometry(&pins(&[(3, 3), (3, 8)]));
        assert_eq!(p.axis, Axis::Vertical);
        assert_eq!(p.branch_coord, 3);
        assert_eq!(p.branch_span, (3, 8));
        assert!(p.legs.is_empty());
        assert_eq!(p.total_length, 5);

        let p = plan_geometry(&pins(&[(0, 0), (5, 5)]));
        assert_eq!(p.axis, Axis::Horizontal);
        assert_eq!(p.branch_coord, 0);
        assert_eq!(p.branch_span, (0, 5));
        assert_eq!(p.legs, vec![Leg { position: 5, span: (0, 5) }]);
        assert_eq!(p.total_length, 10);
    }

    #[test]
    fn combo_examples() {
        let m = ResistanceModel::default();
        assert_eq!(choose_combo(5, &m).unwrap(), WireClassCombo::M3M4);
        assert_eq!(choose_combo(11, &m).unwrap(), WireClassCombo::M3M4);
        assert_eq!(choose_combo(12, &m).unwrap(), WireClassCombo::M4M5);
        assert_eq!(choose_combo(22, &m).unwrap(), WireClassCombo::M4M5);
        assert_eq!(choose_combo(23, &m).unwrap(), WireClassCombo::M5M6);
        assert_eq!(choose_combo(24, &m).unwrap(), WireClassCombo::M5M6);
        assert!(choose_combo(0, &m).is_err());
    }

    #[test]
    fn model_invariants_are_enforced() {
        assert!(ResistanceModel::new([1.0, 1.0, 0.5], [0.0, 1.0, 2.0]).is_err());
        assert!(ResistanceModel::new([1.0, 0.5, 0.25], [0.0, 0.0, 2.0]).is_err());
        assert!(ResistanceModel::new([1.0, 0.5, 0.25], [-1.0, 0.0, 2.0]).is_err());
        assert!(ResistanceModel::new([1.0, 0.5, 0.25], [0.0, 5.5, 11.0]).is_ok());
    }

    #[test]
    fn vertical_two_pin_route() {
        let g = route(&pins(&[(3, 3), (3, 8)]), &ResistanceModel::default(), GridDims::default())
            .unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(g.get(LayerId::M3, x, y), x == 3 && (3..=8).contains(&y));
            }
        }
        assert_eq!(g.count(LayerId::M4), 0);
        assert_eq!(g.count(LayerId::Via3), 0);
        assert_eq!(g.count(LayerId::Pin), 2);
    }

    #[test]
    fn long_route_uses_top_metals() {
        let net = route_detailed(
            &pins(&[(4, 10), (28, 12)]),
            &ResistanceModel::default(),
            GridDims::default(),
        )
        .unwrap();
        assert_eq!(net.combo, WireClassCombo::M5M6);
        let g = &net.layout;
        assert_eq!(g.count(LayerId::M6), 25);
        assert!((4..=28).all(|x| g.get(LayerId::M6, x, 10)));
        assert_eq!(g.count(LayerId::M5), 3);
        assert!((10..=12).all(|y| g.get(LayerId::M5, 28, y)));
        assert_eq!(g.count(LayerId::Via5), 1);
        assert!(g.get(LayerId::Via5, 28, 10));
        for l in [LayerId::M3, LayerId::M4, LayerId::Via3, LayerId::Via4] {
            assert_eq!(g.count(l), 0);
        }
    }

    #[test]
    fn diagonal_route_uses_bottom_metals() {
        let g = route(&pins(&[(0, 0), (5, 5)]), &ResistanceModel::default(), GridDims::default())
            .unwrap();
        assert!((0..=5).all(|x| g.get(LayerId::M4, x, 0)));
        assert_eq!(g.count(LayerId::M4), 6);
        assert!((0..=5).all(|y| g.get(LayerId::M3, 5, y)));
        assert_eq!(g.count(LayerId::M3), 6);
        assert!(g.get(LayerId::Via3, 5, 0));
        assert_eq!(g.count(LayerId::Via3), 1);
    }

    #[test]
    fn materialize_rejects_detached_leg() {
        let ps = pins(&[(0, 0), (5, 5)]);
        let mut plan = plan_geometry(&ps);
        plan.legs[0].span = (2, 5);
        let err = materialize(&plan, WireClassCombo::M3M4, &ps, GridDims::default()).unwrap_err();
        assert!(matches!(err, Error::Internal(_)));
    }
}
