//! Grid and layer data model.
//!
//! A layout is a stack of eight binary planes over a pixel grid, one plane per
//! [`LayerId`]. Coordinates are `(x, y)` with `x` the column and `y` the row,
//! origin at the top-left corner.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// The eight layout layers in canonical order.
///
/// The discriminant is the plane index used by the file formats, the tensor
/// channel order and the per-pixel bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum LayerId {
    Pin = 0,
    M3 = 1,
    Via3 = 2,
    M4 = 3,
    Via4 = 4,
    M5 = 5,
    Via5 = 6,
    M6 = 7,
}

/// Direction of travel on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Along a row (varying x).
    Horizontal,
    /// Along a column (varying y).
    Vertical,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::Horizontal => Axis::Vertical,
            Axis::Vertical => Axis::Horizontal,
        }
    }
}

impl LayerId {
    pub const COUNT: usize = 8;

    pub const ALL: [LayerId; 8] = [
        LayerId::Pin,
        LayerId::M3,
        LayerId::Via3,
        LayerId::M4,
        LayerId::Via4,
        LayerId::M5,
        LayerId::Via5,
        LayerId::M6,
    ];

    /// The four routing metals, bottom to top.
    pub const METALS: [LayerId; 4] = [LayerId::M3, LayerId::M4, LayerId::M5, LayerId::M6];

    /// The three via layers, bottom to top.
    pub const VIAS: [LayerId; 3] = [LayerId::Via3, LayerId::Via4, LayerId::Via5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<LayerId> {
        LayerId::ALL.get(index).copied()
    }

    pub fn is_metal(self) -> bool {
        matches!(self, LayerId::M3 | LayerId::M4 | LayerId::M5 | LayerId::M6)
    }

    pub fn is_via(self) -> bool {
        matches!(self, LayerId::Via3 | LayerId::Via4 | LayerId::Via5)
    }

    /// Legal track direction of a metal layer: odd metals run vertically,
    /// even metals horizontally. `None` for the pin and via layers.
    pub fn track_direction(self) -> Option<Axis> {
        match self {
            LayerId::M3 | LayerId::M5 => Some(Axis::Vertical),
            LayerId::M4 | LayerId::M6 => Some(Axis::Horizontal),
            _ => None,
        }
    }

    /// The metals a via connects, `(lower, upper)`.
    pub fn via_plates(self) -> Option<(LayerId, LayerId)> {
        match self {
            LayerId::Via3 => Some((LayerId::M3, LayerId::M4)),
            LayerId::Via4 => Some((LayerId::M4, LayerId::M5)),
            LayerId::Via5 => Some((LayerId::M5, LayerId::M6)),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerId::Pin => "pin",
            LayerId::M3 => "M3",
            LayerId::Via3 => "Via3",
            LayerId::M4 => "M4",
            LayerId::Via4 => "Via4",
            LayerId::M5 => "M5",
            LayerId::Via5 => "Via5",
            LayerId::M6 => "M6",
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

impl GridDims {
    pub fn new(height: usize, width: usize) -> Result<GridDims> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(GridDims { height, width })
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    pub(crate) fn check(&self, x: usize, y: usize) -> Result<()> {
        if self.contains(x, y) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "coordinate ({x}, {y}) outside {}x{} grid",
                self.height, self.width
            )))
        }
    }
}

impl Default for GridDims {
    fn default() -> Self {
        GridDims {
            height: 32,
            width: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pin {
    pub x: usize,
    pub y: usize,
}

impl Pin {
    pub fn new(x: usize, y: usize) -> Pin {
        Pin { x, y }
    }

    /// Coordinate along `axis` (x for horizontal, y for vertical).
    pub fn along(&self, axis: Axis) -> usize {
        match axis {
            Axis::Horizontal => self.x,
            Axis::Vertical => self.y,
        }
    }
}

/// The pins of a single net: 2 to 5 distinct in-range coordinates.
///
/// Pins are kept in row-major order so that two sets with the same members
/// compare equal regardless of construction order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PinSet {
    pins: Vec<Pin>,
}

impl PinSet {
    pub const MIN_PINS: usize = 2;
    pub const MAX_PINS: usize = 5;

    pub fn new(pins: impl IntoIterator<Item = Pin>, dims: GridDims) -> Result<PinSet> {
        let mut pins: Vec<Pin> = pins.into_iter().collect();
        if pins.len() < Self::MIN_PINS || pins.len() > Self::MAX_PINS {
            return Err(Error::validation(format!(
                "a net needs {} to {} pins, got {}",
                Self::MIN_PINS,
                Self::MAX_PINS,
                pins.len()
            )));
        }
        for p in &pins {
            dims.check(p.x, p.y)?;
        }
        pins.sort_by_key(|p| (p.y, p.x));
        if let Some(w) = pins.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation(format!(
                "duplicate pin at ({}, {})",
                w[0].x, w[0].y
            )));
        }
        Ok(PinSet { pins })
    }

    pub fn pins(&self) -> &[Pin] {
        &self.pins
    }

    pub fn len(&self) -> usize {
        self.pins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pins.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pin> {
        self.pins.iter()
    }

    /// Recovers a pin set from a binary pin plane.
    pub fn from_plane(plane: &Plane) -> Result<PinSet> {
        let dims = plane.dims();
        let pins = (0..dims.height).flat_map(|y| (0..dims.width).map(move |x| Pin::new(x, y)));
        PinSet::new(pins.filter(|p| plane.get(p.x, p.y)), dims)
    }
}

/// A single binary H×W plane.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Plane {
    dims: GridDims,
    cells: Vec<u8>,
}

impl Plane {
    pub fn new(dims: GridDims) -> Plane {
        Plane {
            dims,
            cells: vec![0; dims.cells()],
        }
    }

    /// Wraps row-major cells; every value must be 0 or 1.
    pub fn from_cells(dims: GridDims, cells: Vec<u8>) -> Result<Plane> {
        if cells.len() != dims.cells() {
            return Err(Error::shape(format!(
                "plane of {}x{} needs {} cells, got {}",
                dims.height,
                dims.width,
                dims.cells(),
                cells.len()
            )));
        }
        if let Some(i) = cells.iter().position(|&v| v > 1) {
            return Err(Error::validation(format!("non-binary value at cell {i}")));
        }
        Ok(Plane { dims, cells })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.dims.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.cells[y * self.dims.width + x] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&v| v != 0).count()
    }
}

/// Encodes pin locations as a single binary plane (the network input).
pub fn encode_pins(pins: &PinSet, dims: GridDims) -> Result<Plane> {
    let mut plane = Plane::new(dims);
    for p in pins.iter() {
        dims.check(p.x, p.y)?;
        if plane.get(p.x, p.y) {
            return Err(Error::validation(format!("duplicate pin at ({}, {})", p.x, p.y)));
        }
        plane.set(p.x, p.y, true);
    }
    Ok(plane)
}

/// Eight binary planes in canonical layer order, stored layer-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayoutGrid {
    dims: GridDims,
    cells: Vec<u8>,
}

impl LayoutGrid {
    pub fn new(dims: GridDims) -> LayoutGrid {
        LayoutGrid {
            dims,
            cells: vec![0; LayerId::COUNT * dims.cells()],
        }
    }

    /// Wraps `8 * H * W` layer-major cells; every value must be 0 or 1.
    pub fn from_cells(dims: GridDims, cells: Vec<u8>) -> Result<LayoutGrid> {
        let expected = LayerId::COUNT * dims.cells();
        if cells.len() != expected {
            return Err(Error::shape(format!(
                "layout of {}x{} needs {expected} cells, got {}",
                dims.height,
                dims.width,
                cells.len()
            )));
        }
        if let Some(i) = cells.iter().position(|&v| v > 1) {
            return Err(Error::validation(format!("non-binary value at cell {i}")));
        }
        Ok(LayoutGrid { dims, cells })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// All cells, layer-major then row-major.
    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn plane(&self, layer: LayerId) -> &[u8] {
        let n = self.dims.cells();
        &self.cells[layer.index() * n..(layer.index() + 1) * n]
    }

    pub fn plane_mut(&mut self, layer: LayerId) -> &mut [u8] {
        let n = self.dims.cells();
        &mut self.cells[layer.index() * n..(layer.index() + 1) * n]
    }

    pub fn get(&self, layer: LayerId, x: usize, y: usize) -> bool {
        self.cells[self.offset(layer, x, y)] != 0
    }

    pub fn set(&mut self, layer: LayerId, x: usize, y: usize, on: bool) {
        let i = self.offset(layer, x, y);
        self.cells[i] = on as u8;
    }

    /// Replaces the pin plane.
    pub fn set_pin_plane(&mut self, plane: &Plane) -> Result<()> {
        if plane.dims() != self.dims {
            return Err(Error::shape("pin plane dimensions differ from layout"));
        }
        self.plane_mut(LayerId::Pin).copy_from_slice(plane.cells());
        Ok(())
    }

    pub fn pin_plane(&self) -> Plane {
        Plane {
            dims: self.dims,
            cells: self.plane(LayerId::Pin).to_vec(),
        }
    }

    /// Number of active pixels on `layer`.
    pub fn count(&self, layer: LayerId) -> usize {
        self.plane(layer).iter().filter(|&&v| v != 0).count()
    }

    fn offset(&self, layer: LayerId, x: usize, y: usize) -> usize {
        debug_assert!(self.dims.contains(x, y));
        (layer.index() * self.dims.height + y) * self.dims.width + x
    }
}

/// Packs the eight layer bits at `(x, y)`: bit `i` is layer `i`.
pub fn pack_cell(grid: &LayoutGrid, x: usize, y: usize) -> Result<u8> {
    grid.dims().check(x, y)?;
    Ok(LayerId::ALL
        .iter()
        .filter(|&&l| grid.get(l, x, y))
        .fold(0u8, |mask, l| mask | (1 << l.index())))
}

/// Expands a cell mask into per-layer flags.
pub fn unpack_cell(mask: u8) -> [bool; 8] {
    std::array::from_fn(|i| mask & (1 << i) != 0)
}

/// Writes a cell mask into the grid at `(x, y)`.
pub fn store_cell(grid: &mut LayoutGrid, x: usize, y: usize, mask: u8) -> Result<()> {
    grid.dims().check(x, y)?;
    for (layer, on) in LayerId::ALL.into_iter().zip(unpack_cell(mask)) {
        grid.set(layer, x, y, on);
    }
    Ok(())
}

/// An 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    dims: GridDims,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(dims: GridDims) -> RgbImage {
        RgbImage {
            dims,
            pixels: vec![BACKGROUND; dims.cells()],
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.dims.width + x]
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    /// Binary PPM (`P6`, maxval 255), pixels row-major.
    pub fn to_ppm(&self) -> Vec<u8> {
        let header = format!("P6\n{} {}\n255\n", self.dims.width, self.dims.height);
        let mut out = Vec::with_capacity(header.len() + 3 * self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        for px in &self.pixels {
            out.extend_from_slice(px);
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_ppm())?;
        Ok(())
    }
}

pub const BACKGROUND: [u8; 3] = [0, 0, 0];

/// Display color of a layer.
pub fn layer_color(layer: LayerId) -> [u8; 3] {
    match layer {
        LayerId::Pin => [255, 255, 0],
        LayerId::M3 => [0, 255, 0],
        LayerId::M4 => [255, 0, 0],
        LayerId::M5 => [128, 128, 128],
        LayerId::M6 => [0, 0, 255],
        LayerId::Via3 | LayerId::Via4 | LayerId::Via5 => [255, 255, 255],
    }
}

/// Layers in render priority, topmost first.
const RENDER_ORDER: [LayerId; 8] = [
    LayerId::Via5,
    LayerId::Via4,
    LayerId::Via3,
    LayerId::M6,
    LayerId::M5,
    LayerId::M4,
    LayerId::M3,
    LayerId::Pin,
];

/// Renders a layout: each pixel takes the color of its topmost active layer.
pub fn decode_to_rgb(grid: &LayoutGrid) -> RgbImage {
    let dims = grid.dims();
    let mut image = RgbImage::new(dims);
    for y in 0..dims.height {
        for x in 0..dims.width {
            if let Some(layer) = RENDER_ORDER.iter().find(|&&l| grid.get(l, x, y)) {
                image.pixels[y * dims.width + x] = layer_color(*layer);
            }
        }
    }
    image
}
