use fcnroute::{GridDims, Pin, PinSet};

/// Parses `x,y;x,y;...` into a validated pin set.
pub fn parse_pins(text: &str, dims: GridDims) -> Result<PinSet, String> {
    let malformed = |why: String| {
        format!("malformed pins string {text:?}: {why}; expected x,y pairs separated by ';', e.g. \"3,3;3,8\"")
    };
    let mut pins = Vec::new();
    for (i, pair) in text.split(';').enumerate() {
        let pair = pair.trim();
        let (x, y) = pair
            .split_once(',')
            .ok_or_else(|| malformed(format!("pair {} ({pair:?}) has no comma", i + 1)))?;
        let coord = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| malformed(format!("{:?} in pair {} is not a non-negative integer", s.trim(), i + 1)))
        };
        pins.push(Pin::new(coord(x)?, coord(y)?));
    }
    PinSet::new(pins, dims).map_err(|e| format!("invalid pins {text:?}: {e}"))
}
