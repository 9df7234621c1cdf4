//! Parsers for list-valued and point-valued flags.

use wayfinder_core::geometry::{FloorPoint, FloorTransform, MapPoint3};

/// Parses a sampling-rate list such as `1,5,...,50`, `1..6` or `2,4,8`.
///
/// `a..b` is an inclusive range. `...` continues the two values before it up
/// to the value after it, stepping by their difference when that lands on the
/// end value and by the preceding value otherwise, so `1,5,...,50` yields
/// `1,5,10,...,50`. The result must be strictly increasing and positive.
pub fn parse_rates(text: &str) -> Result<Vec<usize>, String> {
    let items: Vec<&str> = text.split(',').map(str::trim).collect();
    let mut out: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let item = items[i];
        if item == "..." {
            let (Some(&b), Some(end)) = (out.last(), items.get(i + 1)) else {
                return Err("'...' needs a value on each side".into());
            };
            let a = if out.len() >= 2 { out[out.len() - 2] } else { 0 };
            let end = number(end)?;
            if end <= b {
                return Err(format!("'...' must end above {b}"));
            }
            let diff = b - a;
            let step = if diff > 0 && (end - b) % diff == 0 { diff } else { b };
            if (end - b) / step > 100_000 {
                return Err(format!("'...' up to {end} is too long"));
            }
            let mut v = (b - b % step).checked_add(step);
            while let Some(x) = v.filter(|&x| x < end) {
                out.push(x);
                v = x.checked_add(step);
            }
            out.push(end);
            i += 2;
            continue;
        }
        if let Some((lo, hi)) = item.split_once("..") {
            let (lo, hi) = (number(lo)?, number(hi)?);
            if hi < lo {
                return Err(format!("empty range {item}"));
            }
            if hi - lo > 100_000 {
                return Err(format!("range {item} is too long"));
            }
            out.extend(lo..=hi);
        } else {
            out.push(number(item)?);
        }
        i += 1;
    }
    if out.is_empty() {
        return Err("no rates given".into());
    }
    if out[0] == 0 {
        return Err("rates start at 1".into());
    }
    if out.windows(2).any(|w| w[1] <= w[0]) {
        return Err("rates must increase".into());
    }
    Ok(out)
}

fn number(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("not a rate: {s:?}"))
}

fn floats<const N: usize>(text: &str, what: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("{what} needs {N} comma-separated numbers"));
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("{what}: not a number: {p:?}"))?;
        if !o.is_finite() {
            return Err(format!("{what}: not finite: {p:?}"));
        }
    }
    Ok(out)
}

/// `x,y` in floor-plan pixels.
pub fn parse_floor_point(text: &str) -> Result<FloorPoint, String> {
    let [x, y] = floats(text, "floor point")?;
    Ok(FloorPoint::new(x, y))
}

/// `x1,y1,x2,y2` in floor-plan pixels.
pub fn parse_segment(text: &str) -> Result<(FloorPoint, FloorPoint), String> {
    let [ax, ay, bx, by] = floats(text, "segment")?;
    Ok((FloorPoint::new(ax, ay), FloorPoint::new(bx, by)))
}

/// `x,y,z:u,v` pairs a reconstruction point with a floor-plan pixel.
pub fn parse_correspondence(text: &str) -> Result<(MapPoint3, FloorPoint), String> {
    let (m, f) = text
        .split_once(':')
        .ok_or_else(|| "correspondence is x,y,z:u,v".to_string())?;
    let [x, y, z] = floats(m, "map point")?;
    Ok((MapPoint3 { x, y, z }, parse_floor_point(f)?))
}

/// Six numbers, row-major: `a,b,c,d,e,f`.
pub fn parse_transform(text: &str) -> Result<FloorTransform, String> {
    let [a, b, c, d, e, f] = floats(text, "transform")?;
    Ok(FloorTransform::from_rows([[a, b, c], [d, e, f]]))
}
