//! `key = value` camera files with keys `fx fy cx cy width height`. Blank
//! lines and `#` comments are ignored; unknown or repeated keys are errors.

use std::path::Path;

use super::write_atomic;
use crate::geometry::Intrinsics;
use crate::{Error, Real, Result};

const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "intrinsics",
        offset,
        message: message.into(),
    }
}

pub fn parse_intrinsics<T: Real>(text: &str) -> Result<Intrinsics<T>> {
    let mut vals: [Option<f64>; 6] = [None; 6];
    let mut at = 0;
    for (n, raw) in text.split('\n').enumerate() {
        let offset = at;
        at += raw.len() + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(offset, format!("line {}: expected \"key = value\"", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let slot = KEYS
            .iter()
            .position(|x| *x == k)
            .ok_or_else(|| err(offset, format!("line {}: unknown key {k:?}", n + 1)))?;
        if vals[slot].is_some() {
            return Err(err(offset, format!("line {}: duplicate key {k:?}", n + 1)));
        }
        let x: f64 = v
            .parse()
            .map_err(|_| err(offset, format!("line {}: {k} value {v:?} is not a number", n + 1)))?;
        if slot >= 4 && (x.fract() != 0.0 || !(1.0..=1e9).contains(&x)) {
            return Err(err(offset, format!("line {}: {k} must be a positive integer", n + 1)));
        }
        vals[slot] = Some(x);
    }
    let mut got = [0.0; 6];
    for (i, v) in vals.iter().enumerate() {
        got[i] = v.ok_or_else(|| err(text.len(), format!("missing key {:?}", KEYS[i])))?;
    }
    Intrinsics::new(
        T::lit(got[0]),
        T::lit(got[1]),
        T::lit(got[2]),
        T::lit(got[3]),
        got[4] as usize,
        got[5] as usize,
    )
}

pub fn format_intrinsics<T: Real>(k: &Intrinsics<T>) -> String {
    format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n",
        k.fx.as_f64(),
        k.fy.as_f64(),
        k.cx.as_f64(),
        k.cy.as_f64(),
        k.width,
        k.height
    )
}

pub fn read_intrinsics<T: Real>(path: &Path) -> Result<Intrinsics<T>> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| err(e.valid_up_to(), "not valid UTF-8"))?;
    parse_intrinsics(text)
}

pub fn write_intrinsics<T: Real>(path: &Path, k: &Intrinsics<T>) -> Result<()> {
    write_atomic(path, format_intrinsics(k).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let k: Intrinsics<f64> =
            parse_intrinsics("# camera\nfx = 500\nfy=500.5\n\ncx = 31.5 # centre\ncy = 23.5\nwidth = 64\nheight = 48\n").unwrap();
        assert_eq!((k.fx, k.fy, k.cx, k.cy, k.width, k.height), (500.0, 500.5, 31.5, 23.5, 64, 48));
        let again: Intrinsics<f64> = parse_intrinsics(&format_intrinsics(&k)).unwrap();
        assert_eq!(again, k);
    }

    #[test]
    fn rejects_bad_files() {
        let base = "fx = 1\nfy = 1\ncx = 0\ncy = 0\nwidth = 4\nheight = 4\n";
        for bad in [
            format!("{base}skew = 0\n"),
            format!("{base}fx = 2\n"),
            base.replace("width = 4", "width = 4.5"),
            base.replace("height = 4\n", ""),
            base.replace("cx = 0", "cx 0"),
            base.replace("fy = 1", "fy = nope"),
        ] {
            assert!(matches!(parse_intrinsics::<f64>(&bad), Err(Error::Format { .. })), "{bad}");
        }
    }
}
