//! Laser scan type and the JSON Lines scan-log format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One revolution of a 2D range scanner: polar ranges plus angle metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    #[serde(rename = "t")]
    pub timestamp: f64,
    pub angle_min: f64,
    #[serde(rename = "angle_inc")]
    pub angle_increment: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
}

impl LaserScan {
    pub fn angle(&self, beam: usize) -> f64 {
        self.angle_min + self.angle_increment * beam as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.range_max <= 0.0 {
            return Err(Error::InvalidArgument("range_max must be positive".into()));
        }
        for (i, r) in self.ranges.iter().enumerate() {
            if !r.is_finite() || *r < 0.0 || *r > self.range_max {
                return Err(Error::InvalidArgument(format!(
                    "range[{i}] = {r} outside [0, {}]",
                    self.range_max
                )));
            }
        }
        Ok(())
    }
}

/// Writes scans as JSON Lines, one scan per line.
pub fn write_scan_log<W: Write>(mut w: W, scans: &[LaserScan]) -> Result<()> {
    for scan in scans {
        serde_json::to_writer(&mut w, scan)
            .map_err(|e| Error::Format { offset: 0, message: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON Lines scan log; errors cite the 1-based offending line.
pub fn read_scan_log<R: BufRead>(r: R) -> Result<Vec<LaserScan>> {
    let mut scans = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scan: LaserScan = serde_json::from_str(&line).map_err(|e| Error::Line {
            line: idx + 1,
            message: e.to_string(),
        })?;
        scan.validate().map_err(|e| Error::Line {
            line: idx + 1,
            message: e.to_string(),
        })?;
        scans.push(scan);
    }
    Ok(scans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LaserScan {
        LaserScan {
            timestamp: 0.5,
            angle_min: -1.0,
            angle_increment: 0.01,
            range_max: 20.0,
            ranges: vec![1.0, 2.0, 20.0],
        }
    }

    #[test]
    fn log_round_trip() {
        let scans = vec![sample(), sample()];
        let mut buf = Vec::new();
        write_scan_log(&mut buf, &scans).unwrap();
        let back = read_scan_log(&buf[..]).unwrap();
        assert_eq!(back, scans);
    }

    #[test]
    fn malformed_line_cites_line_number() {
        let mut buf = Vec::new();
        write_scan_log(&mut buf, &[sample(), sample()]).unwrap();
        buf.extend_from_slice(b"{not json\n");
        match read_scan_log(&buf[..]) {
            Err(Error::Line { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_value_rejected() {
        let text = r#"{"t":0,"angle_min":0,"angle_inc":0.1,"range_max":2.0,"ranges":[3.0]}"#;
        assert!(matches!(
            read_scan_log(text.as_bytes()),
            Err(Error::Line { line: 1, .. })
        ));
    }
}
