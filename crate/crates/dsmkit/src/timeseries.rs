//! Time grids and exogenous series (prices, PV, base load, availability).
//!
//! Everything downstream is indexed by step `t` on a uniform grid of
//! `num_steps` intervals of `delta_t_hours` each. Series are loaded from a
//! two-column text format (`step,value`) and validated against the grid:
//! no resampling, no padding, no silent truncation.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

/// Uniform time discretization: `num_steps` intervals of `delta_t_hours`.
///
/// Step `t` covers the interval between boundaries `t` and `t + 1`; state
/// quantities (SoC) live on the `num_steps + 1` boundaries, flow quantities
/// (power) on the steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub delta_t_hours: f64,
    pub num_steps: usize,
    /// Optional wall-clock label ("HH:MM") of boundary 0, display/conversion only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_label: Option<String>,
}

impl TimeGrid {
    pub fn new(
        delta_t_hours: f64,
        num_steps: usize,
        start_label: Option<String>,
    ) -> Result<Self, SeriesError> {
        if !(delta_t_hours > 0.0) || !delta_t_hours.is_finite() {
            return Err(SeriesError::BadGrid(format!(
                "delta_t_hours must be positive and finite, got {delta_t_hours}"
            )));
        }
        if num_steps == 0 {
            return Err(SeriesError::BadGrid("num_steps must be >= 1".into()));
        }
        if let Some(label) = &start_label {
            parse_clock(label)?;
        }
        Ok(TimeGrid { delta_t_hours, num_steps, start_label })
    }

    pub fn total_hours(&self) -> f64 {
        self.delta_t_hours * self.num_steps as f64
    }

    /// Number of step boundaries, `num_steps + 1`.
    pub fn num_boundaries(&self) -> usize {
        self.num_steps + 1
    }

    /// Maps a wall-clock label onto the step-boundary index it falls on.
    ///
    /// The label must lie exactly on a boundary of the grid (frac tolerance
    /// 1e-6 steps). Labels earlier in the day than the start label wrap to
    /// the next day, so a grid starting at 20:00 resolves "07:30" to the
    /// following morning.
    pub fn step_of_clock(&self, label: &str) -> Result<usize, SeriesError> {
        let label_min = parse_clock(label)?;
        let start_min = match &self.start_label {
            Some(s) => parse_clock(s)?,
            None => 0.0,
        };
        let mut offset_min = label_min - start_min;
        while offset_min < 0.0 {
            offset_min += 24.0 * 60.0;
        }
        let steps = offset_min / (self.delta_t_hours * 60.0);
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-6 {
            return Err(SeriesError::OffGridLabel {
                label: label.to_string(),
                delta_t_hours: self.delta_t_hours,
            });
        }
        let index = rounded as usize;
        if index > self.num_steps {
            return Err(SeriesError::OutOfHorizon {
                label: label.to_string(),
                num_steps: self.num_steps,
            });
        }
        Ok(index)
    }
}

/// Parses "HH:MM" (or "H:MM") into minutes. Hours up to 48 are accepted so
/// that horizon-end labels like "24:00" stay expressible.
fn parse_clock(label: &str) -> Result<f64, SeriesError> {
    let bad = || SeriesError::BadClockLabel(label.to_string());
    let (h, m) = label.split_once(':').ok_or_else(bad)?;
    let hours: u32 = h.trim().parse().map_err(|_| bad())?;
    let minutes: u32 = m.trim().parse().map_err(|_| bad())?;
    if hours > 48 || minutes > 59 {
        return Err(bad());
    }
    Ok((hours * 60 + minutes) as f64)
}

/// Physical interpretation of a series, which decides its validation rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// Price per kWh; any finite sign.
    CurrencyPerKwh,
    /// Power; finite and non-negative.
    Kw,
    /// Dimensionless in [0, 1].
    Fraction,
    /// Exactly 0 or 1.
    Binary,
}

impl Unit {
    pub fn validate(self, value: f64) -> Result<(), UnitViolation> {
        if !value.is_finite() {
            return Err(UnitViolation::NotFinite);
        }
        match self {
            Unit::CurrencyPerKwh => Ok(()),
            Unit::Kw => {
                if value < 0.0 {
                    Err(UnitViolation::Negative)
                } else {
                    Ok(())
                }
            }
            Unit::Fraction => {
                if !(0.0..=1.0).contains(&value) {
                    Err(UnitViolation::OutOfUnitRange)
                } else {
                    Ok(())
                }
            }
            Unit::Binary => {
                if value == 0.0 || value == 1.0 {
                    Ok(())
                } else {
                    Err(UnitViolation::NotBinary)
                }
            }
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::CurrencyPerKwh => "currency/kWh",
            Unit::Kw => "kW",
            Unit::Fraction => "fraction",
            Unit::Binary => "binary",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitViolation {
    NotFinite,
    Negative,
    OutOfUnitRange,
    NotBinary,
}

impl fmt::Display for UnitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnitViolation::NotFinite => "value is not finite",
            UnitViolation::Negative => "negative value not allowed for this unit",
            UnitViolation::OutOfUnitRange => "value outside [0, 1]",
            UnitViolation::NotBinary => "value must be exactly 0 or 1",
        };
        f.write_str(s)
    }
}

/// A named, unit-checked vector of per-step values, length = `num_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub unit: Unit,
    pub values: Vec<f64>,
}

impl Series {
    /// Wraps raw values after validating every entry against the unit and
    /// the grid length.
    pub fn new(
        name: impl Into<String>,
        unit: Unit,
        values: Vec<f64>,
        grid: &TimeGrid,
    ) -> Result<Self, SeriesError> {
        let name = name.into();
        if values.len() != grid.num_steps {
            return Err(SeriesError::RowCountMismatch {
                name,
                expected: grid.num_steps,
                found: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if let Err(why) = unit.validate(v) {
                return Err(SeriesError::from_unit_violation(&name, i, v, why));
            }
        }
        Ok(Series { name, unit, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Builds a series whose entries all equal `value`.
pub fn constant_series(
    name: impl Into<String>,
    value: f64,
    unit: Unit,
    grid: &TimeGrid,
) -> Result<Series, SeriesError> {
    Series::new(name, unit, vec![value; grid.num_steps], grid)
}

/// Parses the two-column series format: a `step,value` header followed by
/// exactly one row per grid step. Values pass through unchanged (no
/// resampling); the row count must match the grid exactly.
pub fn load_series(
    source: impl BufRead,
    name: impl Into<String>,
    unit: Unit,
    grid: &TimeGrid,
) -> Result<Series, SeriesError> {
    let name = name.into();
    let mut values = Vec::with_capacity(grid.num_steps);
    let mut lines = source.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| SeriesError::MalformedRow {
            name: name.clone(),
            row: 0,
            reason: "empty input, expected `step,value` header".into(),
        })?
        .map(|l| (0, l))
        .map_err(|e| SeriesError::Io(e.to_string()))?;
    if header.trim() != "step,value" {
        return Err(SeriesError::MalformedRow {
            name,
            row: 0,
            reason: format!("expected header `step,value`, got `{}`", header.trim()),
        });
    }

    for (lineno, line) in lines {
        let line = line.map_err(|e| SeriesError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (step_field, value_field) =
            trimmed.split_once(',').ok_or_else(|| SeriesError::MalformedRow {
                name: name.clone(),
                row: lineno,
                reason: "expected two comma-separated columns".into(),
            })?;
        let step: usize = step_field.trim().parse().map_err(|_| SeriesError::MalformedRow {
            name: name.clone(),
            row: lineno,
            reason: format!("step column is not an integer: `{}`", step_field.trim()),
        })?;
        if step != values.len() {
            return Err(SeriesError::MalformedRow {
                name: name.clone(),
                row: lineno,
                reason: format!("step column out of order: expected {}, got {step}", values.len()),
            });
        }
        let value: f64 = value_field.trim().parse().map_err(|_| SeriesError::MalformedRow {
            name: name.clone(),
            row: lineno,
            reason: format!("value column is not a number: `{}`", value_field.trim()),
        })?;
        if let Err(why) = unit.validate(value) {
            return Err(SeriesError::from_unit_violation(&name, values.len(), value, why));
        }
        values.push(value);
        if values.len() > grid.num_steps {
            return Err(SeriesError::RowCountMismatch {
                name,
                expected: grid.num_steps,
                found: values.len(),
            });
        }
    }

    if values.len() != grid.num_steps {
        return Err(SeriesError::RowCountMismatch {
            name,
            expected: grid.num_steps,
            found: values.len(),
        });
    }
    Ok(Series { name, unit, values })
}

/// Writes a series in the same format `load_series` reads. Values are
/// printed with up to nine fractional digits (trailing zeros trimmed), so
/// anything representable at that precision round-trips bit-for-bit.
pub fn write_series(series: &Series, out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "step,value")?;
    for (i, v) in series.values.iter().enumerate() {
        writeln!(out, "{},{}", i, format_decimal(*v))?;
    }
    Ok(())
}

/// Fixed-point decimal with up to 9 fractional digits, trailing zeros trimmed.
pub fn format_decimal(v: f64) -> String {
    let mut s = format!("{v:.9}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("series `{name}`: expected {expected} rows, found {found}")]
    RowCountMismatch { name: String, expected: usize, found: usize },
    #[error("series `{name}` row {row}: {reason}")]
    MalformedRow { name: String, row: usize, reason: String },
    #[error("series `{name}` row {row}: negative value {value} not allowed for this unit")]
    NegativeValue { name: String, row: usize, value: f64 },
    #[error("series `{name}` row {row}: value {value} violates unit rules: {violation}")]
    UnitMismatch { name: String, row: usize, value: f64, violation: String },
    #[error("clock label `{label}` does not fall on a step boundary (delta_t = {delta_t_hours} h)")]
    OffGridLabel { label: String, delta_t_hours: f64 },
    #[error("clock label `{label}` lies outside the horizon of {num_steps} steps")]
    OutOfHorizon { label: String, num_steps: usize },
    #[error("malformed clock label `{0}`, expected HH:MM")]
    BadClockLabel(String),
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl SeriesError {
    fn from_unit_violation(name: &str, row: usize, value: f64, why: UnitViolation) -> Self {
        match why {
            UnitViolation::Negative => SeriesError::NegativeValue {
                name: name.to_string(),
                row,
                value,
            },
            other => SeriesError::UnitMismatch {
                name: name.to_string(),
                row,
                value,
                violation: other.to_string(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(dt: f64, steps: usize) -> TimeGrid {
        TimeGrid::new(dt, steps, Some("00:00".into())).unwrap()
    }

    #[test]
    fn load_series_happy_path() {
        let g = grid(0.5, 48);
        let mut text = String::from("step,value\n");
        for i in 0..48 {
            text.push_str(&format!("{i},{}\n", 0.1 + i as f64 * 0.001));
        }
        let s = load_series(text.as_bytes(), "price", Unit::CurrencyPerKwh, &g).unwrap();
        assert_eq!(s.len(), 48);
        assert_eq!(s.values[0], 0.1);
    }

    #[test]
    fn load_series_row_count_mismatch() {
        let g = grid(0.5, 48);
        let mut text = String::from("step,value\n");
        for i in 0..47 {
            text.push_str(&format!("{i},1.0\n"));
        }
        let err = load_series(text.as_bytes(), "price", Unit::CurrencyPerKwh, &g).unwrap_err();
        assert!(matches!(err, SeriesError::RowCountMismatch { expected: 48, found: 47, .. }));
    }

    #[test]
    fn load_series_rejects_negative_pv() {
        let g = grid(0.5, 2);
        let text = "step,value\n0,1.0\n1,-0.2\n";
        let err = load_series(text.as_bytes(), "pv", Unit::Kw, &g).unwrap_err();
        assert!(matches!(err, SeriesError::NegativeValue { row: 1, .. }));
    }

    #[test]
    fn load_series_reports_malformed_row_with_number() {
        let g = grid(0.5, 2);
        let text = "step,value\n0,1.0\n1,abc\n";
        let err = load_series(text.as_bytes(), "pv", Unit::Kw, &g).unwrap_err();
        match err {
            SeriesError::MalformedRow { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected error: {other:?}"),
        }
    }

    #[test]
    fn constant_series_examples() {
        let g4 = grid(0.5, 4);
        let ones = constant_series("avail", 1.0, Unit::Binary, &g4).unwrap();
        assert_eq!(ones.values, vec![1.0, 1.0, 1.0, 1.0]);

        let g2 = grid(0.5, 2);
        let sevens = constant_series("cap", 7.0, Unit::Kw, &g2).unwrap();
        assert_eq!(sevens.values, vec![7.0, 7.0]);

        let err = constant_series("cap", -1.0, Unit::Kw, &g2).unwrap_err();
        assert!(matches!(err, SeriesError::NegativeValue { .. }));
    }

    #[test]
    fn binary_series_rejects_non_binary() {
        let g = grid(0.5, 2);
        let err = Series::new("avail", Unit::Binary, vec![1.0, 0.5], &g).unwrap_err();
        assert!(matches!(err, SeriesError::UnitMismatch { row: 1, .. }));
    }

    #[test]
    fn step_of_clock_examples() {
        let g = grid(0.5, 48);
        assert_eq!(g.step_of_clock("07:30").unwrap(), 15);
        assert_eq!(g.step_of_clock("00:00").unwrap(), 0);
        assert_eq!(g.step_of_clock("23:00").unwrap(), 46);
        assert_eq!(g.step_of_clock("24:00").unwrap(), 48);
        assert!(matches!(
            g.step_of_clock("07:45").unwrap_err(),
            SeriesError::OffGridLabel { .. }
        ));
    }

    #[test]
    fn step_of_clock_wraps_past_midnight() {
        let g = TimeGrid::new(0.5, 48, Some("20:00".into())).unwrap();
        // 07:30 next morning is 11.5 h after 20:00.
        assert_eq!(g.step_of_clock("07:30").unwrap(), 23);
    }

    #[test]
    fn step_of_clock_out_of_horizon() {
        let g = grid(0.5, 8); // 4 h horizon
        assert!(matches!(
            g.step_of_clock("05:00").unwrap_err(),
            SeriesError::OutOfHorizon { .. }
        ));
    }

    #[test]
    fn grid_rejects_degenerate_inputs() {
        assert!(TimeGrid::new(0.0, 4, None).is_err());
        assert!(TimeGrid::new(0.5, 0, None).is_err());
        assert!(TimeGrid::new(f64::NAN, 4, None).is_err());
    }

    proptest! {
        /// Writing and re-loading preserves values bit-for-bit when they are
        /// representable with nine fractional digits.
        #[test]
        fn series_roundtrip_at_decimal_precision(
            mantissas in proptest::collection::vec(-1_000_000_000i64..1_000_000_000i64, 1..40),
            scale in 0u32..=9,
        ) {
            let values: Vec<f64> =
                mantissas.iter().map(|m| *m as f64 / 10f64.powi(scale as i32)).collect();
            let g = TimeGrid::new(0.5, values.len(), None).unwrap();
            let s = Series::new("x", Unit::CurrencyPerKwh, values.clone(), &g).unwrap();
            let mut buf = Vec::new();
            write_series(&s, &mut buf).unwrap();
            let back = load_series(buf.as_slice(), "x", Unit::CurrencyPerKwh, &g).unwrap();
            for (a, b) in s.values.iter().zip(back.values.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
