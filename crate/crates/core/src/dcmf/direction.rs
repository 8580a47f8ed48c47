use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// `(dy, dx)` step relative to the window center.
pub type Offset = (isize, isize);

/// Orientation pair of one cross-median filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DirectionLabel {
    /// Vertical line, then horizontal.
    AxisVH,
    /// 45 degree diagonal, then 135 degree diagonal.
    Diag45_135,
    /// Horizontal line, then vertical.
    AxisHV,
}

impl DirectionLabel {
    pub const ALL: [DirectionLabel; 3] = [
        DirectionLabel::AxisVH,
        DirectionLabel::Diag45_135,
        DirectionLabel::AxisHV,
    ];

    fn unit_steps(self) -> (Offset, Offset) {
        const VERTICAL: Offset = (1, 0);
        const HORIZONTAL: Offset = (0, 1);
        // up-right and down-right in image coordinates (y grows downwards)
        const DIAG_45: Offset = (-1, 1);
        const DIAG_135: Offset = (1, 1);
        match self {
            DirectionLabel::AxisVH => (VERTICAL, HORIZONTAL),
            DirectionLabel::Diag45_135 => (DIAG_45, DIAG_135),
            DirectionLabel::AxisHV => (HORIZONTAL, VERTICAL),
        }
    }

    pub fn is_axis_aligned(self) -> bool {
        !matches!(self, DirectionLabel::Diag45_135)
    }
}

impl fmt::Display for DirectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirectionLabel::AxisVH => "axis-VH",
            DirectionLabel::Diag45_135 => "diag-45-135",
            DirectionLabel::AxisHV => "axis-HV",
        })
    }
}

/// Two perpendicular 1-D sampling lines of odd length `k` through the
/// window center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionSpec {
    pub label: DirectionLabel,
    pub first_pass: Vec<Offset>,
    pub second_pass: Vec<Offset>,
}

fn line(step: Offset, k: usize) -> Vec<Offset> {
    let r = (k / 2) as isize;
    (-r..=r).map(|t| (t * step.0, t * step.1)).collect()
}

/// Checks that `offsets` is an odd-length line symmetric about `(0, 0)`.
pub(crate) fn validate_line(offsets: &[Offset]) -> Result<()> {
    let k = offsets.len();
    if k % 2 == 0 {
        return Err(Error::contract(
            "median_pool_line",
            format!("line length must be odd, got {}", k),
        ));
    }
    if offsets[k / 2] != (0, 0) {
        return Err(Error::contract(
            "median_pool_line",
            "line must be centered on (0, 0)",
        ));
    }
    for i in 0..k / 2 {
        let (a, b) = (offsets[i], offsets[k - 1 - i]);
        if a.0 != -b.0 || a.1 != -b.1 {
            return Err(Error::contract(
                "median_pool_line",
                "line offsets must be symmetric",
            ));
        }
    }
    Ok(())
}

impl DirectionSpec {
    pub fn new(label: DirectionLabel, k: usize) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::contract(
                "direction_spec",
                format!("k must be odd, got {}", k),
            ));
        }
        let (a, b) = label.unit_steps();
        Ok(DirectionSpec {
            label,
            first_pass: line(a, k),
            second_pass: line(b, k),
        })
    }

    /// The three orientation pairs of a filter bank, in group order.
    pub fn standard_set(k: usize) -> Result<[DirectionSpec; 3]> {
        Ok([
            DirectionSpec::new(DirectionLabel::AxisVH, k)?,
            DirectionSpec::new(DirectionLabel::Diag45_135, k)?,
            DirectionSpec::new(DirectionLabel::AxisHV, k)?,
        ])
    }

    pub fn k(&self) -> usize {
        self.first_pass.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_line(&self.first_pass)?;
        validate_line(&self.second_pass)?;
        if self.first_pass.len() != self.second_pass.len() {
            return Err(Error::contract("direction_spec", "passes differ in length"));
        }
        let (a, b) = (self.first_pass[0], self.second_pass[0]);
        if a.0 * b.0 + a.1 * b.1 != 0 {
            return Err(Error::contract(
                "direction_spec",
                "passes are not perpendicular",
            ));
        }
        Ok(())
    }

    /// Minkowski sum of both passes: every input offset that can influence
    /// an output pixel.
    pub fn reach(&self) -> BTreeSet<Offset> {
        self.first_pass
            .iter()
            .flat_map(|a| self.second_pass.iter().map(move |b| (a.0 + b.0, a.1 + b.1)))
            .collect()
    }
}
