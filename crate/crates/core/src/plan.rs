//! Acquisition planning: turntable pan/tilt schedules, the macro-mode rail
//! positions and the thin-lens depth-of-field model that spaces them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack used when checking divisibility and rounding slice counts.
const DIVISIBILITY_TOL: f64 = 1e-9;

/// Default turntable plan: 36 pans by 4 tilts, 144 poses.
pub const DEFAULT_PAN_STEP_DEG: f64 = 10.0;
pub const DEFAULT_TILTS_DEG: [f64; 4] = [10.0, 20.0, 30.0, 40.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid pan step {0}: must be positive and divide 360")]
    InvalidStep(f64),
    #[error("tilt set is empty")]
    EmptyTilts,
    #[error("tilt {0} outside [-90, 90]")]
    InvalidTilt(f64),
    #[error("macro mode needs at least one rail position")]
    NoRailPositions,
    #[error("invalid lens: {0}")]
    InvalidLens(String),
    #[error("schedule line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid schedule: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureMode {
    Normal,
    Macro,
}

/// How each pose is captured.
#[derive(Debug, Clone, PartialEq)]
pub enum ShotPlan {
    /// One in-focus image per pose.
    Single,
    /// One image per rail position (mm from the near end).
    Stack(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub view_id: u32,
    pub pan_deg: f64,
    pub tilt_deg: f64,
    pub rail_mm: Option<f64>,
}

/// Additional explicit camera direction outside the regular grid, e.g. a
/// view from below to see under wings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraView {
    pub pan_deg: f64,
    pub tilt_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSchedule {
    pub mode: CaptureMode,
    pub entries: Vec<ScheduleEntry>,
    pub extra_views: Vec<ExtraView>,
}

/// Entries sharing one pan/tilt pose (a focus stack in macro mode).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGroup {
    pub pose_id: u32,
    pub pan_deg: f64,
    pub tilt_deg: f64,
    /// View ids of the images at this pose, nearest rail position first.
    pub view_ids: Vec<u32>,
    pub rail_mm: Vec<f64>,
    pub extra: bool,
}

/// Builds the regular pan/tilt grid, tilt-major then pan ascending.
pub fn build_pose_schedule(
    pan_step_deg: f64,
    tilt_set_deg: &[f64],
    shots: &ShotPlan,
) -> Result<CaptureSchedule, PlanError> {
    let pans = pan_count(pan_step_deg)?;
    if tilt_set_deg.is_empty() {
        return Err(PlanError::EmptyTilts);
    }
    if let Some(&t) = tilt_set_deg.iter().find(|t| !(-90.0..=90.0).contains(*t)) {
        return Err(PlanError::InvalidTilt(t));
    }
    let (mode, rails): (CaptureMode, Vec<Option<f64>>) = match shots {
        ShotPlan::Single => (CaptureMode::Normal, vec![None]),
        ShotPlan::Stack(positions) => {
            if positions.is_empty() {
                return Err(PlanError::NoRailPositions);
            }
            (CaptureMode::Macro, positions.iter().map(|&r| Some(r)).collect())
        }
    };
    let mut entries = Vec::with_capacity(pans * tilt_set_deg.len() * rails.len());
    for &tilt in tilt_set_deg {
        for i in 0..pans {
            let pan = i as f64 * pan_step_deg;
            for &rail in &rails {
                entries.push(ScheduleEntry {
                    view_id: entries.len() as u32,
                    pan_deg: pan,
                    tilt_deg: tilt,
                    rail_mm: rail,
                });
            }
        }
    }
    Ok(CaptureSchedule {
        mode,
        entries,
        extra_views: Vec::new(),
    })
}

fn pan_count(step: f64) -> Result<usize, PlanError> {
    if !(step.is_finite() && step > 0.0 && step <= 360.0) {
        return Err(PlanError::InvalidStep(step));
    }
    let n = 360.0 / step;
    let rounded = n.round();
    if (n - rounded).abs() > DIVISIBILITY_TOL * n.max(1.0) || rounded < 1.0 {
        return Err(PlanError::InvalidStep(step));
    }
    Ok(rounded as usize)
}

impl CaptureSchedule {
    pub fn with_extra_views(mut self, extra: impl IntoIterator<Item = ExtraView>) -> Self {
        self.extra_views.extend(extra);
        self
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.view_id as usize != i {
                return Err(PlanError::Invalid(format!("view id {} at position {i}", e.view_id)));
            }
            if !(0.0..360.0).contains(&e.pan_deg) {
                return Err(PlanError::Invalid(format!("pan {} outside [0, 360)", e.pan_deg)));
            }
            if !(-90.0..=90.0).contains(&e.tilt_deg) {
                return Err(PlanError::InvalidTilt(e.tilt_deg));
            }
            match (self.mode, e.rail_mm) {
                (CaptureMode::Normal, Some(_)) => {
                    return Err(PlanError::Invalid(format!("normal entry {i} carries a rail position")))
                }
                (CaptureMode::Macro, None) => {
                    return Err(PlanError::Invalid(format!("macro entry {i} lacks a rail position")))
                }
                _ => {}
            }
        }
        for v in &self.extra_views {
            if !(-90.0..=90.0).contains(&v.tilt_deg) {
                return Err(PlanError::InvalidTilt(v.tilt_deg));
            }
        }
        Ok(())
    }

    /// Total number of images, extra views included.
    pub fn image_count(&self) -> usize {
        self.entries.len() + self.extra_views.len() * self.slices_per_pose()
    }

    pub fn slices_per_pose(&self) -> usize {
        self.pose_groups().first().map(|g| g.view_ids.len()).unwrap_or(1)
    }

    /// Groups consecutive entries sharing pan and tilt, then appends extra
    /// views (which reuse the rail positions of the first group).
    pub fn pose_groups(&self) -> Vec<PoseGroup> {
        let mut groups: Vec<PoseGroup> = Vec::new();
        for e in &self.entries {
            match groups.last_mut() {
                Some(g) if g.pan_deg == e.pan_deg && g.tilt_deg == e.tilt_deg => {
                    g.view_ids.push(e.view_id);
                    g.rail_mm.extend(e.rail_mm);
                }
                _ => groups.push(PoseGroup {
                    pose_id: groups.len() as u32,
                    pan_deg: e.pan_deg,
                    tilt_deg: e.tilt_deg,
                    view_ids: vec![e.view_id],
                    rail_mm: e.rail_mm.into_iter().collect(),
                    extra: false,
                }),
            }
        }
        let rails = groups.first().map(|g| g.rail_mm.clone()).unwrap_or_default();
        let mut next_view = self.entries.len() as u32;
        for v in &self.extra_views {
            let n = rails.len().max(1) as u32;
            groups.push(PoseGroup {
                pose_id: groups.len() as u32,
                pan_deg: v.pan_deg,
                tilt_deg: v.tilt_deg,
                view_ids: (next_view..next_view + n).collect(),
                rail_mm: rails.clone(),
                extra: true,
            });
            next_view += n;
        }
        groups
    }

    /// Plain-text table: `view_id pan_deg tilt_deg rail_mm|- [extra]`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# scarab capture schedule v1\n");
        let mode = match self.mode {
            CaptureMode::Normal => "normal",
            CaptureMode::Macro => "macro",
        };
        let _ = writeln!(out, "# mode {mode}");
        out.push_str("# view_id pan_deg tilt_deg rail_mm\n");
        let fmt_rail = |r: Option<f64>| r.map(|r| format!("{r}")).unwrap_or_else(|| "-".into());
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {} {}", e.view_id, e.pan_deg, e.tilt_deg, fmt_rail(e.rail_mm));
        }
        for g in self.pose_groups().iter().filter(|g| g.extra) {
            for (k, &id) in g.view_ids.iter().enumerate() {
                let rail = g.rail_mm.get(k).copied();
                let _ = writeln!(out, "{id} {} {} {} extra", g.pan_deg, g.tilt_deg, fmt_rail(rail));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PlanError> {
        let mut mode = None;
        let mut entries = Vec::new();
        let mut extra_views: Vec<ExtraView> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(m) = comment.trim().strip_prefix("mode ") {
                    mode = Some(match m.trim() {
                        "normal" => CaptureMode::Normal,
                        "macro" => CaptureMode::Macro,
                        other => {
                            return Err(PlanError::Parse {
                                line: line_no,
                                reason: format!("unknown mode {other}"),
                            })
                        }
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| PlanError::Parse {
                line: line_no,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 && !(fields.len() == 5 && fields[4] == "extra") {
                return Err(err("expected `view_id pan tilt rail [extra]`"));
            }
            let view_id: u32 = fields[0].parse().map_err(|_| err("bad view id"))?;
            let pan_deg: f64 = fields[1].parse().map_err(|_| err("bad pan"))?;
            let tilt_deg: f64 = fields[2].parse().map_err(|_| err("bad tilt"))?;
            let rail_mm = match fields[3] {
                "-" => None,
                r => Some(r.parse::<f64>().map_err(|_| err("bad rail position"))?),
            };
            if fields.len() == 5 {
                let duplicate = extra_views
                    .last()
                    .is_some_and(|v| v.pan_deg == pan_deg && v.tilt_deg == tilt_deg);
                if !duplicate {
                    extra_views.push(ExtraView { pan_deg, tilt_deg });
                }
            } else {
                entries.push(ScheduleEntry {
                    view_id,
                    pan_deg,
                    tilt_deg,
                    rail_mm,
                });
            }
        }
        let schedule = CaptureSchedule {
            mode: mode.ok_or(PlanError::Parse {
                line: 0,
                reason: "missing `# mode` header".into(),
            })?,
            entries,
            extra_views,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Macro lens state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensModel {
    pub magnification: f64,
    pub f_number: f64,
    /// Acceptable circle of confusion on the sensor, mm.
    pub circle_of_confusion: f64,
}

impl LensModel {
    pub const DEFAULT_CIRCLE_OF_CONFUSION: f64 = 0.03;

    pub fn new(magnification: f64, f_number: f64, circle_of_confusion: f64) -> Result<Self, PlanError> {
        let lens = Self {
            magnification,
            f_number,
            circle_of_confusion,
        };
        lens.validate()?;
        Ok(lens)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.f_number > 0.0 && self.circle_of_confusion > 0.0) {
            return Err(PlanError::InvalidLens("f-number and circle of confusion must be positive".into()));
        }
        if !(0.1..=5.0).contains(&self.magnification) {
            return Err(PlanError::InvalidLens(format!(
                "magnification {} outside [0.1, 5]",
                self.magnification
            )));
        }
        Ok(())
    }

    /// Sensor-plane blur diameter (mm) of a point `offset_mm` in front of or
    /// behind the focal plane; equals the circle of confusion at half the
    /// depth of field.
    pub fn blur_on_sensor(&self, offset_mm: f64) -> f64 {
        let m = self.magnification;
        offset_mm.abs() * m * m / (self.f_number * (m + 1.0))
    }
}

/// Total thin-lens depth of field in mm: `2 N c (m + 1) / m²`.
pub fn depth_of_field(lens: &LensModel) -> f64 {
    let m = lens.magnification;
    2.0 * lens.f_number * lens.circle_of_confusion * (m + 1.0) / (m * m)
}

/// Rail positions covering `[0, span_mm]` at `overlap_factor × dof_mm` spacing.
pub fn focus_slice_positions(span_mm: f64, dof_mm: f64, overlap_factor: f64) -> Vec<f64> {
    assert!(span_mm >= 0.0 && dof_mm > 0.0, "span must be non-negative and dof positive");
    assert!(overlap_factor > 0.0 && overlap_factor <= 1.0, "overlap factor in (0, 1]");
    let step = overlap_factor * dof_mm;
    let ratio = span_mm / step;
    // Absorb floating error so an exact multiple does not gain a slice.
    let intervals = (ratio - DIVISIBILITY_TOL * ratio.max(1.0)).ceil().max(0.0) as usize;
    (0..=intervals).map(|i| i as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TILTS: [f64; 4] = [10.0, 20.0, 30.0, 40.0];

    #[test]
    fn default_normal_plan_has_144_views() {
        let s = build_pose_schedule(10.0, &TILTS, &ShotPlan::Single).unwrap();
        assert_eq!(s.entries.len(), 144);
        assert_eq!(s.mode, CaptureMode::Normal);
        s.validate().unwrap();
        // Tilt-major, pan ascending.
        assert_eq!((s.entries[0].pan_deg, s.entries[0].tilt_deg), (0.0, 10.0));
        assert_eq!((s.entries[35].pan_deg, s.entries[35].tilt_deg), (350.0, 10.0));
        assert_eq!((s.entries[36].pan_deg, s.entries[36].tilt_deg), (0.0, 20.0));
    }

    #[test]
    fn quarter_turns() {
        let s = build_pose_schedule(90.0, &[0.0], &ShotPlan::Single).unwrap();
        assert_eq!(s.entries.len(), 4);
        assert!(s.entries.iter().all(|e| e.rail_mm.is_none()));
    }

    #[test]
    fn macro_plan_has_4464_images() {
        let rails: Vec<f64> = (0..31).map(|i| i as f64 * 0.25).collect();
        let s = build_pose_schedule(10.0, &TILTS, &ShotPlan::Stack(rails)).unwrap();
        assert_eq!(s.entries.len(), 4464);
        assert_eq!(s.pose_groups().len(), 144);
        assert!(s.entries.iter().all(|e| e.rail_mm.is_some()));
        s.validate().unwrap();
    }

    #[test]
    fn bad_steps_rejected() {
        for step in [0.0, -10.0, 7.0, 400.0, f64::NAN] {
            assert!(matches!(
                build_pose_schedule(step, &TILTS, &ShotPlan::Single),
                Err(PlanError::InvalidStep(_))
            ));
        }
        assert_eq!(build_pose_schedule(10.0, &[], &ShotPlan::Single), Err(PlanError::EmptyTilts));
        assert!(build_pose_schedule(10.0, &[95.0], &ShotPlan::Single).is_err());
    }

    #[test]
    fn dof_values() {
        let lens = LensModel::new(2.0, 8.0, 0.03).unwrap();
        assert_relative_eq!(depth_of_field(&lens), 0.36, epsilon = 1e-12);
        let lens = LensModel::new(1.0, 8.0, 0.03).unwrap();
        assert_relative_eq!(depth_of_field(&lens), 0.96, epsilon = 1e-12);
        let lens = LensModel::new(1.0, 8.0, 0.015).unwrap();
        assert_relative_eq!(depth_of_field(&lens), 0.48, epsilon = 1e-12);
        assert!(LensModel::new(6.0, 8.0, 0.03).is_err());
        assert!(LensModel::new(2.0, 0.0, 0.03).is_err());
    }

    #[test]
    fn blur_equals_coc_at_half_dof() {
        let lens = LensModel::new(2.5, 11.0, 0.03).unwrap();
        let half = depth_of_field(&lens) / 2.0;
        assert_relative_eq!(lens.blur_on_sensor(half), 0.03, epsilon = 1e-12);
    }

    #[test]
    fn thirty_one_slices_quarter_mm_apart() {
        let p = focus_slice_positions(7.5, 0.25 / 0.7, 0.7);
        assert_eq!(p.len(), 31);
        for w in p.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.25, epsilon = 1e-12);
        }
        assert_eq!(focus_slice_positions(0.0, 0.3, 0.7), vec![0.0]);
        let p = focus_slice_positions(1.0, 0.4, 1.0);
        assert_eq!(p, vec![0.0, 0.4, 0.8, 1.2000000000000002]);
    }

    #[test]
    fn schedule_text_round_trip() {
        let rails = focus_slice_positions(1.0, 0.5, 0.7);
        let s = build_pose_schedule(120.0, &[15.0, 30.0], &ShotPlan::Stack(rails))
            .unwrap()
            .with_extra_views([ExtraView {
                pan_deg: 45.0,
                tilt_deg: -60.0,
            }]);
        let parsed = CaptureSchedule::from_text(&s.to_text()).unwrap();
        assert_eq!(parsed, s);
        assert_eq!(parsed.image_count(), s.entries.len() + s.slices_per_pose());
        assert!(CaptureSchedule::from_text("0 0 0 -\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn schedule_length_is_product(pans in prop_pans(), tilts in 1usize..6, slices in 0usize..5) {
            let tilt_set: Vec<f64> = (0..tilts).map(|i| i as f64 * 10.0).collect();
            let shots = if slices == 0 { ShotPlan::Single } else { ShotPlan::Stack((0..slices).map(|i| i as f64).collect()) };
            let s = build_pose_schedule(360.0 / pans as f64, &tilt_set, &shots).unwrap();
            proptest::prop_assert_eq!(s.entries.len(), pans * tilts * slices.max(1));
        }

        #[test]
        fn dof_monotonicity(m in 1.0f64..4.9, n in 1.0f64..32.0, c in 0.005f64..0.1) {
            let base = depth_of_field(&LensModel::new(m, n, c).unwrap());
            proptest::prop_assert!(depth_of_field(&LensModel::new(m + 0.1, n, c).unwrap()) < base);
            proptest::prop_assert!(depth_of_field(&LensModel::new(m, n + 0.5, c).unwrap()) > base);
            proptest::prop_assert!(depth_of_field(&LensModel::new(m, n, c + 0.001).unwrap()) > base);
        }

        #[test]
        fn slices_cover_span(span in 0.0f64..20.0, dof in 0.05f64..2.0, overlap in 0.1f64..=1.0) {
            let p = focus_slice_positions(span, dof, overlap);
            let step = overlap * dof;
            proptest::prop_assert!(*p.last().unwrap() >= span * (1.0 - 1e-9));
            proptest::prop_assert_eq!(p[0], 0.0);
            for w in p.windows(2) {
                proptest::prop_assert!(((w[1] - w[0]) - step).abs() <= 1e-9 * step.max(1.0) * p.len() as f64);
            }
        }
    }

    fn prop_pans() -> impl proptest::strategy::Strategy<Value = usize> {
        proptest::sample::select(vec![1usize, 2, 3, 4, 6, 8, 12, 36, 72])
    }
}
