//! Track geometry: geographic to planar conversion, orientation, segment
//! partitioning and projection onto the inside rail.
//!
//! Planar coordinates are metres east (`x`) and north (`y`) of a per-track
//! origin. Each axis is a great-circle (haversine) distance: `y` along the
//! origin meridian and `x` along the point's own parallel. Against a local
//! tangent plane the only missing term is the meridian-convergence offset
//! `x² tan(φ₀) / 2R` in `y`, which stays below 0.1 m within about 1.2 km
//! east-west of the origin at mid latitudes. Race tracks fit comfortably.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Spacing of the arclength-indexed inside-rail samples.
pub const RAIL_SPACING_M: f64 = 0.1;

/// Samples per projection bucket.
const BUCKET: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        let p = Self {
            latitude,
            longitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.latitude.is_finite() || !self.longitude.is_finite() {
            return Err(Error::InvalidCoordinate(format!(
                "non-finite latitude/longitude ({}, {})",
                self.latitude, self.longitude
            )));
        }
        if !(-90.0..=90.0).contains(&self.latitude) || !(-180.0..=180.0).contains(&self.longitude)
        {
            return Err(Error::InvalidCoordinate(format!(
                "latitude/longitude ({}, {}) out of range",
                self.latitude, self.longitude
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn distance_sq(&self, other: &PlanarPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn distance(&self, other: &PlanarPoint) -> f64 {
        self.distance_sq(other).sqrt()
    }
}

/// Position in the forward-lateral plane of a track.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackPosition {
    /// Arclength along the inside rail from the race origin.
    pub forward: f64,
    /// Distance to the inside rail, never negative.
    pub lateral: f64,
}

impl TrackPosition {
    pub const fn new(forward: f64, lateral: f64) -> Self {
        Self { forward, lateral }
    }
}

/// Per-frame movement in the forward-lateral plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionDelta {
    pub d_forward: f64,
    /// Positive means moving away from the inside rail.
    pub d_lateral: f64,
    pub d_total: f64,
}

pub fn motion_delta(prev: TrackPosition, cur: TrackPosition) -> MotionDelta {
    let d_forward = cur.forward - prev.forward;
    let d_lateral = cur.lateral - prev.lateral;
    MotionDelta {
        d_forward,
        d_lateral,
        d_total: d_forward.hypot(d_lateral),
    }
}

fn haversine_central_angle(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let dphi = lat2 - lat1;
    let dlambda = lon2 - lon1;
    let h = (dphi / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * h.sqrt().min(1.0).asin()
}

/// Great-circle distance in metres.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    EARTH_RADIUS_M
        * haversine_central_angle(
            a.latitude.to_radians(),
            a.longitude.to_radians(),
            b.latitude.to_radians(),
            b.longitude.to_radians(),
        )
}

pub fn geo_to_plane(point: GeoPoint, origin: GeoPoint) -> Result<PlanarPoint> {
    point.validate()?;
    origin.validate()?;
    let (lat0, lon0) = (origin.latitude.to_radians(), origin.longitude.to_radians());
    let (lat, lon) = (point.latitude.to_radians(), point.longitude.to_radians());
    let north = EARTH_RADIUS_M * haversine_central_angle(lat0, lon0, lat, lon0);
    let east = EARTH_RADIUS_M * haversine_central_angle(lat, lon0, lat, lon);
    Ok(PlanarPoint {
        x: east.copysign(lon - lon0),
        y: north.copysign(lat - lat0),
    })
}

/// Inverse of [`geo_to_plane`].
pub fn plane_to_geo(point: PlanarPoint, origin: GeoPoint) -> Result<GeoPoint> {
    if !point.x.is_finite() || !point.y.is_finite() {
        return Err(Error::InvalidCoordinate(format!(
            "non-finite planar point ({}, {})",
            point.x, point.y
        )));
    }
    let lat = origin.latitude.to_radians() + point.y / EARTH_RADIUS_M;
    let s = (point.x.abs() / (2.0 * EARTH_RADIUS_M)).sin() / lat.cos();
    if s > 1.0 {
        return Err(Error::InvalidCoordinate(format!(
            "planar offset {} m is not representable at latitude {}",
            point.x,
            lat.to_degrees()
        )));
    }
    let dlon = (2.0 * s.asin()).copysign(point.x);
    GeoPoint::new(lat.to_degrees(), origin.longitude + dlon.to_degrees())
}

/// Rigid rotation about a fixed centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub angle: f64,
    pub center: PlanarPoint,
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        angle: 0.0,
        center: PlanarPoint::new(0.0, 0.0),
    };

    pub fn apply(&self, p: PlanarPoint) -> PlanarPoint {
        let (s, c) = self.angle.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        PlanarPoint {
            x: self.center.x + c * dx - s * dy,
            y: self.center.y + s * dx + c * dy,
        }
    }
}

/// Rotates `outline` about its centroid so that its principal axis is
/// horizontal. The returned rotation must be applied to every competitor
/// point of the same track.
pub fn normalize_orientation(outline: &[PlanarPoint]) -> Result<(Vec<PlanarPoint>, Rotation)> {
    if outline.len() < 3 {
        return Err(Error::Geometry(format!(
            "outline needs at least 3 points, got {}",
            outline.len()
        )));
    }
    let n = outline.len() as f64;
    let cx = outline.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = outline.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in outline {
        let dx = p.x - cx;
        let dy = p.y - cy;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let spread = sxx + syy;
    if !spread.is_finite() || spread <= 1e-12 * n {
        return Err(Error::Geometry("outline has no spread".into()));
    }
    // Relative threshold keeps an already-normalized outline a fixed point.
    let axis = if sxy.abs() <= 1e-12 * spread && sxx >= syy {
        0.0
    } else {
        0.5 * (2.0 * sxy).atan2(sxx - syy)
    };
    let rotation = Rotation {
        angle: -axis,
        center: PlanarPoint::new(cx, cy),
    };
    let rotated = outline.iter().map(|&p| rotation.apply(p)).collect();
    Ok((rotated, rotation))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Chute,
    LeftTurn,
    RightTurn,
    Stretch,
    HomeStretch,
}

impl Segment {
    pub fn is_turn(self) -> bool {
        matches!(self, Segment::LeftTurn | Segment::RightTurn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Chute => "chute",
            Segment::LeftTurn => "left_turn",
            Segment::RightTurn => "right_turn",
            Segment::Stretch => "stretch",
            Segment::HomeStretch => "home_stretch",
        }
    }
}

/// Inclusive arclength range forced to [`Segment::Chute`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChuteRange {
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug)]
struct Bucket {
    center: PlanarPoint,
    radius: f64,
}

/// Planar track outlines plus the inside rail resampled every 0.1 m.
///
/// Rail sample `i` sits at arclength `i * 0.1` from the first inner-outline
/// point, which is the race origin (start gate).
#[derive(Clone, Debug)]
pub struct TrackModel {
    pub inner_outline: Vec<PlanarPoint>,
    pub outer_outline: Vec<PlanarPoint>,
    pub finish_line: [PlanarPoint; 2],
    rail: Vec<PlanarPoint>,
    labels: Vec<Segment>,
    /// Start arclength of the home-stretch run, when that run follows a turn.
    home_stretch_entry: Option<f64>,
    buckets: Vec<Bucket>,
}

impl TrackModel {
    /// Builds the rail index and labels segments.
    pub fn new(
        inner_outline: Vec<PlanarPoint>,
        outer_outline: Vec<PlanarPoint>,
        finish_line: [PlanarPoint; 2],
        chutes: &[ChuteRange],
    ) -> Result<Self> {
        let rail = resample_polyline(&inner_outline, RAIL_SPACING_M)?;
        let buckets = make_buckets(&rail);
        let mut track = TrackModel {
            inner_outline,
            outer_outline,
            finish_line,
            labels: vec![Segment::Stretch; rail.len()],
            rail,
            home_stretch_entry: None,
            buckets,
        };
        track.labels = track.partition_segments(chutes)?;
        track.home_stretch_entry = track.find_home_stretch_entry();
        Ok(track)
    }

    /// Rail without segment partitioning; every sample is a plain stretch.
    pub fn rail_only(inner_outline: Vec<PlanarPoint>) -> Result<Self> {
        let first = *inner_outline
            .first()
            .ok_or_else(|| Error::Geometry("empty inner outline".into()))?;
        let rail = resample_polyline(&inner_outline, RAIL_SPACING_M)?;
        Ok(TrackModel {
            inner_outline,
            outer_outline: Vec::new(),
            finish_line: [first, first],
            labels: vec![Segment::Stretch; rail.len()],
            buckets: make_buckets(&rail),
            rail,
            home_stretch_entry: None,
        })
    }

    pub fn rail(&self) -> &[PlanarPoint] {
        &self.rail
    }

    pub fn segment_labels(&self) -> &[Segment] {
        &self.labels
    }

    pub fn rail_length(&self) -> f64 {
        (self.rail.len().saturating_sub(1)) as f64 * RAIL_SPACING_M
    }

    #[inline]
    pub fn arclength(&self, sample: usize) -> f64 {
        sample as f64 * RAIL_SPACING_M
    }

    /// Label of the rail sample nearest to `forward`.
    pub fn segment_at(&self, forward: f64) -> Result<Segment> {
        Ok(self.labels[self.sample_index(forward)?])
    }

    fn sample_index(&self, forward: f64) -> Result<usize> {
        let len = self.rail_length();
        if !(forward >= -1e-9 && forward <= len + 1e-9) {
            return Err(Error::Range(format!(
                "forward position {forward} outside rail [0, {len}]"
            )));
        }
        Ok(((forward / RAIL_SPACING_M).round() as usize).min(self.rail.len() - 1))
    }

    pub fn home_stretch_entry(&self) -> Option<f64> {
        self.home_stretch_entry
    }

    /// Circle construction: the turn circles have diameter equal to the
    /// inner outline's y-extent and sit flush with its left and right ends.
    pub fn partition_segments(&self, chutes: &[ChuteRange]) -> Result<Vec<Segment>> {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &self.inner_outline {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
        let radius = (max_y - min_y) / 2.0;
        let left_cx = min_x + radius;
        let right_cx = max_x - radius;

        let mut labels: Vec<Segment> = self
            .rail
            .iter()
            .map(|p| {
                if p.x < left_cx {
                    Segment::LeftTurn
                } else if p.x > right_cx {
                    Segment::RightTurn
                } else {
                    Segment::Stretch
                }
            })
            .collect();
        for chute in chutes {
            if !(chute.start <= chute.end) {
                return Err(Error::Config(format!(
                    "chute range [{}, {}] is empty",
                    chute.start, chute.end
                )));
            }
            for (i, label) in labels.iter_mut().enumerate() {
                let s = self.arclength(i);
                if s >= chute.start - 1e-9 && s <= chute.end + 1e-9 {
                    *label = Segment::Chute;
                }
            }
        }

        let finish_mid = PlanarPoint::new(
            0.5 * (self.finish_line[0].x + self.finish_line[1].x),
            0.5 * (self.finish_line[0].y + self.finish_line[1].y),
        );
        let (finish_idx, _) = self.nearest_sample(finish_mid)?;
        if labels[finish_idx] != Segment::Stretch {
            return Err(Error::Config(format!(
                "finish line projects to arclength {:.1} m, which is labelled {} rather than a stretch",
                self.arclength(finish_idx),
                labels[finish_idx].as_str()
            )));
        }
        let mut lo = finish_idx;
        while lo > 0 && labels[lo - 1] == Segment::Stretch {
            lo -= 1;
        }
        let mut hi = finish_idx;
        while hi + 1 < labels.len() && labels[hi + 1] == Segment::Stretch {
            hi += 1;
        }
        for label in &mut labels[lo..=hi] {
            *label = Segment::HomeStretch;
        }
        Ok(labels)
    }

    fn find_home_stretch_entry(&self) -> Option<f64> {
        let start = self.labels.iter().position(|&l| l == Segment::HomeStretch)?;
        (start > 0 && self.labels[start - 1].is_turn()).then(|| self.arclength(start))
    }

    /// Index and squared distance of the nearest rail sample; ties go to the
    /// smaller arclength.
    pub fn nearest_sample(&self, point: PlanarPoint) -> Result<(usize, f64)> {
        if self.rail.is_empty() {
            return Err(Error::Geometry("empty rail".into()));
        }
        let lower: Vec<f64> = self
            .buckets
            .iter()
            .map(|b| (point.distance(&b.center) - b.radius - 1e-9).max(0.0))
            .collect();
        let first = lower
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut best = (usize::MAX, f64::INFINITY);
        let scan = |bucket: usize, best: &mut (usize, f64)| {
            let start = bucket * BUCKET;
            let end = (start + BUCKET).min(self.rail.len());
            for i in start..end {
                let d2 = self.rail[i].distance_sq(&point);
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
        };
        scan(first, &mut best);
        for (bucket, lb) in lower.iter().enumerate() {
            if bucket != first && lb * lb <= best.1 {
                scan(bucket, &mut best);
            }
        }
        Ok(best)
    }

    /// Nearest-sample projection at the rail's 0.1 m resolution.
    pub fn project(&self, point: PlanarPoint) -> Result<TrackPosition> {
        let (idx, d2) = self.nearest_sample(point)?;
        Ok(TrackPosition {
            forward: self.arclength(idx),
            lateral: d2.sqrt(),
        })
    }

    /// Planar point at `lateral` metres from the rail at arclength `forward`,
    /// offset to the right of the running direction (`outward = 1`) or to
    /// the left (`outward = -1`).
    pub fn locate(&self, position: TrackPosition, outward: f64) -> Result<PlanarPoint> {
        let i = self.sample_index(position.forward)?;
        let (a, b) = if i + 1 < self.rail.len() {
            (self.rail[i], self.rail[i + 1])
        } else {
            (self.rail[i - 1], self.rail[i])
        };
        let len = a.distance(&b);
        let (tx, ty) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let base = self.rail[i];
        Ok(PlanarPoint {
            x: base.x + outward * ty * position.lateral,
            y: base.y - outward * tx * position.lateral,
        })
    }
}

pub fn project_to_track(point: PlanarPoint, track: &TrackModel) -> Result<TrackPosition> {
    track.project(point)
}

fn make_buckets(rail: &[PlanarPoint]) -> Vec<Bucket> {
    rail.chunks(BUCKET)
        .map(|chunk| {
            let center = chunk[chunk.len() / 2];
            let radius = chunk
                .iter()
                .map(|p| p.distance(&center))
                .fold(0.0, f64::max);
            Bucket { center, radius }
        })
        .collect()
}

fn resample_polyline(points: &[PlanarPoint], spacing: f64) -> Result<Vec<PlanarPoint>> {
    if points.is_empty() {
        return Err(Error::Geometry("empty inner outline".into()));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Geometry("inner outline has non-finite points".into()));
    }
    let mut cumulative = Vec::with_capacity(points.len());
    cumulative.push(0.0);
    for w in points.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + w[0].distance(&w[1]));
    }
    let total = *cumulative.last().unwrap();
    let n = (total / spacing + 1e-9).floor() as usize + 1;
    let mut rail = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = i as f64 * spacing;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        if points.len() == 1 {
            rail.push(points[0]);
            continue;
        }
        let (s0, s1) = (cumulative[seg], cumulative[seg + 1]);
        let t = if s1 > s0 {
            ((s - s0) / (s1 - s0)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (points[seg], points[seg + 1]);
        rail.push(PlanarPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    Ok(rail)
}

/// Track outline as read from disk, in geographic coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoOutline {
    pub inner: Vec<GeoPoint>,
    pub outer: Vec<GeoPoint>,
    pub finish: [GeoPoint; 2],
}

/// Maps competitor coordinates of one track into its normalized plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub origin: GeoPoint,
    pub rotation: Rotation,
}

impl TrackFrame {
    pub fn to_plane(&self, point: GeoPoint) -> Result<PlanarPoint> {
        Ok(self.rotation.apply(geo_to_plane(point, self.origin)?))
    }
}

impl GeoOutline {
    /// Converts to the plane (origin at the first inner point), rotates the
    /// stretches horizontal and builds the track.
    pub fn build(&self, chutes: &[ChuteRange]) -> Result<(TrackModel, TrackFrame)> {
        let origin = *self
            .inner
            .first()
            .ok_or_else(|| Error::Geometry("empty inner outline".into()))?;
        let to_plane = |pts: &[GeoPoint]| -> Result<Vec<PlanarPoint>> {
            pts.iter().map(|&p| geo_to_plane(p, origin)).collect()
        };
        let inner = to_plane(&self.inner)?;
        let (inner, rotation) = normalize_orientation(&inner)?;
        let outer = to_plane(&self.outer)?
            .into_iter()
            .map(|p| rotation.apply(p))
            .collect();
        let finish = [
            rotation.apply(geo_to_plane(self.finish[0], origin)?),
            rotation.apply(geo_to_plane(self.finish[1], origin)?),
        ];
        let track = TrackModel::new(inner, outer, finish, chutes)?;
        Ok((track, TrackFrame { origin, rotation }))
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct OutlineRecord {
    boundary: String,
    seq: i64,
    latitude: f64,
    longitude: f64,
}

/// Reads a `boundary,seq,latitude,longitude` table.
pub fn read_track_outline<R: Read>(reader: R) -> Result<GeoOutline> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    let mut finish = Vec::new();
    for (i, rec) in rdr.deserialize::<OutlineRecord>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Schema {
            row,
            message: e.to_string(),
        })?;
        let p = GeoPoint::new(rec.latitude, rec.longitude).map_err(|e| Error::Schema {
            row,
            message: e.to_string(),
        })?;
        match rec.boundary.to_ascii_lowercase().as_str() {
            "inner" => inner.push((rec.seq, p)),
            "outer" => outer.push((rec.seq, p)),
            "finish" => finish.push((rec.seq, p)),
            other => {
                return Err(Error::Schema {
                    row,
                    message: format!("unknown boundary `{other}`"),
                })
            }
        }
    }
    let sorted = |mut v: Vec<(i64, GeoPoint)>| -> Vec<GeoPoint> {
        v.sort_by_key(|(s, _)| *s);
        v.into_iter().map(|(_, p)| p).collect()
    };
    let finish = sorted(finish);
    if finish.len() != 2 {
        return Err(Error::Schema {
            row: 0,
            message: format!("finish line needs exactly 2 points, got {}", finish.len()),
        });
    }
    let inner = sorted(inner);
    if inner.len() < 3 {
        return Err(Error::Schema {
            row: 0,
            message: "inner outline needs at least 3 points".into(),
        });
    }
    Ok(GeoOutline {
        inner,
        outer: sorted(outer),
        finish: [finish[0], finish[1]],
    })
}

pub fn read_track_outline_file(path: &Path) -> Result<GeoOutline> {
    read_track_outline(std::fs::File::open(path)?)
}

pub fn write_track_outline<W: std::io::Write>(outline: &GeoOutline, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let groups: [(&str, &[GeoPoint]); 3] = [
        ("inner", &outline.inner),
        ("outer", &outline.outer),
        ("finish", &outline.finish),
    ];
    for (boundary, pts) in groups {
        for (seq, p) in pts.iter().enumerate() {
            wtr.serialize(OutlineRecord {
                boundary: boundary.to_string(),
                seq: seq as i64,
                latitude: p.latitude,
                longitude: p.longitude,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}
