//! Event stream representation, serialization, temporal slicing, and
//! rasterization into count images.
//!
//! Streams are immutable after load; slices are read-only views into the
//! parent stream, so everything here is safe to use from parallel workers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{ensure, Error, Result};

const MODULE: &str = "event";
const MAGIC: &[u8; 4] = b"EVT1";
/// Size in bytes of one binary event record: u64 t, u16 x, u16 y, i8 p, u8 pad.
const RECORD_BYTES: u64 = 14;
/// Size in bytes of the binary header: magic, u32 width, u32 height, u64 count.
const HEADER_BYTES: u64 = 20;

/// A single sensor event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Timestamp in microseconds (non-negative).
    pub t: i64,
    /// Pixel column, `0 <= x < width`.
    pub x: u16,
    /// Pixel row, `0 <= y < height`.
    pub y: u16,
    /// Exactly `+1` or `-1`.
    pub polarity: i8,
}

/// Timestamped polarity events from a fixed-resolution sensor, sorted by `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    /// Builds a stream, validating every event and stable-sorting by
    /// timestamp (ties keep their input order).
    pub fn new(width: usize, height: usize, mut events: Vec<Event>) -> Result<Self> {
        validate_resolution(width, height)?;
        for (i, ev) in events.iter().enumerate() {
            validate_event(ev, width, height, i)?;
        }
        if !events.is_sorted_by_key(|e| e.t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Timestamps of the first and last event, or `None` when empty.
    pub fn time_span(&self) -> Option<(i64, i64)> {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => Some((a.t, b.t)),
            _ => None,
        }
    }
}

fn validate_resolution(width: usize, height: usize) -> Result<()> {
    ensure!(
        width > 0 && height > 0,
        MODULE,
        "resolution {width}x{height} must be positive"
    );
    ensure!(
        width <= 1 << 16 && height <= 1 << 16,
        MODULE,
        "resolution {width}x{height} exceeds 16-bit coordinate range"
    );
    Ok(())
}

fn validate_event(ev: &Event, width: usize, height: usize, index: usize) -> Result<()> {
    ensure!(
        ev.t >= 0,
        MODULE,
        "record {index}: negative timestamp {}",
        ev.t
    );
    ensure!(
        (ev.x as usize) < width && (ev.y as usize) < height,
        MODULE,
        "record {index}: coordinate ({}, {}) outside {width}x{height}",
        ev.x,
        ev.y
    );
    ensure!(
        ev.polarity == 1 || ev.polarity == -1,
        MODULE,
        "record {index}: polarity {} is not +1/-1",
        ev.polarity
    );
    Ok(())
}

/// On-disk representations understood by [`load_events`] / [`save_events`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFileFormat {
    /// "EVT1" binary layout.
    Binary,
    /// Text: header line `width,height`, then one `t,x,y,p` row per event.
    Csv,
}

/// Loads an event stream from `path`; unsorted input is sorted, malformed
/// content is a format error.
pub fn load_events(path: &Path, format: EventFileFormat) -> Result<EventStream> {
    match format {
        EventFileFormat::Binary => load_binary(path),
        EventFileFormat::Csv => load_csv(path),
    }
}

/// Writes `stream` to `path` in the chosen format.
pub fn save_events(stream: &EventStream, path: &Path, format: EventFileFormat) -> Result<()> {
    match format {
        EventFileFormat::Binary => save_binary(stream, path),
        EventFileFormat::Csv => save_csv(stream, path),
    }
}

fn load_binary(path: &Path) -> Result<EventStream> {
    let file = File::open(path).map_err(|e| Error::io(MODULE, path, e))?;
    let file_len = file
        .metadata()
        .map_err(|e| Error::io(MODULE, path, e))?
        .len();
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::format(
            MODULE,
            path,
            format!("bad magic {magic:?}, expected {MAGIC:?}"),
        ));
    }
    let width = read_u32(&mut r, path)? as usize;
    let height = read_u32(&mut r, path)? as usize;
    let count = read_u64(&mut r, path)?;

    let expected_len = HEADER_BYTES + count.saturating_mul(RECORD_BYTES);
    if file_len != expected_len {
        return Err(Error::format(
            MODULE,
            path,
            format!("header declares {count} events ({expected_len} bytes) but file is {file_len} bytes"),
        ));
    }

    let mut events = Vec::with_capacity(count as usize);
    let mut rec = [0u8; RECORD_BYTES as usize];
    for i in 0..count {
        read_exact(&mut r, &mut rec, path)?;
        let t_raw = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let t = i64::try_from(t_raw).map_err(|_| {
            Error::format(
                MODULE,
                path,
                format!("record {i}: timestamp {t_raw} exceeds supported range"),
            )
        })?;
        events.push(Event {
            t,
            x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            polarity: rec[12] as i8,
        });
    }
    EventStream::new(width, height, events)
}

fn save_binary(stream: &EventStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(MODULE, path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(MODULE, path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(stream.width as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(stream.height as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(stream.events.len() as u64).to_le_bytes())
        .map_err(io)?;
    for ev in &stream.events {
        let mut rec = [0u8; RECORD_BYTES as usize];
        rec[0..8].copy_from_slice(&(ev.t as u64).to_le_bytes());
        rec[8..10].copy_from_slice(&ev.x.to_le_bytes());
        rec[10..12].copy_from_slice(&ev.y.to_le_bytes());
        rec[12] = ev.polarity as u8;
        w.write_all(&rec).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn load_csv(path: &Path) -> Result<EventStream> {
    let file = File::open(path).map_err(|e| Error::io(MODULE, path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(line))) => line,
        Some((_, Err(e))) => return Err(Error::io(MODULE, path, e)),
        None => return Err(Error::format(MODULE, path, "missing width,height header")),
    };
    let mut parts = header.split(',');
    let width = parse_field::<usize>(parts.next(), path, 0, "width")?;
    let height = parse_field::<usize>(parts.next(), path, 0, "height")?;
    if parts.next().is_some() {
        return Err(Error::format(MODULE, path, "header has extra fields"));
    }

    let mut events = Vec::new();
    for (line_no, line) in lines {
        let line = line.map_err(|e| Error::io(MODULE, path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t = parse_field::<i64>(parts.next(), path, line_no, "t")?;
        let x = parse_field::<u16>(parts.next(), path, line_no, "x")?;
        let y = parse_field::<u16>(parts.next(), path, line_no, "y")?;
        let p = parse_field::<i8>(parts.next(), path, line_no, "p")?;
        if parts.next().is_some() {
            return Err(Error::format(
                MODULE,
                path,
                format!("line {}: extra fields", line_no + 1),
            ));
        }
        let polarity = match p {
            1 => 1,
            // Recordings in the wild use {1, 0} instead of {1, -1}.
            0 | -1 => -1,
            other => {
                return Err(Error::format(
                    MODULE,
                    path,
                    format!("line {}: polarity {} not in {{1, 0, -1}}", line_no + 1, other),
                ))
            }
        };
        events.push(Event { t, x, y, polarity });
    }
    EventStream::new(width, height, events)
}

fn save_csv(stream: &EventStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(MODULE, path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(MODULE, path, e);
    writeln!(w, "{},{}", stream.width, stream.height).map_err(io)?;
    for ev in &stream.events {
        writeln!(w, "{},{},{},{}", ev.t, ev.x, ev.y, ev.polarity).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    path: &Path,
    line_no: usize,
    name: &str,
) -> Result<T> {
    let raw = field.ok_or_else(|| {
        Error::format(MODULE, path, format!("line {}: missing {name}", line_no + 1))
    })?;
    raw.trim().parse::<T>().map_err(|_| {
        Error::format(
            MODULE,
            path,
            format!("line {}: cannot parse {name} from {raw:?}", line_no + 1),
        )
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(MODULE, path, "unexpected end of file")
        } else {
            Error::io(MODULE, path, e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, path)?;
    Ok(u64::from_le_bytes(buf))
}

/// A read-only window into a stream, running forward or backward from a
/// reference time.
#[derive(Debug, Clone, Copy)]
pub struct EventSlice<'a> {
    /// Half-open window `[t_start, t_end)` in microseconds.
    pub t_start: i64,
    pub t_end: i64,
    /// `+1` when the window extends forward from the reference time, `-1`
    /// backward. The zero-width slice at the reference time is `+1`.
    pub direction: i8,
    /// Sensor resolution inherited from the parent stream.
    pub width: usize,
    pub height: usize,
    /// Events with `t_start <= t < t_end`, sorted by timestamp.
    pub events: &'a [Event],
}

impl EventSlice<'_> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Window length in microseconds.
    pub fn duration(&self) -> i64 {
        self.t_end - self.t_start
    }
}

/// Cuts `2*n_e + 1` cumulative slices around `t_ref`.
///
/// Slice index `t` in `{-n_e, ..., n_e}` (returned in that order) covers the
/// cumulative interval between `t_ref` and `t_ref + t*delta_tau`: positive
/// indices run `[t_ref, t_ref + t*delta_tau)`, negative indices have reversed
/// bounds `[t_ref + t*delta_tau, t_ref)` and direction `-1`. Index 0 is the
/// empty slice. Slicing is cumulative (not disjoint segments) because the
/// blur synthesis consumes displacement accumulated from the reference frame;
/// the disjoint form is recoverable by differencing consecutive slices.
pub fn slice_events<'a>(
    stream: &'a EventStream,
    t_ref: i64,
    delta_tau: i64,
    n_e: usize,
) -> Result<Vec<EventSlice<'a>>> {
    ensure!(n_e > 0, MODULE, "n_e must be positive, got 0");
    ensure!(
        delta_tau > 0,
        MODULE,
        "delta_tau must be positive, got {delta_tau}"
    );
    let n = n_e as i64;
    let mut slices = Vec::with_capacity(2 * n_e + 1);
    for idx in -n..=n {
        let offset = t_ref + idx * delta_tau;
        let (t_start, t_end, direction) = if idx >= 0 {
            (t_ref, offset, 1)
        } else {
            (offset, t_ref, -1)
        };
        let lo = stream.events.partition_point(|e| e.t < t_start);
        let hi = stream.events.partition_point(|e| e.t < t_end);
        slices.push(EventSlice {
            t_start,
            t_end,
            direction,
            width: stream.width,
            height: stream.height,
            events: &stream.events[lo..hi],
        });
    }
    Ok(slices)
}

/// Rasterization mode for [`accumulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccumMode {
    /// One channel holding positive count minus negative count.
    Signed,
    /// Two channels holding the positive and negative counts.
    Split,
}

/// Per-pixel event counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCountImage {
    pub width: usize,
    pub height: usize,
    pub mode: AccumMode,
    /// `Signed`: `width * height` values. `Split`: positive channel followed
    /// by negative channel, `2 * width * height` values (both non-negative).
    data: Vec<f64>,
}

impl EventCountImage {
    pub fn zeros(width: usize, height: usize, mode: AccumMode) -> Self {
        let channels = match mode {
            AccumMode::Signed => 1,
            AccumMode::Split => 2,
        };
        EventCountImage {
            width,
            height,
            mode,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Signed count at a pixel, regardless of mode.
    pub fn signed_at(&self, x: usize, y: usize) -> f64 {
        let i = y * self.width + x;
        match self.mode {
            AccumMode::Signed => self.data[i],
            AccumMode::Split => self.data[i] - self.data[self.width * self.height + i],
        }
    }

    /// Positive-polarity count at a pixel.
    pub fn positive_at(&self, x: usize, y: usize) -> f64 {
        match self.mode {
            AccumMode::Signed => panic!("positive_at on signed-mode image"),
            AccumMode::Split => self.data[y * self.width + x],
        }
    }

    /// Negative-polarity count at a pixel.
    pub fn negative_at(&self, x: usize, y: usize) -> f64 {
        match self.mode {
            AccumMode::Signed => panic!("negative_at on signed-mode image"),
            AccumMode::Split => self.data[self.width * self.height + y * self.width + x],
        }
    }

    /// The signed single-channel view as a dense buffer.
    pub fn to_signed_vec(&self) -> Vec<f64> {
        match self.mode {
            AccumMode::Signed => self.data.clone(),
            AccumMode::Split => {
                let n = self.width * self.height;
                (0..n).map(|i| self.data[i] - self.data[n + i]).collect()
            }
        }
    }
}

/// Rasterizes a slice into per-pixel counts at the given resolution.
pub fn accumulate(
    slice: &EventSlice,
    resolution: (usize, usize),
    mode: AccumMode,
) -> Result<EventCountImage> {
    let (width, height) = resolution;
    ensure!(
        width == slice.width && height == slice.height,
        MODULE,
        "resolution {width}x{height} does not match parent stream {}x{}",
        slice.width,
        slice.height
    );
    let mut img = EventCountImage::zeros(width, height, mode);
    let plane = width * height;
    for ev in slice.events {
        let i = ev.y as usize * width + ev.x as usize;
        match mode {
            AccumMode::Signed => img.data[i] += ev.polarity as f64,
            AccumMode::Split => {
                if ev.polarity > 0 {
                    img.data[i] += 1.0;
                } else {
                    img.data[plane + i] += 1.0;
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: i64, x: u16, y: u16, polarity: i8) -> Event {
        Event { t, x, y, polarity }
    }

    #[test]
    fn empty_csv_section_loads_zero_events() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "64,64\n").unwrap();
        let stream = load_events(&path, EventFileFormat::Csv).unwrap();
        assert_eq!(stream.width(), 64);
        assert_eq!(stream.height(), 64);
        assert!(stream.is_empty());
    }

    #[test]
    fn csv_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        std::fs::write(&path, "64,64\n100,3,4,1\n").unwrap();
        let stream = load_events(&path, EventFileFormat::Csv).unwrap();
        assert_eq!(stream.events(), &[ev(100, 3, 4, 1)]);
    }

    #[test]
    fn csv_zero_polarity_maps_to_negative() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.csv");
        std::fs::write(&path, "8,8\n5,1,1,0\n6,2,2,-1\n").unwrap();
        let stream = load_events(&path, EventFileFormat::Csv).unwrap();
        assert_eq!(stream.events()[0].polarity, -1);
        assert_eq!(stream.events()[1].polarity, -1);
    }

    #[test]
    fn binary_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.evt1");
        let stream = EventStream::new(
            32,
            16,
            vec![ev(0, 0, 0, 1), ev(5, 31, 15, -1), ev(5, 2, 3, 1), ev(9, 1, 1, -1)],
        )
        .unwrap();
        save_events(&stream, &path, EventFileFormat::Binary).unwrap();
        let back = load_events(&path, EventFileFormat::Binary).unwrap();
        assert_eq!(back, stream);

        // Re-saving the loaded stream reproduces the file byte-for-byte.
        let path2 = dir.path().join("s2.evt1");
        save_events(&back, &path2, EventFileFormat::Binary).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let stream =
            EventStream::new(10, 10, vec![ev(1, 2, 3, -1), ev(4, 5, 6, 1)]).unwrap();
        save_events(&stream, &path, EventFileFormat::Csv).unwrap();
        let back = load_events(&path, EventFileFormat::Csv).unwrap();
        assert_eq!(back, stream);
    }

    #[test]
    fn unsorted_input_is_stable_sorted() {
        let events = vec![ev(10, 1, 0, 1), ev(5, 2, 0, 1), ev(10, 3, 0, 1), ev(5, 4, 0, 1)];
        let stream = EventStream::new(8, 8, events).unwrap();
        let ts: Vec<i64> = stream.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![5, 5, 10, 10]);
        // Stability: equal timestamps keep their original relative order.
        let xs: Vec<u16> = stream.events().iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![2, 4, 1, 3]);
    }

    #[test]
    fn out_of_range_coordinate_reports_record_index() {
        let err = EventStream::new(8, 8, vec![ev(0, 1, 1, 1), ev(1, 8, 0, 1)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 1"), "message was {msg:?}");
        assert!(msg.contains("(8, 0)"), "message was {msg:?}");
    }

    #[test]
    fn bad_polarity_rejected() {
        let err = EventStream::new(8, 8, vec![ev(0, 0, 0, 2)]).unwrap_err();
        assert!(err.to_string().contains("polarity 2"));
    }

    #[test]
    fn binary_header_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.evt1");
        let stream = EventStream::new(8, 8, vec![ev(0, 0, 0, 1)]).unwrap();
        save_events(&stream, &path, EventFileFormat::Binary).unwrap();

        // Truncate one byte: declared count no longer matches file size.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        let err = load_events(&path, EventFileFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("declares 1 events"));

        std::fs::write(&path, b"NOPE").unwrap();
        let err = load_events(&path, EventFileFormat::Binary).unwrap_err();
        assert!(err.to_string().contains("bad magic") || err.to_string().contains("end of file"));
    }

    fn uniform_1khz_stream() -> EventStream {
        // One event per millisecond over [0, 10 ms].
        let events = (0..=10).map(|i| ev(i * 1000, 1, 1, 1)).collect();
        EventStream::new(8, 8, events).unwrap()
    }

    #[test]
    fn slice_count_and_layout() {
        let stream = uniform_1khz_stream();
        let slices = slice_events(&stream, 5000, 1000, 5).unwrap();
        assert_eq!(slices.len(), 11);

        // Index 0 (position n_e) is the empty forward slice at the reference.
        let zero = &slices[5];
        assert_eq!(zero.t_start, 5000);
        assert_eq!(zero.t_end, 5000);
        assert_eq!(zero.direction, 1);
        assert!(zero.is_empty());
    }

    #[test]
    fn positive_slice_matches_linear_scan() {
        let stream = uniform_1khz_stream();
        let slices = slice_events(&stream, 5000, 1000, 5).unwrap();
        // Index +3 lives at position n_e + 3 = 8 and covers [5 ms, 8 ms).
        let s = &slices[8];
        assert_eq!((s.t_start, s.t_end, s.direction), (5000, 8000, 1));
        let brute: Vec<&Event> = stream
            .events()
            .iter()
            .filter(|e| e.t >= 5000 && e.t < 8000)
            .collect();
        assert_eq!(s.events.len(), brute.len());
        assert_eq!(s.events.len(), 3);
        for (a, b) in s.events.iter().zip(brute) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn negative_slice_has_reversed_bounds() {
        let stream = uniform_1khz_stream();
        let slices = slice_events(&stream, 5000, 1000, 5).unwrap();
        // Index -2 lives at position n_e - 2 = 3 and covers [3 ms, 5 ms).
        let s = &slices[3];
        assert_eq!((s.t_start, s.t_end, s.direction), (3000, 5000, -1));
        assert_eq!(s.events.len(), 2); // events at 3 ms and 4 ms
    }

    #[test]
    fn degenerate_slicing_rejected() {
        let stream = uniform_1khz_stream();
        assert!(slice_events(&stream, 0, 1000, 0).is_err());
        assert!(slice_events(&stream, 0, 0, 5).is_err());
        assert!(slice_events(&stream, 0, -3, 5).is_err());
    }

    #[test]
    fn accumulate_empty_slice_is_zero() {
        let stream = uniform_1khz_stream();
        let slices = slice_events(&stream, 5000, 1000, 5).unwrap();
        let img = accumulate(&slices[5], (8, 8), AccumMode::Signed).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accumulate_cancellation_in_signed_mode() {
        let stream =
            EventStream::new(8, 8, vec![ev(0, 3, 3, 1), ev(1, 3, 3, -1)]).unwrap();
        let slices = slice_events(&stream, 0, 10, 1).unwrap();
        let img = accumulate(&slices[2], (8, 8), AccumMode::Signed).unwrap();
        assert_eq!(img.signed_at(3, 3), 0.0);

        let split = accumulate(&slices[2], (8, 8), AccumMode::Split).unwrap();
        assert_eq!(split.positive_at(3, 3), 1.0);
        assert_eq!(split.negative_at(3, 3), 1.0);
        assert_eq!(split.signed_at(3, 3), 0.0);
    }

    #[test]
    fn accumulate_rejects_foreign_resolution() {
        let stream = uniform_1khz_stream();
        let slices = slice_events(&stream, 5000, 1000, 5).unwrap();
        assert!(accumulate(&slices[8], (16, 16), AccumMode::Signed).is_err());
    }
}
