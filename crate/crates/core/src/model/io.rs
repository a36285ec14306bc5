//! CSV and JSONL tables. Lines starting with `#` are comments; outputs may carry a provenance line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Direction, Route, RouteId, ScheduleEntry, SpeedClass, Stop, StopEvent, StopId, SwipeRecord};
use crate::{Error, Result};

/// Provenance comment written as the first line of CSV outputs.
pub fn provenance_line(config_hash: &str) -> String {
    format!("# tool={} config={}", crate::TOOL_VERSION, config_hash)
}

fn strip_comments(text: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(text.len());
    let mut line_no = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim_start().starts_with('#') || line.trim().is_empty() {
            continue;
        }
        out.push_str(line);
        out.push('\n');
        line_no.push(i + 1);
    }
    (out, line_no)
}

/// Parses CSV text with a header row into typed rows.
pub fn parse_csv<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>> {
    let (body, line_no) = strip_comments(text);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let row: T = rec.map_err(|e| Error::Schema {
            path: origin.to_path_buf(),
            row: line_no.get(i + 1).copied().unwrap_or(i + 2),
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv(&text, path)
}

fn writer_with_header<W: Write>(out: W, header: Option<&str>) -> Result<csv::Writer<BufWriter<W>>> {
    let mut w = BufWriter::new(out);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(w))
}

/// Writes `columns` then each row produced by `row`.
pub fn write_rows<T>(
    out: impl Write,
    header: Option<&str>,
    columns: &[&str],
    rows: &[T],
    mut row: impl FnMut(&T) -> Vec<String>,
) -> Result<()> {
    let mut w = writer_with_header(out, header)?;
    w.write_record(columns)?;
    for r in rows {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(File::create(path)?)
}

/// Serde-driven CSV output for flat row types.
pub fn write_csv<T: Serialize>(path: &Path, header: Option<&str>, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_stops(text: &str, origin: &Path) -> Result<Vec<Stop>> {
    let stops: Vec<Stop> = parse_csv(text, origin)?;
    for (i, s) in stops.iter().enumerate() {
        if s.id.as_str().is_empty() || !s.position().is_valid() {
            return Err(Error::Schema {
                path: origin.to_path_buf(),
                row: i + 2,
                message: format!("invalid stop `{}`", s.id),
            });
        }
    }
    Ok(stops)
}

pub fn read_stops(path: &Path) -> Result<Vec<Stop>> {
    parse_stops(&std::fs::read_to_string(path)?, path)
}

pub fn write_stops(out: impl Write, header: Option<&str>, stops: &[Stop]) -> Result<()> {
    write_rows(out, header, &["stop_id", "name", "lat", "lon", "zone"], stops, |s| {
        vec![
            s.id.0.clone(),
            s.name.clone(),
            format!("{:.7}", s.lat),
            format!("{:.7}", s.lon),
            match s.zone {
                super::Zone::Downtown => "downtown".into(),
                super::Zone::Suburb => "suburb".into(),
            },
        ]
    })
}

#[derive(Deserialize)]
struct RouteRow {
    route_id: RouteId,
    direction: Direction,
    headway_min: f64,
    #[serde(default)]
    speed_class: SpeedClass,
    stop_seq: String,
}

pub fn parse_routes(text: &str, origin: &Path) -> Result<Vec<Route>> {
    let rows: Vec<RouteRow> = parse_csv(text, origin)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let route = Route {
                id: r.route_id,
                direction: r.direction,
                headway_min: r.headway_min,
                speed_class: r.speed_class,
                stops: r.stop_seq.split('|').map(|s| StopId::new(s.trim())).collect(),
            };
            route.validate().map_err(|e| Error::Schema {
                path: origin.to_path_buf(),
                row: i + 2,
                message: e.to_string(),
            })?;
            Ok(route)
        })
        .collect()
}

pub fn read_routes(path: &Path) -> Result<Vec<Route>> {
    parse_routes(&std::fs::read_to_string(path)?, path)
}

fn direction_str(d: Direction) -> &'static str {
    match d {
        Direction::Up => "up",
        Direction::Down => "down",
    }
}

fn speed_str(s: SpeedClass) -> &'static str {
    match s {
        SpeedClass::Regular => "regular",
        SpeedClass::Express => "express",
    }
}

pub fn write_routes(out: impl Write, header: Option<&str>, routes: &[Route]) -> Result<()> {
    write_rows(
        out,
        header,
        &["route_id", "direction", "headway_min", "speed_class", "stop_seq"],
        routes,
        |r| {
            vec![
                r.id.0.clone(),
                direction_str(r.direction).into(),
                r.headway_min.to_string(),
                speed_str(r.speed_class).into(),
                r.stops.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|"),
            ]
        },
    )
}

pub fn parse_swipes(text: &str, origin: &Path) -> Result<Vec<SwipeRecord>> {
    let swipes: Vec<SwipeRecord> = parse_csv(text, origin)?;
    if let Some(i) = swipes.iter().position(|s| s.ts <= 0 || s.card.as_str().is_empty()) {
        return Err(Error::Schema {
            path: origin.to_path_buf(),
            row: i + 2,
            message: "swipe needs a card id and a positive timestamp".into(),
        });
    }
    Ok(swipes)
}

pub fn read_swipes(path: &Path) -> Result<Vec<SwipeRecord>> {
    parse_swipes(&std::fs::read_to_string(path)?, path)
}

/// Matched columns are emitted only when some record carries them.
pub fn write_swipes(out: impl Write, header: Option<&str>, swipes: &[SwipeRecord]) -> Result<()> {
    let matched = swipes.iter().any(|s| s.boarding_stop.is_some() || s.trip_index.is_some());
    let mut cols = vec!["card_id", "ts", "vehicle_id", "route_id"];
    if matched {
        cols.extend(["boarding_stop_id", "trip_index"]);
    }
    write_rows(out, header, &cols, swipes, |s| {
        let mut v = vec![s.card.0.clone(), s.ts.to_string(), s.vehicle.0.clone(), s.route.0.clone()];
        if matched {
            v.push(s.boarding_stop.as_ref().map(|x| x.0.clone()).unwrap_or_default());
            v.push(s.trip_index.map(|x| x.to_string()).unwrap_or_default());
        }
        v
    })
}

pub fn parse_avl(text: &str, origin: &Path) -> Result<Vec<StopEvent>> {
    let events: Vec<StopEvent> = parse_csv(text, origin)?;
    if let Some(i) = events.iter().position(|e| e.arrive_ts > e.depart_ts) {
        return Err(Error::Schema {
            path: origin.to_path_buf(),
            row: i + 2,
            message: "arrive_ts after depart_ts".into(),
        });
    }
    Ok(events)
}

pub fn read_avl(path: &Path) -> Result<Vec<StopEvent>> {
    parse_avl(&std::fs::read_to_string(path)?, path)
}

pub fn write_avl(out: impl Write, header: Option<&str>, events: &[StopEvent]) -> Result<()> {
    let synthetic = events.iter().any(|e| e.synthetic);
    let mut cols = vec!["vehicle_id", "route_id", "trip_index", "stop_id", "arrive_ts", "depart_ts"];
    if synthetic {
        cols.push("synthetic");
    }
    write_rows(out, header, &cols, events, |e| {
        let mut v = vec![
            e.vehicle.0.clone(),
            e.route.0.clone(),
            e.trip_index.to_string(),
            e.stop.0.clone(),
            e.arrive_ts.to_string(),
            e.depart_ts.to_string(),
        ];
        if synthetic {
            v.push(e.synthetic.to_string());
        }
        v
    })
}

pub fn read_schedule(path: &Path) -> Result<Vec<ScheduleEntry>> {
    read_csv(path)
}

pub fn write_schedule(out: impl Write, header: Option<&str>, rows: &[ScheduleEntry]) -> Result<()> {
    write_rows(
        out,
        header,
        &["vehicle_id", "route_id", "trip_index", "start_ts"],
        rows,
        |r| {
            vec![
                r.vehicle.0.clone(),
                r.route.0.clone(),
                r.trip_index.to_string(),
                r.start_ts.to_string(),
            ]
        },
    )
}

/// Opens `path` for writing, creating parent directories.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(create(path)?))
}

/// JSONL with an optional leading `{"tool":..,"config":..}` object.
pub fn write_jsonl<T: Serialize>(out: impl Write, config_hash: Option<&str>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(out);
    if let Some(h) = config_hash {
        writeln!(
            w,
            "{{\"tool\":{},\"config\":{}}}",
            serde_json::Value::from(crate::TOOL_VERSION),
            serde_json::Value::from(h)
        )?;
    }
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn is_provenance(line: &str) -> bool {
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::Object(m)) => m.len() == 2 && m.contains_key("tool") && m.contains_key("config"),
        _ => false,
    }
}

/// Reads JSONL, skipping blank lines and provenance objects.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let rdr = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in rdr.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (i == 0 && is_provenance(&line)) {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            row: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round<T>(text: &str, parse: impl Fn(&str) -> Vec<T>, write: impl Fn(&mut Vec<u8>, &[T])) -> String {
        let rows = parse(text);
        let mut buf = Vec::new();
        write(&mut buf, &rows);
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn routes_round_trip() {
        let text = "route_id,direction,headway_min,speed_class,stop_seq\nR1,up,10,regular,A|B|C\nR1d,down,7.5,express,C|B|A\n";
        let p = Path::new("routes.csv");
        let out = round(text, |t| parse_routes(t, p).unwrap(), |b, r| write_routes(b, None, r).unwrap());
        assert_eq!(out, text);
    }

    #[test]
    fn swipes_and_avl_round_trip_with_comments() {
        let swipes = "# tool=x config=y\ncard_id,ts,vehicle_id,route_id\nC1,1456800000,V1,R1\nC2,1456800005,V1,R1\n";
        let p = Path::new("swipes.csv");
        let out = round(swipes, |t| parse_swipes(t, p).unwrap(), |b, r| write_swipes(b, None, r).unwrap());
        assert_eq!(out, swipes.lines().skip(1).collect::<Vec<_>>().join("\n") + "\n");

        let avl = "vehicle_id,route_id,trip_index,stop_id,arrive_ts,depart_ts\nV1,R1,0,A,100,130\nV1,R1,0,B,200,230\n";
        let out = round(avl, |t| parse_avl(t, p).unwrap(), |b, r| write_avl(b, None, r).unwrap());
        assert_eq!(out, avl);
    }

    #[test]
    fn schema_errors_carry_row() {
        let bad = "card_id,ts,vehicle_id,route_id\nC1,100,V1,R1\nC2,abc,V1,R1\n";
        match parse_swipes(bad, Path::new("s.csv")) {
            Err(Error::Schema { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let inverted = "vehicle_id,route_id,trip_index,stop_id,arrive_ts,depart_ts\nV,R,0,A,10,5\n";
        assert!(parse_avl(inverted, Path::new("a.csv")).is_err());
    }

    #[test]
    fn jsonl_provenance_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(create_file(&p).unwrap(), Some("abc"), &[1u32, 2, 3]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&format!("{{\"tool\":\"{}\",\"config\":\"abc\"}}", crate::TOOL_VERSION)));
        assert_eq!(read_jsonl::<u32>(&p).unwrap(), [1, 2, 3]);
    }
}
