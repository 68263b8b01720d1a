//! Binary container and CSV exports.
//!
//! Container layout (little endian):
//!
//! ```text
//! "KMP1" | kind u8 | field tag u8 | flags u8 | reserved u8
//! components u32 | d u32 | N u32 | T f64 | seed u64 | snapshots u64 | events u64
//! snapshots: t f64, values f64 * (components * N^d)
//! flux (flag bit 0): count u64, then (t f64, edge u64, p f64) per event
//! ```
//!
//! `kind` is 0 for a trajectory and 1 for a field series; flag bit 1 marks
//! a reversed edge orientation.

use crate::engine::{FluxEvent, Trajectory};
use crate::error::{KmpError, Result};
use crate::fields::{FieldKind, GridField};
use crate::lattice::Lattice;
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"KMP1";
const KIND_TRAJECTORY: u8 = 0;
const KIND_FIELDS: u8 = 1;
const FLAG_FLUX: u8 = 1;
const FLAG_REVERSED: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Header {
    kind: u8,
    field_tag: u8,
    flags: u8,
    comps: u32,
    dim: u32,
    side: u32,
    horizon: f64,
    seed: u64,
    count: u64,
    events: u64,
}

fn write_header<W: Write>(w: &mut W, h: &Header) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[h.kind, h.field_tag, h.flags, 0])?;
    w.write_all(&h.comps.to_le_bytes())?;
    w.write_all(&h.dim.to_le_bytes())?;
    w.write_all(&h.side.to_le_bytes())?;
    w.write_all(&h.horizon.to_le_bytes())?;
    w.write_all(&h.seed.to_le_bytes())?;
    w.write_all(&h.count.to_le_bytes())?;
    w.write_all(&h.events.to_le_bytes())?;
    Ok(())
}

fn read_array<R: Read, const K: usize>(r: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b)
        .map_err(|e| KmpError::Format(format!("truncated container: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != MAGIC {
        return Err(KmpError::Format("bad magic bytes".into()));
    }
    let b: [u8; 4] = read_array(r)?;
    Ok(Header {
        kind: b[0],
        field_tag: b[1],
        flags: b[2],
        comps: read_u32(r)?,
        dim: read_u32(r)?,
        side: read_u32(r)?,
        horizon: read_f64(r)?,
        seed: read_u64(r)?,
        count: read_u64(r)?,
        events: read_u64(r)?,
    })
}

fn write_values<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_values<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    (0..len).map(|_| read_f64(r)).collect()
}

pub fn write_trajectory<W: Write>(w: &mut W, traj: &Trajectory) -> Result<()> {
    let lat = &traj.lattice;
    let mut flags = 0;
    if traj.flux.is_some() {
        flags |= FLAG_FLUX;
    }
    if lat.is_reversed() {
        flags |= FLAG_REVERSED;
    }
    write_header(
        w,
        &Header {
            kind: KIND_TRAJECTORY,
            field_tag: 0,
            flags,
            comps: 1,
            dim: lat.dim() as u32,
            side: lat.side() as u32,
            horizon: traj.horizon,
            seed: traj.seed,
            count: traj.snapshots.len() as u64,
            events: traj.events,
        },
    )?;
    for (t, s) in traj.times.iter().zip(&traj.snapshots) {
        w.write_all(&t.to_le_bytes())?;
        write_values(w, s)?;
    }
    if let Some(flux) = &traj.flux {
        w.write_all(&(flux.len() as u64).to_le_bytes())?;
        for e in flux {
            w.write_all(&e.t.to_le_bytes())?;
            w.write_all(&(e.edge as u64).to_le_bytes())?;
            w.write_all(&e.p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(r: &mut R) -> Result<Trajectory> {
    let h = read_header(r)?;
    if h.kind != KIND_TRAJECTORY {
        return Err(KmpError::Format(
            "container does not hold a trajectory".into(),
        ));
    }
    let mut lattice = Lattice::new(h.dim as usize, h.side as usize)?;
    if h.flags & FLAG_REVERSED != 0 {
        lattice = lattice.reversed();
    }
    let sites = lattice.num_sites();
    let mut times = Vec::new();
    let mut snapshots = Vec::new();
    for _ in 0..h.count {
        times.push(read_f64(r)?);
        snapshots.push(read_values(r, sites)?);
    }
    let flux = if h.flags & FLAG_FLUX != 0 {
        let n = read_u64(r)?;
        let mut v = Vec::new();
        for _ in 0..n {
            let t = read_f64(r)?;
            let edge = read_u64(r)? as usize;
            if edge >= lattice.num_edges() {
                return Err(KmpError::Format(format!("edge index {edge} out of range")));
            }
            v.push(FluxEvent {
                t,
                edge,
                p: read_f64(r)?,
            });
        }
        Some(v)
    } else {
        None
    };
    Ok(Trajectory {
        lattice,
        seed: h.seed,
        horizon: h.horizon,
        times,
        snapshots,
        flux,
        events: h.events,
    })
}

/// Field snapshots sharing one grid.
pub fn write_fields<W: Write>(
    w: &mut W,
    times: &[f64],
    fields: &[GridField],
    horizon: f64,
    seed: u64,
) -> Result<()> {
    let first = fields
        .first()
        .ok_or_else(|| KmpError::Format("no field snapshots".into()))?;
    if times.len() != fields.len() {
        return Err(KmpError::Format(
            "times and snapshots differ in length".into(),
        ));
    }
    for f in fields {
        first.check_same_grid(f)?;
    }
    write_header(
        w,
        &Header {
            kind: KIND_FIELDS,
            field_tag: first.kind.tag(),
            flags: 0,
            comps: first.comps as u32,
            dim: first.dim as u32,
            side: first.n as u32,
            horizon,
            seed,
            count: fields.len() as u64,
            events: 0,
        },
    )?;
    for (t, f) in times.iter().zip(fields) {
        w.write_all(&t.to_le_bytes())?;
        write_values(w, &f.data)?;
    }
    Ok(())
}

pub fn read_fields<R: Read>(r: &mut R) -> Result<(Vec<f64>, Vec<GridField>, u64)> {
    let h = read_header(r)?;
    if h.kind != KIND_FIELDS {
        return Err(KmpError::Format("container does not hold fields".into()));
    }
    let kind = FieldKind::from_tag(h.field_tag)
        .ok_or_else(|| KmpError::Format("unknown field tag".into()))?;
    let (dim, n, comps) = (h.dim as usize, h.side as usize, h.comps as usize);
    if !(1..=3).contains(&dim) || n == 0 || comps == 0 {
        return Err(KmpError::Format("bad field geometry".into()));
    }
    let len = comps * n.pow(dim as u32);
    let mut times = Vec::new();
    let mut fields = Vec::new();
    for _ in 0..h.count {
        times.push(read_f64(r)?);
        fields.push(GridField {
            dim,
            n,
            comps,
            kind,
            data: read_values(r, len)?,
        });
    }
    Ok((times, fields, h.seed))
}

/// Contents of a container of either kind.
#[derive(Clone, Debug)]
pub enum Artifact {
    Trajectory(Trajectory),
    Fields {
        times: Vec<f64>,
        fields: Vec<GridField>,
        seed: u64,
    },
}

/// Read a container, dispatching on its kind byte.
pub fn read_artifact(bytes: &[u8]) -> Result<Artifact> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(KmpError::Format("bad magic bytes".into()));
    }
    let mut r = bytes;
    match bytes[4] {
        KIND_TRAJECTORY => Ok(Artifact::Trajectory(read_trajectory(&mut r)?)),
        KIND_FIELDS => {
            let (times, fields, seed) = read_fields(&mut r)?;
            Ok(Artifact::Fields {
                times,
                fields,
                seed,
            })
        }
        k => Err(KmpError::Format(format!("unknown container kind {k}"))),
    }
}

/// Long format `t,site_index,energy`.
pub fn trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "site_index", "energy"])?;
    for (t, s) in traj.times.iter().zip(&traj.snapshots) {
        for (i, e) in s.iter().enumerate() {
            out.write_record([t.to_string(), i.to_string(), e.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t,edge_id,p`.
pub fn flux_csv<W: Write>(w: W, flux: &[FluxEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "edge_id", "p"])?;
    for e in flux {
        out.write_record([e.t.to_string(), e.edge.to_string(), e.p.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Node coordinates followed by component values, one row per node and time.
pub fn field_csv<W: Write>(w: W, times: &[f64], fields: &[GridField]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = fields.first() else {
        return Ok(());
    };
    let mut header = vec!["t".to_string()];
    for a in 0..first.dim {
        header.push(format!("x{a}"));
    }
    for c in 0..first.comps {
        header.push(format!("value{c}"));
    }
    out.write_record(&header)?;
    for (t, f) in times.iter().zip(fields) {
        let m = f.nodes();
        for i in 0..m {
            let p = f.position(i);
            let mut row = vec![t.to_string()];
            row.extend(p[..f.dim].iter().map(|v| v.to_string()));
            row.extend((0..f.comps).map(|c| f.data[c * m + i].to_string()));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Rows of serializable records with a header taken from the field names.
pub fn records_csv<W: Write, T: serde::Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
