//! Particle sets as CSV with header `x,y,z,q`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::ParticleSet;

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    z: f64,
    q: f64,
}

pub fn read_particles<R: Read>(r: R) -> Result<ParticleSet> {
    let mut ps = ParticleSet::default();
    for row in csv::Reader::from_reader(r).deserialize() {
        let row: Row = row?;
        ps.push([row.x, row.y, row.z], row.q);
    }
    Ok(ps)
}

/// Positions and charges only; accumulators are not written.
pub fn write_particles<W: Write>(w: W, ps: &ParticleSet) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for i in 0..ps.len() {
        out.serialize(Row { x: ps.x[i], y: ps.y[i], z: ps.z[i], q: ps.q[i] })?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_particles(path: impl AsRef<Path>) -> Result<ParticleSet> {
    read_particles(std::fs::File::open(path)?)
}

pub fn save_particles(path: impl AsRef<Path>, ps: &ParticleSet) -> Result<()> {
    write_particles(std::io::BufWriter::new(std::fs::File::create(path)?), ps)
}
