//! Path ensembles, the normal draws that drive them, and the generic
//! path-simulation loop shared by every scheme.
//!
//! Binary ensemble layout (all little-endian):
//!
//! ```text
//! magic   b"SLPE"
//! version u32 = 1
//! n_paths u64, n_steps u64
//! t0 f64, dt f64
//! states  f64[n_paths * (n_steps + 1)]   path-major
//! draws   f64[n_paths * n_steps]         path-major
//! ```

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::models::TimeGrid;
use crate::rng::{fill_standard_normal, stream_rng, streams};

/// One transition rule `y(t) -> y(t + dt)` driven by a standard normal draw.
pub trait Stepper: Sync {
    fn step(&self, step_index: usize, t: f64, y: f64, dt: f64, z: f64) -> Result<f64>;
}

/// Standard normal draws `z[path, step]`, path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalDraws {
    pub n_paths: usize,
    pub n_steps: usize,
    pub z: Vec<f64>,
}

impl NormalDraws {
    /// Path `k` consumes its own stream, so draws are independent of
    /// scheduling and of how many paths are requested in total.
    pub fn generate(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        let mut z = vec![0.0; n_paths * n_steps];
        if n_steps > 0 {
            z.par_chunks_mut(n_steps).enumerate().for_each(|(k, row)| {
                let mut rng = stream_rng(seed, streams::PATHS + k as u64);
                fill_standard_normal(&mut rng, row);
            });
        }
        NormalDraws {
            n_paths,
            n_steps,
            z,
        }
    }

    pub fn path(&self, k: usize) -> &[f64] {
        &self.z[k * self.n_steps..(k + 1) * self.n_steps]
    }

    /// Brownian increments aggregated over `factor` consecutive steps and
    /// renormalised to unit variance.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(invalid(format!(
                "cannot coarsen {} steps by a factor of {factor}",
                self.n_steps
            )));
        }
        let n_steps = self.n_steps / factor;
        let scale = 1.0 / (factor as f64).sqrt();
        let mut z = Vec::with_capacity(self.n_paths * n_steps);
        for k in 0..self.n_paths {
            for chunk in self.path(k).chunks(factor) {
                z.push(chunk.iter().sum::<f64>() * scale);
            }
        }
        Ok(NormalDraws {
            n_paths: self.n_paths,
            n_steps,
            z,
        })
    }
}

/// Sample paths on an equidistant grid, with the driving draws retained.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub t0: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    /// `n_paths * (n_steps + 1)`, path-major.
    pub states: Vec<f64>,
    /// `n_paths * n_steps`, path-major; `draws[k, i]` drives step `i -> i+1`.
    pub draws: Vec<f64>,
}

impl PathEnsemble {
    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            t0: self.t0,
            dt: self.dt,
            n_steps: self.n_steps,
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn path(&self, k: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.states[k * w..(k + 1) * w]
    }

    pub fn path_draws(&self, k: usize) -> &[f64] {
        &self.draws[k * self.n_steps..(k + 1) * self.n_steps]
    }

    pub fn state(&self, k: usize, i: usize) -> f64 {
        self.states[k * (self.n_steps + 1) + i]
    }

    /// All states at grid index `i`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_paths).map(|k| self.state(k, i)).collect()
    }

    pub fn terminal(&self) -> Vec<f64> {
        self.column(self.n_steps)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        writeln!(w, "path_id,step_index,t,y,z")?;
        for k in 0..self.n_paths {
            let p = self.path(k);
            let d = self.path_draws(k);
            for (i, y) in p.iter().enumerate() {
                if i == 0 {
                    writeln!(w, "{k},{i},{},{y},", self.time(i))?;
                } else {
                    writeln!(w, "{k},{i},{},{y},{}", self.time(i), d[i - 1])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut rows: Vec<(usize, usize, f64, f64, Option<f64>)> = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line.trim() != "path_id,step_index,t,y,z" {
                    return Err(Error::Format(format!("unexpected CSV header: {line}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("line {}: expected 5 fields", n + 1)));
            }
            let bad = |e: String| Error::Format(format!("line {}: {e}", n + 1));
            let k = f[0].parse().map_err(|e| bad(format!("{e}")))?;
            let i = f[1].parse().map_err(|e| bad(format!("{e}")))?;
            let t = f[2].parse().map_err(|e| bad(format!("{e}")))?;
            let y = f[3].parse().map_err(|e| bad(format!("{e}")))?;
            let z = if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|e| bad(format!("{e}")))?)
            };
            rows.push((k, i, t, y, z));
        }
        let n_paths = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        let n_steps = rows.iter().map(|r| r.1).max().unwrap_or(0);
        if n_paths == 0 || n_steps == 0 || rows.len() != n_paths * (n_steps + 1) {
            return Err(Error::Format("ragged or empty path ensemble".into()));
        }
        let t0 = rows.iter().find(|r| r.1 == 0).map(|r| r.2).unwrap_or(0.0);
        let t1 = rows.iter().find(|r| r.1 == 1).map(|r| r.2).unwrap_or(1.0);
        let mut states = vec![f64::NAN; n_paths * (n_steps + 1)];
        let mut draws = vec![f64::NAN; n_paths * n_steps];
        for (k, i, _, y, z) in rows {
            states[k * (n_steps + 1) + i] = y;
            if i > 0 {
                draws[k * n_steps + i - 1] =
                    z.ok_or_else(|| Error::Format(format!("missing z for path {k} step {i}")))?;
            }
        }
        Ok(PathEnsemble {
            t0,
            dt: t1 - t0,
            n_paths,
            n_steps,
            states,
            draws,
        })
    }

    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        w.write_all(b"SLPE")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.n_steps as u64).to_le_bytes())?;
        w.write_all(&self.t0.to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for v in self.states.iter().chain(&self.draws) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SLPE" {
            return Err(Error::Format("not a path ensemble file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Format("unsupported path ensemble version".into()));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut BufReader<R>| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let n_paths = u64::from_le_bytes(next(&mut r)?) as usize;
        let n_steps = u64::from_le_bytes(next(&mut r)?) as usize;
        let t0 = f64::from_le_bytes(next(&mut r)?);
        let dt = f64::from_le_bytes(next(&mut r)?);
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let states = read_vec(n_paths * (n_steps + 1))?;
        let draws = read_vec(n_paths * n_steps)?;
        Ok(PathEnsemble {
            t0,
            dt,
            n_paths,
            n_steps,
            states,
            draws,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.write_csv(f),
            _ => self.write_binary(f),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::read_csv(f),
            _ => Self::read_binary(f),
        }
    }
}

/// Runs `stepper` along every path of `draws` from `y0` on `grid`.
pub fn simulate<S: Stepper + ?Sized>(
    stepper: &S,
    y0: f64,
    grid: &TimeGrid,
    draws: &NormalDraws,
) -> Result<PathEnsemble> {
    grid.validate()?;
    if draws.n_steps != grid.n_steps {
        return Err(Error::GridMismatch(format!(
            "draws cover {} steps but the grid has {}",
            draws.n_steps, grid.n_steps
        )));
    }
    let width = grid.n_steps + 1;
    let mut states = vec![0.0; draws.n_paths * width];
    states
        .par_chunks_mut(width)
        .enumerate()
        .try_for_each(|(k, row)| -> Result<()> {
            let z = draws.path(k);
            row[0] = y0;
            for i in 0..grid.n_steps {
                row[i + 1] = stepper.step(i, grid.time(i), row[i], grid.dt, z[i])?;
            }
            Ok(())
        })?;
    Ok(PathEnsemble {
        t0: grid.t0,
        dt: grid.dt,
        n_paths: draws.n_paths,
        n_steps: grid.n_steps,
        states,
        draws: draws.z.clone(),
    })
}
