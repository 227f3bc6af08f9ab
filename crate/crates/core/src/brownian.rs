//! Seeded Brownian increments on a dyadic grid.
//!
//! Draws are keyed by `(seed, step, component)`: component `j` reads ChaCha20
//! stream `j` and step `i` consumes words `4i..4i+4` of that stream (two
//! `u64`s fed to Box-Muller). Any sub-range of a path can therefore be
//! regenerated independently.
//!
//! Coarsening sums adjacent pairs repeatedly, so every coarse level is a
//! fixed binary tree over the fine increments and nested coarsenings agree
//! bit for bit.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

const WORDS_PER_DRAW: u128 = 4;

fn unit_open(bits: u64) -> f64 {
    // (0, 1]
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(rng: &mut ChaCha20Rng) -> f64 {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_open(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn stream(seed: u64, component: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(component);
    rng
}

/// The standard normal draw for `(seed, step, component)`.
pub fn standard_normal_at(seed: u64, step: u64, component: u64) -> f64 {
    let mut rng = stream(seed, component);
    rng.set_word_pos(step as u128 * WORDS_PER_DRAW);
    box_muller(&mut rng)
}

/// `count` consecutive standard normals from `(seed, component)` starting at step 0.
pub fn standard_normals(seed: u64, component: u64, count: usize) -> Vec<f64> {
    let mut rng = stream(seed, component);
    (0..count).map(|_| box_muller(&mut rng)).collect()
}

/// An `n × d1` block of noise increments over `[0, horizon]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseIncrements {
    n: usize,
    d1: usize,
    horizon: f64,
    data: Vec<f64>,
}

impl NoiseIncrements {
    pub fn from_rows(horizon: f64, d1: usize, data: Vec<f64>) -> Result<Self> {
        if d1 == 0 || !data.len().is_multiple_of(d1) {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of width {d1}",
                data.len()
            )));
        }
        Ok(NoiseIncrements {
            n: data.len() / d1,
            d1,
            horizon,
            data,
        })
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d1..(i + 1) * self.d1]
    }

    pub fn dw(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.d1).cloned()
    }

    /// Block sums down to `n_coarse` rows by repeated adjacent-pair summation.
    pub fn coarsen(&self, n_coarse: usize) -> Result<NoiseIncrements> {
        if n_coarse == 0
            || !self.n.is_multiple_of(n_coarse)
            || !(self.n / n_coarse).is_power_of_two()
        {
            return Err(Error::InvalidResolution(format!(
                "{n_coarse} steps is not a dyadic coarsening of {} steps",
                self.n
            )));
        }
        let mut current = self.data.clone();
        let mut rows = self.n;
        let d1 = self.d1;
        while rows > n_coarse {
            let half = rows / 2;
            let mut next = Vec::with_capacity(half * d1);
            for k in 0..half {
                for j in 0..d1 {
                    next.push(current[2 * k * d1 + j] + current[(2 * k + 1) * d1 + j]);
                }
            }
            current = next;
            rows = half;
        }
        Ok(NoiseIncrements {
            n: n_coarse,
            d1,
            horizon: self.horizon,
            data: current,
        })
    }

    /// `W(T) - W(0)` per component, summed along the same tree as `coarsen`.
    pub fn total(&self) -> Vec<f64> {
        match self.coarsen(1) {
            Ok(c) => c.data,
            Err(_) => (0..self.d1).map(|j| self.column(j).sum()).collect(),
        }
    }

    /// Writes `step,component,increment` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,component,increment")?;
        for i in 0..self.n {
            for (j, v) in self.row(i).iter().enumerate() {
                writeln!(out, "{i},{j},{v:.16e}")?;
            }
        }
        Ok(())
    }
}

/// A seeded Wiener path sampled on `n_fine` equal steps of `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    increments: NoiseIncrements,
}

impl BrownianPath {
    pub fn generate(seed: u64, horizon: f64, n_fine: usize, d1: usize) -> Result<Self> {
        if !n_fine.is_power_of_two() {
            return Err(Error::InvalidResolution(format!(
                "n_fine = {n_fine} is not a power of two"
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidResolution(format!(
                "horizon {horizon} must be positive"
            )));
        }
        if d1 == 0 {
            return Err(Error::InvalidResolution(
                "noise dimension must be at least 1".into(),
            ));
        }
        let scale = (horizon / n_fine as f64).sqrt();
        let mut data = vec![0.0; n_fine * d1];
        for j in 0..d1 {
            let mut rng = stream(seed, j as u64);
            for i in 0..n_fine {
                data[i * d1 + j] = scale * box_muller(&mut rng);
            }
        }
        Ok(BrownianPath {
            seed,
            increments: NoiseIncrements {
                n: n_fine,
                d1,
                horizon,
                data,
            },
        })
    }

    pub fn n_fine(&self) -> usize {
        self.increments.n
    }

    pub fn d1(&self) -> usize {
        self.increments.d1
    }

    pub fn horizon(&self) -> f64 {
        self.increments.horizon
    }

    pub fn increments(&self) -> &NoiseIncrements {
        &self.increments
    }

    pub fn coarsen(&self, n_coarse: usize) -> Result<NoiseIncrements> {
        self.increments.coarsen(n_coarse)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.increments.write_csv(std::io::BufWriter::new(file))
    }
}
