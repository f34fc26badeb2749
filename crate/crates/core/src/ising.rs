//! Ising problem data, classical energies and the exhaustive ground-state
//! oracle.
//!
//! Energies use the double-counted convention `E = σᵀJσ + hᵀσ` with a
//! symmetric, zero-diagonal `J`, so every pair `i ≠ j` enters twice. For SK
//! instances this puts the thermodynamic ground-state energy per spin at
//! about −1.526.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{seeded_stream, Purpose};

/// Largest instance accepted by [`brute_force_ground_state`].
pub const BRUTE_FORCE_LIMIT: usize = 24;

/// Dense Ising problem: symmetric couplings with zero diagonal plus fields.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingInstance {
    n: usize,
    /// Row-major `n × n`.
    couplings: Vec<f64>,
    fields: Vec<f64>,
}

impl IsingInstance {
    /// Builds an instance from a row-major coupling matrix and a field vector.
    pub fn new(n: usize, couplings: Vec<f64>, fields: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize(
                "instance needs at least one spin".into(),
            ));
        }
        if couplings.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "couplings",
                expected: n * n,
                got: couplings.len(),
            });
        }
        if fields.len() != n {
            return Err(Error::DimensionMismatch {
                what: "fields",
                expected: n,
                got: fields.len(),
            });
        }
        if let Some(v) = couplings.iter().chain(&fields).find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite instance entry {v}")));
        }
        for i in 0..n {
            if couplings[i * n + i] != 0.0 {
                return Err(Error::Domain(format!("nonzero diagonal coupling at {i}")));
            }
            for j in i + 1..n {
                if couplings[i * n + j] != couplings[j * n + i] {
                    return Err(Error::Domain(format!("asymmetric coupling at ({i}, {j})")));
                }
            }
        }
        Ok(IsingInstance {
            n,
            couplings,
            fields,
        })
    }

    /// Builds an instance from upper-triangle entries `(i, j, value)` with `i < j`.
    pub fn from_upper(n: usize, entries: &[(usize, usize, f64)], fields: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize(
                "instance needs at least one spin".into(),
            ));
        }
        let mut couplings = vec![0.0; n * n];
        for &(i, j, v) in entries {
            if i >= j || j >= n {
                return Err(Error::Domain(format!(
                    "coupling index ({i}, {j}) must satisfy i < j < {n}"
                )));
            }
            couplings[i * n + j] = v;
            couplings[j * n + i] = v;
        }
        IsingInstance::new(n, couplings, fields)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.couplings[i * self.n..(i + 1) * self.n]
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn has_fields(&self) -> bool {
        self.fields.iter().any(|&h| h != 0.0)
    }

    /// `out = J·v` using [`dot`] per row.
    pub fn couple_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    pub(crate) fn check_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }
}

/// Dot product with a fixed reduction order: four interleaved partial sums
/// over indices `k ≡ 0,1,2,3 (mod 4)`, combined as `(s0 + s1) + (s2 + s3)`,
/// then the tail added in ascending order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut s = [0.0f64; 4];
    for c in 0..chunks {
        let k = 4 * c;
        s[0] += a[k] * b[k];
        s[1] += a[k + 1] * b[k + 1];
        s[2] += a[k + 2] * b[k + 2];
        s[3] += a[k + 3] * b[k + 3];
    }
    let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
    for k in 4 * chunks..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

/// Spin configuration with entries in {−1, +1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(s) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::Domain(format!("spin value {s} is not ±1")));
        }
        Ok(SpinConfig(spins))
    }

    /// Configuration number `index` in the enumeration order of
    /// [`brute_force_ground_state`]: bit `i` set means spin `i` is −1.
    pub fn from_index(n: usize, index: u64) -> Self {
        SpinConfig(
            (0..n)
                .map(|i| if index >> i & 1 == 1 { -1 } else { 1 })
                .collect(),
        )
    }

    pub fn spins(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flipped(&self) -> Self {
        SpinConfig(self.0.iter().map(|s| -s).collect())
    }
}

/// `σᵀJσ + hᵀσ`, summed in strictly ascending index order: the row sums
/// `Σ_j J_ij σ_j`, then `Σ_i σ_i·row_i`, then the field term.
pub fn ising_energy(inst: &IsingInstance, config: &SpinConfig) -> Result<f64> {
    inst.check_len("spin configuration", config.len())?;
    let s = config.spins();
    let mut quad = 0.0;
    for (i, &si) in s.iter().enumerate() {
        let mut row = 0.0;
        for (&j, &sj) in inst.row(i).iter().zip(s) {
            row += j * f64::from(sj);
        }
        quad += f64::from(si) * row;
    }
    let mut lin = 0.0;
    for (&h, &si) in inst.fields().iter().zip(s) {
        lin += h * f64::from(si);
    }
    Ok(quad + lin)
}

/// Sherrington–Kirkpatrick instance: for `i < j`, `J_ij = J_ji = g/√n` with
/// `g ~ N(0, 1)` drawn in row-major upper-triangle order; zero fields.
pub fn generate_sk(n: usize, seed: u64) -> Result<IsingInstance> {
    if n < 2 {
        return Err(Error::InvalidSize(format!(
            "SK instance needs n >= 2, got {n}"
        )));
    }
    let mut rng = seeded_stream(seed, Purpose::Instance);
    let scale = 1.0 / (n as f64).sqrt();
    let mut couplings = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let g: f64 = rng.sample(StandardNormal);
            couplings[i * n + j] = g * scale;
            couplings[j * n + i] = g * scale;
        }
    }
    Ok(IsingInstance {
        n,
        couplings,
        fields: vec![0.0; n],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundTruthMethod {
    Exhaustive,
}

/// Exact ground state of a small instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub energy: f64,
    pub config: SpinConfig,
    pub method: GroundTruthMethod,
}

/// Scans all `2ⁿ` configurations in Gray-code order with O(n) incremental
/// updates. Near-minimal candidates are re-scored with [`ising_energy`] so
/// the reported energy is exact for the returned configuration; ties go to
/// the lowest configuration index (see [`SpinConfig::from_index`]).
pub fn brute_force_ground_state(inst: &IsingInstance) -> Result<GroundTruth> {
    let n = inst.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimit {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let h = inst.fields();
    // start from all +1 (index 0)
    let mut spins = vec![1.0f64; n];
    let mut local = vec![0.0; n];
    inst.couple_into(&spins, &mut local);
    let mut energy = local.iter().sum::<f64>() + h.iter().sum::<f64>();

    let scale = 1.0
        + inst.couplings.iter().map(|v| v.abs()).sum::<f64>()
        + h.iter().map(|v| v.abs()).sum::<f64>();
    let tol = 1e-9 * scale;

    let mut best = energy;
    let mut candidates: Vec<u64> = vec![0];
    let total: u64 = 1 << n;
    for k in 1..total {
        let bit = k.trailing_zeros() as usize;
        let sk = spins[bit];
        energy -= 2.0 * sk * (2.0 * local[bit] + h[bit]);
        spins[bit] = -sk;
        let delta = -2.0 * sk;
        for (l, &j) in local.iter_mut().zip(inst.row(bit)) {
            *l += j * delta;
        }
        if energy < best - tol {
            best = energy;
            candidates.clear();
            candidates.push(k ^ (k >> 1));
        } else if energy <= best + tol {
            best = best.min(energy);
            candidates.push(k ^ (k >> 1));
        }
    }

    let mut winner: Option<(f64, u64)> = None;
    for idx in candidates {
        let e = ising_energy(inst, &SpinConfig::from_index(n, idx))?;
        winner = match winner {
            Some((be, bi)) if be < e || (be == e && bi < idx) => Some((be, bi)),
            _ => Some((e, idx)),
        };
    }
    let (energy, idx) = winner.expect("at least one configuration");
    Ok(GroundTruth {
        energy,
        config: SpinConfig::from_index(n, idx),
        method: GroundTruthMethod::Exhaustive,
    })
}
