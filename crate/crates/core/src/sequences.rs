//! Pulse sequences and their modulation functions.
//!
//! A [`PulseSequence`] stores relative pulse instants `s_j = T_j / T` in the
//! open interval (0, 1). The total duration `T` is supplied only when a
//! sequence is evaluated against a noise model.
//!
//! A [`Modulation`] is the function `F(s)` multiplying the noise inside the
//! accumulated phase. It is either the exact ±1 step function of an ideal
//! π-pulse sequence or a general piecewise-constant complex function on
//! (0, 1]. Both are zero outside (0, 1].

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of cells used when sampling a modulation from a closure.
pub const DEFAULT_GRID: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceFile", into = "SequenceFile")]
pub struct PulseSequence {
    times: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceFile {
    times: Vec<f64>,
}

impl TryFrom<SequenceFile> for PulseSequence {
    type Error = Error;
    fn try_from(file: SequenceFile) -> Result<Self> {
        PulseSequence::new(file.times)
    }
}

impl From<PulseSequence> for SequenceFile {
    fn from(seq: PulseSequence) -> Self {
        SequenceFile { times: seq.times }
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    for (i, &s) in times.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::InvalidSequence { index: i, reason: "non-finite time".into() });
        }
        if s <= 0.0 || s >= 1.0 {
            return Err(Error::InvalidSequence {
                index: i,
                reason: format!("time out of (0,1): {s}"),
            });
        }
        if i > 0 && s <= times[i - 1] {
            return Err(Error::InvalidSequence {
                index: i,
                reason: format!("non-increasing: {} after {}", s, times[i - 1]),
            });
        }
    }
    Ok(())
}

fn require_positive(n: usize, family: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter(format!(
            "{family} needs at least one pulse; use PulseSequence::free_evolution for n = 0"
        )));
    }
    Ok(())
}

impl PulseSequence {
    /// Validates strict ordering inside (0, 1).
    pub fn new(times: Vec<f64>) -> Result<Self> {
        check_times(&times)?;
        Ok(PulseSequence { times })
    }

    pub fn free_evolution() -> Self {
        PulseSequence { times: Vec::new() }
    }

    /// Uhrig sequence, `s_j = sin²(π j / (2n + 2))`.
    pub fn udd(n: usize) -> Result<Self> {
        require_positive(n, "UDD")?;
        let denom = (2 * n + 2) as f64;
        let times = (1..=n)
            .map(|j| {
                let theta = std::f64::consts::PI * j as f64 / denom;
                if theta <= std::f64::consts::FRAC_PI_6 {
                    theta.sin().powi(2)
                } else {
                    let offset = (n as f64 + 1.0 - 2.0 * j as f64) / denom;
                    0.5 * (1.0 - (std::f64::consts::PI * offset).sin())
                }
            })
            .collect();
        PulseSequence::new(times)
    }

    /// Carr-Purcell-Meiboom-Gill sequence, `s_j = (2j - 1) / (2n)`.
    pub fn cpmg(n: usize) -> Result<Self> {
        require_positive(n, "CPMG")?;
        let times = (1..=n).map(|j| (2 * j - 1) as f64 / (2 * n) as f64).collect();
        PulseSequence::new(times)
    }

    /// Periodic sequence, `s_j = j / (n + 1)`.
    pub fn pdd(n: usize) -> Result<Self> {
        require_positive(n, "PDD")?;
        let times = (1..=n).map(|j| j as f64 / (n + 1) as f64).collect();
        PulseSequence::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `[0, s_1, …, s_N, 1]`.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.times.len() + 2);
        b.push(0.0);
        b.extend_from_slice(&self.times);
        b.push(1.0);
        b
    }

    /// Smallest interval between consecutive boundaries, endpoints included.
    pub fn min_gap(&self) -> f64 {
        self.boundaries()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Rejects sequences whose closest pulses are nearer than `gap_min`.
    pub fn check_min_gap(&self, gap_min: f64) -> Result<()> {
        let b = self.boundaries();
        for (i, w) in b.windows(2).enumerate() {
            if w[1] - w[0] < gap_min {
                return Err(Error::InvalidSequence {
                    index: i.min(self.times.len().saturating_sub(1)),
                    reason: format!("gap {} below minimum {}", w[1] - w[0], gap_min),
                });
            }
        }
        Ok(())
    }

    /// Time-reversed sequence `s_j -> 1 - s_{N+1-j}`.
    pub fn mirrored(&self) -> Self {
        PulseSequence {
            times: self.times.iter().rev().map(|s| 1.0 - s).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sequence serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<SequenceFile>(text)?.try_into()
    }
}

/// Built-in pulse sequence families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceFamily {
    Udd,
    Cpmg,
    Pdd,
}

impl SequenceFamily {
    pub fn generate(self, n: usize) -> Result<PulseSequence> {
        match self {
            SequenceFamily::Udd => PulseSequence::udd(n),
            SequenceFamily::Cpmg => PulseSequence::cpmg(n),
            SequenceFamily::Pdd => PulseSequence::pdd(n),
        }
    }
}

impl FromStr for SequenceFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "udd" => Ok(SequenceFamily::Udd),
            "cpmg" => Ok(SequenceFamily::Cpmg),
            "pdd" => Ok(SequenceFamily::Pdd),
            other => Err(Error::InvalidParameter(format!("unknown sequence family '{other}'"))),
        }
    }
}

impl fmt::Display for SequenceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SequenceFamily::Udd => "udd",
            SequenceFamily::Cpmg => "cpmg",
            SequenceFamily::Pdd => "pdd",
        };
        f.write_str(name)
    }
}

/// Piecewise-constant complex modulation: `values[i]` holds on
/// `(breaks[i], breaks[i + 1]]`, with `breaks[0] = 0` and the last break 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseModulation {
    breaks: Vec<f64>,
    values: Vec<Complex64>,
}

impl PiecewiseModulation {
    pub fn new(breaks: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::InvalidParameter(
                "piecewise modulation needs one more break than values".into(),
            ));
        }
        if breaks[0] != 0.0 || *breaks.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter("breaks must start at 0 and end at 1".into()));
        }
        if let Some(i) = breaks.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSequence { index: i + 1, reason: "non-increasing break".into() });
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidParameter(format!("non-finite modulation value at cell {i}")));
        }
        Ok(PiecewiseModulation { breaks, values })
    }

    /// Uniform grid of `values.len()` cells on (0, 1].
    pub fn uniform(values: Vec<Complex64>) -> Result<Self> {
        let n = values.len();
        let breaks = (0..=n).map(|i| i as f64 / n as f64).collect();
        PiecewiseModulation::new(breaks, values)
    }

    /// Samples `f` at cell midpoints of a uniform grid.
    pub fn from_fn<F: Fn(f64) -> Complex64>(f: F, grid: usize) -> Result<Self> {
        let grid = grid.max(1);
        let values = (0..grid).map(|i| f((i as f64 + 0.5) / grid as f64)).collect();
        PiecewiseModulation::uniform(values)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Modulation {
    ExactPi(PulseSequence),
    Sampled(PiecewiseModulation),
}

/// One constant piece of a modulation on `(start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub value: Complex64,
}

/// Discontinuity of a modulation: `weight = F(at⁻) - F(at⁺)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub at: f64,
    pub weight: Complex64,
}

pub fn modulation_of(seq: &PulseSequence) -> Modulation {
    Modulation::ExactPi(seq.clone())
}

impl From<PulseSequence> for Modulation {
    fn from(seq: PulseSequence) -> Self {
        Modulation::ExactPi(seq)
    }
}

impl From<&PulseSequence> for Modulation {
    fn from(seq: &PulseSequence) -> Self {
        Modulation::ExactPi(seq.clone())
    }
}

impl Modulation {
    pub fn segments(&self) -> Vec<Segment> {
        match self {
            Modulation::ExactPi(seq) => seq
                .boundaries()
                .windows(2)
                .enumerate()
                .map(|(j, w)| Segment {
                    start: w[0],
                    end: w[1],
                    value: Complex64::new(if j % 2 == 0 { 1.0 } else { -1.0 }, 0.0),
                })
                .collect(),
            Modulation::Sampled(pw) => pw
                .breaks
                .windows(2)
                .zip(&pw.values)
                .map(|(w, &value)| Segment { start: w[0], end: w[1], value })
                .collect(),
        }
    }

    /// Jumps at every break point, including the switch-on at 0 and the
    /// switch-off at 1.
    pub fn jumps(&self) -> Vec<Jump> {
        let segs = self.segments();
        let mut out = Vec::with_capacity(segs.len() + 1);
        let zero = Complex64::new(0.0, 0.0);
        let mut before = zero;
        for seg in &segs {
            out.push(Jump { at: seg.start, weight: before - seg.value });
            before = seg.value;
        }
        out.push(Jump { at: 1.0, weight: before });
        out
    }

    /// `F(s)`; zero outside (0, 1].
    pub fn value_at(&self, s: f64) -> Complex64 {
        if !(s > 0.0 && s <= 1.0) {
            return Complex64::new(0.0, 0.0);
        }
        match self {
            Modulation::ExactPi(seq) => {
                // number of pulses strictly before s
                let j = seq.times.partition_point(|&t| t < s);
                Complex64::new(if j % 2 == 0 { 1.0 } else { -1.0 }, 0.0)
            }
            Modulation::Sampled(pw) => {
                let i = pw.breaks.partition_point(|&b| b < s).saturating_sub(1);
                pw.values[i.min(pw.values.len() - 1)]
            }
        }
    }

    /// Interior discontinuities, sorted.
    pub fn interior_breaks(&self) -> Vec<f64> {
        match self {
            Modulation::ExactPi(seq) => seq.times.clone(),
            Modulation::Sampled(pw) => pw.breaks[1..pw.breaks.len() - 1].to_vec(),
        }
    }

    /// `∫₀¹ |F(s)| ds`.
    pub fn l1_norm(&self) -> f64 {
        self.segments().iter().map(|s| s.value.norm() * (s.end - s.start)).sum()
    }

    /// Jump bound `a` such that `|f̃(u)| ≤ a / |u|`.
    pub fn jump_bound(&self) -> f64 {
        self.jumps().iter().map(|j| j.weight.norm()).sum()
    }

    pub fn is_real(&self) -> bool {
        match self {
            Modulation::ExactPi(_) => true,
            Modulation::Sampled(pw) => pw.values.iter().all(|v| v.im == 0.0),
        }
    }

    pub fn min_segment(&self) -> f64 {
        self.segments().iter().map(|s| s.end - s.start).fold(f64::INFINITY, f64::min)
    }
}

/// A single σ_x pulse on one qubit of a multi-qubit register.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitPulse {
    /// Relative time in (0, 1).
    pub s: f64,
    /// 1-based qubit index.
    pub l: usize,
}

/// Pulses on an `L`-qubit register together with the pair of levels
/// `(p, q)` whose coherence is tracked. Levels are `L`-bit codes with bit
/// `l - 1` belonging to qubit `l`.
///
/// The modulation is reported in the frame without the final correction
/// pulse that returns flipped qubits to their initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiQubitPulseProgram {
    pub n_qubits: usize,
    pub pulses: Vec<QubitPulse>,
    pub p: u64,
    pub q: u64,
}

impl MultiQubitPulseProgram {
    pub fn validate(&self) -> Result<()> {
        let l = self.n_qubits;
        if l == 0 || l > 63 {
            return Err(Error::InvalidProgram(format!("n_qubits must be in 1..=63, got {l}")));
        }
        let levels = 1u64 << l;
        if self.p >= levels || self.q >= levels {
            return Err(Error::InvalidProgram(format!("levels must be below 2^{l}")));
        }
        if self.p == self.q {
            return Err(Error::InvalidProgram("p = q has no coherence to track".into()));
        }
        for (i, pulse) in self.pulses.iter().enumerate() {
            if !(pulse.s > 0.0 && pulse.s < 1.0) {
                return Err(Error::InvalidSequence { index: i, reason: format!("time out of (0,1): {}", pulse.s) });
            }
            if pulse.l == 0 || pulse.l > l {
                return Err(Error::InvalidProgram(format!("pulse {i} targets qubit {} outside 1..={l}", pulse.l)));
            }
            if i > 0 && pulse.s < self.pulses[i - 1].s {
                return Err(Error::InvalidSequence { index: i, reason: "non-increasing".into() });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let prog: MultiQubitPulseProgram = serde_json::from_str(text)?;
        prog.validate()?;
        Ok(prog)
    }
}

/// Modulation `F_pq(s) = |p̃| - |q̃|` with `p̃`, `q̃` the levels after the
/// pulses applied so far (Hamming weights). Pulses at the same instant are
/// applied together.
pub fn multiqubit_modulation(prog: &MultiQubitPulseProgram) -> Result<Modulation> {
    prog.validate()?;
    let weight = |mask: u64| -> f64 {
        (prog.p ^ mask).count_ones() as f64 - (prog.q ^ mask).count_ones() as f64
    };
    let mut breaks = vec![0.0];
    let mut values = Vec::new();
    let mut mask = 0u64;
    let mut i = 0;
    while i < prog.pulses.len() {
        let s = prog.pulses[i].s;
        values.push(Complex64::new(weight(mask), 0.0));
        breaks.push(s);
        while i < prog.pulses.len() && prog.pulses[i].s == s {
            mask ^= 1u64 << (prog.pulses[i].l - 1);
            i += 1;
        }
    }
    values.push(Complex64::new(weight(mask), 0.0));
    breaks.push(1.0);
    Ok(Modulation::Sampled(PiecewiseModulation::new(breaks, values)?))
}
