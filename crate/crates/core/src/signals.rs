//! Gradient-sparse signal classes and their separation geometry.
//!
//! A jump position `nu` in `{1, ..., n-1}` marks a boundary between array
//! slots `nu-1` and `nu` (zero-based), i.e. the forward-difference
//! component `nu - 1` is nonzero. The separation constant of a signal with
//! jumps `nu_1 < ... < nu_s` (padded with `nu_0 = 0`, `nu_{s+1} = n`) is
//!
//! ```text
//! delta_max = (s + 1) / n * min_i (nu_i - nu_{i-1}),
//! ```
//!
//! the largest constant for which the normalized minimum gap condition
//! holds. It ranges in [(s+1)/n, 1]; equidistant jumps reach 1.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("signal length must be at least 2, got {0}")]
    TooShort(usize),
    #[error("jump count {s} out of range for length {n}")]
    JumpCountOutOfRange { s: usize, n: usize },
    #[error("piecewise-constant spec invalid: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} levels, got {got}")]
    LevelCountMismatch { expected: usize, got: usize },
    #[error("adjacent levels must differ (pieces {0} and {1})")]
    EqualAdjacentLevels(usize, usize),
    #[error("rate bound requires s >= 1")]
    RateNeedsJumps,
    #[error("rate bound requires delta > 0, got {0}")]
    RateNeedsPositiveDelta(f64),
    #[error("malformed signal file: {0}")]
    Malformed(String),
}

/// A real vector together with its jump support and separation constant.
///
/// The support is recomputed from the values with exact inequality at
/// construction time, so the stored support and the values can never
/// disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Array1<f64>,
    jump_support: Vec<usize>,
    delta_max: f64,
}

impl Signal {
    /// Build a signal from raw values, detecting jumps by exact inequality.
    pub fn from_values(values: Array1<f64>) -> Result<Self, SignalError> {
        let n = values.len();
        if n < 2 {
            return Err(SignalError::TooShort(n));
        }
        let jump_support: Vec<usize> =
            (1..n).filter(|&nu| values[nu] != values[nu - 1]).collect();
        let delta_max = delta_from_support(n, &jump_support);
        Ok(Self {
            values,
            jump_support,
            delta_max,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    /// Jump positions `nu` in `{1, ..., n-1}`, strictly increasing.
    pub fn jump_support(&self) -> &[usize] {
        &self.jump_support
    }

    /// Number of jumps s.
    pub fn jump_count(&self) -> usize {
        self.jump_support.len()
    }

    /// Maximal valid separation constant.
    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    /// Signs of the forward differences on the support, in support order.
    pub fn jump_signs(&self) -> Vec<f64> {
        self.jump_support
            .iter()
            .map(|&nu| (self.values[nu] - self.values[nu - 1]).signum())
            .collect()
    }
}

fn delta_from_support(n: usize, support: &[usize]) -> f64 {
    let min_gap = boundary_gaps(n, support).into_iter().min().unwrap();
    ((support.len() + 1) * min_gap) as f64 / n as f64
}

/// Gap list `nu_1 - 0, nu_2 - nu_1, ..., n - nu_s` (a single gap `n` for
/// constant signals).
fn boundary_gaps(n: usize, support: &[usize]) -> Vec<usize> {
    let mut gaps = Vec::with_capacity(support.len() + 1);
    let mut prev = 0usize;
    for &nu in support {
        gaps.push(nu - prev);
        prev = nu;
    }
    gaps.push(n - prev);
    gaps
}

/// A piecewise constant function on (0, 1]: piece k takes `levels[k]` on
/// the half-open interval `(breakpoints[k-1], breakpoints[k]]` with an
/// implicit leading breakpoint at 0 and a mandatory trailing one at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantSpec {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl PiecewiseConstantSpec {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self, SignalError> {
        if breakpoints.is_empty() {
            return Err(SignalError::InvalidSpec("no pieces".into()));
        }
        if breakpoints.len() != levels.len() {
            return Err(SignalError::LevelCountMismatch {
                expected: breakpoints.len(),
                got: levels.len(),
            });
        }
        if *breakpoints.last().unwrap() != 1.0 {
            return Err(SignalError::InvalidSpec(format!(
                "last breakpoint must be 1, got {}",
                breakpoints.last().unwrap()
            )));
        }
        if breakpoints[0] <= 0.0 {
            return Err(SignalError::InvalidSpec(format!(
                "breakpoints must lie in (0, 1], got {}",
                breakpoints[0]
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SignalError::InvalidSpec(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        for (k, pair) in levels.windows(2).enumerate() {
            if pair[0] == pair[1] {
                return Err(SignalError::EqualAdjacentLevels(k, k + 1));
            }
        }
        Ok(Self { breakpoints, levels })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn piece_count(&self) -> usize {
        self.levels.len()
    }

    /// Evaluate at `t` in (0, 1].
    pub fn eval(&self, t: f64) -> f64 {
        let k = self
            .breakpoints
            .iter()
            .position(|&b| t <= b)
            .unwrap_or(self.breakpoints.len() - 1);
        self.levels[k]
    }
}

/// Where the levels of a generated signal come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelSource {
    /// i.i.d. standard normal levels from the given seed.
    Seeded(u64),
    /// Caller-supplied levels, one per piece, adjacent values distinct.
    Explicit(Vec<f64>),
}

/// Sample the grid values `f(i/n)`, `i = 1..n`, of a piecewise constant
/// function. Once `n` exceeds the reciprocal of the smallest piece length
/// every piece owns a grid point and the jump count equals the number of
/// interior breakpoints.
pub fn discretize_pc(spec: &PiecewiseConstantSpec, n: usize) -> Result<Signal, SignalError> {
    if n < 2 {
        return Err(SignalError::TooShort(n));
    }
    let values = Array1::from_shape_fn(n, |i| spec.eval((i + 1) as f64 / n as f64));
    Signal::from_values(values)
}

/// A signal with `s` jumps at (rounded) equidistant positions
/// `round(k * n / (s+1))`. When `(s+1)` divides `n` the separation
/// constant is exactly 1; rounding costs at most `s(s+1)/n`.
pub fn make_equidistant(n: usize, s: usize, levels: LevelSource) -> Result<Signal, SignalError> {
    if n < 2 {
        return Err(SignalError::TooShort(n));
    }
    if s >= n {
        return Err(SignalError::JumpCountOutOfRange { s, n });
    }
    let support: Vec<usize> = (1..=s)
        .map(|k| ((k * n) as f64 / (s + 1) as f64).round() as usize)
        .collect();
    debug_assert!(support.windows(2).all(|w| w[0] < w[1]));
    build_piecewise(n, &support, levels)
}

/// The adversarial class: `s` jumps on consecutive positions starting at
/// `min(n/2, n-s)`, so all interior gaps have width 1 and the separation
/// constant collapses to its minimum `(s+1)/n` for `s >= 2`. Piece values
/// alternate 0, 1, 0, ... For `s = 1` the construction degenerates to a
/// centered step, which is equidistant rather than dense.
pub fn make_dense_jump(n: usize, s: usize) -> Result<Signal, SignalError> {
    if n < 2 {
        return Err(SignalError::TooShort(n));
    }
    if s < 1 || s > n - 1 {
        return Err(SignalError::JumpCountOutOfRange { s, n });
    }
    let start = (n / 2).min(n - s).max(1);
    let support: Vec<usize> = (0..s).map(|k| start + k).collect();
    let levels: Vec<f64> = (0..=s).map(|k| (k % 2) as f64).collect();
    build_piecewise(n, &support, LevelSource::Explicit(levels))
}

fn build_piecewise(n: usize, support: &[usize], levels: LevelSource) -> Result<Signal, SignalError> {
    let pieces = support.len() + 1;
    let levels = match levels {
        LevelSource::Explicit(levels) => {
            if levels.len() != pieces {
                return Err(SignalError::LevelCountMismatch {
                    expected: pieces,
                    got: levels.len(),
                });
            }
            for (k, pair) in levels.windows(2).enumerate() {
                if pair[0] == pair[1] {
                    return Err(SignalError::EqualAdjacentLevels(k, k + 1));
                }
            }
            levels
        }
        LevelSource::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut levels = Vec::with_capacity(pieces);
            for _ in 0..pieces {
                let mut v: f64 = rng.sample(StandardNormal);
                // Exact collisions of consecutive normals are essentially
                // impossible; resample to keep the invariant unconditional.
                while levels.last() == Some(&v) {
                    v = rng.sample(StandardNormal);
                }
                levels.push(v);
            }
            levels
        }
    };
    let mut values = Array1::zeros(n);
    let mut piece = 0usize;
    for i in 0..n {
        if piece < support.len() && i >= support[piece] {
            piece += 1;
        }
        values[i] = levels[piece];
    }
    Signal::from_values(values)
}

/// Separation summary of a signal: jump count, boundary-inclusive gap
/// list, and the maximal separation constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub jump_count: usize,
    pub gaps: Vec<usize>,
    pub delta_max: f64,
}

pub fn separation(signal: &Signal) -> Separation {
    let gaps = boundary_gaps(signal.n(), signal.jump_support());
    Separation {
        jump_count: signal.jump_count(),
        delta_max: delta_from_support(signal.n(), signal.jump_support()),
        gaps,
    }
}

/// Measurement-count bound `C * (s * ln(n)^2 / delta + u^2)` with success
/// probability at least `1 - exp(-u^2/2)`. The logarithm base is absorbed
/// into `C`; natural log is used. `hypothesis_ok` reports whether the
/// theorem hypothesis `delta >= 8 s / n` holds; callers may still use the
/// value outside that regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBound {
    pub measurements: f64,
    pub hypothesis_ok: bool,
}

pub fn theoretical_rate(
    n: usize,
    s: usize,
    delta: f64,
    u: f64,
    c: f64,
) -> Result<RateBound, SignalError> {
    if s < 1 {
        return Err(SignalError::RateNeedsJumps);
    }
    if n < 2 {
        return Err(SignalError::TooShort(n));
    }
    if delta <= 0.0 {
        return Err(SignalError::RateNeedsPositiveDelta(delta));
    }
    let log_n = (n as f64).ln();
    let measurements = c * (s as f64 / delta * log_n * log_n + u * u);
    let hypothesis_ok = delta >= 8.0 * s as f64 / n as f64;
    Ok(RateBound {
        measurements,
        hypothesis_ok,
    })
}

/// Tolerance-based jump detector for solver outputs: position `nu` is a
/// jump when `|x[nu] - x[nu-1]| > threshold`. Constructed signals use the
/// exact detector in [`Signal::from_values`] instead.
pub fn detect_jumps(values: ArrayView1<f64>, threshold: f64) -> Vec<usize> {
    (1..values.len())
        .filter(|&nu| (values[nu] - values[nu - 1]).abs() > threshold)
        .collect()
}

/// Relative jump threshold used when classifying solver outputs.
pub fn solver_jump_threshold(values: ArrayView1<f64>) -> f64 {
    let max_abs = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    1e-8 * max_abs
}

/// Flat text serialization: a header line `n s seed`, then one value per
/// line, printed with Rust's shortest round-trip float formatting.
pub fn write_signal_text(signal: &Signal, seed: u64) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {}\n",
        signal.n(),
        signal.jump_count(),
        seed
    ));
    for v in signal.values().iter() {
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Parse the flat text format. The header's jump count must match the
/// support recomputed from the values.
pub fn read_signal_text(text: &str) -> Result<(Signal, u64), SignalError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SignalError::Malformed("empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(SignalError::Malformed(format!(
            "header must be `n s seed`, got {header:?}"
        )));
    }
    let n: usize = fields[0]
        .parse()
        .map_err(|e| SignalError::Malformed(format!("bad n: {e}")))?;
    let s: usize = fields[1]
        .parse()
        .map_err(|e| SignalError::Malformed(format!("bad s: {e}")))?;
    let seed: u64 = fields[2]
        .parse()
        .map_err(|e| SignalError::Malformed(format!("bad seed: {e}")))?;
    let mut values = Vec::with_capacity(n);
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        values.push(
            line.parse::<f64>()
                .map_err(|e| SignalError::Malformed(format!("bad value {line:?}: {e}")))?,
        );
    }
    if values.len() != n {
        return Err(SignalError::Malformed(format!(
            "expected {n} values, got {}",
            values.len()
        )));
    }
    let signal = Signal::from_values(Array1::from_vec(values))?;
    if signal.jump_count() != s {
        return Err(SignalError::Malformed(format!(
            "header says s={s} but values have {} jumps",
            signal.jump_count()
        )));
    }
    Ok((signal, seed))
}
