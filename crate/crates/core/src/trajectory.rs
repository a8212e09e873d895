//! Seeded rollouts, truncated states and sub-sampled sub-trajectories.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::csv::fmt_f64;
use crate::error::{ensure_dim, Error, Result};
use crate::seed;
use crate::system::{NoiseSpec, Policy, SystemSpec};

/// One recorded rollout: `T + 1` states, `T` excitations and `T` noise draws.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub sys: SystemSpec,
    pub policy: Policy,
    pub noise: NoiseSpec,
    states: Vec<DVector<f64>>,
    excitations: Vec<DVector<f64>>,
    noises: Vec<DVector<f64>>,
}

/// Excitation and noise streams for `len` steps drawn from `noise.seed`.
pub fn draw_streams(
    sys: &SystemSpec,
    noise: &NoiseSpec,
    len: usize,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut zr = seed::stream(noise.seed, seed::STREAM_EXCITATION);
    let mut wr = seed::stream(noise.seed, seed::STREAM_NOISE);
    let p = sys.input_dim();
    let n = sys.output_dim();
    let zs = (0..len)
        .map(|_| seed::normal_vector(&mut zr, p, noise.excitation_std))
        .collect();
    let ws = (0..len)
        .map(|_| seed::normal_vector(&mut wr, n, noise.process_std))
        .collect();
    (zs, ws)
}

/// Rolls `sys` forward from `start` through the given streams and returns the final state.
pub(crate) fn roll(
    sys: &SystemSpec,
    policy: &Policy,
    start: DVector<f64>,
    zs: &[DVector<f64>],
    ws: &[DVector<f64>],
) -> DVector<f64> {
    let theta = sys.theta_star();
    zs.iter().zip(ws).fold(start, |h, (z, w)| {
        let reg = sys.regressor(policy, &h, z);
        let head = sys.predict(&theta, &reg) + w;
        sys.lift(head, &h)
    })
}

/// Simulates `len` steps from `h_0 = 0`.
pub fn simulate(sys: &SystemSpec, policy: &Policy, noise: &NoiseSpec, len: usize) -> Result<Trajectory> {
    simulate_from(sys, policy, noise, len, DVector::zeros(sys.state_dim()))
}

/// Simulates `len` steps from an explicit initial state.
pub fn simulate_from(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    len: usize,
    h0: DVector<f64>,
) -> Result<Trajectory> {
    if len < 1 {
        return Err(Error::InvalidInput("trajectory length T must be >= 1".into()));
    }
    noise.validate()?;
    let (zs, ws) = draw_streams(sys, noise, len);
    Trajectory::from_streams(sys.clone(), policy.clone(), *noise, h0, zs, ws)
}

impl Trajectory {
    /// Replays recorded streams from `h0`.
    pub fn from_streams(
        sys: SystemSpec,
        policy: Policy,
        noise: NoiseSpec,
        h0: DVector<f64>,
        excitations: Vec<DVector<f64>>,
        noises: Vec<DVector<f64>>,
    ) -> Result<Trajectory> {
        sys.validate()?;
        sys.validate_policy(&policy)?;
        ensure_dim("initial state", sys.state_dim(), h0.len())?;
        ensure_dim("noise stream length", excitations.len(), noises.len())?;
        if excitations.is_empty() {
            return Err(Error::InvalidInput("trajectory length T must be >= 1".into()));
        }
        for (z, w) in excitations.iter().zip(&noises) {
            ensure_dim("excitation", sys.input_dim(), z.len())?;
            ensure_dim("process noise", sys.output_dim(), w.len())?;
        }
        let theta = sys.theta_star();
        let mut states = Vec::with_capacity(excitations.len() + 1);
        states.push(h0);
        for (z, w) in excitations.iter().zip(&noises) {
            let h = states.last().unwrap();
            let reg = sys.regressor(&policy, h, z);
            let head = sys.predict(&theta, &reg) + w;
            let next = sys.lift(head, h);
            states.push(next);
        }
        Ok(Trajectory {
            sys,
            policy,
            noise,
            states,
            excitations,
            noises,
        })
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.excitations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excitations.is_empty()
    }

    pub fn state(&self, t: usize) -> &DVector<f64> {
        &self.states[t]
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn excitation(&self, t: usize) -> &DVector<f64> {
        &self.excitations[t]
    }

    pub fn excitations(&self) -> &[DVector<f64>] {
        &self.excitations
    }

    pub fn noise_at(&self, t: usize) -> &DVector<f64> {
        &self.noises[t]
    }

    pub fn noises(&self) -> &[DVector<f64>] {
        &self.noises
    }

    /// `h_{t,L}`: the state at `t` re-rolled from a zero state at `t − L`
    /// through the recorded streams. `L = 0` gives the zero state.
    pub fn truncated_state(&self, t: usize, depth: usize) -> Result<DVector<f64>> {
        if t > self.len() {
            return Err(Error::InvalidInput(format!(
                "time {t} exceeds trajectory length {}",
                self.len()
            )));
        }
        if depth > t {
            return Err(Error::InvalidInput(format!(
                "truncation depth {depth} exceeds time {t}"
            )));
        }
        let start = t - depth;
        Ok(roll(
            &self.sys,
            &self.policy,
            DVector::zeros(self.sys.state_dim()),
            &self.excitations[start..t],
            &self.noises[start..t],
        ))
    }

    /// The `offset`-th truncated sub-trajectory with sampling period `period`.
    pub fn subsample(&self, period: usize, offset: usize) -> Result<SubTrajectory> {
        if period < 1 {
            return Err(Error::InvalidInput("sampling period must be >= 1".into()));
        }
        if offset >= period {
            return Err(Error::InvalidInput(format!(
                "offset {offset} must lie in [0, {}]",
                period - 1
            )));
        }
        let count = sample_count(self.len(), period);
        if count < 1 {
            return Err(Error::TrajectoryTooShort { min_t: 2 * period });
        }
        let mut sub = SubTrajectory {
            offset,
            period,
            times: Vec::with_capacity(count),
            states: Vec::with_capacity(count),
            targets: Vec::with_capacity(count),
            excitations: Vec::with_capacity(count),
            noises: Vec::with_capacity(count),
        };
        for i in 1..=count {
            let t = offset + i * period;
            let hbar = self.truncated_state(t, period - 1)?;
            let z = self.excitations[t].clone();
            let w = self.noises[t].clone();
            // h_{t+1,L} continues the same re-roll one more step.
            let reg = self.sys.regressor(&self.policy, &hbar, &z);
            let ybar = self.sys.lift(
                self.sys.predict(&self.sys.theta_star(), &reg) + &w,
                &hbar,
            );
            sub.times.push(t);
            sub.states.push(hbar);
            sub.targets.push(ybar);
            sub.excitations.push(z);
            sub.noises.push(w);
        }
        Ok(sub)
    }

    /// CSV with columns `t, h[..], z[..], w[..]`; the final row has empty input fields.
    pub fn to_csv(&self) -> String {
        let n = self.sys.state_dim();
        let p = self.sys.input_dim();
        let nw = self.sys.output_dim();
        let mut out = String::new();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("h{i}")));
        header.extend((0..p).map(|i| format!("z{i}")));
        header.extend((0..nw).map(|i| format!("w{i}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for t in 0..=self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(|&v| fmt_f64(v)));
            if t < self.len() {
                row.extend(self.excitations[t].iter().map(|&v| fmt_f64(v)));
                row.extend(self.noises[t].iter().map(|&v| fmt_f64(v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), p + nw));
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Raw arrays recovered from a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub states: Vec<Vec<f64>>,
    pub excitations: Vec<Vec<f64>>,
    pub noises: Vec<Vec<f64>>,
}

/// Parses the output of [`Trajectory::to_csv`].
pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryTable> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty trajectory CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let count = |prefix: char| {
        cols.iter()
            .filter(|c| c.starts_with(prefix) && c[1..].parse::<usize>().is_ok())
            .count()
    };
    let (n, p, nw) = (count('h'), count('z'), count('w'));
    let parse = |s: &str, line: usize| {
        s.parse::<f64>().map_err(|e| Error::Config {
            line,
            message: format!("bad number `{s}`: {e}"),
        })
    };
    let mut table = TrajectoryTable {
        states: Vec::new(),
        excitations: Vec::new(),
        noises: Vec::new(),
    };
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + n + p + nw {
            return Err(Error::Config {
                line: lineno,
                message: format!("expected {} fields, found {}", 1 + n + p + nw, fields.len()),
            });
        }
        let h = fields[1..1 + n]
            .iter()
            .map(|s| parse(s, lineno))
            .collect::<Result<Vec<_>>>()?;
        table.states.push(h);
        let rest = &fields[1 + n..];
        if rest.iter().all(|s| s.is_empty()) && !rest.is_empty() {
            continue;
        }
        table.excitations.push(rest[..p].iter().map(|s| parse(s, lineno)).collect::<Result<_>>()?);
        table.noises.push(rest[p..].iter().map(|s| parse(s, lineno)).collect::<Result<_>>()?);
    }
    Ok(table)
}

/// `N = ⌊(T − L)/L⌋`.
pub fn sample_count(len: usize, period: usize) -> usize {
    if period == 0 || len < period {
        0
    } else {
        (len - period) / period
    }
}

/// Truncated sub-trajectory: samples at `τ + iL`, `i = 1..N`, with states
/// truncated at depth `L − 1` and targets at depth `L`.
#[derive(Debug, Clone)]
pub struct SubTrajectory {
    pub offset: usize,
    pub period: usize,
    pub times: Vec<usize>,
    pub states: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
    pub excitations: Vec<DVector<f64>>,
    pub noises: Vec<DVector<f64>>,
}

impl SubTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Per-timestep mean and sample standard deviation of `‖h_t‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormProfile {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn norm_profile(trajs: &[Trajectory]) -> NormProfile {
    let len = trajs.iter().map(|t| t.states.len()).min().unwrap_or(0);
    let reps = trajs.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let norms: Vec<f64> = trajs.iter().map(|tr| tr.states[t].norm()).collect();
        let m = norms.iter().sum::<f64>() / reps;
        mean[t] = m;
        if trajs.len() > 1 {
            let var = norms.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1.0);
            std[t] = var.sqrt();
        }
    }
    NormProfile { mean, std }
}

/// Norm statistics over `reps` rollouts seeded by children of `noise.seed`.
pub fn state_norm_profile(
    sys: &SystemSpec,
    policy: &Policy,
    noise: &NoiseSpec,
    len: usize,
    reps: usize,
) -> Result<NormProfile> {
    if reps < 1 {
        return Err(Error::InvalidInput("reps must be >= 1".into()));
    }
    let trajs = (0..reps)
        .into_par_iter()
        .map(|r| simulate(sys, policy, &noise.with_seed(seed::derive(noise.seed, r as u64)), len))
        .collect::<Result<Vec<_>>>()?;
    Ok(norm_profile(&trajs))
}
