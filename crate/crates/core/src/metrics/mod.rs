//! Social outcome indices per iteration, their aggregation across runs, and
//! CSV and PNG output.

mod plot;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critic::ZERO_MI;
use crate::error::{Error, Result};
use crate::tensor::ops::entropy;

pub use plot::plot_index;

/// Two-sided 99.5% normal quantile.
pub const CI_Z: f64 = 2.807;
/// Below this average entropy the cooperation index is not reported.
pub const MIN_ENTROPY: f64 = 1e-6;

pub fn utilities(payoffs: &[f64]) -> Result<f64> {
    if payoffs.is_empty() {
        return Err(Error::InvalidArgument("utilities of an empty population".into()));
    }
    Ok(payoffs.iter().sum::<f64>() / payoffs.len() as f64)
}

/// `1 - sum_ij |G_i - G_j| / (2 n sum_i G_i)`, and 1 when nobody earned anything.
pub fn equity(payoffs: &[f64]) -> Result<f64> {
    if payoffs.is_empty() {
        return Err(Error::InvalidArgument("equity of an empty population".into()));
    }
    if let Some(g) = payoffs.iter().find(|&&g| g.is_nan() || g < 0.0) {
        return Err(Error::InvalidArgument(format!("negative payoff {g}")));
    }
    let total: f64 = payoffs.iter().sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let mut dispersion = 0.0;
    for a in payoffs {
        for b in payoffs {
            dispersion += (a - b).abs();
        }
    }
    Ok(1.0 - dispersion / (2.0 * payoffs.len() as f64 * total))
}

/// `1 - timeout_slots / (n l)`.
pub fn peace(timeout_slots: usize, agents: usize, steps: usize) -> Result<f64> {
    let slots = agents * steps;
    if slots == 0 || timeout_slots > slots {
        return Err(Error::InvalidArgument(format!("{timeout_slots} timeout slots out of {slots}")));
    }
    Ok(1.0 - timeout_slots as f64 / slots as f64)
}

/// Sum over steps of the apples on the field.
pub fn sustainability(apple_counts: &[usize]) -> f64 {
    apple_counts.iter().map(|&c| c as f64).sum()
}

/// Mean over each agent's visited states of the policy entropy, then over
/// agents. Agents without visited states are left out.
pub fn average_entropy(policies: &[Vec<[f64; 8]>]) -> f64 {
    let per_agent: Vec<f64> = policies
        .iter()
        .filter(|states| !states.is_empty())
        .map(|states| states.iter().map(|p| entropy(p)).sum::<f64>() / states.len() as f64)
        .collect();
    if per_agent.is_empty() {
        0.0
    } else {
        per_agent.iter().sum::<f64>() / per_agent.len() as f64
    }
}

/// The estimate moved so independence reads 0.
pub fn shifted_mi(raw: f64) -> f64 {
    raw - ZERO_MI
}

/// `(max(I, 0) / H) U`, missing when `H <= MIN_ENTROPY`.
pub fn cooperation_index(i_shifted: f64, h_bar: f64, u: f64) -> Option<f64> {
    if h_bar <= MIN_ENTROPY {
        None
    } else {
        Some(i_shifted.max(0.0) / h_bar * u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub payoffs: Vec<f64>,
    pub u: f64,
    pub e: f64,
    pub p: f64,
    pub s: f64,
    pub psi: Option<f64>,
    pub h_bar: f64,
    pub i_raw: f64,
    pub i_shifted: f64,
    pub agent_mi: Vec<f64>,
    pub predictor_mse: f64,
}

/// Raw per-iteration observations from which a record is built.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub payoffs: Vec<f64>,
    pub timeout_slots: usize,
    pub steps: usize,
    pub apple_counts: Vec<usize>,
    pub policies: Vec<Vec<[f64; 8]>>,
}

impl IterationRecord {
    pub fn from_window(iteration: usize, window: &WindowLog, agent_mi: Vec<f64>, predictor_mse: f64) -> Result<Self> {
        let n = window.payoffs.len();
        let u = utilities(&window.payoffs)?;
        let h_bar = average_entropy(&window.policies);
        // agents that never acted in the window report NaN and are left out
        let present: Vec<f64> = agent_mi.iter().copied().filter(|v| v.is_finite()).collect();
        let i_raw = if present.is_empty() {
            f64::NAN
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let i_shifted = shifted_mi(i_raw);
        Ok(IterationRecord {
            iteration,
            payoffs: window.payoffs.clone(),
            u,
            e: equity(&window.payoffs)?,
            p: peace(window.timeout_slots, n, window.steps)?,
            s: sustainability(&window.apple_counts),
            psi: if i_shifted.is_finite() {
                cooperation_index(i_shifted, h_bar, u)
            } else {
                None
            },
            h_bar,
            i_raw,
            i_shifted,
            agent_mi,
            predictor_mse,
        })
    }

    pub fn index(&self, index: Index) -> Option<f64> {
        match index {
            Index::U => Some(self.u),
            Index::E => Some(self.e),
            Index::P => Some(self.p),
            Index::S => Some(self.s),
            Index::Psi => self.psi,
            Index::HBar => Some(self.h_bar),
            Index::IRaw => Some(self.i_raw),
            Index::IShifted => Some(self.i_shifted),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Index {
    U,
    E,
    P,
    S,
    Psi,
    HBar,
    IRaw,
    IShifted,
}

impl Index {
    pub const ALL: [Index; 8] = [
        Index::U,
        Index::E,
        Index::P,
        Index::S,
        Index::Psi,
        Index::HBar,
        Index::IRaw,
        Index::IShifted,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Index::U => "U",
            Index::E => "E",
            Index::P => "P",
            Index::S => "S",
            Index::Psi => "psi",
            Index::HBar => "H_bar",
            Index::IRaw => "I_raw",
            Index::IShifted => "I_shifted",
        }
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same bits
    format!("{v:?}")
}

/// Header: `iter,U,E,P,S,psi,H_bar,I_raw,I_shifted,G_0..,I_0..,Y_mse`.
/// A missing `psi` is an empty field.
pub fn run_csv(records: &[IterationRecord]) -> String {
    let n = records.first().map_or(0, |r| r.payoffs.len());
    let mut out = String::from("iter,U,E,P,S,psi,H_bar,I_raw,I_shifted");
    for i in 0..n {
        let _ = write!(out, ",G_{i}");
    }
    for i in 0..n {
        let _ = write!(out, ",I_{i}");
    }
    out.push_str(",Y_mse\n");
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.u),
            fmt_f64(r.e),
            fmt_f64(r.p),
            fmt_f64(r.s),
            r.psi.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.h_bar),
            fmt_f64(r.i_raw),
            fmt_f64(r.i_shifted)
        );
        for g in &r.payoffs {
            let _ = write!(out, ",{}", fmt_f64(*g));
        }
        for i in 0..n {
            let _ = write!(out, ",{}", r.agent_mi.get(i).map_or(String::new(), |v| fmt_f64(*v)));
        }
        let _ = writeln!(out, ",{}", fmt_f64(r.predictor_mse));
    }
    out
}

pub fn write_run_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    std::fs::write(path, run_csv(records))?;
    Ok(())
}

pub fn parse_run_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty metrics file".into()))?
        .split(',')
        .collect();
    let n = header.iter().filter(|h| h.starts_with("G_")).count();
    if header.len() != 10 + 2 * n || header[..9] != ["iter", "U", "E", "P", "S", "psi", "H_bar", "I_raw", "I_shifted"] {
        return Err(Error::InvalidArgument("unexpected metrics header".into()));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad number {s:?} in metrics file")))
    };
    let mut records = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(Error::InvalidArgument(format!("metrics row has {} fields", f.len())));
        }
        records.push(IterationRecord {
            iteration: f[0]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad iteration {:?}", f[0])))?,
            u: num(f[1])?,
            e: num(f[2])?,
            p: num(f[3])?,
            s: num(f[4])?,
            psi: if f[5].is_empty() { None } else { Some(num(f[5])?) },
            h_bar: num(f[6])?,
            i_raw: num(f[7])?,
            i_shifted: num(f[8])?,
            payoffs: f[9..9 + n].iter().map(|s| num(s)).collect::<Result<_>>()?,
            agent_mi: f[9 + n..9 + 2 * n].iter().map(|s| num(s)).collect::<Result<_>>()?,
            predictor_mse: num(f[9 + 2 * n])?,
        });
    }
    Ok(records)
}

pub fn read_run_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    parse_run_csv(&std::fs::read_to_string(path)?)
}

/// Mean and confidence half-width of one index at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub half_width: f64,
}

/// Sample mean and `CI_Z * sd / sqrt(k)` over the values present; NaN when
/// fewer than two runs report a value.
pub fn band(values: &[f64]) -> Band {
    let k = values.len();
    if k == 0 {
        return Band {
            mean: f64::NAN,
            half_width: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return Band {
            mean,
            half_width: f64::NAN,
        };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    Band {
        mean,
        half_width: CI_Z * var.sqrt() / (k as f64).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: usize,
    /// `series[index position in Index::ALL][iteration]`.
    pub series: Vec<Vec<Band>>,
}

impl SweepSummary {
    pub fn iterations(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn get(&self, index: Index) -> &[Band] {
        let pos = Index::ALL.iter().position(|&i| i == index).expect("listed");
        &self.series[pos]
    }
}

pub fn aggregate_sweep(runs: &[Vec<IterationRecord>]) -> Result<SweepSummary> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument(format!("a sweep needs at least 2 runs, got {}", runs.len())));
    }
    let iterations = runs[0].len();
    if let Some(bad) = runs.iter().find(|r| r.len() != iterations) {
        return Err(Error::InvalidArgument(format!(
            "runs have {} and {} iterations",
            iterations,
            bad.len()
        )));
    }
    let series = Index::ALL
        .iter()
        .map(|&index| {
            (0..iterations)
                .map(|t| {
                    let values: Vec<f64> = runs.iter().filter_map(|r| r[t].index(index)).collect();
                    band(&values)
                })
                .collect()
        })
        .collect();
    Ok(SweepSummary {
        runs: runs.len(),
        series,
    })
}

/// Long format: `iter,index,mode,mean,ci_half_width`.
pub fn sweep_csv(modes: &[(&str, &SweepSummary)]) -> String {
    let mut out = String::from("iter,index,mode,mean,ci_half_width\n");
    for &index in &Index::ALL {
        for (mode, summary) in modes {
            for (t, b) in summary.get(index).iter().enumerate() {
                let _ = writeln!(out, "{t},{},{mode},{},{}", index.column(), fmt_f64(b.mean), fmt_f64(b.half_width));
            }
        }
    }
    out
}

/// Writes the sweep CSV and one PNG per index into `dir`.
pub fn write_sweep(dir: &Path, modes: &[(&str, &SweepSummary)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), sweep_csv(modes))?;
    for &index in &Index::ALL {
        let series: Vec<&[Band]> = modes.iter().map(|(_, s)| s.get(index)).collect();
        plot_index(&dir.join(format!("{}.png", index.column())), &series)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(iteration: usize, u: f64) -> IterationRecord {
        IterationRecord {
            iteration,
            payoffs: vec![u, u],
            u,
            e: 1.0,
            p: 1.0,
            s: 3.0,
            psi: None,
            h_bar: 0.0,
            i_raw: ZERO_MI,
            i_shifted: 0.0,
            agent_mi: vec![ZERO_MI, ZERO_MI],
            predictor_mse: 0.5,
        }
    }

    #[test]
    fn equity_examples() {
        assert_eq!(equity(&[5.0, 5.0, 5.0]).unwrap(), 1.0);
        assert_eq!(equity(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(equity(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(equity(&[1.0, -1.0]).is_err());
    }

    #[test]
    fn peace_and_utilities() {
        assert_eq!(peace(25, 4, 100).unwrap(), 0.9375);
        assert_eq!(peace(0, 4, 100).unwrap(), 1.0);
        assert_eq!(peace(400, 4, 100).unwrap(), 0.0);
        assert_eq!(utilities(&[0.0, 4.0]).unwrap(), 2.0);
        assert!(utilities(&[]).is_err());
        assert_eq!(sustainability(&[7; 10]), 70.0);
    }

    #[test]
    fn entropy_extremes() {
        assert!((average_entropy(&[vec![[0.125; 8]; 3], vec![[0.125; 8]]]) - 8f64.ln()).abs() < 1e-12);
        let mut one_hot = [0.0; 8];
        one_hot[2] = 1.0;
        assert_eq!(average_entropy(&[vec![one_hot; 4]]), 0.0);
    }

    #[test]
    fn cooperation_examples() {
        assert_eq!(cooperation_index(0.0, 1.5, 200.0), Some(0.0));
        assert_eq!(cooperation_index(2.0, 2.0, 200.0), Some(200.0));
        assert!((cooperation_index(0.1, 2.0, 290.0).unwrap() - 14.5).abs() < 1e-12);
        assert_eq!(cooperation_index(0.3, 1e-7, 5.0), None);
        assert_eq!(cooperation_index(-0.3, 1.0, 5.0), Some(0.0));
    }

    #[test]
    fn band_closed_form() {
        let b = band(&[1.0, 3.0]);
        assert_eq!(b.mean, 2.0);
        assert!((b.half_width - CI_Z * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(band(&[4.0, 4.0]).half_width, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = vec![record(0, 1.5), record(1, 2.25)];
        rows[1].psi = Some(0.1 + 0.2);
        let text = run_csv(&rows);
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("iter,U,E,P,S,psi,H_bar,I_raw,I_shifted,G_0,G_1,I_0,I_1,Y_mse\n"));
        assert_eq!(parse_run_csv(&text).unwrap(), rows);
    }

    #[test]
    fn sweep_rejects_misaligned_runs() {
        let a = vec![record(0, 1.0), record(1, 1.0)];
        let b = vec![record(0, 1.0)];
        assert!(aggregate_sweep(&[a.clone(), b]).is_err());
        assert!(aggregate_sweep(std::slice::from_ref(&a)).is_err());
        let s = aggregate_sweep(&[a.clone(), a]).unwrap();
        assert_eq!(s.get(Index::U)[1].half_width, 0.0);
        assert!(s.get(Index::Psi)[0].mean.is_nan());
        let csv = sweep_csv(&[("cms", &s)]);
        assert_eq!(csv.lines().count(), 1 + 2 * Index::ALL.len());
    }
}
