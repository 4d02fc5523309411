//! Runtime scaling of the exact attention oracle, the linear memory path
//! and windowed local attention.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::ltm::{build_memory, exact_attention_oracle, linear_attention, make_projection_basis};
use crate::parallel;
use crate::rng::Rng;
use crate::sta::local_attention;
use crate::tensor::Tensor;

/// Relative spread of repeat timings above which a point is unreliable.
pub const MAX_REL_STD: f64 = 0.2;
pub const EXACT_MIN_SLOPE: f64 = 1.7;
pub const LINEAR_MAX_SLOPE: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Exact,
    Ltm,
    Sta,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Exact => "exact",
            Mechanism::Ltm => "ltm",
            Mechanism::Sta => "sta",
        }
    }

    /// Whether `slope` matches the expected scaling.
    pub fn accepts(self, slope: f64) -> bool {
        match self {
            Mechanism::Exact => slope > EXACT_MIN_SLOPE,
            Mechanism::Ltm | Mechanism::Sta => slope < LINEAR_MAX_SLOPE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub c: usize,
    pub k: usize,
    pub d: usize,
    pub repeats: usize,
    pub exact_n: Vec<usize>,
    pub ltm_n: Vec<usize>,
    /// Pixel counts; each is rounded to the nearest square map.
    pub sta_n: Vec<usize>,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            c: 32,
            k: 8,
            d: 4,
            repeats: 5,
            exact_n: vec![1024, 4096, 16384],
            ltm_n: vec![4096, 16384, 65536],
            sta_n: vec![4096, 16384, 65536],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub mechanism: Mechanism,
    pub n: usize,
    pub median_s: f64,
    pub rel_std: f64,
}

impl Timing {
    pub fn reliable(&self) -> bool {
        self.rel_std <= MAX_REL_STD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub mechanism: Mechanism,
    pub slope: f64,
    pub pass: bool,
    /// Every timing in the fit was within the spread limit.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub c: usize,
    pub k: usize,
    pub d: usize,
    pub timings: Vec<Timing>,
    pub fits: Vec<SlopeFit>,
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(n, t)| !(n > 0.0 && t > 0.0)) {
        return Err(Error::arg("slope fit needs at least 2 positive points"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("slope fit needs distinct sizes"));
    }
    Ok(sxy / sxx)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn rel_std(v: &[f64]) -> f64 {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 || mean <= 0.0 {
        return 0.0;
    }
    let var = v.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0);
    var.sqrt() / mean
}

/// One warmup call, then `repeats` timed calls.
fn time_repeats(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<(f64, f64)> {
    f()?;
    let mut secs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        secs.push(t.elapsed().as_secs_f64());
    }
    let spread = rel_std(&secs);
    Ok((median(&mut secs), spread))
}

fn check_sizes(name: &str, ns: &[usize]) -> Result<()> {
    let lo = ns.iter().min().copied().unwrap_or(0);
    let hi = ns.iter().max().copied().unwrap_or(0);
    if ns.len() < 3 || lo == 0 || hi < 16 * lo {
        return Err(Error::Config(format!("{name}: need at least 3 sizes spanning 16x, got {ns:?}")));
    }
    Ok(())
}

/// Times one mechanism at size `n` (pixels for local attention, query and
/// memory rows otherwise). Returns the effective `n`.
pub fn time_point(mechanism: Mechanism, n: usize, s: &BenchSettings) -> Result<(usize, Timing)> {
    let mut rng = Rng::new(s.seed).derive(n as u64);
    let scale = 1.0 / (s.c as f64).sqrt();
    let (n, (median_s, rel_std)) = match mechanism {
        Mechanism::Exact | Mechanism::Ltm => {
            let basis = make_projection_basis::<f32>(s.c, s.seed)?;
            let q: Tensor<f32> = rng.uniform_tensor(&[n, s.c], -scale, scale)?;
            let m: Tensor<f32> = rng.uniform_tensor(&[n, s.c], -scale, scale)?;
            let t = if mechanism == Mechanism::Exact {
                time_repeats(s.repeats, || exact_attention_oracle(&q, &m, &basis).map(drop))?
            } else {
                let mem = build_memory(std::slice::from_ref(&m))?;
                time_repeats(s.repeats, || linear_attention(&q, &mem, &basis).map(drop))?
            };
            (n, t)
        }
        Mechanism::Sta => {
            let side = (n as f64).sqrt().round() as usize;
            let q: Tensor<f32> = rng.uniform_tensor(&[side, side, s.c], -1.0, 1.0)?;
            let y: Tensor<f32> = rng.uniform_tensor(&[side, side, s.c], -1.0, 1.0)?;
            let t = time_repeats(s.repeats, || local_attention(&q, &y, s.k, s.d).map(drop))?;
            (side * side, t)
        }
    };
    Ok((
        n,
        Timing {
            mechanism,
            n,
            median_s,
            rel_std,
        },
    ))
}

/// Runs the full sweep with internal parallelism disabled.
pub fn run(s: &BenchSettings) -> Result<BenchReport> {
    if s.repeats < 1 || s.c < 2 {
        return Err(Error::Config("bench needs repeats >= 1 and c >= 2".into()));
    }
    check_sizes("exact", &s.exact_n)?;
    check_sizes("ltm", &s.ltm_n)?;
    check_sizes("sta", &s.sta_n)?;
    parallel::sequential(|| {
        let mut timings = Vec::new();
        let mut fits = Vec::new();
        for (mech, ns) in [
            (Mechanism::Exact, &s.exact_n),
            (Mechanism::Ltm, &s.ltm_n),
            (Mechanism::Sta, &s.sta_n),
        ] {
            let mut points = Vec::new();
            let mut reliable = true;
            for &n in ns {
                let (n, t) = time_point(mech, n, s)?;
                log::info!("bench {} n={n} median {:.4}s spread {:.3}", mech.name(), t.median_s, t.rel_std);
                reliable &= t.reliable();
                points.push((n as f64, t.median_s));
                timings.push(t);
            }
            let slope = loglog_slope(&points)?;
            fits.push(SlopeFit {
                mechanism: mech,
                slope,
                pass: mech.accepts(slope),
                reliable,
            });
        }
        Ok(BenchReport {
            c: s.c,
            k: s.k,
            d: s.d,
            timings,
            fits,
        })
    })
}

impl BenchReport {
    pub fn fit(&self, m: Mechanism) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.mechanism == m)
    }

    pub fn all_pass(&self) -> bool {
        self.fits.iter().all(|f| f.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mechanism,n,c,k,d,median_s,rel_std,reliable,slope\n");
        for t in &self.timings {
            let slope = self.fit(t.mechanism).map_or(f64::NAN, |f| f.slope);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6e},{:.4},{},{:.4}",
                t.mechanism.name(),
                t.n,
                self.c,
                self.k,
                self.d,
                t.median_s,
                t.rel_std,
                t.reliable(),
                slope
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("c = {}, k = {}, d = {}\n\n", self.c, self.k, self.d);
        s += "| mechanism | n | median (s) | rel. std |\n|---|---:|---:|---:|\n";
        for t in &self.timings {
            let flag = if t.reliable() { "" } else { " (unreliable, rerun advised)" };
            let _ = writeln!(s, "| {} | {} | {:.4} | {:.3}{flag} |", t.mechanism.name(), t.n, t.median_s, t.rel_std);
        }
        s += "\n| mechanism | slope | expected | result |\n|---|---:|---|---|\n";
        for f in &self.fits {
            let expected = match f.mechanism {
                Mechanism::Exact => format!("> {EXACT_MIN_SLOPE}"),
                _ => format!("< {LINEAR_MAX_SLOPE}"),
            };
            let result = match (f.pass, f.reliable) {
                (true, true) => "pass",
                (true, false) => "pass (unreliable)",
                (false, true) => "FAIL",
                (false, false) => "FAIL (unreliable)",
            };
            let _ = writeln!(s, "| {} | {:.3} | {expected} | {result} |", f.mechanism.name(), f.slope);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_laws() {
        for p in [1.0, 2.0, 0.5] {
            let pts: Vec<(f64, f64)> = [10.0, 40.0, 160.0f64].iter().map(|&n| (n, 3.0 * n.powf(p))).collect();
            assert!((loglog_slope(&pts).unwrap() - p).abs() < 1e-12);
        }
        assert!(loglog_slope(&[(1.0, 1.0)]).is_err());
        assert!(loglog_slope(&[(2.0, 1.0), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn median_and_spread() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(rel_std(&[2.0, 2.0, 2.0]), 0.0);
        assert!((rel_std(&[1.0, 3.0]) - 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_sweep_reports_every_point() {
        let s = BenchSettings {
            c: 4,
            k: 4,
            d: 2,
            repeats: 1,
            exact_n: vec![16, 64, 256],
            ltm_n: vec![16, 64, 256],
            sta_n: vec![16, 64, 256],
            seed: 1,
        };
        let r = run(&s).unwrap();
        assert_eq!(r.timings.len(), 9);
        assert_eq!(r.fits.len(), 3);
        let csv = r.to_csv();
        assert!(csv.starts_with("mechanism,n,c,k,d,"));
        assert_eq!(csv.lines().count(), 10);
        assert!(csv.lines().nth(1).unwrap().starts_with("exact,16,4,4,2,"));
        assert!(r.to_markdown().contains("| sta |"));
    }

    #[test]
    fn narrow_sweeps_are_rejected() {
        let s = BenchSettings {
            ltm_n: vec![100, 200, 400],
            ..BenchSettings::default()
        };
        assert!(matches!(run(&s), Err(Error::Config(_))));
    }
}
