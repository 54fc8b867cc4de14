//! Least-squares line fits on transformed coordinates.
//!
//! Convergence-rate and decay measurements reduce to straight lines after
//! the right change of variables: power laws are lines in log–log, Gaussian
//! tails are lines of `log y` against a quadratic abscissa.  Everything here
//! is ordinary unweighted least squares; the callers choose abscissas where
//! equal weighting is the honest choice (one point per grid-exact distance
//! bin, one point per `p`).

use crate::error::{Error, Result};

/// Slope/intercept of an ordinary least-squares line, with the coefficient
/// of determination for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares for `y ≈ slope·x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::TooFewPoints(xs.len().min(ys.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::Backend(
            "degenerate abscissa in line fit (all x equal)".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        ss_res += (y - slope * x - intercept).powi(2);
        ss_tot += (y - my).powi(2);
    }
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Fit `y ≈ C·x^slope` by a line in log–log coordinates.  The returned
/// intercept is `ln C`.
pub fn fit_powerlaw(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let lx = log_all(xs)?;
    let ly = log_all(ys)?;
    fit_line(&lx, &ly)
}

/// Fit `y ≈ C·e^{slope·x}` by a line in semilog coordinates (linear
/// abscissa, logarithmic ordinate).  The returned intercept is `ln C`.
pub fn fit_semilog(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let ly = log_all(ys)?;
    fit_line(xs, &ly)
}

fn log_all(vs: &[f64]) -> Result<Vec<f64>> {
    vs.iter()
        .map(|&v| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::NonPositiveLogFit)
            }
        })
        .collect()
}

/// Semilog fit with iterated outlier trimming: fit, drop points whose
/// residual exceeds `nsigma` standard deviations, refit, up to `passes`
/// times.
///
/// This is for ordinates that follow an exponential law except at sparse
/// points where a separate mechanism breaks them — the motivating case is
/// kernel decay on a torus, where bins near the antipode suffer wrap
/// interference: torus images of the Gaussian kernel add with geometric
/// phases, enhancing some bins by small integer factors and cancelling
/// others to zero.  Those bins carry no information about the decay rate;
/// a plain least-squares line chases them (a cancelled bin sits tens of
/// log-units low).  Points with non-positive ordinate are treated as
/// cancelled outright and removed before the first pass.
pub fn fit_semilog_trimmed(
    xs: &[f64],
    ys: &[f64],
    passes: usize,
    nsigma: f64,
) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::TooFewPoints(xs.len().min(ys.len())));
    }
    let mut ax: Vec<f64> = Vec::with_capacity(xs.len());
    let mut ay: Vec<f64> = Vec::with_capacity(ys.len());
    for (&x, &y) in xs.iter().zip(ys) {
        if y > 0.0 {
            ax.push(x);
            ay.push(y.ln());
        }
    }
    let mut fit = fit_line(&ax, &ay)?;
    for _ in 0..passes {
        if ax.len() < 4 {
            break;
        }
        let resid: Vec<f64> = ax
            .iter()
            .zip(ay.iter())
            .map(|(&x, &ly)| ly - fit.slope * x - fit.intercept)
            .collect();
        let sigma = (resid.iter().map(|r| r * r).sum::<f64>() / (resid.len() as f64 - 2.0))
            .sqrt()
            .max(1e-300);
        let keep: Vec<usize> = (0..ax.len())
            .filter(|&i| resid[i].abs() <= nsigma * sigma)
            .collect();
        if keep.len() == ax.len() || keep.len() < 3 {
            break;
        }
        ax = keep.iter().map(|&i| ax[i]).collect();
        ay = keep.iter().map(|&i| ay[i]).collect();
        fit = fit_line(&ax, &ay)?;
    }
    Ok(fit)
}
