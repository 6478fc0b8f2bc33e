//! Kaplan–Meier, Breslow baseline hazard, Harrell's C-index and Graf's
//! IPCW Brier score, plus the brute-force Cox partial likelihood used to
//! cross-check the fast path in [`crate::model`].

use crate::error::{Error, Result};

/// Observed times (days) and event indicators, no covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalTable {
    time: Vec<f64>,
    event: Vec<bool>,
}

impl SurvivalTable {
    pub fn new(time: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        if time.len() != event.len() {
            return Err(Error::Validation(format!(
                "{} times but {} event indicators",
                time.len(),
                event.len()
            )));
        }
        if time.is_empty() {
            return Err(Error::Validation("survival table is empty".into()));
        }
        if let Some(i) = time.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Validation(format!(
                "time of record {i} is {} (must be positive and finite)",
                time[i]
            )));
        }
        Ok(Self { time, event })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    /// Same times with `δ → 1 − δ`.
    pub fn flipped(&self) -> Self {
        Self {
            time: self.time.clone(),
            event: self.event.iter().map(|e| !e).collect(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            time: idx.iter().map(|&i| self.time[i]).collect(),
            event: idx.iter().map(|&i| self.event[i]).collect(),
        }
    }

    /// Distinct observed times ascending, with event and at-risk counts.
    fn event_groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.time[a].total_cmp(&self.time[b]));
        let n = self.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let t = self.time[order[i]];
            let mut j = i;
            let mut d = 0;
            while j < n && self.time[order[j]] == t {
                d += self.event[order[j]] as usize;
                j += 1;
            }
            out.push((t, d, n - i));
            i = j;
        }
        out
    }
}

/// Right-continuous piecewise-constant function of time.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    before_first: f64,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, before_first: f64) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::Validation("knots and values differ in length".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("knots must be strictly ascending".into()));
        }
        Ok(Self {
            knots,
            values,
            before_first,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            knots: Vec::new(),
            values: Vec::new(),
            before_first: value,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn before_first(&self) -> f64 {
        self.before_first
    }

    /// Value at `t`, including the jump at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x <= t);
        if k == 0 {
            self.before_first
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t`, excluding any jump at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&x| x < t);
        if k == 0 {
            self.before_first
        } else {
            self.values[k - 1]
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            knots: self.knots.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            before_first: f(self.before_first),
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        std::iter::once(self.before_first)
            .chain(self.values.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] <= w[0])
    }

    pub fn is_nondecreasing(&self) -> bool {
        std::iter::once(self.before_first)
            .chain(self.values.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] >= w[0])
    }
}

/// Product-limit estimate of the survival function.
pub fn kaplan_meier(table: &SurvivalTable) -> StepFunction {
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    for (t, d, at_risk) in table.event_groups() {
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            knots.push(t);
            values.push(s);
        }
    }
    StepFunction {
        knots,
        values,
        before_first: 1.0,
    }
}

/// Kaplan–Meier of the censoring distribution, Ĝ.
pub fn censoring_km(table: &SurvivalTable) -> StepFunction {
    kaplan_meier(&table.flipped())
}

/// Breslow cumulative baseline hazard for log-hazards `r`.
pub fn breslow_baseline(table: &SurvivalTable, r: &[f64]) -> Result<StepFunction> {
    if r.len() != table.len() {
        return Err(Error::Dimension(format!(
            "{} log-hazards for {} records",
            r.len(),
            table.len()
        )));
    }
    let n = table.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| table.time[a].total_cmp(&table.time[b]));
    // Risk-set sums from the latest time backwards, shifted by max r.
    let shift = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tail = vec![0.0; n + 1];
    for k in (0..n).rev() {
        tail[k] = tail[k + 1] + (r[order[k]] - shift).exp();
    }
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    let mut i = 0;
    while i < n {
        let t = table.time[order[i]];
        let mut j = i;
        let mut d = 0usize;
        while j < n && table.time[order[j]] == t {
            d += table.event[order[j]] as usize;
            j += 1;
        }
        if d > 0 {
            h += d as f64 / tail[i] * (-shift).exp();
            knots.push(t);
            values.push(h);
        }
        i = j;
    }
    Ok(StepFunction {
        knots,
        values,
        before_first: 0.0,
    })
}

/// `S(t | r) = exp(−Ĥ₀(t)·eʳ)`.
pub fn survival_curve(baseline: &StepFunction, r: f64) -> StepFunction {
    let scale = r.exp();
    baseline.map(|h| (-h * scale).exp())
}

/// Harrell's C-index by direct pair enumeration. A pair `(i, j)` is
/// comparable when `tᵢ < tⱼ` and `δᵢ = 1`; risk ties count one half.
pub fn concordance_index(table: &SurvivalTable, r: &[f64]) -> Result<f64> {
    if r.len() != table.len() {
        return Err(Error::Dimension(format!(
            "{} risk scores for {} records",
            r.len(),
            table.len()
        )));
    }
    let (t, e) = (table.time(), table.event());
    let mut pairs = 0u64;
    let mut score2 = 0u64; // twice the concordance count, to stay integral
    for i in 0..t.len() {
        if !e[i] {
            continue;
        }
        for j in 0..t.len() {
            if t[i] < t[j] {
                pairs += 1;
                if r[i] > r[j] {
                    score2 += 2;
                } else if r[i] == r[j] {
                    score2 += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs for the C-index".into()));
    }
    Ok(score2 as f64 / (2.0 * pairs as f64))
}

/// Graf's IPCW Brier score at `t_eval`. `s_pred[i]` is subject `i`'s
/// predicted `S(t_eval)`; `censoring` is Ĝ.
pub fn brier_score(
    t_eval: f64,
    table: &SurvivalTable,
    s_pred: &[f64],
    censoring: &StepFunction,
) -> Result<f64> {
    if s_pred.len() != table.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} records",
            s_pred.len(),
            table.len()
        )));
    }
    let mut total = 0.0;
    let mut g_eval = None;
    for ((&t, &e), &s) in table.time().iter().zip(table.event()).zip(s_pred) {
        if t <= t_eval && e {
            let g = censoring.eval_left(t);
            if g <= 0.0 {
                return Err(Error::Weight(format!("censoring survival is zero just before t = {t}")));
            }
            total += s * s / g;
        } else if t > t_eval {
            let g = *g_eval.get_or_insert_with(|| censoring.eval(t_eval));
            if g <= 0.0 {
                return Err(Error::Weight(format!("censoring survival is zero at t = {t_eval}")));
            }
            total += (1.0 - s) * (1.0 - s) / g;
        }
    }
    Ok(total / table.len() as f64)
}

/// Trapezoidal integral of `brier(t)` over `grid`, divided by the grid span.
pub fn integrate_over_grid(grid: &[f64], mut brier: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::Config("integration grid needs at least two points".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("integration grid must be strictly ascending".into()));
    }
    let span = grid[grid.len() - 1] - grid[0];
    let values = grid.iter().map(|&t| brier(t)).collect::<Result<Vec<_>>>()?;
    let area: f64 = grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, b)| 0.5 * (b[0] + b[1]) * (t[1] - t[0]))
        .sum();
    Ok(area / span)
}

/// Integrated Brier score of Cox-model survival curves `exp(−Ĥ₀(t)·e^{rᵢ})`.
pub fn integrated_brier(
    grid: &[f64],
    table: &SurvivalTable,
    baseline: &StepFunction,
    r: &[f64],
    censoring: &StepFunction,
) -> Result<f64> {
    if r.len() != table.len() {
        return Err(Error::Dimension(format!(
            "{} log-hazards for {} records",
            r.len(),
            table.len()
        )));
    }
    let scales: Vec<f64> = r.iter().map(|v| v.exp()).collect();
    let mut preds = vec![0.0; r.len()];
    integrate_over_grid(grid, |t| {
        let h0 = baseline.eval(t);
        for (p, s) in preds.iter_mut().zip(&scales) {
            *p = (-h0 * s).exp();
        }
        brier_score(t, table, &preds, censoring)
    })
}

/// Linear-interpolated quantile of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `points` equally spaced times between the 5th and 95th percentiles of
/// the observed times.
pub fn default_ibs_grid(table: &SurvivalTable, points: usize) -> Result<Vec<f64>> {
    let lo = quantile(table.time(), 0.05);
    let hi = quantile(table.time(), 0.95);
    if points < 2 || !(hi > lo) {
        return Err(Error::Config(format!(
            "degenerate IBS grid [{lo}, {hi}] with {points} points"
        )));
    }
    Ok((0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect())
}

/// Literal double-loop negative partial log-likelihood with Breslow ties.
/// `None` when no events are present.
pub fn cox_nll_oracle(r: &[f64], table: &SurvivalTable) -> Option<f64> {
    let (t, e) = (table.time(), table.event());
    let n_events = table.n_events();
    if n_events == 0 {
        return None;
    }
    let mut acc = 0.0;
    for i in 0..t.len() {
        if !e[i] {
            continue;
        }
        let risk: Vec<f64> = (0..t.len()).filter(|&j| t[j] >= t[i]).map(|j| r[j]).collect();
        let m = risk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + risk.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        acc += r[i] - lse;
    }
    Some(-acc / n_events as f64)
}
