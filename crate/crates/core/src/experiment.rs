//! Campaigns over `(N, μ, ε)` grids: configuration, per-instance result
//! records, CSV output with a fixed column order, and a JSON sidecar that
//! makes runs resumable.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capacity::{capacity_bracket, CapacityBudget};
use crate::committor::{capacity_oracle_small_n, GridSpec};
use crate::error::{Error, Result};
use crate::fourier::NeighborhoodSpec;
use crate::parallel::with_workers;
use crate::potential::ChainParams;
use crate::rng::derive_seed;
use crate::simulate::{mean_hitting_1d, simulate_hitting, SimConfig};
use crate::spectral::{predict_mean_time_rescaled, prefactor};

pub const CSV_COLUMNS: [&str; 21] = [
    "n",
    "mu",
    "gamma",
    "epsilon",
    "rho",
    "dt",
    "c_n_product",
    "det_ratio",
    "v_mu",
    "log_cap_lower",
    "log_cap_upper",
    "log_cap_asymptotic",
    "mean_emp",
    "ci95_low",
    "ci95_high",
    "censored",
    "pred_det_form",
    "pred_literal_cn",
    "ratio_emp_over_pred_det",
    "ratio_emp_over_pred_literal",
    "seed",
];

/// Relative window for agreement between the empirical mean and a
/// prediction.
pub const PREDICTION_WINDOW: f64 = 0.15;
/// Relative window for agreement with the exact one-site mean.
pub const ORACLE_WINDOW: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub n: usize,
    /// Ignored for `n = 1`.
    #[serde(default)]
    pub mu: f64,
    pub epsilon: f64,
}

impl Instance {
    pub fn params(&self) -> Result<ChainParams> {
        if self.n == 1 {
            ChainParams::single_site(self.epsilon)
        } else {
            ChainParams::new(self.n, self.mu, self.epsilon)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub trajectories: usize,
    pub samples: usize,
    pub tensor_nodes: usize,
    pub max_rel_se: f64,
    /// Grid step for the `N ≤ 2` committor oracle; `None` picks a default.
    pub grid_step: Option<f64>,
    /// Time step; `None` picks `1e-3·min(1, N/ν_max)`.
    pub dt: Option<f64>,
    pub rho: f64,
    /// Per-trajectory cap; `None` is fifty times the determinant-form mean.
    pub max_time: Option<f64>,
}

impl Default for Budgets {
    fn default() -> Self {
        let cap = CapacityBudget::default();
        Self {
            trajectories: 1000,
            samples: cap.samples,
            tensor_nodes: cap.tensor_nodes,
            max_rel_se: cap.max_rel_se,
            grid_step: None,
            dt: None,
            rho: 0.2,
            max_time: None,
        }
    }
}

impl Budgets {
    fn validate(&self) -> std::result::Result<(), String> {
        let positive = |v: Option<f64>| v.is_none_or(|v| v > 0.0 && v.is_finite());
        if self.trajectories == 0 || self.samples < 2 || self.tensor_nodes < 2 {
            return Err("trajectories, samples (>= 2) and tensor_nodes (>= 2) must be positive".into());
        }
        if !(self.max_rel_se > 0.0) || !positive(self.grid_step) || !positive(self.dt) || !positive(self.max_time) {
            return Err("max_rel_se, grid_step, dt and max_time must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(format!("rho must lie in (0, 1) (got {})", self.rho));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tasks {
    pub simulate: bool,
    pub capacity: bool,
}

impl Default for Tasks {
    fn default() -> Self {
        Self { simulate: true, capacity: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Predictions {
    pub determinant_form: bool,
    pub literal_cn: bool,
    pub v_mu: bool,
}

impl Default for Predictions {
    fn default() -> Self {
        Self { determinant_form: true, literal_cn: true, v_mu: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub instances: Vec<Instance>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub tasks: Tasks,
    #[serde(default)]
    pub predictions: Predictions,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    /// Run instances concurrently instead of one after another.
    #[serde(default)]
    pub parallel_instances: bool,
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.budgets.validate().map_err(|message| Error::Config { location: "budgets".into(), message })?;
        for (i, inst) in self.instances.iter().enumerate() {
            let fail = |message: String| Error::Config { location: format!("instances[{i}]"), message };
            let p = inst.params().map_err(|e| fail(e.to_string()))?;
            p.require_sync_regime().map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }
}

/// Pass/fail flags. Each is `None` when the inputs it needs were not
/// computed, and every one is a function of the record's numeric fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flags {
    /// Empirical mean within 15% of the determinant-form prediction.
    pub within_window_det: Option<bool>,
    /// Empirical mean within 15% of the literal `2πN c_N` prediction.
    pub within_window_literal: Option<bool>,
    /// One site: empirical mean within `max(5%, 2 SE)` of the exact mean.
    pub oracle_1d_agreement: Option<bool>,
    /// `log_cap_lower ≤ log_cap_upper` within two combined standard errors.
    pub bracket_ordered: Option<bool>,
    /// Grid-oracle capacity inside the bracket within two combined standard
    /// errors.
    pub oracle_in_bracket: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultRecord {
    pub n: usize,
    pub mu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub dt: Option<f64>,
    pub c_n_product: f64,
    pub det_ratio: f64,
    pub v_mu: Option<f64>,
    pub log_cap_lower: Option<f64>,
    pub log_cap_lower_se: Option<f64>,
    pub log_cap_upper: Option<f64>,
    pub log_cap_upper_se: Option<f64>,
    pub log_cap_asymptotic: Option<f64>,
    pub log_cap_oracle: Option<f64>,
    pub n_traj: Option<usize>,
    pub mean_emp: Option<f64>,
    pub std_error: Option<f64>,
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
    pub censored: Option<usize>,
    pub log_pred_det_form: Option<f64>,
    pub log_pred_literal_cn: Option<f64>,
    /// Linear predictions; `None` when they overflow.
    pub pred_det_form: Option<f64>,
    pub pred_literal_cn: Option<f64>,
    pub ratio_emp_over_pred_det: Option<f64>,
    pub ratio_emp_over_pred_literal: Option<f64>,
    /// Exact mean hitting time (one site only).
    pub oracle_1d_mean: Option<f64>,
    pub seed: u64,
    pub flags: Flags,
}

fn linear(log: f64) -> Option<f64> {
    let v = log.exp();
    (v.is_finite() && v > 0.0).then_some(v)
}

impl ResultRecord {
    pub fn compute_flags(&self) -> Flags {
        let within = |ratio: Option<f64>| ratio.map(|r| (r - 1.0).abs() <= PREDICTION_WINDOW);
        let oracle_1d_agreement = match (self.mean_emp, self.std_error, self.oracle_1d_mean) {
            (Some(m), Some(se), Some(o)) => Some((m - o).abs() <= (ORACLE_WINDOW * o).max(2.0 * se)),
            _ => None,
        };
        let bracket = match (self.log_cap_lower, self.log_cap_lower_se, self.log_cap_upper, self.log_cap_upper_se) {
            (Some(l), Some(ls), Some(u), Some(us)) => Some((l, u, 2.0 * (ls * ls + us * us).sqrt())),
            _ => None,
        };
        Flags {
            within_window_det: within(self.ratio_emp_over_pred_det),
            within_window_literal: within(self.ratio_emp_over_pred_literal),
            oracle_1d_agreement,
            bracket_ordered: bracket.map(|(l, u, tol)| l <= u + tol),
            oracle_in_bracket: match (bracket, self.log_cap_oracle) {
                (Some((l, u, tol)), Some(o)) => Some(l - tol <= o && o <= u + tol),
                _ => None,
            },
        }
    }

    /// One CSV line (no trailing newline) in [`CSV_COLUMNS`] order; missing
    /// values are empty fields.
    pub fn csv_row(&self) -> String {
        fn f(v: Option<f64>) -> String {
            v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.n.to_string(),
            self.mu.to_string(),
            self.gamma.to_string(),
            self.epsilon.to_string(),
            self.rho.to_string(),
            f(self.dt),
            f(Some(self.c_n_product)),
            f(Some(self.det_ratio)),
            f(self.v_mu),
            f(self.log_cap_lower),
            f(self.log_cap_upper),
            f(self.log_cap_asymptotic),
            f(self.mean_emp),
            f(self.ci95_low),
            f(self.ci95_high),
            self.censored.map(|c| c.to_string()).unwrap_or_default(),
            f(self.pred_det_form),
            f(self.pred_literal_cn),
            f(self.ratio_emp_over_pred_det),
            f(self.ratio_emp_over_pred_literal),
            self.seed.to_string(),
        ]
        .join(",")
    }
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn csv_document(records: &[ResultRecord]) -> String {
    let mut out = csv_header();
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Computes one record: prefactors always, then the enabled tasks.
pub fn run_instance(
    inst: &Instance,
    budgets: &Budgets,
    tasks: &Tasks,
    predictions: &Predictions,
    seed: u64,
) -> Result<ResultRecord> {
    let p = inst.params()?;
    let pre = prefactor(&p)?;
    let pred = predict_mean_time_rescaled(&p)?;
    let mut r = ResultRecord {
        n: p.n,
        mu: p.mu,
        gamma: p.gamma,
        epsilon: p.epsilon,
        rho: budgets.rho,
        c_n_product: pre.c_n_product,
        det_ratio: pre.det_ratio,
        v_mu: pre.v_mu.filter(|_| predictions.v_mu),
        seed,
        ..Default::default()
    };
    if predictions.determinant_form {
        r.log_pred_det_form = Some(pred.determinant_form.log);
        r.pred_det_form = linear(pred.determinant_form.log);
    }
    if predictions.literal_cn {
        r.log_pred_literal_cn = Some(pred.literal_cn.log);
        r.pred_literal_cn = linear(pred.literal_cn.log);
    }

    if tasks.capacity {
        let spec = NeighborhoodSpec::with_params(
            p.n,
            p.epsilon,
            NeighborhoodSpec::DEFAULT_K,
            NeighborhoodSpec::DEFAULT_ALPHA,
            budgets.rho,
        )?;
        let cap_budget = CapacityBudget {
            samples: budgets.samples,
            seed,
            max_rel_se: budgets.max_rel_se,
            tensor_nodes: budgets.tensor_nodes,
            force_monte_carlo: false,
        };
        let b = capacity_bracket(&p, &spec, &cap_budget)?;
        r.log_cap_lower = Some(b.lower.log);
        r.log_cap_lower_se = Some(b.lower.log_se);
        r.log_cap_upper = Some(b.upper.log);
        r.log_cap_upper_se = Some(b.upper.log_se);
        r.log_cap_asymptotic = Some(b.asymptotic);
        if p.n <= 2 {
            let default = GridSpec::default_for(p.n);
            let grid = GridSpec::new(default.half_width, budgets.grid_step.unwrap_or(default.step))?;
            r.log_cap_oracle = Some(capacity_oracle_small_n(&p, budgets.rho, &grid)?);
        }
    }

    if tasks.simulate {
        let mut c = SimConfig::defaults(&p, budgets.trajectories, seed)?;
        c.rho = budgets.rho;
        if let Some(dt) = budgets.dt {
            c.dt = dt;
        }
        if let Some(t) = budgets.max_time {
            c.max_time = t;
        }
        let batch = simulate_hitting(&p, &c)?;
        r.dt = Some(c.dt);
        r.n_traj = Some(c.n_traj);
        r.mean_emp = Some(batch.mean);
        r.std_error = Some(batch.std_error);
        r.ci95_low = Some(batch.ci95_low);
        r.ci95_high = Some(batch.ci95_high);
        r.censored = Some(batch.censored_count);
        let log_mean = batch.mean.ln();
        r.ratio_emp_over_pred_det = r.log_pred_det_form.map(|l| (log_mean - l).exp());
        r.ratio_emp_over_pred_literal = r.log_pred_literal_cn.map(|l| (log_mean - l).exp());
        if p.n == 1 {
            r.oracle_1d_mean = Some(mean_hitting_1d(p.epsilon, -1.0, 1.0 - budgets.rho)?);
        }
    }
    r.flags = r.compute_flags();
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub index: usize,
    pub instance: Instance,
    pub seed: u64,
    pub config_hash: String,
    pub status: Status,
    pub error: Option<String>,
    pub wall_clock_s: f64,
    pub record: Option<ResultRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    pub tool: String,
    pub version: String,
    pub campaign_seed: u64,
    pub config_hash: String,
    pub columns: Vec<String>,
    pub instances: Vec<InstanceMeta>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of everything that determines an instance's record.
pub fn instance_hash(inst: &Instance, budgets: &Budgets, tasks: &Tasks, predictions: &Predictions, seed: u64) -> String {
    let payload = serde_json::json!({
        "instance": inst,
        "budgets": budgets,
        "tasks": tasks,
        "predictions": predictions,
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    hex_digest(payload.to_string().as_bytes())
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub completed: usize,
    pub skipped: usize,
    pub failed: Vec<(usize, String)>,
    pub csv: PathBuf,
    pub meta: PathBuf,
}

/// Runs every instance of `cfg`, writing `out` (CSV) and `out.meta.json`
/// after each instance. Instances already recorded as successful with the
/// same hash are skipped; a recorded instance whose hash changed aborts the
/// run unless `force` is set. Failing instances are recorded and do not stop
/// the campaign.
pub fn run_campaign(cfg: &CampaignConfig, out: &Path, force: bool) -> Result<CampaignSummary> {
    cfg.validate()?;
    let meta_file = meta_path(out);
    let previous: HashMap<usize, InstanceMeta> = match fs::read_to_string(&meta_file) {
        Ok(text) => serde_json::from_str::<CampaignMeta>(&text)
            .map_err(|e| Error::Config { location: meta_file.display().to_string(), message: e.to_string() })?
            .instances
            .into_iter()
            .map(|m| (m.index, m))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
        Err(e) => return Err(e.into()),
    };

    let seeds: Vec<u64> = (0..cfg.instances.len()).map(|i| derive_seed(cfg.seed, i as u64)).collect();
    let hashes: Vec<String> = cfg
        .instances
        .iter()
        .zip(&seeds)
        .map(|(inst, &s)| instance_hash(inst, &cfg.budgets, &cfg.tasks, &cfg.predictions, s))
        .collect();

    let mut slots: Vec<Option<InstanceMeta>> = vec![None; cfg.instances.len()];
    let mut pending = Vec::new();
    let mut skipped = 0;
    for (i, hash) in hashes.iter().enumerate() {
        match previous.get(&i) {
            Some(m) if &m.config_hash != hash && !force => {
                return Err(Error::HashMismatch { instance: format!("{i} ({:?})", cfg.instances[i]) });
            }
            Some(m) if &m.config_hash == hash && m.status == Status::Ok => {
                slots[i] = Some(m.clone());
                skipped += 1;
            }
            _ => pending.push(i),
        }
    }

    let whole_hash = hex_digest(serde_json::to_string(cfg).map_err(|e| Error::domain(e.to_string()))?.as_bytes());
    let state = Mutex::new(slots);
    let persist = |slots: &[Option<InstanceMeta>]| -> Result<()> {
        let done: Vec<InstanceMeta> = slots.iter().flatten().cloned().collect();
        let records: Vec<ResultRecord> = done.iter().filter_map(|m| m.record.clone()).collect();
        let meta = CampaignMeta {
            tool: "metachain".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            campaign_seed: cfg.seed,
            config_hash: whole_hash.clone(),
            columns: CSV_COLUMNS.iter().map(|c| c.to_string()).collect(),
            instances: done,
        };
        write_atomic(out, &csv_document(&records))?;
        let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::domain(e.to_string()))?;
        write_atomic(&meta_file, &json)
    };

    let run_one = |i: usize| -> Result<()> {
        let started = Instant::now();
        let outcome = run_instance(&cfg.instances[i], &cfg.budgets, &cfg.tasks, &cfg.predictions, seeds[i]);
        let (status, error, record) = match outcome {
            Ok(r) => (Status::Ok, None, Some(r)),
            Err(e) => (Status::Failed, Some(e.to_string()), None),
        };
        let entry = InstanceMeta {
            index: i,
            instance: cfg.instances[i],
            seed: seeds[i],
            config_hash: hashes[i].clone(),
            status,
            error,
            wall_clock_s: started.elapsed().as_secs_f64(),
            record,
        };
        let mut slots = state.lock().expect("campaign state poisoned");
        slots[i] = Some(entry);
        persist(&slots)
    };

    persist(&state.lock().expect("campaign state poisoned"))?;
    with_workers(cfg.workers, || -> Result<()> {
        if cfg.parallel_instances {
            pending.par_iter().try_for_each(|&i| run_one(i))
        } else {
            pending.iter().try_for_each(|&i| run_one(i))
        }
    })??;

    let slots = state.into_inner().expect("campaign state poisoned");
    let failed = slots
        .iter()
        .flatten()
        .filter(|m| m.status == Status::Failed)
        .map(|m| (m.index, m.error.clone().unwrap_or_default()))
        .collect();
    Ok(CampaignSummary { completed: pending.len(), skipped, failed, csv: out.to_path_buf(), meta: meta_file })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_carry_location() {
        let err = CampaignConfig::from_json("{\n  \"seed\": 1,\n  \"instances\": [{\"n\": 3, \"mu\": 2.0}]\n}").unwrap_err();
        match err {
            Error::Config { location, message } => {
                assert!(location.starts_with("line 3"), "{location}");
                assert!(message.contains("epsilon"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
        let err = CampaignConfig::from_json(r#"{"seed": 1, "instances": [{"n": 4, "mu": 0.5, "epsilon": 0.1}]}"#);
        assert!(matches!(err, Err(Error::Config { ref location, .. }) if location == "instances[0]"));
        let err = CampaignConfig::from_json(r#"{"seed": 1, "budgets": {"trajectories": 0}}"#);
        assert!(matches!(err, Err(Error::Config { ref location, .. }) if location == "budgets"));
        assert!(CampaignConfig::from_json(r#"{"seed": 1, "bogus": 2}"#).is_err());
    }

    #[test]
    fn csv_shape() {
        assert_eq!(csv_header().split(',').count(), 21);
        let r = ResultRecord { n: 2, mu: 2.0, gamma: 1.0, epsilon: 0.1, rho: 0.2, seed: 9, ..Default::default() };
        let row = r.csv_row();
        assert_eq!(row.split(',').count(), 21);
        assert!(row.starts_with("2,2,1,0.1,0.2,,"));
        assert!(row.ends_with(",9"));
    }

    #[test]
    fn overflowing_prediction_leaves_linear_empty() {
        let inst = Instance { n: 2, mu: 2.0, epsilon: 3e-4 };
        let tasks = Tasks { simulate: false, capacity: false };
        let r = run_instance(&inst, &Budgets::default(), &tasks, &Predictions::default(), 0).unwrap();
        assert!(r.log_pred_det_form.unwrap() > 710.0);
        assert!(r.pred_det_form.is_none());
        let fields: Vec<String> = r.csv_row().split(',').map(String::from).collect();
        assert_eq!(fields[16], "");
    }

    #[test]
    fn flags_follow_numbers() {
        let mut r = ResultRecord {
            mean_emp: Some(110.0),
            std_error: Some(1.0),
            oracle_1d_mean: Some(100.0),
            ratio_emp_over_pred_det: Some(1.1),
            ratio_emp_over_pred_literal: Some(0.8),
            ..Default::default()
        };
        let f = r.compute_flags();
        assert_eq!(f.within_window_det, Some(true));
        assert_eq!(f.within_window_literal, Some(false));
        assert_eq!(f.oracle_1d_agreement, Some(false));
        r.std_error = Some(6.0);
        assert_eq!(r.compute_flags().oracle_1d_agreement, Some(true));
        assert_eq!(f.bracket_ordered, None);
    }

    #[test]
    fn hash_tracks_inputs() {
        let inst = Instance { n: 3, mu: 2.0, epsilon: 0.1 };
        let (b, t, p) = (Budgets::default(), Tasks::default(), Predictions::default());
        let h = instance_hash(&inst, &b, &t, &p, 1);
        assert_eq!(h.len(), 64);
        assert_eq!(h, instance_hash(&inst, &b, &t, &p, 1));
        assert_ne!(h, instance_hash(&inst, &b, &t, &p, 2));
        assert_ne!(h, instance_hash(&inst, &Budgets { trajectories: 7, ..b }, &t, &p, 1));
    }
}
