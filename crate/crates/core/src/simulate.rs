//! Synthetic telemetry: random operating profiles driven through a 4-node
//! lumped-parameter thermal network (winding, DE bearing, NDE bearing, shell),
//! with an optional fan-blockage fault.
//!
//! The network integrates
//!
//! ```text
//! C_i dT_i/dt = Σ_j G_ij (T_j − T_i) + P_i(n, I) − s_i G_fan(n) (1 − b(t)) (T_i − T_amb)
//! ```
//!
//! with forward Euler at the 1 s sampling period. `s_i` is the share of the
//! fan-driven convective conductance that reaches node `i`; the shell carries
//! the full fan conductance, the fan-side bearing and the end windings a
//! fraction of it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, DynamicsClass, Profile, TelemetryFrame};
use crate::error::{Error, Result};
use crate::rng;

pub const N_NODES: usize = 4;

/// Network node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Winding = 0,
    DeBearing = 1,
    NdeBearing = 2,
    Shell = 3,
}

/// Minimum `C_i / ΣG_i` in seconds accepted by the Euler integrator.
pub const MIN_TIME_CONSTANT_S: f64 = 2.0;

/// Nameplate data of the machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachineRating {
    pub power_kw: f64,
    pub voltage_v: f64,
    pub current_a: f64,
    pub torque_nm: f64,
    pub pole_pairs: u32,
    pub speed_rpm: f64,
}

impl Default for MachineRating {
    /// 15 kW, 400 V, 30.6 A, 97 N·m, 2 pole pairs, 1478 rpm.
    fn default() -> Self {
        Self {
            power_kw: 15.0,
            voltage_v: 400.0,
            current_a: 30.6,
            torque_nm: 97.0,
            pole_pairs: 2,
            speed_rpm: 1478.0,
        }
    }
}

impl MachineRating {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.power_kw, self.voltage_v, self.current_a, self.torque_nm, self.speed_rpm];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.pole_pairs == 0 {
            return Err(Error::Config(format!("machine rating must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Stator current for a load torque, with a magnetizing floor at no load.
    pub fn current_for_torque(&self, torque_nm: f64) -> f64 {
        let load = torque_nm / self.torque_nm;
        self.current_a * (0.2 + 0.8 * load * load).sqrt()
    }
}

/// Speed-dependent convective conductance `base + forced · (n / n_rated)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanConductance {
    /// W/°C at standstill.
    pub base: f64,
    /// Additional W/°C at rated speed.
    pub forced: f64,
    pub exponent: f64,
}

impl FanConductance {
    pub fn at(&self, speed_ratio: f64) -> f64 {
        self.base + self.forced * speed_ratio.abs().powf(self.exponent)
    }
}

/// Heat injected per node at rated operation, W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    /// Winding copper loss at rated current, scales with (I / I_rated)².
    pub copper_w: f64,
    /// Core loss deposited in the shell node at rated speed, scales with n / n_rated.
    pub iron_w: f64,
    /// Friction loss per bearing at rated speed, scales with n / n_rated.
    pub bearing_de_w: f64,
    pub bearing_nde_w: f64,
}

impl LossModel {
    pub fn injection(&self, speed_ratio: f64, current_ratio: f64) -> [f64; N_NODES] {
        let s = speed_ratio.abs();
        [
            self.copper_w * current_ratio * current_ratio,
            self.bearing_de_w * s,
            self.bearing_nde_w * s,
            self.iron_w * s,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub rating: MachineRating,
    /// Thermal capacitance per node, J/°C.
    pub capacitance: [f64; N_NODES],
    /// Symmetric inter-node conductances, W/°C. Diagonal is ignored.
    pub conductance: [[f64; N_NODES]; N_NODES],
    pub fan: FanConductance,
    /// Fraction of the fan conductance acting between each node and ambient.
    pub fan_share: [f64; N_NODES],
    pub losses: LossModel,
    pub ambient_c: f64,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        self.rating.validate()?;
        if self.capacitance.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("thermal capacitances must be positive".into()));
        }
        for i in 0..N_NODES {
            for j in 0..N_NODES {
                let g = self.conductance[i][j];
                if i != j && !(g.is_finite() && g >= 0.0) {
                    return Err(Error::Config(format!("conductance G[{i}][{j}] = {g} must be ≥ 0")));
                }
                if g != self.conductance[j][i] {
                    return Err(Error::Config(format!("conductance matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        if self.fan.base < 0.0 || self.fan.forced < 0.0 || self.fan.exponent < 0.0 {
            return Err(Error::Config("fan conductance must be non-decreasing in speed".into()));
        }
        if self.fan_share.iter().any(|s| *s < 0.0) {
            return Err(Error::Config("fan shares must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn fan_conductance(&self, speed_rpm: f64) -> f64 {
        self.fan.at(speed_rpm / self.rating.speed_rpm)
    }

    /// Smallest `C_i / ΣG_i` over the nodes at 1.5× rated speed, seconds.
    pub fn min_time_constant(&self) -> f64 {
        let g_fan = self.fan.at(1.5);
        (0..N_NODES)
            .map(|i| {
                let g: f64 = (0..N_NODES)
                    .filter(|&j| j != i)
                    .map(|j| self.conductance[i][j])
                    .sum::<f64>()
                    + self.fan_share[i] * g_fan;
                if g > 0.0 {
                    self.capacitance[i] / g
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn check_stability(&self) -> Result<()> {
        let tau = self.min_time_constant();
        if tau < MIN_TIME_CONSTANT_S {
            return Err(Error::Config(format!(
                "Euler step unstable: smallest node time constant {tau:.3} s < {MIN_TIME_CONSTANT_S} s"
            )));
        }
        Ok(())
    }

    /// Net heat flow into each node, W.
    fn heat_flow(&self, temps: &[f64; N_NODES], speed_rpm: f64, current_a: f64, blockage: f64) -> [f64; N_NODES] {
        let p = self.losses.injection(speed_rpm / self.rating.speed_rpm, current_a / self.rating.current_a);
        let g_fan = self.fan_conductance(speed_rpm) * (1.0 - blockage);
        let mut q = [0.0; N_NODES];
        for i in 0..N_NODES {
            let mut flow = p[i] - self.fan_share[i] * g_fan * (temps[i] - self.ambient_c);
            for j in 0..N_NODES {
                if j != i {
                    flow += self.conductance[i][j] * (temps[j] - temps[i]);
                }
            }
            q[i] = flow;
        }
        q
    }

    /// Equilibrium temperatures for constant operation, from the linear
    /// system `(L + D_fan) T = P + D_fan T_amb`.
    pub fn steady_state(&self, speed_rpm: f64, current_a: f64, blockage: f64) -> Result<[f64; N_NODES]> {
        let p = self.losses.injection(speed_rpm / self.rating.speed_rpm, current_a / self.rating.current_a);
        let g_fan = self.fan_conductance(speed_rpm) * (1.0 - blockage);
        let mut a = [[0.0; N_NODES]; N_NODES];
        let mut b = [0.0; N_NODES];
        for i in 0..N_NODES {
            let amb = self.fan_share[i] * g_fan;
            a[i][i] = amb;
            b[i] = p[i] + amb * self.ambient_c;
            for j in 0..N_NODES {
                if j != i {
                    a[i][i] += self.conductance[i][j];
                    a[i][j] -= self.conductance[i][j];
                }
            }
        }
        solve4(a, b).ok_or_else(|| Error::Config("network has no path to ambient; no steady state".into()))
    }

    /// Total heat leaving to ambient at the given node temperatures, W.
    pub fn heat_to_ambient(&self, temps: &[f64; N_NODES], speed_rpm: f64, blockage: f64) -> f64 {
        let g_fan = self.fan_conductance(speed_rpm) * (1.0 - blockage);
        (0..N_NODES)
            .map(|i| self.fan_share[i] * g_fan * (temps[i] - self.ambient_c))
            .sum()
    }

    pub fn total_losses(&self, speed_rpm: f64, current_a: f64) -> f64 {
        self.losses
            .injection(speed_rpm / self.rating.speed_rpm, current_a / self.rating.current_a)
            .iter()
            .sum()
    }
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; N_NODES]; N_NODES], mut b: [f64; N_NODES]) -> Option<[f64; N_NODES]> {
    for col in 0..N_NODES {
        let pivot = (col..N_NODES).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..N_NODES {
            let f = a[r][col] / a[col][col];
            for c in col..N_NODES {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; N_NODES];
    for r in (0..N_NODES).rev() {
        let s: f64 = (r + 1..N_NODES).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Default network for a machine rating. Losses scale with rated power,
/// conductances with power^(2/3) (surface) and capacitances with power (mass),
/// calibrated so the 15 kW machine settles about 65 °C above ambient in the
/// winding at rated load, with time constants of tens of minutes.
pub fn default_plant(rating: &MachineRating) -> PlantParams {
    let s = rating.power_kw / 15.0;
    let area = s.powf(2.0 / 3.0);
    let mut g = [[0.0; N_NODES]; N_NODES];
    let mut link = |a: Node, b: Node, v: f64| {
        g[a as usize][b as usize] = v * area;
        g[b as usize][a as usize] = v * area;
    };
    link(Node::Winding, Node::Shell, 9.0);
    link(Node::Winding, Node::DeBearing, 1.2);
    link(Node::Winding, Node::NdeBearing, 1.0);
    link(Node::DeBearing, Node::Shell, 4.0);
    link(Node::NdeBearing, Node::Shell, 4.0);
    PlantParams {
        rating: *rating,
        capacitance: [18_000.0 * s, 2_500.0 * s, 2_500.0 * s, 60_000.0 * s],
        conductance: g,
        fan: FanConductance {
            base: 12.0 * area,
            forced: 20.0 * area,
            exponent: 1.0,
        },
        fan_share: [0.15, 0.0, 0.3, 1.0],
        losses: LossModel {
            copper_w: 800.0 * s,
            iron_w: 250.0 * s,
            bearing_de_w: 25.0 * s,
            bearing_nde_w: 25.0 * s,
        },
        ambient_c: 25.0,
    }
}

/// Fan blockage from `onset_s` onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub blockage_fraction: f64,
    pub onset_s: f64,
}

impl Default for FaultSpec {
    /// 70 % blockage after three hours.
    fn default() -> Self {
        Self {
            blockage_fraction: 0.7,
            onset_s: 10_800.0,
        }
    }
}

impl FaultSpec {
    pub fn new(blockage_fraction: f64, onset_s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&blockage_fraction) {
            return Err(Error::Config(format!(
                "blockage fraction {blockage_fraction} outside [0, 1]"
            )));
        }
        if !onset_s.is_finite() || onset_s < 0.0 {
            return Err(Error::Config(format!("fault onset {onset_s} must be ≥ 0")));
        }
        Ok(Self {
            blockage_fraction,
            onset_s,
        })
    }

    pub fn blockage_at(&self, t: f64) -> f64 {
        if t >= self.onset_s {
            self.blockage_fraction
        } else {
            0.0
        }
    }
}

/// Speed and torque setpoint at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivePoint {
    pub t: i64,
    pub speed: f64,
    pub torque: f64,
}

/// Minimum profile duration accepted by [`generate_profile`], seconds.
pub const MIN_PROFILE_DURATION_S: i64 = 600;

/// Dwell range (inclusive, seconds) and ramp duration for a dynamics class.
pub fn class_timing(class: DynamicsClass) -> ((i64, i64), i64) {
    match class {
        DynamicsClass::Slow => ((900, 1800), 120),
        DynamicsClass::Medium => ((180, 900), 45),
        DynamicsClass::Fast => ((30, 180), 10),
    }
}

/// Random piecewise-constant speed/torque setpoints joined by linear ramps.
///
/// The result is a list of breakpoints: the drive starts at standstill and
/// ramps up to its first setpoint, each plateau contributes a start and an end
/// point with equal setpoints, and consecutive plateaus are joined by a ramp.
/// The last breakpoint sits exactly at `duration_s`.
pub fn generate_profile(
    class: DynamicsClass,
    duration_s: i64,
    rating: &MachineRating,
    seed: u64,
) -> Result<Vec<DrivePoint>> {
    rating.validate()?;
    if duration_s < MIN_PROFILE_DURATION_S {
        return Err(Error::InvalidInput(format!(
            "profile duration {duration_s} s below the {MIN_PROFILE_DURATION_S} s minimum"
        )));
    }
    let ((dwell_lo, dwell_hi), ramp) = class_timing(class);
    let mut rng = rng::seeded(seed);
    let setpoint = |rng: &mut rng::StreamRng| {
        (
            rng.random_range(0.1..=1.0) * rating.speed_rpm,
            rng.random_range(0.0..=1.0) * rating.torque_nm,
        )
    };
    // Machine starts cold, so it also starts at rest.
    let (mut speed, mut torque) = setpoint(&mut rng);
    let mut points = vec![DrivePoint { t: 0, speed: 0.0, torque: 0.0 }, DrivePoint { t: ramp, speed, torque }];
    let mut t = ramp;
    loop {
        let end = t + rng.random_range(dwell_lo..=dwell_hi);
        if end >= duration_s {
            points.push(DrivePoint { t: duration_s, speed, torque });
            break;
        }
        points.push(DrivePoint { t: end, speed, torque });
        let (next_speed, next_torque) = setpoint(&mut rng);
        let arrive = end + ramp;
        if arrive >= duration_s {
            let f = (duration_s - end) as f64 / ramp as f64;
            points.push(DrivePoint {
                t: duration_s,
                speed: speed + f * (next_speed - speed),
                torque: torque + f * (next_torque - torque),
            });
            break;
        }
        (speed, torque) = (next_speed, next_torque);
        points.push(DrivePoint { t: arrive, speed, torque });
        t = arrive;
    }
    Ok(points)
}

/// Linear interpolation of breakpoints onto the 1 Hz grid `0..=last.t`.
pub fn interpolate_drive(points: &[DrivePoint]) -> Result<Vec<DrivePoint>> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("empty drive profile".into()))?;
    if first.t != 0 {
        return Err(Error::InvalidInput("drive profile must start at t = 0".into()));
    }
    if points.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::InvalidInput("drive breakpoints out of order".into()));
    }
    let last = points[points.len() - 1].t;
    let mut out = Vec::with_capacity(last as usize + 1);
    let mut seg = 0;
    for t in 0..=last {
        while seg + 2 < points.len() && points[seg + 1].t <= t {
            seg += 1;
        }
        let a = points[seg];
        let b = points.get(seg + 1).copied().unwrap_or(a);
        let (speed, torque) = if t >= b.t {
            (b.speed, b.torque)
        } else if t <= a.t {
            (a.speed, a.torque)
        } else {
            let f = (t - a.t) as f64 / (b.t - a.t) as f64;
            (a.speed + f * (b.speed - a.speed), a.torque + f * (b.torque - a.torque))
        };
        out.push(DrivePoint { t, speed, torque });
    }
    Ok(out)
}

/// Output of [`simulate_thermal`]: recorded telemetry plus the noise-free
/// node temperatures `[winding, DE, NDE, shell]` at each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalRun {
    pub frames: Vec<TelemetryFrame>,
    pub truth: Vec<[f64; N_NODES]>,
}

impl ThermalRun {
    pub fn into_profile(self, id: impl Into<String>, dynamics: DynamicsClass) -> Result<Profile> {
        Profile::new(id, dynamics, self.frames)
    }
}

/// Integrates the network over a 1 Hz drive trajectory starting from ambient.
///
/// The frame at `t` records the state reached from inputs at `t' < t`
/// together with the inputs at `t`. Gaussian noise of `noise_std_c` is added
/// to the four recorded temperatures only.
pub fn simulate_thermal(
    drive: &[DrivePoint],
    plant: &PlantParams,
    fault: Option<&FaultSpec>,
    noise_std_c: f64,
    seed: u64,
) -> Result<ThermalRun> {
    plant.validate()?;
    plant.check_stability()?;
    if drive.is_empty() {
        return Err(Error::InvalidInput("empty drive profile".into()));
    }
    if drive.iter().enumerate().any(|(k, p)| p.t != drive[0].t + k as i64) {
        return Err(Error::InvalidInput(
            "drive must be sampled at 1 Hz; interpolate breakpoints first".into(),
        ));
    }
    let limit = 1.5;
    if drive.iter().any(|p| {
        p.speed.abs() > limit * plant.rating.speed_rpm || p.torque.abs() > limit * plant.rating.torque_nm
    }) {
        return Err(Error::InvalidInput("drive exceeds 1.5× rated speed or torque".into()));
    }
    if !(noise_std_c.is_finite() && noise_std_c >= 0.0) {
        return Err(Error::InvalidInput(format!("noise std {noise_std_c} must be ≥ 0")));
    }
    let noise = Normal::new(0.0, noise_std_c).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = rng::seeded(seed);
    let mut temps = [plant.ambient_c; N_NODES];
    let mut frames = Vec::with_capacity(drive.len());
    let mut truth = Vec::with_capacity(drive.len());
    for p in drive {
        let speed = p.speed.abs();
        let current = plant.rating.current_for_torque(p.torque);
        let mut sample = |v: f64| if noise_std_c > 0.0 { v + noise.sample(&mut rng) } else { v };
        let (t_w, t_de, t_nde, t_ref) = (sample(temps[0]), sample(temps[1]), sample(temps[2]), sample(temps[3]));
        frames.push(TelemetryFrame {
            t: p.t,
            n_m: speed,
            i_m: current,
            t_ref,
            t_w,
            t_de,
            t_nde,
        });
        truth.push(temps);
        let blockage = fault.map_or(0.0, |f| f.blockage_at(p.t as f64));
        let q = plant.heat_flow(&temps, speed, current, blockage);
        for i in 0..N_NODES {
            temps[i] += q[i] / plant.capacitance[i];
        }
    }
    Ok(ThermalRun { frames, truth })
}

/// Options for generating a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_profiles: usize,
    pub duration_s: i64,
    pub noise_std_c: f64,
    pub seed: u64,
    pub fault: Option<FaultSpec>,
}

/// Generates `n_profiles` profiles named `p01, p02, …`, cycling through the
/// slow, medium and fast classes.
pub fn simulate_dataset(spec: &DatasetSpec, plant: &PlantParams) -> Result<Dataset> {
    if spec.n_profiles == 0 {
        return Err(Error::InvalidInput("at least one profile required".into()));
    }
    let width = spec.n_profiles.to_string().len().max(2);
    let profiles = (0..spec.n_profiles)
        .map(|k| {
            let class = DynamicsClass::ALL[k % 3];
            let drive_seed = rng::derive(spec.seed, 2 * k as u64);
            let noise_seed = rng::derive(spec.seed, 2 * k as u64 + 1);
            let points = generate_profile(class, spec.duration_s, &plant.rating, drive_seed)?;
            let drive = interpolate_drive(&points)?;
            simulate_thermal(&drive, plant, spec.fault.as_ref(), spec.noise_std_c, noise_seed)?
                .into_profile(format!("p{:0width$}", k + 1), class)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(profiles)
}
