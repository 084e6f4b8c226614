//! Additive-noise state-space models `x_{k+1} = f_k(x_k) + w_k`, `z_k = h_k(x_k) + v_k`
//! and the univariate nonstationary growth model (UNGM).

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::SMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, Matrix, Vector};

pub type TransitionFn<const NX: usize> = Arc<dyn Fn(&Vector<NX>, usize) -> Vector<NX> + Send + Sync>;
pub type JacobianFn<const NX: usize> = Arc<dyn Fn(&Vector<NX>, usize) -> Matrix<NX> + Send + Sync>;
pub type MeasurementFn<const NX: usize, const NZ: usize> = Arc<dyn Fn(&Vector<NX>, usize) -> Vector<NZ> + Send + Sync>;
pub type TimeShiftFn<const NX: usize> = Arc<dyn Fn(usize) -> Vector<NX> + Send + Sync>;

#[derive(Clone)]
pub struct StateSpaceModel<const NX: usize, const NZ: usize> {
    name: String,
    transition: TransitionFn<NX>,
    jacobian: Option<JacobianFn<NX>>,
    measurement: MeasurementFn<NX, NZ>,
    process_noise: Gaussian<NX>,
    measurement_noise: Gaussian<NZ>,
    initial: Gaussian<NX>,
    time_shift: Option<TimeShiftFn<NX>>,
}

impl<const NX: usize, const NZ: usize> fmt::Debug for StateSpaceModel<NX, NZ> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateSpaceModel")
            .field("name", &self.name)
            .field("q", self.process_noise.cov())
            .field("r", self.measurement_noise.cov())
            .field("initial", &self.initial)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("time_shift", &self.time_shift.is_some())
            .finish()
    }
}

impl<const NX: usize, const NZ: usize> StateSpaceModel<NX, NZ> {
    pub fn new(
        name: impl Into<String>,
        transition: TransitionFn<NX>,
        measurement: MeasurementFn<NX, NZ>,
        q: Matrix<NX>,
        r: Matrix<NZ>,
        initial: Gaussian<NX>,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            transition,
            jacobian: None,
            measurement,
            process_noise: Gaussian::new(Vector::zeros(), q)?,
            measurement_noise: Gaussian::new(Vector::zeros(), r)?,
            initial,
            time_shift: None,
        })
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn<NX>) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    /// Declares `f_k(x) = f_0(x) + shift(k)` with `shift` independent of the state.
    pub fn with_time_shift(mut self, shift: TimeShiftFn<NX>) -> Self {
        self.time_shift = Some(shift);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn f(&self, x: &Vector<NX>, k: usize) -> Vector<NX> {
        (self.transition)(x, k)
    }

    #[inline]
    pub fn h(&self, x: &Vector<NX>, k: usize) -> Vector<NZ> {
        (self.measurement)(x, k)
    }

    /// `∂f_k/∂x`, analytic when supplied, otherwise central differences with
    /// step `1e-6 (1 + |x_i|)`.
    pub fn jacobian(&self, x: &Vector<NX>, k: usize) -> Matrix<NX> {
        if let Some(jac) = &self.jacobian {
            return jac(x, k);
        }
        let mut out = Matrix::<NX>::zeros();
        for i in 0..NX {
            let step = 1e-6 * (1.0 + x[i].abs());
            let mut hi = *x;
            let mut lo = *x;
            hi[i] += step;
            lo[i] -= step;
            let col = (self.f(&hi, k) - self.f(&lo, k)) / (2.0 * step);
            out.set_column(i, &col);
        }
        out
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn time_shift(&self, k: usize) -> Option<Vector<NX>> {
        self.time_shift.as_ref().map(|s| s(k))
    }

    pub fn q(&self) -> &Matrix<NX> {
        self.process_noise.cov()
    }

    pub fn r(&self) -> &Matrix<NZ> {
        self.measurement_noise.cov()
    }

    pub fn process_noise(&self) -> &Gaussian<NX> {
        &self.process_noise
    }

    pub fn measurement_noise(&self) -> &Gaussian<NZ> {
        &self.measurement_noise
    }

    pub fn initial(&self) -> &Gaussian<NX> {
        &self.initial
    }

    /// `p(x_next | x) = N(x_next; f_k(x), Q)`.
    pub fn transition_density(&self, x_next: &Vector<NX>, x: &Vector<NX>, k: usize) -> f64 {
        self.process_noise.pdf(&(x_next - self.f(x, k)))
    }

    pub fn transition_logpdf(&self, x_next: &Vector<NX>, x: &Vector<NX>, k: usize) -> f64 {
        self.process_noise.logpdf(&(x_next - self.f(x, k)))
    }

    /// `log p(z | x) = log N(z; h_k(x), R)`.
    pub fn measurement_logpdf(&self, z: &Vector<NZ>, x: &Vector<NX>, k: usize) -> f64 {
        self.measurement_noise.logpdf(&(z - self.h(x, k)))
    }
}

pub type ScalarModel = StateSpaceModel<1, 1>;

impl StateSpaceModel<1, 1> {
    #[inline]
    pub fn f1(&self, x: f64, k: usize) -> f64 {
        self.f(&Vector::<1>::new(x), k)[0]
    }

    #[inline]
    pub fn h1(&self, x: f64, k: usize) -> f64 {
        self.h(&Vector::<1>::new(x), k)[0]
    }

    #[inline]
    pub fn jacobian1(&self, x: f64, k: usize) -> f64 {
        self.jacobian(&Vector::<1>::new(x), k)[(0, 0)]
    }

    pub fn q1(&self) -> f64 {
        self.q()[(0, 0)]
    }

    pub fn r1(&self) -> f64 {
        self.r()[(0, 0)]
    }
}

/// UNGM transition mean `0.5 x + 25 x / (1 + x²) + 8 cos(1.2 k)`.
#[inline]
pub fn ungm_f(x: f64, k: usize) -> f64 {
    0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * (1.2 * k as f64).cos()
}

#[inline]
pub fn ungm_df(x: f64) -> f64 {
    let d = 1.0 + x * x;
    0.5 + 25.0 * (1.0 - x * x) / (d * d)
}

#[inline]
pub fn ungm_h(x: f64) -> f64 {
    x * x / 20.0
}

pub const UNGM_Q: f64 = 0.1;
pub const UNGM_R: f64 = 0.1;
pub const UNGM_INITIAL_VAR: f64 = 0.01;

/// UNGM with analytic jacobian and additive time shift `8 cos(1.2 k) - 8`.
pub fn ungm_model(q: f64, r: f64, initial: Gaussian<1>) -> Result<ScalarModel> {
    if !(q > 0.0 && r > 0.0) {
        return Err(Error::InvalidParameter(format!("UNGM noise variances must be positive (Q={q}, R={r})")));
    }
    Ok(StateSpaceModel::new(
        "ungm",
        Arc::new(|x: &Vector<1>, k| Vector::<1>::new(ungm_f(x[0], k))),
        Arc::new(|x: &Vector<1>, _| Vector::<1>::new(ungm_h(x[0]))),
        Matrix::<1>::new(q),
        Matrix::<1>::new(r),
        initial,
    )?
    .with_jacobian(Arc::new(|x: &Vector<1>, _| Matrix::<1>::new(ungm_df(x[0]))))
    .with_time_shift(Arc::new(|k| Vector::<1>::new(8.0 * (1.2 * k as f64).cos() - 8.0))))
}

/// The benchmark configuration: `Q = R = 0.1`, `x_0 ~ N(0, 0.01)`.
pub fn ungm_default() -> ScalarModel {
    ungm_model(UNGM_Q, UNGM_R, Gaussian::scalar(0.0, UNGM_INITIAL_VAR).expect("valid initial"))
        .expect("valid UNGM parameters")
}

/// Scalar linear-Gaussian model `x' = a x + w`, `z = x + v`.
pub fn linear_gaussian(a: f64, q: f64, r: f64, initial: Gaussian<1>) -> Result<ScalarModel> {
    Ok(StateSpaceModel::new(
        "linear",
        Arc::new(move |x: &Vector<1>, _| x * a),
        Arc::new(|x: &Vector<1>, _| *x),
        Matrix::<1>::new(q),
        Matrix::<1>::new(r),
        initial,
    )?
    .with_jacobian(Arc::new(move |_, _| Matrix::<1>::new(a)))
    .with_time_shift(Arc::new(|_| Vector::<1>::zeros())))
}

/// Identifies one deterministic random stream: a base seed plus a stream counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedRecord {
    pub base: u64,
    pub stream: u64,
}

impl SeedRecord {
    pub fn new(base: u64, stream: u64) -> Self {
        Self { base, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base);
        rng.set_stream(self.stream);
        rng
    }
}

impl fmt::Display for SeedRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.base, self.stream)
    }
}

impl std::str::FromStr for SeedRecord {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (base, stream) = s.split_once(':').ok_or_else(|| format!("malformed seed record '{s}'"))?;
        Ok(Self {
            base: base.trim().parse().map_err(|e| format!("bad seed base: {e}"))?,
            stream: stream.trim().parse().map_err(|e| format!("bad seed stream: {e}"))?,
        })
    }
}

/// True states `x_0..x_H` and measurements `z_1..z_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const NX: usize, const NZ: usize> {
    pub states: Vec<Vector<NX>>,
    pub measurements: Vec<Vector<NZ>>,
    pub seed: SeedRecord,
}

impl<const NX: usize, const NZ: usize> Trajectory<NX, NZ> {
    pub fn horizon(&self) -> usize {
        self.measurements.len()
    }

    /// Measurement `z_k`, `k >= 1`.
    pub fn z(&self, k: usize) -> &Vector<NZ> {
        &self.measurements[k - 1]
    }
}

/// Draws `x_0 ~ initial`, then `x_{k+1} = f(x_k, k) + w_k`, `z_k = h(x_k, k) + v_k`.
pub fn simulate<const NX: usize, const NZ: usize>(
    model: &StateSpaceModel<NX, NZ>,
    horizon: usize,
    seed: SeedRecord,
) -> Result<Trajectory<NX, NZ>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut rng = seed.rng();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut measurements = Vec::with_capacity(horizon);
    let mut x = model.initial().sample(&mut rng);
    states.push(x);
    for k in 0..horizon {
        x = model.f(&x, k) + model.process_noise().sample(&mut rng);
        let z = model.h(&x, k + 1) + model.measurement_noise().sample(&mut rng);
        states.push(x);
        measurements.push(z);
    }
    Ok(Trajectory { states, measurements, seed })
}

fn column_names(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }
}

impl<const NX: usize, const NZ: usize> Trajectory<NX, NZ> {
    /// CSV with a `# seed=base:stream` comment line, then `k,x..,z..`; `z` is empty at `k = 0`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        let mut header = vec!["k".to_string()];
        header.extend(column_names("x", NX));
        header.extend(column_names("z", NZ));
        writeln!(out, "{}", header.join(","))?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            if k == 0 {
                row.extend(std::iter::repeat_n(String::new(), NZ));
            } else {
                row.extend(self.measurements[k - 1].iter().map(|v| v.to_string()));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut seed = None;
        let mut states = Vec::new();
        let mut measurements = Vec::new();
        let mut header_seen = false;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let parse_err = |message: String| Error::Parse { line: lineno, message };
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(s) = rest.trim().strip_prefix("seed=") {
                    seed = Some(s.parse::<SeedRecord>().map_err(parse_err)?);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + NX + NZ {
                return Err(parse_err(format!("expected {} fields, found {}", 1 + NX + NZ, fields.len())));
            }
            let k: usize = fields[0].parse().map_err(|e| parse_err(format!("bad k: {e}")))?;
            if k != states.len() {
                return Err(parse_err(format!("expected k={}, found {k}", states.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(format!("bad number '{s}': {e}")));
            let mut x = Vector::<NX>::zeros();
            for i in 0..NX {
                x[i] = num(fields[1 + i])?;
            }
            states.push(x);
            if k > 0 {
                let mut z = SMatrix::<f64, NZ, 1>::zeros();
                for i in 0..NZ {
                    z[i] = num(fields[1 + NX + i])?;
                }
                measurements.push(z);
            }
        }
        let seed = seed.ok_or_else(|| Error::Parse { line: 1, message: "missing seed header".into() })?;
        Ok(Self { states, measurements, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ungm_reference_values() {
        let m = ungm_default();
        assert_relative_eq!(m.f1(0.0, 0), 8.0);
        assert_relative_eq!(m.f1(1.0, 0), 21.0);
        assert_relative_eq!(m.h1(10.0, 3), 5.0);
        assert_relative_eq!(m.h1(-10.0, 3), 5.0);
        assert_eq!((m.q1(), m.r1()), (0.1, 0.1));
        let p = m.transition_density(&Vector::<1>::new(8.0), &Vector::<1>::new(0.0), 0);
        assert_relative_eq!(p, 1.261_566_261_010_080_2, epsilon = 1e-14);
    }

    #[test]
    fn transition_density_is_shift_invariant() {
        let m = ungm_default();
        for &(x, t, k) in &[(0.3, 0.2, 1usize), (-4.0, -0.5, 7), (12.0, 1.1, 3)] {
            let fx = m.f1(x, k);
            let p = m.transition_density(&Vector::<1>::new(fx + t), &Vector::<1>::new(x), k);
            assert_relative_eq!(p, crate::gaussian::normal_pdf(t, 0.0, 0.1), max_relative = 1e-14);
        }
    }

    #[test]
    fn rejects_invalid_ungm_noise() {
        let init = Gaussian::scalar(0.0, 1.0).unwrap();
        assert!(ungm_model(0.0, 0.1, init).is_err());
        assert!(ungm_model(0.1, -1.0, init).is_err());
    }

    #[test]
    fn numeric_jacobian_fallback() {
        let m = StateSpaceModel::<1, 1>::new(
            "sin",
            Arc::new(|x: &Vector<1>, _| Vector::<1>::new(x[0].sin())),
            Arc::new(|x: &Vector<1>, _| *x),
            Matrix::<1>::new(1.0),
            Matrix::<1>::new(1.0),
            Gaussian::scalar(0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(!m.has_analytic_jacobian());
        assert_relative_eq!(m.jacobian1(0.7, 0), 0.7_f64.cos(), max_relative = 1e-8);
    }

    #[test]
    fn vanishing_noise_follows_f() {
        let m = ungm_model(1e-12, 1e-12, Gaussian::scalar(0.0, 1e-12).unwrap()).unwrap();
        let t = simulate(&m, 3, SeedRecord::new(1, 0)).unwrap();
        assert!((t.states[1][0] - 8.0).abs() < 1e-4);
        assert!((t.states[2][0] - m.f1(t.states[1][0], 1)).abs() < 1e-4);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let m = ungm_default();
        let t = simulate(&m, 25, SeedRecord::new(42, 3)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::<1, 1>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn csv_reports_bad_line() {
        let text = "# seed=1:0\nk,x,z\n0,0.5,\n1,abc,0.2\n";
        match Trajectory::<1, 1>::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
