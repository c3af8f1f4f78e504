use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{clamp_frame, integrate_frames, LimbGeometry, MaterialProperties, TendonForces};
use crate::error::{Error, Result};

const STANDARD_GRAVITY: f64 = 9.81;

/// Fixed-point solver controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Convergence threshold on tip motion between iterates.
    pub tolerance_m: f64,
    pub max_iterations: usize,
    /// Under-relaxation applied once the iterate starts to oscillate.
    pub relaxation: f64,
    /// Net weight minus buoyancy as a distributed load along -z.
    pub gravity: bool,
    pub fluid_density_kg_m3: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance_m: 1e-6,
            max_iterations: 100,
            relaxation: 0.5,
            gravity: false,
            fluid_density_kg_m3: 1000.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_m > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config(
                "solver tolerance and iteration cap must be positive".into(),
            ));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::Config("solver.relaxation must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Equilibrium shape of the limb on the discretized arc.
#[derive(Clone, Debug, PartialEq)]
pub struct RodConfiguration {
    pub arc: Vec<f64>,
    /// Axial strain eps3 per node.
    pub strain: Vec<f64>,
    /// Curvature in the section frame, 1/m.
    pub curvature: Vec<Vector3<f64>>,
    /// Centerline position in the inertial frame, m.
    pub position: Vec<Vector3<f64>>,
    /// Section frame: columns d1, d2, d3 expressed in the inertial frame.
    pub orientation: Vec<Matrix3<f64>>,
    /// Internal force, inertial frame, N.
    pub internal_force: Vec<Vector3<f64>>,
    /// Internal moment, inertial frame, N m.
    pub internal_moment: Vec<Vector3<f64>>,
    pub iterations: usize,
}

impl RodConfiguration {
    /// Undeformed straight limb along +x.
    pub fn rest(geometry: &LimbGeometry) -> Self {
        let arc = geometry.arc_nodes();
        let n = arc.len();
        let strain = vec![0.0; n];
        let curvature = vec![Vector3::zeros(); n];
        let (position, orientation) =
            integrate_frames(&arc, &strain, &curvature, clamp_frame()).expect("matching lengths");
        Self {
            arc,
            strain,
            curvature,
            position,
            orientation,
            internal_force: vec![Vector3::zeros(); n],
            internal_moment: vec![Vector3::zeros(); n],
            iterations: 0,
        }
    }

    pub fn tip(&self) -> Vector3<f64> {
        *self.position.last().expect("at least two nodes")
    }

    pub fn tip_orientation(&self) -> Matrix3<f64> {
        *self.orientation.last().expect("at least two nodes")
    }

    pub fn node_count(&self) -> usize {
        self.arc.len()
    }

    /// Largest `||R^T R - I||_F` over all nodes.
    pub fn max_orthonormality_error(&self) -> f64 {
        self.orientation
            .iter()
            .map(|r| (r.transpose() * r - Matrix3::identity()).norm())
            .fold(0.0, f64::max)
    }
}

/// Concentrated load the tendons exert on the distal disc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TipLoads {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
}

/// Unit tangent of tendon `i` at node `k`, in the section frame.
///
/// The tendon sits at `p(s) = offset(s) u_i` in the section; its material
/// derivative is `(1 + eps)(e3 + kappa x p) + p'`.
fn tendon_tangent(
    geometry: &LimbGeometry,
    i: usize,
    s: f64,
    strain: f64,
    curvature: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let u = geometry.tendon_direction(i);
    let p = u * geometry.tendon_offset_at(s);
    let dp = u * geometry.tendon_offset_slope();
    let v = (Vector3::z() + curvature.cross(&p)) * (1.0 + strain) + dp;
    let len = v.norm();
    if len < 1e-9 {
        return Err(Error::DegenerateGeometry(format!(
            "tendon {} has a vanishing tangent at s = {s:.4} m",
            i + 1
        )));
    }
    Ok((p, v / len))
}

/// Load the four tendons transmit to the distal disc of `configuration`.
///
/// Each tendon pulls the disc back along its own path, `-T_i t_i(L)`, at its
/// anchor `R(L) p_i(L)`. In the straight configuration this equals the chord
/// from the disc anchor to the base anchor.
pub fn tendon_tip_loads(
    geometry: &LimbGeometry,
    configuration: &RodConfiguration,
    forces: &TendonForces,
) -> Result<TipLoads> {
    let last = configuration.node_count() - 1;
    let rotation = configuration.orientation[last];
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();
    for (i, &tension) in forces.0.iter().enumerate() {
        let (p, t) = tendon_tangent(
            geometry,
            i,
            configuration.arc[last],
            configuration.strain[last],
            &configuration.curvature[last],
        )?;
        let pull = rotation * (-t * tension);
        force += pull;
        moment += (rotation * p).cross(&pull);
    }
    Ok(TipLoads { force, moment })
}

struct Section {
    axial_stiffness: f64,
    bending_stiffness: f64,
    torsional_stiffness: f64,
}

fn sections(geometry: &LimbGeometry, material: &MaterialProperties, arc: &[f64]) -> Vec<Section> {
    arc.iter()
        .map(|&s| Section {
            axial_stiffness: material.youngs_modulus_pa * geometry.area_at(s),
            bending_stiffness: material.youngs_modulus_pa * geometry.bending_inertia_at(s),
            torsional_stiffness: material.shear_modulus_pa * geometry.polar_inertia_at(s),
        })
        .collect()
}

/// Resultant of the distributed weight/buoyancy load distal to each node,
/// as (force, moment about the node) in the inertial frame.
fn distributed_resultants(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    options: &SolverOptions,
    current: &RodConfiguration,
) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let n = current.node_count();
    if !options.gravity {
        return vec![(Vector3::zeros(), Vector3::zeros()); n];
    }
    let net = material.mass_density_kg_m3 - options.fluid_density_kg_m3;
    let load: Vec<Vector3<f64>> = current
        .arc
        .iter()
        .map(|&s| Vector3::new(0.0, 0.0, -net * geometry.area_at(s) * STANDARD_GRAVITY))
        .collect();
    // Integrate from the tip: F(s) = int_s^L f, M(s) = int_s^L (r - r(s)) x f.
    // M about node k is accumulated as (sum of r x f) - r(k) x F(k).
    let mut out = vec![(Vector3::zeros(), Vector3::zeros()); n];
    let mut force = Vector3::zeros();
    let mut first_moment = Vector3::zeros();
    for k in (0..n - 1).rev() {
        let ds = current.arc[k + 1] - current.arc[k];
        force += (load[k] + load[k + 1]) * (0.5 * ds);
        first_moment += (current.position[k].cross(&load[k])
            + current.position[k + 1].cross(&load[k + 1]))
            * (0.5 * ds);
        out[k] = (force, first_moment - current.position[k].cross(&force));
    }
    out
}

/// One sweep of the two-stage scheme: internal loads on `current`, the
/// constitutive update of strain and curvature, then frame reconstruction.
fn sweep(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    forces: &TendonForces,
    options: &SolverOptions,
    stiffness: &[Section],
    current: &RodConfiguration,
) -> Result<(
    Vec<f64>,
    Vec<Vector3<f64>>,
    Vec<Vector3<f64>>,
    Vec<Vector3<f64>>,
)> {
    let n = current.node_count();
    let external = distributed_resultants(geometry, material, options, current);
    let mut strain = vec![0.0; n];
    let mut curvature = vec![Vector3::zeros(); n];
    let mut force_world = vec![Vector3::zeros(); n];
    let mut moment_world = vec![Vector3::zeros(); n];
    // Stage one, tip to base: cutting at s, the distal rod plus tendons is
    // loaded only by the tendon tensions entering through the cut. The
    // tendon direction depends on the local stretch, so the axial balance
    // is solved implicitly for eps3 with the curvature held at its iterate.
    for k in (0..n).rev() {
        let s = current.arc[k];
        let rotation = current.orientation[k];
        let (f_ext, m_ext) = external[k];
        let f_ext = rotation.transpose() * f_ext;
        let m_ext = rotation.transpose() * m_ext;
        let kappa = current.curvature[k];
        let loads = |eps: f64| -> Result<(Vector3<f64>, Vector3<f64>)> {
            let mut n_local = f_ext;
            let mut m_local = m_ext;
            for (i, &tension) in forces.0.iter().enumerate() {
                if tension == 0.0 {
                    continue;
                }
                let (p, t) = tendon_tangent(geometry, i, s, eps, &kappa)?;
                n_local -= t * tension;
                m_local -= p.cross(&t) * tension;
            }
            Ok((n_local, m_local))
        };

        let sec = &stiffness[k];
        let eps = axial_strain(
            k,
            sec.axial_stiffness,
            forces.total() + f_ext.norm(),
            current.strain[k],
            |e| Ok(loads(e)?.0.z),
        )?;
        let (n_local, m_local) = loads(eps)?;
        curvature[k] = Vector3::new(
            m_local.x / sec.bending_stiffness,
            m_local.y / sec.bending_stiffness,
            m_local.z / sec.torsional_stiffness,
        );
        strain[k] = eps;
        force_world[k] = rotation * n_local;
        moment_world[k] = rotation * m_local;
    }
    Ok((strain, curvature, force_world, moment_world))
}

/// Root of `eps - n3(eps) / EA` on `(-1, bound / EA]`: Newton from `start`,
/// falling back to bisection whenever a step leaves the bracket.
///
/// As `eps -> -1` the tendons turn radial and stop carrying axial load, so
/// the residual is negative there unless external tension overwhelms the
/// section; that case is reported as a material limit.
fn axial_strain<F>(
    node: usize,
    axial_stiffness: f64,
    bound: f64,
    start: f64,
    axial_force: F,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let residual = |e: f64| -> Result<f64> { Ok(e - axial_force(e)? / axial_stiffness) };
    let mut lo = -1.0 + 1e-12;
    let mut hi = bound / axial_stiffness + 1e-12;
    if residual(lo)? >= 0.0 {
        return Err(Error::MaterialLimit {
            node,
            strain: axial_force(lo)? / axial_stiffness,
        });
    }
    let mut x = if start > lo && start < hi {
        start
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let r = residual(x)?;
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-15 {
            break;
        }
        let h = 1e-7 * (1.0 + x.abs());
        let slope = (residual(x + h)? - r) / h;
        let newton = x - r / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() < 1e-15 {
            return Ok(next);
        }
        x = next;
    }
    Ok(0.5 * (lo + hi))
}

fn assemble(
    arc: &[f64],
    strain: Vec<f64>,
    curvature: Vec<Vector3<f64>>,
    internal_force: Vec<Vector3<f64>>,
    internal_moment: Vec<Vector3<f64>>,
    iterations: usize,
) -> Result<RodConfiguration> {
    let (position, orientation) = integrate_frames(arc, &strain, &curvature, clamp_frame())?;
    Ok(RodConfiguration {
        arc: arc.to_vec(),
        strain,
        curvature,
        position,
        orientation,
        internal_force,
        internal_moment,
        iterations,
    })
}

fn check_inputs(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    forces: &TendonForces,
    options: &SolverOptions,
) -> Result<()> {
    geometry.validate()?;
    material.validate()?;
    options.validate()?;
    if forces.0.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::contract(format!(
            "tendon tensions must be finite and non-negative, got {:?}",
            forces.0
        )));
    }
    Ok(())
}

/// Steady-state shape of the limb under the given tendon tensions.
///
/// Fixed-point iteration from the straight rest shape until the tip moves
/// less than `options.tolerance_m` between iterates.
pub fn solve_statics(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    forces: &TendonForces,
    options: &SolverOptions,
) -> Result<RodConfiguration> {
    check_inputs(geometry, material, forces, options)?;
    let stiffness = sections(geometry, material, &geometry.arc_nodes());
    let mut current = RodConfiguration::rest(geometry);
    let mut relax = false;
    let mut last_step = f64::INFINITY;
    let mut growth = 0;
    let mut step = f64::INFINITY;

    for iteration in 1..=options.max_iterations {
        let (mut strain, mut curvature, force, moment) =
            sweep(geometry, material, forces, options, &stiffness, &current)?;
        if relax {
            let w = options.relaxation;
            for k in 0..strain.len() {
                strain[k] = w * strain[k] + (1.0 - w) * current.strain[k];
                curvature[k] = curvature[k] * w + current.curvature[k] * (1.0 - w);
            }
        }
        let next = assemble(&current.arc, strain, curvature, force, moment, iteration)?;
        step = (next.tip() - current.tip()).norm();
        current = next;
        if step < options.tolerance_m {
            return Ok(current);
        }
        if step >= last_step {
            growth += 1;
            if growth >= 2 {
                relax = true;
            }
        } else {
            growth = 0;
        }
        last_step = step;
    }
    Err(Error::Convergence {
        iterations: options.max_iterations,
        residual: step,
        last: Box::new(current),
    })
}

/// Applies one more load/constitutive/reconstruction sweep to a solution.
pub fn refine(
    geometry: &LimbGeometry,
    material: &MaterialProperties,
    forces: &TendonForces,
    options: &SolverOptions,
    configuration: &RodConfiguration,
) -> Result<RodConfiguration> {
    check_inputs(geometry, material, forces, options)?;
    let stiffness = sections(geometry, material, &configuration.arc);
    let (strain, curvature, force, moment) = sweep(
        geometry,
        material,
        forces,
        options,
        &stiffness,
        configuration,
    )?;
    assemble(
        &configuration.arc,
        strain,
        curvature,
        force,
        moment,
        configuration.iterations + 1,
    )
}
