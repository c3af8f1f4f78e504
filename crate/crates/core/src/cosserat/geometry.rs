use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tapered limb geometry. Lengths are in meters, angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimbGeometry {
    pub length_m: f64,
    pub base_radius_m: f64,
    pub tip_radius_m: f64,
    pub tendon_offset_base_m: f64,
    pub tendon_offset_tip_m: f64,
    /// Angular position of each tendon in the cross-section, measured from
    /// the inertial +y axis toward +z.
    pub tendon_angles_rad: [f64; 4],
    pub node_count: usize,
}

impl Default for LimbGeometry {
    fn default() -> Self {
        Self {
            length_m: 0.600,
            base_radius_m: 0.030,
            tip_radius_m: 0.010,
            tendon_offset_base_m: 0.020,
            tendon_offset_tip_m: 0.003_25,
            tendon_angles_rad: [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2],
            node_count: 101,
        }
    }
}

impl LimbGeometry {
    pub fn with_nodes(mut self, node_count: usize) -> Self {
        self.node_count = node_count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length_m", self.length_m),
            ("base_radius_m", self.base_radius_m),
            ("tip_radius_m", self.tip_radius_m),
            ("tendon_offset_base_m", self.tendon_offset_base_m),
            ("tendon_offset_tip_m", self.tendon_offset_tip_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "limb.{name} must be positive, got {v}"
                )));
            }
        }
        if self.tip_radius_m > self.base_radius_m {
            return Err(Error::Config(
                "limb.tip_radius_m exceeds limb.base_radius_m".into(),
            ));
        }
        // Both radius and offset are linear in s, so checking the ends suffices.
        if self.tendon_offset_base_m >= self.base_radius_m
            || self.tendon_offset_tip_m >= self.tip_radius_m
        {
            return Err(Error::Config(
                "tendon offset must stay inside the cross-section".into(),
            ));
        }
        if self.node_count < 2 {
            return Err(Error::Config("limb.node_count must be at least 2".into()));
        }
        if self.tendon_angles_rad.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("tendon angles must be finite".into()));
        }
        Ok(())
    }

    /// Uniform arc-length nodes on `[0, L]`.
    pub fn arc_nodes(&self) -> Vec<f64> {
        let n = self.node_count;
        (0..n)
            .map(|k| self.length_m * k as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn radius_at(&self, s: f64) -> f64 {
        self.base_radius_m + (self.tip_radius_m - self.base_radius_m) * s / self.length_m
    }

    pub fn area_at(&self, s: f64) -> f64 {
        PI * self.radius_at(s).powi(2)
    }

    /// Bending second moment `I1 = I2`.
    pub fn bending_inertia_at(&self, s: f64) -> f64 {
        PI * self.radius_at(s).powi(4) / 4.0
    }

    /// Polar moment `I3`.
    pub fn polar_inertia_at(&self, s: f64) -> f64 {
        PI * self.radius_at(s).powi(4) / 2.0
    }

    pub fn tendon_offset_at(&self, s: f64) -> f64 {
        self.tendon_offset_base_m + self.tendon_offset_slope() * s
    }

    pub fn tendon_offset_slope(&self) -> f64 {
        (self.tendon_offset_tip_m - self.tendon_offset_base_m) / self.length_m
    }

    /// Unit radial direction of tendon `i` in the section (local) frame.
    pub fn tendon_direction(&self, i: usize) -> Vector3<f64> {
        let a = self.tendon_angles_rad[i];
        // local d1 = -z, d2 = +y at the clamp: angle 0 is +y, pi/2 is +z
        Vector3::new(-a.sin(), a.cos(), 0.0)
    }

    /// Position of the undeformed tip.
    pub fn rest_tip(&self) -> Vector3<f64> {
        Vector3::new(self.length_m, 0.0, 0.0)
    }
}

/// Orientation of the clamped base section: d1 = -z, d2 = +y, d3 = +x.
pub fn clamp_frame() -> Matrix3<f64> {
    Matrix3::from_columns(&[
        Vector3::new(0.0, 0.0, -1.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
    ])
}

/// Elastic and inertial constants of the limb material.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialProperties {
    pub youngs_modulus_pa: f64,
    pub shear_modulus_pa: f64,
    pub mass_density_kg_m3: f64,
}

impl Default for MaterialProperties {
    fn default() -> Self {
        Self::from_youngs_modulus(130_000.0)
    }
}

impl MaterialProperties {
    /// Nearly incompressible rubber: G = E / (2 (1 + 0.5)) = E / 3.
    pub fn from_youngs_modulus(youngs_modulus_pa: f64) -> Self {
        Self {
            youngs_modulus_pa,
            shear_modulus_pa: youngs_modulus_pa / 3.0,
            mass_density_kg_m3: 1070.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("youngs_modulus_pa", self.youngs_modulus_pa),
            ("shear_modulus_pa", self.shear_modulus_pa),
            ("mass_density_kg_m3", self.mass_density_kg_m3),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "material.{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Tension in each of the four tendons, in newtons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TendonForces(pub [f64; 4]);

impl TendonForces {
    pub const ZERO: TendonForces = TendonForces([0.0; 4]);

    pub fn new(tensions: [f64; 4], max_force_n: f64) -> Result<Self> {
        let forces = TendonForces(tensions);
        forces.check(max_force_n)?;
        Ok(forces)
    }

    pub fn check(&self, max_force_n: f64) -> Result<()> {
        if self
            .0
            .iter()
            .any(|t| !t.is_finite() || *t < 0.0 || *t > max_force_n)
        {
            return Err(Error::contract(format!(
                "tendon forces {:?} outside [0, {max_force_n}] N",
                self.0
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn clamped(mut self, max_force_n: f64) -> Self {
        for t in &mut self.0 {
            *t = t.clamp(0.0, max_force_n);
        }
        self
    }
}
