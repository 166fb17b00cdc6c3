//! Spring-based gravity compensator spanning two sequential links.
//!
//! Geometry: the spring runs from the anchor `P0` on the previous link to
//! the node `P1` on the driven link; `P2` is the joint. With `a = |P0 P2|`,
//! `L = |P1 P2|` and `alpha = atan2(a_y, a_x)` the spring length at joint
//! angle `q` is `s = sqrt(a² + L² + 2 a L cos(alpha + q))`.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatorParams<T: Real> {
    stiffness: T,
    free_length: T,
    link_length: T,
    ax: T,
    ay: T,
    joint: usize,
    a: T,
    alpha: T,
}

impl<T: Real> CompensatorParams<T> {
    /// `stiffness` is the linear spring rate `K_c` (N/m, zero allowed for a
    /// disconnected spring), `free_length` the unloaded length `s0` (m),
    /// `link_length` is `L` (m) and `(ax, ay)` locate the anchor relative to
    /// the joint (m). `joint` is the 1-based index of the spanned joint.
    pub fn new(stiffness: T, free_length: T, link_length: T, ax: T, ay: T, joint: usize) -> Result<Self> {
        let all_finite = [stiffness, free_length, link_length, ax, ay]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidModel("compensator parameters must be finite".into()));
        }
        if stiffness < T::zero() {
            return Err(Error::InvalidModel("compensator stiffness must be >= 0".into()));
        }
        if !(link_length > T::zero()) {
            return Err(Error::InvalidModel("compensator link length L must be > 0".into()));
        }
        if free_length < T::zero() {
            return Err(Error::InvalidModel("compensator free length s0 must be >= 0".into()));
        }
        if ax == T::zero() && ay == T::zero() {
            return Err(Error::InvalidModel("compensator anchor (a_x, a_y) must be nonzero".into()));
        }
        if joint == 0 {
            return Err(Error::InvalidModel("compensator joint index is 1-based".into()));
        }
        Ok(Self {
            stiffness,
            free_length,
            link_length,
            ax,
            ay,
            joint,
            a: ax.hypot(ay),
            alpha: ay.atan2(ax),
        })
    }

    /// Builds the parameters from the spring compliance `k_c = 1 / K_c` (m/N).
    pub fn from_compliance(compliance: T, free_length: T, link_length: T, ax: T, ay: T, joint: usize) -> Result<Self> {
        if !(compliance > T::zero()) {
            return Err(Error::InvalidModel("compensator compliance must be > 0".into()));
        }
        Self::new(T::one() / compliance, free_length, link_length, ax, ay, joint)
    }

    /// Copy with a different spring rate.
    pub fn with_stiffness(&self, stiffness: T) -> Result<Self> {
        Self::new(stiffness, self.free_length, self.link_length, self.ax, self.ay, self.joint)
    }

    pub fn stiffness(&self) -> T {
        self.stiffness
    }

    /// `1 / K_c`; infinite for a zero-rate spring.
    pub fn compliance(&self) -> T {
        if self.stiffness == T::zero() {
            T::max_value().unwrap_or_else(T::one)
        } else {
            T::one() / self.stiffness
        }
    }

    pub fn free_length(&self) -> T {
        self.free_length
    }

    pub fn link_length(&self) -> T {
        self.link_length
    }

    pub fn ax(&self) -> T {
        self.ax
    }

    pub fn ay(&self) -> T {
        self.ay
    }

    /// Anchor distance `a = |P0 P2|`.
    pub fn a(&self) -> T {
        self.a
    }

    /// Anchor angle `alpha`.
    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// 1-based index of the spanned joint.
    pub fn joint(&self) -> usize {
        self.joint
    }

    /// Spring length `s(q)`.
    pub fn spring_length(&self, q: T) -> T {
        let (a, l) = (self.a, self.link_length);
        let s2 = a * a + l * l + lit::<T>(2.0) * a * l * (self.alpha + q).cos();
        // rounding can push the folded case slightly negative
        s2.max(T::zero()).sqrt()
    }

    /// Spring force `K_c (s - s0)`; negative when shorter than the free length.
    pub fn spring_force(&self, q: T) -> T {
        self.stiffness * (self.spring_length(q) - self.free_length)
    }

    /// Angle `phi` between `P0 P1` and `P1 P2`, in `[-pi/2, pi/2]`.
    pub fn transmission_angle(&self, q: T) -> Result<T> {
        let s = self.nonzero_length(q)?;
        let ratio = self.a / s * (self.alpha + q).sin();
        debug_assert!(ratio.abs() <= T::one() + lit(1e-9), "triangle inequality violated");
        Ok(ratio.clamp(-T::one(), T::one()).asin())
    }

    /// Compensator torque `M_c = K_c (1 - s0/s) a L sin(alpha + q)`.
    pub fn torque(&self, q: T) -> Result<T> {
        let s = self.nonzero_length(q)?;
        Ok(self.stiffness
            * (T::one() - self.free_length / s)
            * self.a
            * self.link_length
            * (self.alpha + q).sin())
    }

    /// Dimensionless coefficient `eta_q` of the equivalent joint stiffness.
    pub fn eta(&self, q: T) -> Result<T> {
        let s = self.nonzero_length(q)?;
        let x = self.alpha + q;
        let (sin, cos) = (x.sin(), x.cos());
        let al = self.a * self.link_length;
        Ok(cos - self.free_length / s * (al / (s * s) * sin * sin + cos))
    }

    /// Joint-stiffness contribution `K_c a L eta_q` (N·m/rad); equals
    /// `dM_c/dq` and may be negative.
    pub fn joint_stiffness_contribution(&self, q: T) -> Result<T> {
        Ok(self.stiffness * self.a * self.link_length * self.eta(q)?)
    }

    fn nonzero_length(&self, q: T) -> Result<T> {
        let s = self.spring_length(q);
        if s <= (self.a + self.link_length) * lit(1e-12) {
            return Err(Error::SingularGeometry);
        }
        Ok(s)
    }
}
