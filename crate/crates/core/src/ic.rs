//! Initial conditions, their velocity fields and analytic solutions.
//!
//! Every family is `1 + bump(x − v t)` on a periodic domain; the bump is
//! evaluated at the minimal-image displacement from its centre.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Spatially constant field; used for free-stream and null checks.
    Constant { value: f64, velocity: [f64; 2] },
    Gaussian {
        center: [f64; 2],
        width: f64,
        velocity: [f64; 2],
    },
    /// `exp(−(wx dx² + wy dy² + wxy dx dy))`.
    Anisotropic {
        center: [f64; 2],
        wx: f64,
        wy: f64,
        wxy: f64,
        velocity: [f64; 2],
    },
    Ring {
        center: [f64; 2],
        radius: f64,
        width: f64,
        velocity: [f64; 2],
    },
    /// Gaussian in x only, constant along y. Drives the 1D strip setup.
    Ridge { x0: f64, width: f64, velocity: [f64; 2] },
    /// Two Gaussians in horizontal bands moving in opposite x directions.
    ///
    /// The upper half of the domain (`y ≥ s_y/2`) moves with `+speed`, the
    /// lower half with `−speed`. The velocity field is divergence free and
    /// has no normal component across the band boundaries.
    Opposite {
        upper: [f64; 2],
        lower: [f64; 2],
        width: f64,
        speed: f64,
    },
}

/// `(u cos 2πθ, u sin 2πθ)`.
pub fn velocity_from_polar(speed: f64, angle: f64) -> [f64; 2] {
    [speed * (TAU * angle).cos(), speed * (TAU * angle).sin()]
}

/// Wraps `d` into `[−s/2, s/2)`.
pub fn wrap(d: f64, s: f64) -> f64 {
    (d + 0.5 * s).rem_euclid(s) - 0.5 * s
}

impl InitialCondition {
    /// Velocity at a point. Only [`InitialCondition::Opposite`] varies in space.
    pub fn velocity_at(&self, _x: f64, y: f64, domain: [f64; 2]) -> [f64; 2] {
        match self {
            Self::Constant { velocity, .. }
            | Self::Gaussian { velocity, .. }
            | Self::Anisotropic { velocity, .. }
            | Self::Ring { velocity, .. }
            | Self::Ridge { velocity, .. } => *velocity,
            Self::Opposite { speed, .. } => {
                if y.rem_euclid(domain[1]) >= 0.5 * domain[1] {
                    [*speed, 0.0]
                } else {
                    [-*speed, 0.0]
                }
            }
        }
    }

    /// Largest `|v_x| + |v_y|` anywhere in the domain.
    pub fn max_speed(&self) -> f64 {
        match self {
            Self::Constant { velocity, .. }
            | Self::Gaussian { velocity, .. }
            | Self::Anisotropic { velocity, .. }
            | Self::Ring { velocity, .. }
            | Self::Ridge { velocity, .. } => velocity[0].abs() + velocity[1].abs(),
            Self::Opposite { speed, .. } => speed.abs(),
        }
    }

    /// Exact solution of the advection problem at `(x, y, t)`.
    pub fn exact(&self, x: f64, y: f64, t: f64, domain: [f64; 2]) -> f64 {
        let [sx, sy] = domain;
        let v = self.velocity_at(x, y, domain);
        let (px, py) = (x - v[0] * t, y - v[1] * t);
        let gauss = |c: [f64; 2], w: f64| {
            let dx = wrap(px - c[0], sx);
            let dy = wrap(py - c[1], sy);
            (-w * (dx * dx + dy * dy)).exp()
        };
        match self {
            Self::Constant { value, .. } => *value,
            Self::Gaussian { center, width, .. } => 1.0 + gauss(*center, *width),
            Self::Anisotropic { center, wx, wy, wxy, .. } => {
                let dx = wrap(px - center[0], sx);
                let dy = wrap(py - center[1], sy);
                1.0 + (-(wx * dx * dx + wy * dy * dy + wxy * dx * dy)).exp()
            }
            Self::Ring {
                center, radius, width, ..
            } => {
                let dx = wrap(px - center[0], sx);
                let dy = wrap(py - center[1], sy);
                let r = (dx * dx + dy * dy).sqrt() - radius;
                1.0 + (-width * r * r).exp()
            }
            Self::Ridge { x0, width, .. } => {
                let dx = wrap(px - x0, sx);
                1.0 + (-width * dx * dx).exp()
            }
            Self::Opposite { upper, lower, width, .. } => 1.0 + gauss(*upper, *width) + gauss(*lower, *width),
        }
    }

    /// Rotation by `quarter_turns · π/2` about the centre of a square domain.
    ///
    /// Centres map by `(x, y) → (s − y, x)` per quarter turn and velocities by
    /// `(v_x, v_y) → (−v_y, v_x)`, both exact in floating point for the
    /// velocity. Returns `None` for [`InitialCondition::Opposite`] and
    /// [`InitialCondition::Ridge`], whose fields are tied to the axes.
    pub fn rotated(&self, quarter_turns: u32, side: f64) -> Option<Self> {
        let mut ic = self.clone();
        for _ in 0..quarter_turns % 4 {
            let rc = |c: [f64; 2]| [side - c[1], c[0]];
            let rv = |v: [f64; 2]| [-v[1], v[0]];
            ic = match ic {
                Self::Constant { value, velocity } => Self::Constant {
                    value,
                    velocity: rv(velocity),
                },
                Self::Gaussian { center, width, velocity } => Self::Gaussian {
                    center: rc(center),
                    width,
                    velocity: rv(velocity),
                },
                Self::Anisotropic {
                    center,
                    wx,
                    wy,
                    wxy,
                    velocity,
                } => Self::Anisotropic {
                    center: rc(center),
                    wx: wy,
                    wy: wx,
                    wxy: -wxy,
                    velocity: rv(velocity),
                },
                Self::Ring {
                    center,
                    radius,
                    width,
                    velocity,
                } => Self::Ring {
                    center: rc(center),
                    radius,
                    width,
                    velocity: rv(velocity),
                },
                Self::Ridge { .. } | Self::Opposite { .. } => return None,
            };
        }
        Some(ic)
    }

    /// Shift of every feature by `offset`.
    pub fn translated(&self, offset: [f64; 2]) -> Self {
        let sh = |c: [f64; 2]| [c[0] + offset[0], c[1] + offset[1]];
        match self.clone() {
            Self::Constant { value, velocity } => Self::Constant { value, velocity },
            Self::Gaussian { center, width, velocity } => Self::Gaussian {
                center: sh(center),
                width,
                velocity,
            },
            Self::Anisotropic {
                center,
                wx,
                wy,
                wxy,
                velocity,
            } => Self::Anisotropic {
                center: sh(center),
                wx,
                wy,
                wxy,
                velocity,
            },
            Self::Ring {
                center,
                radius,
                width,
                velocity,
            } => Self::Ring {
                center: sh(center),
                radius,
                width,
                velocity,
            },
            Self::Ridge { x0, width, velocity } => Self::Ridge {
                x0: x0 + offset[0],
                width,
                velocity,
            },
            Self::Opposite {
                upper,
                lower,
                width,
                speed,
            } => Self::Opposite {
                upper: sh(upper),
                lower: sh(lower),
                width,
                speed,
            },
        }
    }

    /// Same IC with velocity set to zero.
    pub fn frozen(&self) -> Self {
        match self.clone() {
            Self::Constant { value, .. } => Self::Constant {
                value,
                velocity: [0.0; 2],
            },
            Self::Gaussian { center, width, .. } => Self::Gaussian {
                center,
                width,
                velocity: [0.0; 2],
            },
            Self::Anisotropic { center, wx, wy, wxy, .. } => Self::Anisotropic {
                center,
                wx,
                wy,
                wxy,
                velocity: [0.0; 2],
            },
            Self::Ring {
                center, radius, width, ..
            } => Self::Ring {
                center,
                radius,
                width,
                velocity: [0.0; 2],
            },
            Self::Ridge { x0, width, .. } => Self::Ridge {
                x0,
                width,
                velocity: [0.0; 2],
            },
            Self::Opposite { upper, lower, width, .. } => Self::Opposite {
                upper,
                lower,
                width,
                speed: 0.0,
            },
        }
    }
}

/// Random IC families used for training and generalisation tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcFamily {
    Gaussian,
    Anisotropic,
    Ring,
    Opposite,
    /// Plane wave along x, for the 1D strip.
    Ridge,
}

/// Sampling ranges. Defaults follow the training distribution on `[0, 2]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcDistribution {
    pub family: IcFamily,
    pub speed: [f64; 2],
    pub angle: [f64; 2],
    pub center: [f64; 2],
    pub width: f64,
}

impl Default for IcDistribution {
    fn default() -> Self {
        Self {
            family: IcFamily::Gaussian,
            speed: [0.0, 1.5],
            angle: [0.0, 1.0],
            center: [0.5, 1.5],
            width: 100.0,
        }
    }
}

impl IcDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InitialCondition {
        let uni = |rng: &mut R, r: [f64; 2]| if r[1] > r[0] { rng.gen_range(r[0]..r[1]) } else { r[0] };
        let speed = uni(rng, self.speed);
        let angle = uni(rng, self.angle);
        let velocity = velocity_from_polar(speed, angle);
        match self.family {
            IcFamily::Gaussian => InitialCondition::Gaussian {
                center: [uni(rng, self.center), uni(rng, self.center)],
                width: self.width,
                velocity,
            },
            IcFamily::Anisotropic => loop {
                let (wx, wy, wxy) = (uni(rng, [20.0, 100.0]), uni(rng, [20.0, 100.0]), uni(rng, [20.0, 100.0]));
                let center = [uni(rng, self.center), uni(rng, self.center)];
                // the quadratic form must be positive definite to give a bump
                if 4.0 * wx * wy > wxy * wxy {
                    break InitialCondition::Anisotropic {
                        center,
                        wx,
                        wy,
                        wxy,
                        velocity,
                    };
                }
            },
            IcFamily::Ring => InitialCondition::Ring {
                center: [uni(rng, self.center), uni(rng, self.center)],
                radius: uni(rng, [0.1, 0.3]),
                width: self.width,
                velocity,
            },
            IcFamily::Ridge => InitialCondition::Ridge {
                x0: uni(rng, self.center),
                width: self.width,
                velocity,
            },
            IcFamily::Opposite => InitialCondition::Opposite {
                upper: [uni(rng, self.center), uni(rng, [1.3, 1.7])],
                lower: [uni(rng, self.center), uni(rng, [0.3, 0.7])],
                width: self.width,
                speed,
            },
        }
    }
}
