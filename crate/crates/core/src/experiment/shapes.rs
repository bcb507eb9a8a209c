//! Parametric 2D landmark sets approximating the experiment figures.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar shape sampled at `n` ordered points. Closed contours start at
/// angle 0 and run counterclockwise without repeating the first point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Circle {
        center: [f64; 2],
        radius: f64,
        n: usize,
    },
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        n: usize,
    },
    /// Ellipse pushed along its unit normal by `amplitude * sin(frequency t)`.
    BumpyEllipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        amplitude: f64,
        frequency: u32,
        n: usize,
    },
    /// Polar rose `r(t) = (inner + outer)/2 + (outer - inner)/2 cos(petals t + phase)`.
    Flower {
        center: [f64; 2],
        petals: u32,
        inner: f64,
        outer: f64,
        #[serde(default)]
        phase: f64,
        n: usize,
    },
    /// Head contour, trunk, and two arms; `arm_angle` is the elevation of
    /// both arms in degrees (0 horizontal, 90 straight up).
    SchematicHuman {
        center: [f64; 2],
        head_semi_axes: [f64; 2],
        arm_angle: f64,
        n: usize,
    },
    /// Explicit coordinates.
    Points { points: Vec<[f64; 2]> },
}

fn ring(n: usize, f: impl Fn(f64) -> [f64; 2]) -> Vec<[f64; 2]> {
    (0..n).map(|i| f(2.0 * PI * i as f64 / n as f64)).collect()
}

fn segment(a: [f64; 2], b: [f64; 2], n: usize, skip_first: bool) -> Vec<[f64; 2]> {
    let start = usize::from(skip_first);
    let den = (n + start - 1).max(1) as f64;
    (start..n + start)
        .map(|i| {
            let t = i as f64 / den;
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Circle { n, .. }
            | Shape::Ellipse { n, .. }
            | Shape::BumpyEllipse { n, .. }
            | Shape::Flower { n, .. }
            | Shape::SchematicHuman { n, .. } => *n,
            Shape::Points { points } => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            Shape::Circle { radius, n, .. } => {
                positive(*radius, "radius")?;
                check_count(*n, 3)
            }
            Shape::Ellipse { semi_axes, n, .. } => {
                positive(semi_axes[0], "semi-axis")?;
                positive(semi_axes[1], "semi-axis")?;
                check_count(*n, 3)
            }
            Shape::BumpyEllipse {
                semi_axes,
                amplitude,
                n,
                ..
            } => {
                positive(semi_axes[0], "semi-axis")?;
                positive(semi_axes[1], "semi-axis")?;
                if !amplitude.is_finite() {
                    return Err(Error::Config("amplitude must be finite".into()));
                }
                check_count(*n, 3)
            }
            Shape::Flower {
                inner,
                outer,
                petals,
                n,
                ..
            } => {
                positive(*inner, "inner radius")?;
                positive(*outer, "outer radius")?;
                if *petals == 0 {
                    return Err(Error::Config("a flower needs at least one petal".into()));
                }
                check_count(*n, 3)
            }
            Shape::SchematicHuman {
                head_semi_axes,
                arm_angle,
                n,
                ..
            } => {
                positive(head_semi_axes[0], "head semi-axis")?;
                positive(head_semi_axes[1], "head semi-axis")?;
                if !arm_angle.is_finite() {
                    return Err(Error::Config("arm angle must be finite".into()));
                }
                check_count(*n, 10)
            }
            Shape::Points { points } => {
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Config("non-finite point".into()));
                }
                Ok(())
            }
        }
    }

    pub fn generate(&self) -> Result<Vec<[f64; 2]>> {
        self.validate()?;
        Ok(match self {
            Shape::Circle {
                center: c,
                radius,
                n,
            } => ring(*n, |t| [c[0] + radius * t.cos(), c[1] + radius * t.sin()]),
            Shape::Ellipse {
                center: c,
                semi_axes: [a, b],
                n,
            } => ring(*n, |t| [c[0] + a * t.cos(), c[1] + b * t.sin()]),
            Shape::BumpyEllipse {
                center: c,
                semi_axes: [a, b],
                amplitude,
                frequency,
                n,
            } => ring(*n, |t| {
                let (ct, st) = (t.cos(), t.sin());
                let (nx, ny) = (b * ct, a * st);
                let norm = (nx * nx + ny * ny).sqrt();
                let push = amplitude * (*frequency as f64 * t).sin() / norm;
                [c[0] + a * ct + push * nx, c[1] + b * st + push * ny]
            }),
            Shape::Flower {
                center: c,
                petals,
                inner,
                outer,
                phase,
                n,
            } => ring(*n, |t| {
                let r = 0.5 * (inner + outer)
                    + 0.5 * (outer - inner) * (*petals as f64 * t + phase).cos();
                [c[0] + r * t.cos(), c[1] + r * t.sin()]
            }),
            Shape::SchematicHuman {
                center: c,
                head_semi_axes: [hx, hy],
                arm_angle,
                n,
            } => human(*c, *hx, *hy, arm_angle.to_radians(), *n),
            Shape::Points { points } => points.clone(),
        })
    }
}

fn check_count(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::Config(format!(
            "need at least {min} points, got {n}"
        )));
    }
    Ok(())
}

/// Head ring on top of a vertical trunk, arms attached at the shoulders.
/// Roughly 40% of the points go to the head, 20% to the trunk and the rest
/// to the arms.
fn human(c: [f64; 2], hx: f64, hy: f64, arm: f64, n: usize) -> Vec<[f64; 2]> {
    let head_n = (2 * n) / 5;
    let trunk_n = n / 5;
    let arm_total = n - head_n - trunk_n;
    let (left_n, right_n) = (arm_total / 2, arm_total - arm_total / 2);
    let neck = [c[0], c[1] + 0.6];
    let hip = [c[0], c[1] - 0.8];
    let head_c = [neck[0], neck[1] + 0.15 + hy];
    let mut out = ring(head_n, |t| {
        [
            head_c[0] + hx * (t - 0.5 * PI).cos(),
            head_c[1] + hy * (t - 0.5 * PI).sin(),
        ]
    });
    out.extend(segment(neck, hip, trunk_n, true));
    let shoulder = [c[0], c[1] + 0.4];
    let len = 1.0;
    let right = [shoulder[0] + len * arm.cos(), shoulder[1] + len * arm.sin()];
    let left = [shoulder[0] - len * arm.cos(), shoulder[1] + len * arm.sin()];
    out.extend(segment(shoulder, left, left_n, true));
    out.extend(segment(shoulder, right, right_n, true));
    out
}

/// Largest pairwise distance of a point set.
pub fn diameter(points: &[[f64; 2]]) -> f64 {
    let mut d = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            d = d.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
        }
    }
    d
}
