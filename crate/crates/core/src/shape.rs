//! Planar collision shapes, expressed in the owning frame.

use nalgebra::Vector2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Circle { radius: f64 },
    /// Strictly convex, counter-clockwise.
    Polygon { vertices: Vec<Vector2<f64>> },
    /// Free side is `normal·x ≥ offset`.
    Halfplane { normal: Vector2<f64>, offset: f64 },
}

impl Shape {
    pub fn circle(radius: f64) -> Self {
        Shape::Circle { radius }
    }

    /// Axis-aligned box centered on the frame origin.
    pub fn rectangle(half_x: f64, half_y: f64) -> Self {
        Shape::Polygon {
            vertices: vec![
                Vector2::new(-half_x, -half_y),
                Vector2::new(half_x, -half_y),
                Vector2::new(half_x, half_y),
                Vector2::new(-half_x, half_y),
            ],
        }
    }

    /// The floor `y ≥ height`.
    pub fn floor(height: f64) -> Self {
        Shape::Halfplane {
            normal: Vector2::new(0.0, 1.0),
            offset: height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Circle { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidModel(format!("circle radius {radius} must be positive")));
                }
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                if n < 3 {
                    return Err(Error::InvalidModel(format!("polygon needs at least 3 vertices, got {n}")));
                }
                for i in 0..n {
                    let (p0, p1, p2) = (vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
                    let cross = (p1 - p0).perp(&(p2 - p1));
                    if !(cross > 0.0) {
                        return Err(Error::InvalidModel(format!(
                            "polygon is not strictly convex and counter-clockwise at vertex {}",
                            (i + 1) % n
                        )));
                    }
                }
            }
            Shape::Halfplane { normal, offset } => {
                if (normal.norm() - 1.0).abs() > 1e-12 || !offset.is_finite() {
                    return Err(Error::InvalidModel("halfplane normal must be unit length".into()));
                }
            }
        }
        Ok(())
    }

    /// Distance from the frame origin to the farthest point; infinite for a
    /// halfplane.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Circle { radius } => *radius,
            Shape::Polygon { vertices } => vertices.iter().map(|v| v.norm()).fold(0.0, f64::max),
            Shape::Halfplane { .. } => f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Shape::circle(0.5).validate().is_ok());
        assert!(Shape::circle(0.0).validate().is_err());
        assert!(Shape::rectangle(0.5, 0.25).validate().is_ok());
        let cw = Shape::Polygon {
            vertices: vec![Vector2::new(0.0, 0.0), Vector2::new(0.0, 1.0), Vector2::new(1.0, 0.0)],
        };
        assert!(cw.validate().is_err());
        let collinear = Shape::Polygon {
            vertices: vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.0, 0.0),
                Vector2::new(2.0, 0.0),
                Vector2::new(1.0, 1.0),
            ],
        };
        assert!(collinear.validate().is_err());
        let tilted = Shape::Halfplane {
            normal: Vector2::new(1.0, 1.0),
            offset: 0.0,
        };
        assert!(tilted.validate().is_err());
        assert!(Shape::floor(0.0).validate().is_ok());
    }
}
