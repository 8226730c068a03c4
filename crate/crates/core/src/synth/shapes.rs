use serde::{Deserialize, Serialize};

/// Shape vocabulary; one class per kind. Order decides which kinds go to the
/// auxiliary set (first) and which to the target set (next).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Triangle,
    Ring,
    Cross,
    Trapezoid,
    Crescent,
    Star,
    Blob,
    Rectangle,
}

impl ShapeKind {
    pub const VOCABULARY: [ShapeKind; 9] = [
        ShapeKind::Ellipse,
        ShapeKind::Triangle,
        ShapeKind::Ring,
        ShapeKind::Cross,
        ShapeKind::Trapezoid,
        ShapeKind::Crescent,
        ShapeKind::Star,
        ShapeKind::Blob,
        ShapeKind::Rectangle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Ring => "ring",
            ShapeKind::Cross => "cross",
            ShapeKind::Trapezoid => "trapezoid",
            ShapeKind::Crescent => "crescent",
            ShapeKind::Star => "star",
            ShapeKind::Blob => "blob",
            ShapeKind::Rectangle => "rectangle",
        }
    }

    pub fn from_name(name: &str) -> Option<ShapeKind> {
        Self::VOCABULARY.into_iter().find(|k| k.name() == name)
    }

    /// Membership test in shape-local coordinates, where the shape fits the
    /// unit disc. `aspect` in (0, 1] squashes the minor axis; `phase`
    /// perturbs blob outlines.
    pub fn contains(self, u: f64, v: f64, aspect: f64, phase: f64) -> bool {
        let r2 = u * u + v * v;
        match self {
            ShapeKind::Ellipse => u * u + (v / aspect).powi(2) <= 1.0,
            ShapeKind::Triangle => in_polygon(u, v, &regular_polygon(3, 1.0, 0.0)),
            ShapeKind::Ring => (0.55 * 0.55..=1.0).contains(&r2),
            ShapeKind::Cross => {
                let arm = 0.34;
                (u.abs() <= arm && v.abs() <= 1.0) || (v.abs() <= arm && u.abs() <= 1.0)
            }
            ShapeKind::Trapezoid => {
                let half_h = 0.7;
                if v.abs() > half_h {
                    return false;
                }
                let t = (v + half_h) / (2.0 * half_h);
                u.abs() <= 0.4 + 0.55 * t
            }
            ShapeKind::Crescent => r2 <= 1.0 && (u - 0.45).powi(2) + v * v > 0.75 * 0.75,
            ShapeKind::Star => in_polygon(u, v, &star_polygon(5, 1.0, 0.45)),
            ShapeKind::Blob => {
                let theta = v.atan2(u);
                let radius = 0.78 + 0.14 * (3.0 * theta + phase).sin() + 0.08 * (5.0 * theta + 2.0 * phase).cos();
                r2.sqrt() <= radius
            }
            ShapeKind::Rectangle => u.abs() <= 1.0 * 0.8 && v.abs() <= aspect * 0.8,
        }
    }
}

fn regular_polygon(n: usize, radius: f64, offset: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let a = offset - std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::TAU / n as f64;
            (radius * a.cos(), radius * a.sin())
        })
        .collect()
}

fn star_polygon(points: usize, outer: f64, inner: f64) -> Vec<(f64, f64)> {
    (0..2 * points)
        .map(|i| {
            let r = if i % 2 == 0 { outer } else { inner };
            let a = -std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::PI / points as f64;
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Even–odd crossing test.
fn in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area_fraction(kind: ShapeKind) -> f64 {
        let n = 200;
        let mut hits = 0;
        for i in 0..n {
            for j in 0..n {
                let u = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
                let v = -1.0 + 2.0 * (j as f64 + 0.5) / n as f64;
                if kind.contains(u, v, 0.7, 0.3) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (n * n) as f64
    }

    #[test]
    fn every_shape_is_non_trivial_and_inside_unit_square() {
        for kind in ShapeKind::VOCABULARY {
            let f = area_fraction(kind);
            assert!(f > 0.1 && f < 0.9, "{kind:?} covers {f}");
            assert!(!kind.contains(1.01, 1.01, 0.7, 0.3));
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in ShapeKind::VOCABULARY {
            assert_eq!(ShapeKind::from_name(kind.name()), Some(kind));
        }
    }

    #[test]
    fn ring_has_a_hole() {
        assert!(!ShapeKind::Ring.contains(0.0, 0.0, 1.0, 0.0));
        assert!(ShapeKind::Ring.contains(0.8, 0.0, 1.0, 0.0));
    }
}
