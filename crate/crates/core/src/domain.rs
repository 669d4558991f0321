//! Hypercube domains, boundary decomposition, uniform point clouds, Monte
//! Carlo quadrature, and the nearest-interior matching used by the penalty
//! rule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceLabel {
    Dirichlet,
    Neumann,
}

/// One of the 2d faces of a box: `axis` with the coordinate pinned at the
/// lower (`side = 0`) or upper (`side = 1`) end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub axis: usize,
    pub side: usize,
}

impl Face {
    /// Sign of the outward normal along `axis`.
    pub fn sign(&self) -> f64 {
        if self.side == 0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// An axis-aligned box with a Dirichlet/Neumann partition of its 2d faces.
#[derive(Debug, Clone)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
    labels: Vec<FaceLabel>, // index 2*axis + side
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, labels: Vec<FaceLabel>) -> Result<BoxDomain> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::Config("box requires a_i < b_i on every axis".into()));
        }
        if labels.len() != 2 * lo.len() {
            return Err(Error::Config(format!(
                "need one label per face: expected {}, got {}",
                2 * lo.len(),
                labels.len()
            )));
        }
        Ok(BoxDomain { lo, hi, labels })
    }

    pub fn unit_cube(d: usize, label: FaceLabel) -> BoxDomain {
        BoxDomain::new(vec![0.0; d], vec![1.0; d], vec![label; 2 * d]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn face_area(&self, axis: usize) -> f64 {
        (0..self.dim())
            .filter(|&j| j != axis)
            .map(|j| self.hi[j] - self.lo[j])
            .product()
    }

    pub fn label(&self, face: Face) -> FaceLabel {
        self.labels[2 * face.axis + face.side]
    }

    pub fn faces_with(&self, label: FaceLabel) -> Vec<Face> {
        (0..2 * self.dim())
            .filter(|&i| self.labels[i] == label)
            .map(|i| Face {
                axis: i / 2,
                side: i % 2,
            })
            .collect()
    }

    /// Total (d−1)-volume of the faces carrying `label`.
    pub fn boundary_area(&self, label: FaceLabel) -> f64 {
        self.faces_with(label)
            .iter()
            .map(|f| self.face_area(f.axis))
            .sum()
    }

    pub fn all_faces(&self) -> Vec<Face> {
        (0..2 * self.dim())
            .map(|i| Face {
                axis: i / 2,
                side: i % 2,
            })
            .collect()
    }

    /// Total (d−1)-volume of ∂Ω.
    pub fn total_boundary_area(&self) -> f64 {
        self.all_faces().iter().map(|f| self.face_area(f.axis)).sum()
    }

    /// One uniform draw from the interior.
    pub fn sample_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.sample_interior(rng)
    }

    /// One uniform draw from the given face.
    pub fn sample_face_point(&self, face: Face, rng: &mut impl Rng) -> Vec<f64> {
        self.sample_face(face, rng)
    }

    fn sample_interior(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| rng.gen_range(*a..*b))
            .collect()
    }

    fn sample_face(&self, face: Face, rng: &mut impl Rng) -> Vec<f64> {
        let mut x = self.sample_interior(rng);
        x[face.axis] = if face.side == 0 {
            self.lo[face.axis]
        } else {
            self.hi[face.axis]
        };
        x
    }
}

/// A set of points with fixed dimension, stored flat.
#[derive(Debug, Clone, Default)]
pub struct Cloud {
    dim: usize,
    data: Vec<f64>,
}

impl Cloud {
    pub fn new(dim: usize) -> Cloud {
        Cloud {
            dim,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.dim);
        self.data.extend_from_slice(p);
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Flat row-major coordinate storage.
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Interior/Dirichlet/Neumann sample sets with Monte Carlo quadrature
/// weights and outward normals (axis-aligned, unit).
#[derive(Debug, Clone)]
pub struct PointClouds {
    pub interior: Cloud,
    pub dirichlet: Cloud,
    pub dirichlet_faces: Vec<Face>,
    pub neumann: Cloud,
    pub neumann_faces: Vec<Face>,
    pub volume: f64,
    pub dirichlet_area: f64,
    pub neumann_area: f64,
}

impl PointClouds {
    /// |Ω|/N_I
    pub fn interior_weight(&self) -> f64 {
        self.volume / self.interior.len() as f64
    }

    /// |Γ_D|/N_D
    pub fn dirichlet_weight(&self) -> f64 {
        self.dirichlet_area / self.dirichlet.len() as f64
    }

    /// |Γ_N|/N_N
    pub fn neumann_weight(&self) -> f64 {
        self.neumann_area / self.neumann.len() as f64
    }

    /// Outward unit normal at Dirichlet point `i`.
    pub fn dirichlet_normal(&self, i: usize) -> Vec<f64> {
        face_normal(self.dirichlet_faces[i], self.interior.dim)
    }

    pub fn neumann_normal(&self, i: usize) -> Vec<f64> {
        face_normal(self.neumann_faces[i], self.interior.dim)
    }

    /// Debug dump: region, coordinates, normal.
    pub fn dump_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        let d = self.interior.dim;
        write!(w, "region")?;
        for i in 0..d {
            write!(w, ",x{i}")?;
        }
        for i in 0..d {
            write!(w, ",n{i}")?;
        }
        writeln!(w)?;
        let mut row = |region: &str, p: &[f64], n: &[f64]| -> std::io::Result<()> {
            write!(w, "{region}")?;
            for v in p {
                write!(w, ",{v}")?;
            }
            for v in n {
                write!(w, ",{v}")?;
            }
            writeln!(w)
        };
        let zero = vec![0.0; d];
        for p in self.interior.iter() {
            row("interior", p, &zero)?;
        }
        for (i, p) in self.dirichlet.iter().enumerate() {
            row("dirichlet", p, &self.dirichlet_normal(i))?;
        }
        for (i, p) in self.neumann.iter().enumerate() {
            row("neumann", p, &self.neumann_normal(i))?;
        }
        Ok(())
    }
}

fn face_normal(face: Face, dim: usize) -> Vec<f64> {
    let mut n = vec![0.0; dim];
    n[face.axis] = if face.side == 0 { -1.0 } else { 1.0 };
    n
}

/// Uniform i.i.d. clouds: `n_interior` points in Ω and `per_face` points on
/// each of the 2d faces, grouped by boundary label. Deterministic under
/// `seed`. A void partition (no faces with that label) yields an empty cloud.
pub fn sample_clouds(
    domain: &BoxDomain,
    n_interior: usize,
    per_face: usize,
    seed: u64,
) -> Result<PointClouds> {
    if n_interior == 0 {
        return Err(Error::EmptyRegion(
            "interior cloud requested with zero points".into(),
        ));
    }
    let d = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interior = Cloud::new(d);
    for _ in 0..n_interior {
        interior.push(&domain.sample_interior(&mut rng));
    }
    let mut fill = |faces: &[Face]| -> (Cloud, Vec<Face>) {
        let mut cloud = Cloud::new(d);
        let mut owners = Vec::new();
        for &f in faces {
            for _ in 0..per_face {
                cloud.push(&domain.sample_face(f, &mut rng));
                owners.push(f);
            }
        }
        (cloud, owners)
    };
    let (dirichlet, dirichlet_faces) = fill(&domain.faces_with(FaceLabel::Dirichlet));
    let (neumann, neumann_faces) = fill(&domain.faces_with(FaceLabel::Neumann));
    if per_face == 0 && (!domain.faces_with(FaceLabel::Dirichlet).is_empty()) {
        return Err(Error::EmptyRegion(
            "boundary cloud requested with zero points per face".into(),
        ));
    }
    Ok(PointClouds {
        interior,
        dirichlet,
        dirichlet_faces,
        neumann,
        neumann_faces,
        volume: domain.volume(),
        dirichlet_area: domain.boundary_area(FaceLabel::Dirichlet),
        neumann_area: domain.boundary_area(FaceLabel::Neumann),
    })
}

/// (measure / count) · Σ values. An empty region integrates to 0 only when
/// its measure is 0.
pub fn mc_integral(region_measure: f64, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return if region_measure == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::EmptyRegion(format!(
                "integral over a region of measure {region_measure} with no sample points"
            )))
        };
    }
    let sum: f64 = values.iter().sum();
    Ok(region_measure / values.len() as f64 * sum)
}

/// For each Dirichlet boundary point, in sample order: the Euclidean-nearest
/// interior point with nonzero gradient norm that has not been taken by an
/// earlier boundary point. Ties break to the lowest interior index.
pub fn match_nearest_interior(
    clouds: &PointClouds,
    interior_grad_norms: &[f64],
) -> Result<Vec<usize>> {
    let n_b = clouds.dirichlet.len();
    let n_i = clouds.interior.len();
    debug_assert_eq!(interior_grad_norms.len(), n_i);
    let usable = interior_grad_norms.iter().filter(|&&g| g != 0.0).count();
    if usable < n_b {
        return Err(Error::InsufficientMatches {
            have: usable,
            need: n_b,
        });
    }
    let mut taken = vec![false; n_i];
    let mut matching = Vec::with_capacity(n_b);
    for b in 0..n_b
    {
        let xb = clouds.dirichlet.point(b);
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n_i {
            if taken[i] || interior_grad_norms[i] == 0.0 {
                continue;
            }
            let dist2: f64 = clouds
                .interior
                .point(i)
                .iter()
                .zip(xb)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            // strict < keeps the lowest index on ties
            if best.map_or(true, |(d, _)| dist2 < d) {
                best = Some((dist2, i));
            }
        }
        let (_, i) = best.expect("usable count checked above");
        taken[i] = true;
        matching.push(i);
    }
    Ok(matching)
}
