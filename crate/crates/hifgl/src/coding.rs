//! Lagrange coded computing over real-valued vectors.
//!
//! A vector `h` is hidden inside a degree-T polynomial `g` anchored at points
//! `beta`: `g(beta_1) = h` and `g(beta_j) = z_j` for T random mask vectors.
//! The T+1 evaluations of `g` at the `alpha` points are the shares. Summing
//! shares from many senders sums the underlying polynomials, so interpolating
//! the summed shares back at `beta_1` recovers the sum of the senders'
//! vectors - and nothing else. One share alone reveals nothing about `h` for
//! T >= 1 because the masks enter through an invertible mixing submatrix.
//!
//! Arithmetic is plain f64 Lagrange interpolation over small consecutive
//! integer evaluation points (`alpha_i = i`, `beta_j = T+1+j`), which keeps
//! every pairwise difference nonzero and the interpolation well conditioned
//! for the thresholds used here (T <= 8). Recovery is exact to float
//! precision; there is no finite-field or fixed-point mode.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CodingError {
    #[error("privacy threshold must be at least 1 (no masking possible at t = 0)")]
    ZeroThreshold,
    #[error("expected {expected} mask vectors, got {got}")]
    MaskCount { expected: usize, got: usize },
    #[error("dimension mismatch: embedding has {embedding}, mask {index} has {mask}")]
    MaskDim {
        embedding: usize,
        index: usize,
        mask: usize,
    },
    #[error("share bundle has {got} shares, params require {expected}")]
    ShareCount { expected: usize, got: usize },
    #[error("share {index} has dimension {got}, bundle dimension is {dim}")]
    ShareDim { index: usize, got: usize, dim: usize },
    #[error("evaluation points are degenerate: {0}")]
    DegeneratePoints(String),
}

/// A silo's encoding/decoding parameter set: the privacy threshold T, the
/// T+1 share evaluation points `alphas`, the T+1 anchor points `betas`
/// (data sits at `betas[0]`, masks at the rest), and the seed from which
/// per-message mask streams are derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodingParams {
    t: usize,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    mask_seed: u64,
}

impl CodingParams {
    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of shares per message (T + 1).
    pub fn share_count(&self) -> usize {
        self.t + 1
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn mask_seed(&self) -> u64 {
        self.mask_seed
    }

    /// Scalar count of the parameter view a device requests before encoding:
    /// the 2T+2 points plus T mask slots, 3T+2 in total.
    pub fn wire_scalars(&self) -> u64 {
        (3 * self.t + 2) as u64
    }

    /// All 2T+2 points pairwise distinct and the two sets disjoint.
    pub fn check_invariants(&self) -> Result<(), CodingError> {
        let mut all: Vec<f64> = self.alphas.iter().chain(self.betas.iter()).copied().collect();
        if all.len() != 2 * self.t + 2 {
            return Err(CodingError::DegeneratePoints(format!(
                "expected {} points, got {}",
                2 * self.t + 2,
                all.len()
            )));
        }
        all.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
        for w in all.windows(2) {
            if w[0] == w[1] {
                return Err(CodingError::DegeneratePoints(format!(
                    "repeated evaluation point {}",
                    w[0]
                )));
            }
        }
        Ok(())
    }

    /// Test fixture: deliberately violate the invariants by duplicating a beta.
    #[doc(hidden)]
    pub fn corrupt_duplicate_beta(mut self) -> Self {
        if self.betas.len() >= 2 {
            self.betas[1] = self.betas[0];
        }
        self
    }
}

/// The T+1 coded vectors a sender emits for one message: `shares[k] = g(alphas[k])`.
///
/// Bundles from different senders (under the same params) add element-wise;
/// the sum is itself a valid bundle of the summed polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareBundle {
    shares: Vec<Vec<f64>>,
    dim: usize,
}

impl ShareBundle {
    pub fn zeros(share_count: usize, dim: usize) -> Self {
        Self {
            shares: vec![vec![0.0; dim]; share_count],
            dim,
        }
    }

    pub fn from_shares(shares: Vec<Vec<f64>>) -> Result<Self, CodingError> {
        let dim = shares.first().map_or(0, Vec::len);
        for (index, s) in shares.iter().enumerate() {
            if s.len() != dim {
                return Err(CodingError::ShareDim {
                    index,
                    got: s.len(),
                    dim,
                });
            }
        }
        Ok(Self { shares, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shares(&self) -> &[Vec<f64>] {
        &self.shares
    }

    /// Element-wise accumulate another bundle (polynomials add).
    pub fn add_assign(&mut self, other: &ShareBundle) -> Result<(), CodingError> {
        if other.shares.len() != self.shares.len() {
            return Err(CodingError::ShareCount {
                expected: self.shares.len(),
                got: other.shares.len(),
            });
        }
        if other.dim != self.dim {
            return Err(CodingError::ShareDim {
                index: 0,
                got: other.dim,
                dim: self.dim,
            });
        }
        for (mine, theirs) in self.shares.iter_mut().zip(&other.shares) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += *b;
            }
        }
        Ok(())
    }

    /// Total scalars on the wire when this bundle is transferred.
    pub fn wire_scalars(&self) -> u64 {
        (self.shares.len() * self.dim) as u64
    }
}

/// Generate a parameter set for privacy threshold `t`.
///
/// Points follow the fixed small-integer scheme `alpha_i = i`,
/// `beta_j = t+1+j`; the seed only feeds the mask streams, so two calls with
/// the same arguments return identical parameters.
pub fn generate_params(t: usize, rng_seed: u64) -> Result<CodingParams, CodingError> {
    if t == 0 {
        return Err(CodingError::ZeroThreshold);
    }
    let alphas: Vec<f64> = (1..=t + 1).map(|i| i as f64).collect();
    let betas: Vec<f64> = (1..=t + 1).map(|j| (t + 1 + j) as f64).collect();
    let params = CodingParams {
        t,
        alphas,
        betas,
        mask_seed: rng::sub_seed(rng_seed, "lcc-masks"),
    };
    params.check_invariants()?;
    Ok(params)
}

/// Draw the T fresh mask vectors for one message, keyed by the message
/// coordinates so the stream is independent of emission order.
pub fn draw_masks(params: &CodingParams, dim: usize, message_key: &[u64]) -> Vec<Vec<f64>> {
    let seed = rng::sub_seed_n(params.mask_seed, message_key);
    let mut stream = rng::stream(seed);
    (0..params.t)
        .map(|_| (0..dim).map(|_| rng::uniform_sym(&mut stream)).collect())
        .collect()
}

/// Lagrange basis polynomial over `points`, index `j`, evaluated at `x`.
fn lagrange_basis(points: &[f64], j: usize, x: f64) -> f64 {
    let mut acc = 1.0;
    for (k, &pk) in points.iter().enumerate() {
        if k != j {
            acc *= (x - pk) / (points[j] - pk);
        }
    }
    acc
}

/// Encode `h` into T+1 shares: build the degree-T polynomial with
/// `g(betas[0]) = h` and `g(betas[j]) = masks[j-1]`, then evaluate it at
/// every alpha.
pub fn lcc_encode(
    h: &[f64],
    params: &CodingParams,
    masks: &[Vec<f64>],
) -> Result<ShareBundle, CodingError> {
    params.check_invariants()?;
    if masks.len() != params.t {
        return Err(CodingError::MaskCount {
            expected: params.t,
            got: masks.len(),
        });
    }
    for (index, m) in masks.iter().enumerate() {
        if m.len() != h.len() {
            return Err(CodingError::MaskDim {
                embedding: h.len(),
                index,
                mask: m.len(),
            });
        }
    }
    let dim = h.len();
    let mut bundle = ShareBundle::zeros(params.share_count(), dim);
    for (k, &alpha) in params.alphas.iter().enumerate() {
        // coefficient of h, then of each mask, in g(alpha)
        let share = &mut bundle.shares[k];
        let c0 = lagrange_basis(&params.betas, 0, alpha);
        for (s, &hv) in share.iter_mut().zip(h) {
            *s = c0 * hv;
        }
        for (j, mask) in masks.iter().enumerate() {
            let cj = lagrange_basis(&params.betas, j + 1, alpha);
            for (s, &mv) in share.iter_mut().zip(mask) {
                *s += cj * mv;
            }
        }
    }
    Ok(bundle)
}

/// Decode a (possibly summed) bundle: interpolate the unique degree-<=T
/// polynomial through `(alphas[k], shares[k])` and evaluate it at `betas[0]`.
/// For a sum of encodings this recovers the sum of the encoded vectors.
pub fn lcc_decode(aggregated: &ShareBundle, params: &CodingParams) -> Result<Vec<f64>, CodingError> {
    params.check_invariants()?;
    if aggregated.shares.len() != params.share_count() {
        return Err(CodingError::ShareCount {
            expected: params.share_count(),
            got: aggregated.shares.len(),
        });
    }
    let beta1 = params.betas[0];
    let dim = aggregated.dim;
    let mut out = vec![0.0; dim];
    for (k, share) in aggregated.shares.iter().enumerate() {
        let w = lagrange_basis(&params.alphas, k, beta1);
        for (o, &s) in out.iter_mut().zip(share) {
            *o += w * s;
        }
    }
    Ok(out)
}

/// The (T+1) x (T+1) encoding matrix `U`: row i is the Lagrange basis
/// anchored at `betas[i]` evaluated at each alpha, so encoding equals the row
/// vector `(h, z_2, ..., z_{T+1})` times `U`, column by column.
pub fn encoding_matrix(params: &CodingParams) -> Vec<Vec<f64>> {
    let n = params.share_count();
    let mut u = vec![vec![0.0; n]; n];
    for (i, row) in u.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = lagrange_basis(&params.betas, i, params.alphas[j]);
        }
    }
    u
}

/// Invertibility diagnostic for the mask-mixing submatrices of `U`.
#[derive(Debug, Clone, Serialize)]
pub struct BottomDiagnostic {
    /// |det| of the bottom T x T submatrix obtained by dropping each column.
    pub dets: Vec<f64>,
    pub min_abs_det: f64,
    pub invertible: bool,
}

/// |det| threshold below which a bottom submatrix counts as singular. Far
/// below anything the integer point scheme can produce.
pub const SINGULARITY_EPS: f64 = 1e-12;

/// For every column index t, form the T x T submatrix of the bottom T rows of
/// `U` with column t removed and report its determinant magnitude. A single
/// share mixes the masks through one of these submatrices, so their
/// invertibility is what makes one share uninformative about `h`.
pub fn bottom_submatrix_nonsingular(params: &CodingParams) -> BottomDiagnostic {
    let n = params.share_count();
    if params.check_invariants().is_err() {
        // repeated interpolation node: the mixing system is singular outright
        return BottomDiagnostic {
            dets: vec![0.0; n],
            min_abs_det: 0.0,
            invertible: false,
        };
    }
    let u = encoding_matrix(params);
    let t = params.t;
    let mut dets = Vec::with_capacity(n);
    for drop_col in 0..n {
        let mut m = Vec::with_capacity(t * t);
        for row in u.iter().skip(1) {
            for (j, &cell) in row.iter().enumerate() {
                if j != drop_col {
                    m.push(cell);
                }
            }
        }
        dets.push(det(&mut m, t));
    }
    let min_abs_det = dets.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    BottomDiagnostic {
        dets,
        min_abs_det,
        invertible: min_abs_det > SINGULARITY_EPS,
    }
}

/// Determinant by LU with partial pivoting; `m` is row-major n x n scratch.
fn det(m: &mut [f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut sign = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if m[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            sign = -sign;
        }
        let inv = 1.0 / m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] * inv;
            for j in col..n {
                m[row * n + j] -= factor * m[col * n + j];
            }
        }
    }
    let mut d = sign;
    for i in 0..n {
        d *= m[i * n + i];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical_t1() -> CodingParams {
        generate_params(1, 0).unwrap()
    }

    /// Independent decode oracle: solve the Vandermonde system for the
    /// polynomial coefficients, then evaluate with Horner at beta_1.
    fn decode_via_vandermonde(bundle: &ShareBundle, params: &CodingParams) -> Vec<f64> {
        let n = params.share_count();
        let dim = bundle.dim();
        let mut out = vec![0.0; dim];
        for d in 0..dim {
            // a es the n x (n+1) augmented system in powers of alpha
            let mut a = vec![0.0; n * (n + 1)];
            for (r, &alpha) in params.alphas().iter().enumerate() {
                let mut p = 1.0;
                for c in 0..n {
                    a[r * (n + 1) + c] = p;
                    p *= alpha;
                }
                a[r * (n + 1) + n] = bundle.shares()[r][d];
            }
            // gaussian elimination with partial pivoting
            for col in 0..n {
                let mut piv = col;
                for row in col + 1..n {
                    if a[row * (n + 1) + col].abs() > a[piv * (n + 1) + col].abs() {
                        piv = row;
                    }
                }
                for j in 0..=n {
                    a.swap(col * (n + 1) + j, piv * (n + 1) + j);
                }
                let inv = 1.0 / a[col * (n + 1) + col];
                for row in 0..n {
                    if row != col {
                        let f = a[row * (n + 1) + col] * inv;
                        for j in col..=n {
                            a[row * (n + 1) + j] -= f * a[col * (n + 1) + j];
                        }
                    }
                }
            }
            let coeffs: Vec<f64> = (0..n)
                .map(|i| a[i * (n + 1) + n] / a[i * (n + 1) + i])
                .collect();
            let beta1 = params.betas()[0];
            let mut val = 0.0;
            for &c in coeffs.iter().rev() {
                val = val * beta1 + c;
            }
            out[d] = val;
        }
        out
    }

    #[test]
    fn params_canonical_points() {
        let p = canonical_t1();
        assert_eq!(p.alphas(), &[1.0, 2.0]);
        assert_eq!(p.betas(), &[3.0, 4.0]);
    }

    #[test]
    fn params_distinct_for_t3() {
        let p = generate_params(3, 7).unwrap();
        assert_eq!(p.alphas().len(), 4);
        assert_eq!(p.betas().len(), 4);
        p.check_invariants().unwrap();
    }

    #[test]
    fn params_deterministic() {
        let a = generate_params(1, 0).unwrap();
        let b = generate_params(1, 0).unwrap();
        assert_eq!(a.alphas(), b.alphas());
        assert_eq!(a.betas(), b.betas());
        assert_eq!(a.mask_seed(), b.mask_seed());
    }

    #[test]
    fn params_reject_t0() {
        assert!(matches!(generate_params(0, 0), Err(CodingError::ZeroThreshold)));
    }

    #[test]
    fn encode_matches_hand_worked_polynomial() {
        // g(x) = 5*(4-x)/(4-3)... anchored at betas {3,4} with mask 7 gives 2x-1
        let p = canonical_t1();
        let bundle = lcc_encode(&[5.0], &p, &[vec![7.0]]).unwrap();
        assert!((bundle.shares()[0][0] - 1.0).abs() < 1e-12);
        assert!((bundle.shares()[1][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn encode_zero_with_zero_masks_is_zero() {
        let p = generate_params(2, 0).unwrap();
        let bundle = lcc_encode(&[0.0, 0.0, 0.0], &p, &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        for share in bundle.shares() {
            assert!(share.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encode_second_hand_worked_case() {
        // h=10, mask 2: g(x) = -8x + 34
        let p = canonical_t1();
        let bundle = lcc_encode(&[10.0], &p, &[vec![2.0]]).unwrap();
        assert!((bundle.shares()[0][0] - 26.0).abs() < 1e-12);
        assert!((bundle.shares()[1][0] - 18.0).abs() < 1e-12);
    }

    #[test]
    fn encode_rejects_dimension_mismatch() {
        let p = canonical_t1();
        assert!(matches!(
            lcc_encode(&[1.0, 2.0], &p, &[vec![0.0]]),
            Err(CodingError::MaskDim { .. })
        ));
        assert!(matches!(
            lcc_encode(&[1.0], &p, &[]),
            Err(CodingError::MaskCount { .. })
        ));
    }

    #[test]
    fn decode_hand_worked_case() {
        let p = canonical_t1();
        let bundle = ShareBundle::from_shares(vec![vec![1.0], vec![3.0]]).unwrap();
        let out = lcc_decode(&bundle, &p).unwrap();
        assert!((out[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn decode_of_summed_bundles_is_sum_of_embeddings() {
        let p = canonical_t1();
        let mut a = lcc_encode(&[5.0], &p, &[vec![7.0]]).unwrap();
        let b = lcc_encode(&[10.0], &p, &[vec![2.0]]).unwrap();
        a.add_assign(&b).unwrap();
        assert_eq!(a.shares()[0], vec![27.0]);
        assert_eq!(a.shares()[1], vec![21.0]);
        let out = lcc_decode(&a, &p).unwrap();
        assert!((out[0] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn decode_with_zero_masks_returns_h_exactly() {
        for t in 1..=4 {
            let p = generate_params(t, 0).unwrap();
            let h: Vec<f64> = (0..9).map(|i| i as f64 * 0.37 - 1.0).collect();
            let masks = vec![vec![0.0; h.len()]; t];
            let bundle = lcc_encode(&h, &p, &masks).unwrap();
            let out = lcc_decode(&bundle, &p).unwrap();
            for (a, b) in out.iter().zip(&h) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decode_rejects_duplicate_alphas() {
        let mut p = canonical_t1();
        p.alphas[1] = p.alphas[0];
        let bundle = ShareBundle::from_shares(vec![vec![1.0], vec![3.0]]).unwrap();
        assert!(lcc_decode(&bundle, &p).is_err());
    }

    #[test]
    fn roundtrip_random_draws() {
        // decode(encode(h)) = h within 1e-9 relative, f64 semantics
        let mut stream = rng::stream(11);
        for t in 1..=4 {
            let p = generate_params(t, 5).unwrap();
            for rep in 0..25 {
                let dim = 1 + (rep % 17);
                let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 10.0)).collect();
                let masks = draw_masks(&p, dim, &[t as u64, rep as u64]);
                let bundle = lcc_encode(&h, &p, &masks).unwrap();
                let out = lcc_decode(&bundle, &p).unwrap();
                for (a, b) in out.iter().zip(&h) {
                    let scale = b.abs().max(1.0);
                    assert!(
                        (a - b).abs() / scale < 1e-9,
                        "t={t} rep={rep}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn additive_homomorphism_many_neighbors() {
        // decode(sum encode(h_v)) = sum h_v within 1e-6, up to 64 senders
        let mut stream = rng::stream(13);
        for &t in &[1usize, 3] {
            let p = generate_params(t, 9).unwrap();
            let dim = 64;
            let mut total = vec![0.0; dim];
            let mut agg = ShareBundle::zeros(p.share_count(), dim);
            for v in 0..64u64 {
                let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 3.0)).collect();
                for (acc, &x) in total.iter_mut().zip(&h) {
                    *acc += x;
                }
                let masks = draw_masks(&p, dim, &[v]);
                let bundle = lcc_encode(&h, &p, &masks).unwrap();
                agg.add_assign(&bundle).unwrap();
            }
            let out = lcc_decode(&agg, &p).unwrap();
            for (a, b) in out.iter().zip(&total) {
                let scale = b.abs().max(1.0);
                assert!((a - b).abs() / scale < 1e-6, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn decode_agrees_with_vandermonde_oracle() {
        let mut stream = rng::stream(17);
        for t in 1..=4 {
            let p = generate_params(t, 21).unwrap();
            let dim = 5;
            let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 2.0)).collect();
            let masks = draw_masks(&p, dim, &[99, t as u64]);
            let bundle = lcc_encode(&h, &p, &masks).unwrap();
            let ours = lcc_decode(&bundle, &p).unwrap();
            let oracle = decode_via_vandermonde(&bundle, &p);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_share_does_not_identify_h() {
        // explicit collision: (h, z) = (5, 7) and (1, 1) produce the same
        // first share 3h - 2z, so one share determines h only jointly with z
        let p = canonical_t1();
        let a = lcc_encode(&[5.0], &p, &[vec![7.0]]).unwrap();
        let b = lcc_encode(&[1.0], &p, &[vec![1.0]]).unwrap();
        assert!((a.shares()[0][0] - b.shares()[0][0]).abs() < 1e-12);
        assert!((a.shares()[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_matches_hand_worked_entries() {
        let p = canonical_t1();
        let u = encoding_matrix(&p);
        assert!((u[0][0] - 3.0).abs() < 1e-12);
        assert!((u[0][1] - 2.0).abs() < 1e-12);
        assert!((u[1][0] + 2.0).abs() < 1e-12);
        assert!((u[1][1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_route_reproduces_polynomial_route() {
        // columns of U applied to (h, masks) equal the encoded shares
        let mut stream = rng::stream(23);
        for t in 1..=4 {
            let p = generate_params(t, 3).unwrap();
            let dim = 7;
            let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 4.0)).collect();
            let masks = draw_masks(&p, dim, &[7, t as u64]);
            let bundle = lcc_encode(&h, &p, &masks).unwrap();
            let u = encoding_matrix(&p);
            for (k, share) in bundle.shares().iter().enumerate() {
                for d in 0..dim {
                    let mut via_matrix = u[0][k] * h[d];
                    for (j, mask) in masks.iter().enumerate() {
                        via_matrix += u[j + 1][k] * mask[d];
                    }
                    assert!(
                        (via_matrix - share[d]).abs() < 1e-9,
                        "t={t} share={k} dim={d}"
                    );
                }
            }
        }
    }

    #[test]
    fn matrix_t2_has_no_zero_entries() {
        let p = generate_params(2, 1).unwrap();
        let u = encoding_matrix(&p);
        for row in &u {
            for &cell in row {
                assert!(cell != 0.0);
            }
        }
    }

    #[test]
    fn bottom_submatrices_hand_worked_t1() {
        let p = canonical_t1();
        let diag = bottom_submatrix_nonsingular(&p);
        // dropping column 0 keeps entry -1, dropping column 1 keeps -2
        assert!((diag.dets[0] + 1.0).abs() < 1e-12);
        assert!((diag.dets[1] + 2.0).abs() < 1e-12);
        assert!(diag.invertible);
    }

    #[test]
    fn bottom_submatrices_nonsingular_for_random_valid_params() {
        for t in 1..=4 {
            for seed in 0..25 {
                let p = generate_params(t, seed).unwrap();
                let diag = bottom_submatrix_nonsingular(&p);
                assert!(
                    diag.invertible,
                    "t={t} seed={seed} min |det| {}",
                    diag.min_abs_det
                );
            }
        }
    }

    #[test]
    fn duplicated_beta_detected_as_singular() {
        let p = generate_params(2, 0).unwrap().corrupt_duplicate_beta();
        let diag = bottom_submatrix_nonsingular(&p);
        assert!(!diag.invertible, "min |det| {}", diag.min_abs_det);
    }
}
