//! The encoding matrix view of Lagrange coding and the invertibility
//! diagnostic of its mask-mixing submatrices.
//!
//! ```bash
//! cargo run --release --example encoding_matrix
//! ```

use hifgl::coding;

fn main() {
    let params = coding::generate_params(1, 0).unwrap();
    let u = coding::encoding_matrix(&params);
    println!("T=1 encoding matrix (rows: data, mask; cols: share index):");
    for row in &u {
        println!("  {row:?}");
    }
    // share_k = h * U[0][k] + z * U[1][k]
    let (h, z) = (5.0, 7.0);
    for k in 0..2 {
        println!(
            "  share {k} = {h}*{} + {z}*{} = {}",
            u[0][k],
            u[1][k],
            h * u[0][k] + z * u[1][k]
        );
    }

    for t in 1..=4 {
        let params = coding::generate_params(t, 3).unwrap();
        let diag = coding::bottom_submatrix_nonsingular(&params);
        println!(
            "T={t}: bottom submatrix dets {:?} -> invertible: {}",
            diag.dets
                .iter()
                .map(|d| (d * 1e6).round() / 1e6)
                .collect::<Vec<_>>(),
            diag.invertible
        );
        assert!(diag.invertible);
    }

    // an invariant-violating fixture is flagged as singular
    let corrupt = coding::generate_params(2, 0).unwrap().corrupt_duplicate_beta();
    let diag = coding::bottom_submatrix_nonsingular(&corrupt);
    println!(
        "duplicated beta fixture: min |det| = {} -> invertible: {}",
        diag.min_abs_det, diag.invertible
    );
    assert!(!diag.invertible);
}
