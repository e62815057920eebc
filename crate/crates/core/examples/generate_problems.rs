//! Samples random Dirichlet problems and writes them as CSV and PGM.
//!
//! ```bash
//! cargo run --release --example generate_problems -- [size] [count] [out_dir]
//! ```

use std::path::PathBuf;

use heatnet::field::{make_problem, sample_boundary, write_field_csv, write_field_pgm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> heatnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let size = args.first().and_then(|s| s.parse().ok()).unwrap_or(32);
    let count = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let out = PathBuf::from(args.get(2).map_or("problems", String::as_str));
    std::fs::create_dir_all(&out).map_err(|e| heatnet::Error::InvalidArgument(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..count {
        let spec = sample_boundary(&mut rng, size)?;
        let problem = make_problem(&spec)?;
        write_field_csv(&problem, &out.join(format!("problem_{i}.csv")))?;
        write_field_pgm(&problem, &out.join(format!("problem_{i}.pgm")))?;
        println!(
            "problem {i}: top {:.2}  bottom {:.2}  left {:.2}  right {:.2}",
            spec.top, spec.bottom, spec.left, spec.right
        );
    }
    println!("wrote {count} {size}x{size} problems to {}", out.display());
    Ok(())
}
