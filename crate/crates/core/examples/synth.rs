//! Write a synthetic dataset: `cargo run -p segquery-core --example synth -- <dir> [seed]`.

use segquery_core::synthetic::{write_synthetic, SyntheticSpec};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "synthetic".into());
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let path = write_synthetic(
        &dir,
        &SyntheticSpec {
            seed,
            ..Default::default()
        },
    )?;
    println!("{}", path.display());
    Ok(())
}
