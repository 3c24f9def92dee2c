//! Probability that a server committee stays within its fault budget.

use protofed::analysis::{security_probability, SecurityQuery};
use protofed::experiment::{sweep_security, write_security_csv};

fn main() -> protofed::Result<()> {
    for n in [4, 7, 10, 22, 31, 100] {
        let p = security_probability(SecurityQuery { servers: n, p_m: 0.1 })?;
        println!("N = {n:>3}, p_m = 0.1: {p:.6}");
    }
    let rows = sweep_security(4, 8, &[0.05, 0.2])?;
    let mut csv = Vec::new();
    write_security_csv(&mut csv, &rows)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
