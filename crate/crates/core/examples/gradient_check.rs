//! Check the fast kernels against their brute-force references.

fn main() -> flowprop::Result<()> {
    for report in flowprop::verify::run_all(0)? {
        println!("{report}");
    }
    Ok(())
}
