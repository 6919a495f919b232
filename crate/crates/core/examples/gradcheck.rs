//! Finite-difference check of every hand-written backward pass.

use paid_core::cli::cmd_gradcheck;
use paid_core::gradcheck::DEFAULT_SIZES;

fn main() -> paid_core::Result<()> {
    cmd_gradcheck(0, &DEFAULT_SIZES, Vec::new(), &mut std::io::stdout())?;
    Ok(())
}
