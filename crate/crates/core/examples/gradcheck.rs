//! Finite-difference checks of every graph operation and of the full model.

use tempoformer::cli::gradcheck_config;
use tempoformer::model::AblationFlags;
use tempoformer::tensor::op_gradient_suite;
use tempoformer::training::model_gradient_check;

fn main() -> tempoformer::Result<()> {
    for (name, r) in op_gradient_suite(0, 1e-6)? {
        println!("{name:<24} {:.2e} over {} coordinates", r.max_relative_error, r.coordinates);
    }
    println!("{:<24} {:>9} {:>9}", "model", "eps 1e-5", "eps 1e-4");
    for (label, flags) in AblationFlags::table() {
        let fine = model_gradient_check(&gradcheck_config(), flags, 2, 0, 1e-5)?;
        let coarse = model_gradient_check(&gradcheck_config(), flags, 2, 0, 1e-4)?;
        println!("{label:<24} {:>9.2e} {:>9.2e}", fine.max_relative_error, coarse.max_relative_error);
    }
    Ok(())
}
