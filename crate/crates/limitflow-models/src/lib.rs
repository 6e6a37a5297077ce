pub mod classical_limit;
pub mod diagnostics;
pub mod fermion_rg;
pub mod mean_field;
pub mod spin_chain;
pub mod tensor;
pub mod thompson;
