pub mod gradcheck;
pub mod instances;
pub mod oracles;
