pub mod dirac;
pub mod expr;
pub mod floats;
pub mod model;
pub mod observability;
pub mod optimizer;
pub mod oracles;
pub mod posterior;
pub mod quadrature;
