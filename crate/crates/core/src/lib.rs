//! Verifier for the `.pir` featherweight parallel language: hybrid
//! concrete/symbolic interpretation, happens-before race and semaphore
//! checking, and equivalence of final symbolic memories.

pub mod equiv;
pub mod hbgraph;
pub mod interp;
pub mod lang;
pub mod memory;
pub mod par;
pub mod schedfuzz;
pub mod symval;
