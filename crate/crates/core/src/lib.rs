pub mod closs;
pub mod cnf;
pub mod nn;
pub mod tasks;
pub mod tensor;
pub mod verify;
