pub mod calibration;
pub mod controller;
pub mod error;
pub mod flexible;
pub mod harness;
pub mod manipulator;
pub mod ode;
pub mod sensor;
pub mod spacecraft;
pub mod spatial;
pub mod stability;
