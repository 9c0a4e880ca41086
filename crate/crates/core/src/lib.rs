pub mod autotest;
pub mod bench;
pub mod fakes;
pub mod gateway;
pub mod parsers;
pub mod prompts;
pub mod runner;
pub mod session;
