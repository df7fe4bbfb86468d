pub mod cli;
pub mod corpus;
pub mod encode;
pub mod expr;
pub mod nn;
pub mod probes;
pub mod seqenc;
pub mod stats;
pub mod strategy;
