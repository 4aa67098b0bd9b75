pub mod corpus;
pub mod evaluation;
pub mod label;
pub mod llm;
pub mod prompts;
pub mod rules;
pub mod types;

pub use types::{Decision, Explanation, Prediction, Strategy};
