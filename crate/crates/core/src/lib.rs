pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod extraction;
pub mod gateway;
pub mod par;
pub mod prompting;
pub mod taxonomy;
