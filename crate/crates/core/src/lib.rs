pub mod corpus;
pub mod embedding;
pub mod exec;
pub mod index;
pub mod transport;
pub mod lexical;
pub mod retrieval;
pub mod generation;
pub mod evaluation;
pub mod synthetic;
