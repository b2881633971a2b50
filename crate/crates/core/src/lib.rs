pub mod align;
pub mod attribution;
pub mod bundle;
pub mod canonical;
pub mod config;
pub mod corpus;
pub mod env;
pub mod evidence;
pub mod exec;
pub mod ext_graph;
pub mod int_graph;
pub mod knowledge;
pub mod manifest;
pub mod parser;
pub mod revision;
pub mod scan;

#[cfg(test)]
mod testutil;
