//! Evolving populations of agentic workflows on the cost/performance plane.
//!
//! A workflow is a DAG of reasoning operators over model-invoking nodes
//! ([`genome`]). The [`evolution`] engine retrieves parents by tag
//! similarity ([`embedding`]), varies them, executes the local niche
//! ([`executor`]) and removes the individual with the worst indicator
//! fitness. [`provider::sim`] supplies an offline model pool and [`bench`]
//! the synthetic suites and front metrics.

pub mod bench;
pub mod canonical;
pub mod config;
pub mod embedding;
pub mod evolution;
pub mod executor;
pub mod genome;
pub mod memory;
pub mod provider;
pub mod repo;
pub mod snapshot;
pub mod template;
pub mod text;
