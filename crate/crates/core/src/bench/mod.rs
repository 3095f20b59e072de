//! Benchmark harness: synthetic workloads, reuse comparison and Apdex.

pub mod apdex;
pub mod compare;
pub mod workload;

pub use apdex::{apdex, Apdex, ApdexError, DEFAULT_APDEX_THRESHOLD_MS};
pub use compare::{auto_select, bench_compare, check_all, replay, ArmReport, BenchError, BenchReport, CompareOptions};
pub use workload::{gen_workload, int_state, random_dag, random_dag_catalog, synthetic_module, Workload, WorkloadError, WorkloadSpec};
