//! Criterion benchmarks for `lspd-core`. The benchmarks live in `benches/`;
//! run them with `cargo bench -p lspd-bench`.
