//! A desk-scale laboratory for file-system key objects (FSKOs): heap or
//! stack fields of a toy kernel file subsystem whose corruption yields
//! privilege escalation.
//!
//! The pipeline has four stages, one module each:
//!
//! * [`ir`] — parses the `.fir` corpus language and computes field layouts.
//! * [`analysis`] — discovers anchor fields, propagates flag/reference
//!   semantics across layers, and finds page-bridge records.
//! * [`dynverify`] — interprets corpus entry functions against a modeled
//!   file world and differentially verifies candidates (record a field in a
//!   legitimate write, patch it into a read of a protected file, check the
//!   escalation predicates).
//! * [`heapsim`] — simulates buddy pages, slab caches and vulnerability
//!   write primitives; pairs capabilities with verified targets and drives
//!   page-UAF exploitation end to end.
//!
//! Built with `--features parallel` (the default), trial batches and
//! per-candidate verification fan out over rayon; without it everything
//! runs sequentially on one thread with identical results.

pub mod analysis;
pub mod dynverify;
pub mod heapsim;
pub mod ir;
pub mod par;
