//! Holds the `acceptance` test target, which checks every acceptance
//! criterion end to end and prints one verdict line per criterion. It lives
//! in its own package so the per-module suites of `microseg-core` all run
//! before it in a workspace test run.
