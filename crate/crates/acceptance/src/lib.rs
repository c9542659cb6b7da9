//! Holds the `acceptance` test target, which prints one PASS or FAIL line per
//! criterion and fails if any criterion fails.
