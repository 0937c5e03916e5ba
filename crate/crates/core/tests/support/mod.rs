pub mod lmb_suites;
