pub mod corpus;
pub mod evalharness;
pub mod introgen;
pub mod offline;
pub mod parallel;
pub mod providers;
pub mod recommend;
pub mod synthetic;
pub mod vectorindex;
