//! Joint multi-agent trajectory prediction with DAG-factorized conditional
//! normalizing flows.

pub mod evaljoint;
pub mod flow;
pub mod geom;
pub mod graphs;
pub mod model;
pub mod neural;
pub mod scene;
