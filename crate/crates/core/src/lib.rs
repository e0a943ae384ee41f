pub mod descriptor;
pub mod geomgraph;
pub mod koopman;
pub mod nn;
pub mod pretrain;
pub mod rigid;
pub mod vamphead;
pub mod rng;
pub mod scalelab;
pub mod trajio;
