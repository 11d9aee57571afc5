pub mod baseline;
pub mod cluster;
pub mod codec;
pub mod compiler;
pub mod dataset;
pub mod fabric;
pub mod fixed;
pub mod harness;
pub mod neuron;
pub mod noc;
pub mod oracle;
pub mod packet;
pub mod weight_store;
