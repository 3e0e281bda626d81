pub mod distributions;
pub mod data_io;
pub mod optim;
pub mod numeric;
pub mod mixture_model;
pub mod bma_model;
pub mod training;
pub mod climatology;
pub mod verification;
pub mod pipeline;
