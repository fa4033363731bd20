pub mod rescaling;
pub mod su2_chart;
