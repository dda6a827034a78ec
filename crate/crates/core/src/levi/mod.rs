//! Levi iteration: Φ₁ = LZ, Φ_{ℓ+1} = Φ₁ ⋆ Φ_ℓ, Φ = Σ Φ_ℓ and
//! E = Z + Z ⋆ Φ.

mod convolve;
mod grid;
mod series;

pub use convolve::{
    beta_convolution_exact, beta_convolution_numeric, beta_convolution_reference, beta_factor, lemma_sweep, spacetime_convolve,
    AnalyticKernel, Convolver, SpaceTimeKernel, Spread, SweepCase,
};
pub use grid::{GridKernel, GridSpec};
pub use series::{
    fundamental_solution, fundamental_solution_with, levi_iterates, phi_series, phi_series_with, reproducing_check,
    reproducing_check_with, series_majorant_s, EnvelopeVariant, Evaluation, LeviOptions, LeviSolution, Majorant,
    ReproducingReport, SeriesOptions, SeriesValue, SolutionCache, StopRule, DEGENERATE_DT,
};
