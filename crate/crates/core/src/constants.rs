//! Physical constants (CODATA 2018, SI units).
//!
//! | symbol | value | unit |
//! |---|---|---|
//! | μ_B | 9.2740100783e-24 | J/T |
//! | μ₀ | 1.25663706212e-6 | N/A² |
//! | ħ | 1.054571817e-34 | J·s |
//! | q | 1.602176634e-19 | C |
//! | k_B | 1.380649e-23 | J/K |
//!
//! The gyromagnetic ratio used throughout is γ = 2μ_Bμ₀/ħ ≈ 2.2101e5 m/(A·s).

pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
pub const VACUUM_PERMEABILITY: f64 = 1.256_637_062_12e-6;
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// γ = 2μ_Bμ₀/ħ in m/(A·s).
pub fn gyromagnetic_ratio() -> f64 {
    2.0 * BOHR_MAGNETON * VACUUM_PERMEABILITY / REDUCED_PLANCK
}
