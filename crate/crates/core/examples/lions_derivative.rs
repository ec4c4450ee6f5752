//! Derivatives of Phi(mu) = <x, mu>^2 + <x^3, mu> and their numerical cross-checks.

use measure_flow::functional::{
    check_lift_gradient, check_linear_derivative_identity, evaluate, lions_derivative, lions_x_derivative,
    linear_derivative_diff, CylindricalFunctional,
};
use measure_flow::measure::{wasserstein2_1d, EmpiricalMeasure};
use measure_flow::polynomial::Polynomial;

fn main() -> measure_flow::Result<()> {
    let phi = CylindricalFunctional::squared(Polynomial::univariate(&[0.0, 1.0]))
        .sum(&CylindricalFunctional::moment_1d(3))?;
    let mu = EmpiricalMeasure::from_flat(1, vec![-1.0, 0.0, 0.5, 2.0])?;
    let nu = EmpiricalMeasure::from_flat(1, vec![-0.5, 0.3, 0.9, 1.1])?;

    println!("Phi(mu) = {}", evaluate(&phi, &mu)?);
    for x in [-1.0, 0.0, 1.0] {
        println!(
            "x = {x:>4}: d_mu Phi = {:>7.4}  d_x d_mu Phi = {:>7.4}",
            lions_derivative(&phi, &mu, &[x])?[0],
            lions_x_derivative(&phi, &mu, &[x])?[0]
        );
    }
    println!("dPhi/dmu(mu, 1) - dPhi/dmu(mu, 0) = {}", linear_derivative_diff(&phi, &mu, &[1.0], &[0.0])?);

    let v = [0.3, -1.0, 0.2, 0.7];
    for h in [1e-2, 1e-3, 1e-4] {
        println!("lift gradient error at h = {h:e}: {:.3e}", check_lift_gradient(&phi, &mu, &v, h)?);
    }
    println!(
        "Phi(mu) - Phi(nu) vs integrated linear derivative: {:.2e}",
        check_linear_derivative_identity(&phi, &mu, &nu, 4)?
    );
    println!("W2(mu, nu) = {:.4}", wasserstein2_1d(&mu, &nu)?);
    Ok(())
}
