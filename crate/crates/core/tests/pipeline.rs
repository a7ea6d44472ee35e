use fiberhom::capacity::{capacity_density, capacity_on_mesh, DensitySettings, MeshConstraints};
use fiberhom::cell::{ghom_on_mesh, CellLoad, CellRegime, CellSolver};
use fiberhom::energy::EnergyDensity;
use fiberhom::fem::SolverOptions;
use fiberhom::geometry::{mesh_annulus, mesh_cell, CrossSection, Grading, Mesh2D};
use fiberhom::limit1d::{fiber_energy, solve_fiber, uniform_grid, Coupling, FiberProblem, ForceTerms, PowerForm};
use fiberhom::regimes::{classify, AsymptoticLaw, DensityBranch, LimitDomain, RegimeReport, ScalingFamily, StiffnessLaw};
use proptest::prelude::*;

const SOLVER: SolverOptions = SolverOptions { tol: 1e-10, max_iter: 200 };

#[test]
fn classified_family_drives_a_fiber_solve() {
    // r = ε², l = ε²/(|S| r²) with p = 3: k = 1, κ = 0 and an indicator coupling
    let disc = CrossSection::unit_disc();
    let fam = ScalingFamily::symbolic(
        3.0,
        disc.area,
        AsymptoticLaw::power(1.0, 2.0),
        StiffnessLaw { law: AsymptoticLaw::power(1.0 / disc.area, 2.0), r_pow: -2.0 },
    );
    let rep = classify(&fam).unwrap();
    assert_eq!(rep.domain, LimitDomain::FiniteK);
    assert_eq!(rep.branch, DensityBranch::Indicator);

    let f = EnergyDensity::p_norm(1.0, 3.0).unwrap();
    let cfd = capacity_density(&f, &disc, &rep, &DensitySettings::default()).unwrap();
    let coupling = Coupling::from_density(&cfd).unwrap();
    assert_eq!(coupling, Coupling::Indicator);

    let g = EnergyDensity::isotropic(1.0, 1.0).unwrap();
    let mesh = mesh_cell(&disc, 0.1).unwrap();
    let q = CellSolver::new(&g, &mesh, disc.diameter, rep.k, CellRegime::FiniteK).unwrap().quadratic_form().unwrap();
    let x = uniform_grid(2.0, 21).unwrap();
    let u: Vec<[f64; 3]> = x.iter().map(|s| [0.1 * s, -0.2 * s, 0.05 * s]).collect();
    let forces = vec![ForceTerms { g0: [0.0, 0.0, 1.0], ..Default::default() }; x.len()];
    let fp = FiberProblem::new(&rep, x, Some(PowerForm::quadratic(q.clone()).unwrap()), coupling, u.clone(), forces, disc.tau)
        .unwrap();
    let sol = solve_fiber(&fp).unwrap();
    // the indicator pins the fiber to the matrix and forbids twist
    for ((v, ui), th) in sol.tuple.v.iter().zip(&u).zip(&sol.tuple.theta) {
        assert!((0..3).all(|k| (v[k] - ui[k]).abs() < 1e-12));
        assert!(th.abs() < 1e-12);
    }
    // J = ∫ Q₁₁ (∂v₃)² − ∫ v₃ on (0, 2) with v₃ = x/20
    let exact = q[0][0] * 0.05 * 0.05 * 2.0 - 0.05 * 2.0;
    assert!((sol.energy - exact).abs() < 1e-10, "{} vs {exact}", sol.energy);
    assert!((fiber_energy(&fp, &sol.tuple).unwrap() - sol.energy).abs() < 1e-12);
}

#[test]
fn quadratic_cell_solver_matches_direct_minimization() {
    let disc = CrossSection::unit_disc();
    let g = EnergyDensity::isotropic(0.4, 1.3).unwrap();
    let mesh = mesh_cell(&disc, 0.1).unwrap();
    let solver = CellSolver::new(&g, &mesh, disc.diameter, 2.5, CellRegime::FiniteKappa).unwrap();
    for l in [[1.0, 0.0, 0.5, 0.0], [0.2, -0.7, 0.0, 1.1], [0.3, 0.3, -0.4, 0.9]] {
        let load = CellLoad::from_slice(CellRegime::FiniteKappa, &l).unwrap();
        let (v, _, _) = solver.solve(&load).unwrap();
        let direct = ghom_on_mesh(&g, &mesh, disc.diameter, 2.5, load, SOLVER).unwrap().ghom_value;
        assert!((v - direct).abs() < 1e-9 * (1.0 + v), "{v} vs {direct}");
    }
}

#[test]
fn translation_coupling_reports_infinite_twist() {
    let disc = CrossSection::unit_disc();
    let rep = RegimeReport::from_limits(2.0, 1.0, 0.0, 1.0).unwrap();
    assert_eq!(rep.branch, DensityBranch::TranslationOnly);
    let f = EnergyDensity::isotropic(1.0, 1.0).unwrap();
    let settings = DensitySettings { h: 0.1, p2_ladder: vec![4, 5, 6], ..Default::default() };
    let cfd = capacity_density(&f, &disc, &rep, &settings).unwrap();
    assert!(cfd.eval([0.0; 3], 1.0).unwrap().finite().is_none());
    assert_eq!(cfd.eval([0.0; 3], 0.0).unwrap().finite(), Some(0.0));
    assert!(matches!(Coupling::from_density(&cfd).unwrap(), Coupling::TranslationOnly(_)));
}

fn coarse_annulus() -> (CrossSection, Mesh2D) {
    let disc = CrossSection::unit_disc();
    let mesh = mesh_annulus(&disc, 2.5, 0.35, Grading::log()).unwrap();
    (disc, mesh)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn capacity_is_p_homogeneous(
        a in prop::array::uniform3(-1.0f64..1.0),
        z in -1.0f64..1.0,
        t in 0.2f64..3.0,
        p in prop::sample::select(vec![1.5, 2.0, 3.0]),
    ) {
        let (disc, mesh) = coarse_annulus();
        let f = EnergyDensity::p_norm(1.0, p).unwrap();
        let none = MeshConstraints::default();
        let base = capacity_on_mesh(&f, &mesh, disc.diameter, a, [0.0, 0.0, z], &none, SOLVER).unwrap().value;
        let scaled = capacity_on_mesh(&f, &mesh, disc.diameter, a.map(|x| t * x), [0.0, 0.0, t * z], &none, SOLVER)
            .unwrap()
            .value;
        prop_assert!((scaled - t.powf(p) * base).abs() <= 1e-7 * (1.0 + scaled));
    }
}
