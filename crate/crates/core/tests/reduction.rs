use critical_ls::coupling::{all_profiles, CouplingModel, SyncProfile};
use critical_ls::domain::DomainModel;
use critical_ls::operator::{AnsatzState, Assembly, BasisParams};
use critical_ls::reduction::{energy, reduced_energy, RemainderParams};
use nalgebra::DMatrix;
use std::f64::consts::PI;

fn model(beta: DMatrix<f64>, dec: Vec<usize>) -> (CouplingModel, Vec<SyncProfile>) {
    let c = CouplingModel::new(beta, dec).unwrap();
    let p = all_profiles(&c).unwrap();
    (c, p)
}

fn ball() -> DomainModel {
    DomainModel::unit_ball().with_eta(1e-3).unwrap()
}

fn ansatz_energy(c: &CouplingModel, p: &[SyncProfile], dom: &DomainModel, lam: f64, deltas: Vec<f64>, xi: Vec<[f64; 4]>) -> f64 {
    let s = AnsatzState::from_deltas(vec![lam; c.m], deltas, xi, c, dom).unwrap();
    let asm = Assembly::new(&s, c, p, dom, &BasisParams::default()).unwrap();
    energy(&asm, None).total()
}

#[test]
fn leading_energy_of_a_group() {
    let dom = ball();
    for (beta, dec) in [
        (DMatrix::from_element(1, 1, 1.0), vec![0, 1]),
        (DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), vec![0, 2]),
    ] {
        let (c, p) = model(beta, dec);
        let j = ansatz_energy(&c, &p, &dom, 0.0, vec![1e-3], vec![[0.0; 4]]);
        let want = p[0].c_norm2() * 8.0 * PI * PI / 3.0;
        assert!((j / want - 1.0).abs() < 0.02, "{j} vs {want}");
    }
}

#[test]
fn energy_decreases_in_lambda() {
    let dom = ball();
    let (c, p) = model(DMatrix::from_element(1, 1, 1.0), vec![0, 1]);
    let j: Vec<f64> = [0.0, 0.01, 0.02].iter().map(|l| ansatz_energy(&c, &p, &dom, *l, vec![1e-2], vec![[0.0; 4]])).collect();
    assert!(j[1] < j[0] && j[2] < j[1]);
    // linear in λ with slope −½∫u²
    assert!(((j[0] - j[1]) - (j[1] - j[2])).abs() < 1e-10 * j[0]);
}

#[test]
fn uncoupled_groups_are_additive() {
    let dom = ball();
    let xi = vec![[0.4, 0.0, 0.0, 0.0], [-0.4, 0.0, 0.0, 0.0]];
    let (c2, p2) = model(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), vec![0, 1, 2]);
    let joint = ansatz_energy(&c2, &p2, &dom, 0.01, vec![1e-2, 1e-2], xi.clone());
    let (c1, p1) = model(DMatrix::from_element(1, 1, 1.0), vec![0, 1]);
    let parts: f64 = xi.iter().map(|x| ansatz_energy(&c1, &p1, &dom, 0.01, vec![1e-2], vec![*x])).sum();
    assert!((joint - parts).abs() < 1e-6 * parts, "{joint} vs {parts}");
}

#[test]
fn reduced_energy_stationary_at_ball_centre() {
    let dom = ball();
    let (c, p) = model(DMatrix::from_element(1, 1, 1.0), vec![0, 1]);
    let bp = BasisParams::default();
    let rp = RemainderParams::default();
    let at = |x: f64| {
        let s = AnsatzState::from_deltas(vec![1e-2], vec![1e-2], vec![[x, 0.0, 0.0, 0.0]], &c, &dom).unwrap();
        reduced_energy(&s, &c, &p, &dom, &bp, &rp).unwrap().value
    };
    let h = 1e-3;
    let j0 = at(0.0);
    let g = (at(h) - at(-h)) / (2.0 * h);
    assert!(g.abs() <= 1e-6 * j0, "gradient {g}");
    // while off-centre the Robin term tilts J̃
    let g1 = (at(0.3 + h) - at(0.3 - h)) / (2.0 * h);
    assert!(g1 > 0.0);
}
