use critical_ls::domain::{DomainModel, GridDomain};

#[test]
fn grid_robin_matches_ball_images() {
    let exact = DomainModel::unit_ball();
    let grid = DomainModel::grid(GridDomain::ball([0.0; 4], 1.0, 1.0 / 16.0).unwrap());
    for x in [[0.0; 4], [0.3, 0.0, 0.0, 0.0], [0.0, -0.2, 0.2, 0.0]] {
        let a = exact.robin_unchecked(&x).unwrap();
        let g = grid.robin_unchecked(&x).unwrap();
        assert!((g - a).abs() <= 0.02 * a, "{x:?}: {g} vs {a}");
    }
}

#[test]
fn grid_box_matches_image_series() {
    let exact = DomainModel::cuboid([0.0; 4], [1.0; 4]).unwrap();
    let grid = DomainModel::grid(GridDomain::cuboid([0.0; 4], [1.0; 4], 1.0 / 16.0).unwrap());
    for x in [[0.5; 4], [0.35, 0.5, 0.6, 0.5]] {
        let a = exact.robin_unchecked(&x).unwrap();
        let g = grid.robin_unchecked(&x).unwrap();
        assert!((g - a).abs() <= 0.02 * a, "{x:?}: {g} vs {a}");
    }
}
