use std::sync::LazyLock;

use crate::error::{Error, Result};

/// Coefficients of an explicit embedded Runge–Kutta pair.
///
/// `b` produces the propagated solution of order `order`, `b_hat` the
/// embedded solution of order `embedded_order` used for error estimation.
#[derive(Debug, Clone)]
pub struct ButcherTableau {
    pub name: &'static str,
    pub c: Vec<f64>,
    /// Strictly lower-triangular coupling coefficients, row `i` has `i` entries.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub order: u32,
    pub embedded_order: u32,
    /// First-same-as-last: the final stage is evaluated at the new solution.
    pub fsal: bool,
}

impl ButcherTableau {
    pub fn stages(&self) -> usize {
        self.c.len()
    }

    /// Checks Σb = 1, Σb̂ = 1, row-sum consistency and `order > embedded_order`.
    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        if self.a.len() != s || self.b.len() != s || self.b_hat.len() != s {
            return Err(Error::invalid(format!("{}: inconsistent stage counts", self.name)));
        }
        let tol = 1e-13;
        let sb: f64 = self.b.iter().sum();
        let sbh: f64 = self.b_hat.iter().sum();
        if (sb - 1.0).abs() > tol || (sbh - 1.0).abs() > tol {
            return Err(Error::invalid(format!("{}: weights do not sum to one", self.name)));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != i {
                return Err(Error::invalid(format!("{}: row {i} is not lower triangular", self.name)));
            }
            let rs: f64 = row.iter().sum();
            if (rs - self.c[i]).abs() > tol {
                return Err(Error::invalid(format!("{}: c[{i}] != Σ a[{i}][j]", self.name)));
            }
        }
        if self.order <= self.embedded_order {
            return Err(Error::invalid(format!("{}: order must exceed embedded order", self.name)));
        }
        Ok(())
    }
}

/// Tsitouras 5(4) pair, seven stages with FSAL.
pub static TSIT5: LazyLock<ButcherTableau> = LazyLock::new(|| {
    let a7 = vec![
        0.09646076681806523,
        0.01,
        0.4798896504144996,
        1.379008574103742,
        -3.290069515436081,
        2.324710524099774,
    ];
    let mut b = a7.clone();
    b.push(0.0);
    // b - b̂
    let btilde = [
        -0.00178001105222577714,
        -0.0008164344596567469,
        0.007880878010261995,
        -0.1447110071732629,
        0.5823571654525552,
        -0.45808210592918697,
        1.0 / 66.0,
    ];
    let b_hat = b.iter().zip(btilde).map(|(bi, ei)| bi - ei).collect();
    ButcherTableau {
        name: "Tsit5",
        c: vec![0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0],
        a: vec![
            vec![],
            vec![0.161],
            vec![-0.008480655492356989, 0.335480655492357],
            vec![2.897153057105493, -6.359448489975075, 4.3622954328695815],
            vec![
                5.325864828439257,
                -11.748883564062828,
                7.4955393428898365,
                -0.09249506636175525,
            ],
            vec![
                5.86145544294642,
                -12.92096931784711,
                8.159367898576159,
                -0.071584973281401,
                -0.028269050394068383,
            ],
            a7,
        ],
        b,
        b_hat,
        order: 5,
        embedded_order: 4,
        fsal: true,
    }
});

/// Fehlberg 7(8) pair, thirteen stages, propagating the eighth-order
/// solution. Used for ground-truth trajectories.
pub static FEHLBERG78: LazyLock<ButcherTableau> = LazyLock::new(|| {
    let r = |p: f64, q: f64| p / q;
    let a = vec![
        vec![],
        vec![r(2., 27.)],
        vec![r(1., 36.), r(1., 12.)],
        vec![r(1., 24.), 0.0, r(1., 8.)],
        vec![r(5., 12.), 0.0, r(-25., 16.), r(25., 16.)],
        vec![r(1., 20.), 0.0, 0.0, r(1., 4.), r(1., 5.)],
        vec![r(-25., 108.), 0.0, 0.0, r(125., 108.), r(-65., 27.), r(125., 54.)],
        vec![r(31., 300.), 0.0, 0.0, 0.0, r(61., 225.), r(-2., 9.), r(13., 900.)],
        vec![2.0, 0.0, 0.0, r(-53., 6.), r(704., 45.), r(-107., 9.), r(67., 90.), 3.0],
        vec![
            r(-91., 108.),
            0.0,
            0.0,
            r(23., 108.),
            r(-976., 135.),
            r(311., 54.),
            r(-19., 60.),
            r(17., 6.),
            r(-1., 12.),
        ],
        vec![
            r(2383., 4100.),
            0.0,
            0.0,
            r(-341., 164.),
            r(4496., 1025.),
            r(-301., 82.),
            r(2133., 4100.),
            r(45., 82.),
            r(45., 164.),
            r(18., 41.),
        ],
        vec![
            r(3., 205.),
            0.0,
            0.0,
            0.0,
            0.0,
            r(-6., 41.),
            r(-3., 205.),
            r(-3., 41.),
            r(3., 41.),
            r(6., 41.),
            0.0,
        ],
        vec![
            r(-1777., 4100.),
            0.0,
            0.0,
            r(-341., 164.),
            r(4496., 1025.),
            r(-289., 82.),
            r(2193., 4100.),
            r(51., 82.),
            r(33., 164.),
            r(12., 41.),
            0.0,
            1.0,
        ],
    ];
    let w7 = vec![
        r(41., 840.),
        0.0,
        0.0,
        0.0,
        0.0,
        r(34., 105.),
        r(9., 35.),
        r(9., 35.),
        r(9., 280.),
        r(9., 280.),
        r(41., 840.),
        0.0,
        0.0,
    ];
    let w8 = vec![
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        r(34., 105.),
        r(9., 35.),
        r(9., 35.),
        r(9., 280.),
        r(9., 280.),
        0.0,
        r(41., 840.),
        r(41., 840.),
    ];
    ButcherTableau {
        name: "Fehlberg78",
        c: vec![
            0.0,
            r(2., 27.),
            r(1., 9.),
            r(1., 6.),
            r(5., 12.),
            0.5,
            r(5., 6.),
            r(1., 6.),
            r(2., 3.),
            r(1., 3.),
            1.0,
            0.0,
            1.0,
        ],
        a,
        b: w8,
        b_hat: w7,
        order: 8,
        embedded_order: 7,
        fsal: false,
    }
});
