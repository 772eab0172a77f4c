//! Exact checks of the information inequalities behind the training
//! objective, on small discrete distributions where every expectation is a
//! finite sum.
//!
//! All quantities are in nats with `0·log 0 = 0`. Alphabets are capped at
//! [`MAX_ALPHABET`] symbols.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MAX_ALPHABET: usize = 5;

/// Returned in place of `-∞` when a variational table puts zero mass where the
/// true distribution does not.
pub const NEG_SENTINEL: f64 = -1e300;
/// Returned in place of `+∞` for the same reason in upper bounds.
pub const POS_SENTINEL: f64 = 1e300;

/// Largest tolerated violation of any inequality in a sweep.
pub const VIOLATION_TOL: f64 = 1e-9;
/// Tolerance for identities that hold exactly up to rounding.
pub const IDENTITY_TOL: f64 = 1e-10;

fn check_dist(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Argument(format!("{what}: entries must be finite and non-negative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!("{what}: entries sum to {s}, expected 1")));
    }
    Ok(())
}

fn check_conditional(table: &[f64], rows: usize, cols: usize, what: &str) -> Result<()> {
    if table.len() != rows * cols {
        return Err(Error::Shape(format!("{what}: expected {rows}x{cols} table")));
    }
    for r in 0..rows {
        check_dist(&table[r * cols..(r + 1) * cols], what)?;
    }
    Ok(())
}

/// Joint distribution `P(X, Y)` over finite alphabets, row-major in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    nx: usize,
    ny: usize,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(nx: usize, ny: usize, p: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || p.len() != nx * ny {
            return Err(Error::Shape(format!("joint table must be {nx}x{ny} and non-empty")));
        }
        check_dist(&p, "joint table")?;
        Ok(DiscreteJoint { nx, ny, p })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[x * self.ny + y]
    }

    pub fn table(&self) -> &[f64] {
        &self.p
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        (0..self.nx).map(|x| (0..self.ny).map(|y| self.get(x, y)).sum()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        (0..self.ny).map(|y| (0..self.nx).map(|x| self.get(x, y)).sum()).collect()
    }

    /// `P(y | x)`; rows with `P(x) = 0` are uniform.
    pub fn conditional_y_given_x(&self) -> Vec<f64> {
        let px = self.marginal_x();
        let mut out = vec![1.0 / self.ny as f64; self.nx * self.ny];
        for x in 0..self.nx {
            if px[x] > 0.0 {
                for y in 0..self.ny {
                    out[x * self.ny + y] = self.get(x, y) / px[x];
                }
            }
        }
        out
    }
}

/// `Σ p(x,y) log[p(x,y) / (p(x) p(y))]`.
pub fn exact_mi(joint: &DiscreteJoint) -> f64 {
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    let mut mi = 0.0;
    for x in 0..joint.nx {
        for y in 0..joint.ny {
            let p = joint.get(x, y);
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).ln();
            }
        }
    }
    mi
}

/// `KL(p ‖ q)`; `+∞` if `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| if b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

/// NWJ objective `E_p(x,y)[g] - E_p(x)p(y)[exp(g - 1)]` for a critic table
/// `g(x, y)`, by enumeration.
pub fn nwj_value(joint: &DiscreteJoint, critic: &[f64]) -> f64 {
    nwj_split(joint, critic, critic)
}

/// Same as [`nwj_value`] but with separate tables for the two expectations.
/// Only a mismatched pair can exceed the mutual information.
fn nwj_split(joint: &DiscreteJoint, g_joint: &[f64], g_product: &[f64]) -> f64 {
    assert_eq!(g_joint.len(), joint.nx * joint.ny, "critic table shape");
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    let mut first = 0.0;
    let mut second = 0.0;
    for x in 0..joint.nx {
        for y in 0..joint.ny {
            let k = x * joint.ny + y;
            let p = joint.p[k];
            if p > 0.0 {
                first += p * g_joint[k];
            }
            let q = px[x] * py[y];
            if q > 0.0 {
                second += q * (g_product[k] - 1.0).exp();
            }
        }
    }
    first - second
}

/// Critic at which the NWJ bound is tight: `1 + log[p(x,y) / (p(x)p(y))]`.
/// Cells with zero joint mass get `-∞`.
pub fn optimal_critic(joint: &DiscreteJoint) -> Vec<f64> {
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    (0..joint.nx * joint.ny)
        .map(|k| {
            let (x, y) = (k / joint.ny, k % joint.ny);
            let p = joint.p[k];
            if p > 0.0 {
                1.0 + (p / (px[x] * py[y])).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Lower bound `1 + E_p(y,z)[log Q1(y|z)/Q2(y)] - E_p(y)p(z)[Q1(y|z)/Q2(y)]`
/// with `z` the joint's `x` axis. `q1` is row-normalized over `y` per `z`.
pub fn prop1_bound(joint: &DiscreteJoint, q1: &[f64], q2: &[f64]) -> Result<f64> {
    check_conditional(q1, joint.nx, joint.ny, "Q1")?;
    check_conditional(q2, 1, joint.ny, "Q2")?;
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    let mut first = 0.0;
    let mut second = 0.0;
    for x in 0..joint.nx {
        for y in 0..joint.ny {
            let k = x * joint.ny + y;
            let p = joint.p[k];
            let prod = px[x] * py[y];
            if p > 0.0 || prod > 0.0 {
                if q2[y] == 0.0 {
                    log::warn!("Q2 vanishes where the data has mass; returning sentinel");
                    return Ok(NEG_SENTINEL);
                }
            }
            if p > 0.0 {
                if q1[k] == 0.0 {
                    log::warn!("Q1 vanishes where the data has mass; returning sentinel");
                    return Ok(NEG_SENTINEL);
                }
                first += p * (q1[k] / q2[y]).ln();
            }
            if prod > 0.0 {
                second += prod * q1[k] / q2[y];
            }
        }
    }
    Ok(1.0 + first - second)
}

/// Upper bound `E_p(x,y)[log p(y|x) / Q(y)]`, equal to `I(X;Y) + KL(p(y) ‖ Q)`.
pub fn variational_upper(joint: &DiscreteJoint, q: &[f64]) -> Result<f64> {
    check_conditional(q, 1, joint.ny, "Q")?;
    let px = joint.marginal_x();
    let mut total = 0.0;
    for x in 0..joint.nx {
        for y in 0..joint.ny {
            let p = joint.get(x, y);
            if p > 0.0 {
                if q[y] == 0.0 {
                    log::warn!("Q vanishes where p(y) > 0; returning sentinel");
                    return Ok(POS_SENTINEL);
                }
                total += p * ((p / px[x]) / q[y]).ln();
            }
        }
    }
    Ok(total)
}

/// Markov chain `X → Z1 → Z2` given by `P(X)` and two channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub px: Vec<f64>,
    /// `|X| × |Z1|`, rows `P(z1 | x)`.
    pub k1: Vec<f64>,
    pub n1: usize,
    /// `|Z1| × |Z2|`, rows `P(z2 | z1)`.
    pub k2: Vec<f64>,
    pub n2: usize,
}

impl MarkovChain {
    pub fn validate(&self) -> Result<()> {
        check_dist(&self.px, "P(X)")?;
        check_conditional(&self.k1, self.px.len(), self.n1, "P(Z1|X)")?;
        check_conditional(&self.k2, self.n1, self.n2, "P(Z2|Z1)")
    }

    fn joint_x_z1(&self) -> DiscreteJoint {
        let nx = self.px.len();
        let p = (0..nx * self.n1).map(|k| self.px[k / self.n1] * self.k1[k]).collect();
        DiscreteJoint { nx, ny: self.n1, p }
    }

    fn joint_x_z2(&self) -> DiscreteJoint {
        let nx = self.px.len();
        let mut p = vec![0.0; nx * self.n2];
        for x in 0..nx {
            for a in 0..self.n1 {
                let w = self.px[x] * self.k1[x * self.n1 + a];
                for b in 0..self.n2 {
                    p[x * self.n2 + b] += w * self.k2[a * self.n2 + b];
                }
            }
        }
        DiscreteJoint { nx, ny: self.n2, p }
    }
}

/// Returns `(I(X;Z2), I(X;Z1))`; the data processing inequality says the first
/// never exceeds the second.
pub fn dpi_chain_check(chain: &MarkovChain) -> Result<(f64, f64)> {
    chain.validate()?;
    Ok((exact_mi(&chain.joint_x_z2()), exact_mi(&chain.joint_x_z1())))
}

/// Three-way table `P(X, Za, Zb)`, row-major in `(x, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint3 {
    pub nx: usize,
    pub na: usize,
    pub nb: usize,
    pub p: Vec<f64>,
}

impl Joint3 {
    fn at(&self, x: usize, a: usize, b: usize) -> f64 {
        self.p[(x * self.na + a) * self.nb + b]
    }
}

/// `|I(X; Za,Zb) - I(X; Za) - I(X; Zb | Za)|`, each term computed separately.
pub fn chain_rule_check(j: &Joint3) -> Result<f64> {
    if j.p.len() != j.nx * j.na * j.nb {
        return Err(Error::Shape("three-way table has the wrong size".into()));
    }
    check_dist(&j.p, "three-way table")?;
    let whole = DiscreteJoint {
        nx: j.nx,
        ny: j.na * j.nb,
        p: j.p.clone(),
    };
    let mut pxa = vec![0.0; j.nx * j.na];
    let mut pab = vec![0.0; j.na * j.nb];
    let mut pa = vec![0.0; j.na];
    for x in 0..j.nx {
        for a in 0..j.na {
            for b in 0..j.nb {
                let p = j.at(x, a, b);
                pxa[x * j.na + a] += p;
                pab[a * j.nb + b] += p;
                pa[a] += p;
            }
        }
    }
    let first = DiscreteJoint {
        nx: j.nx,
        ny: j.na,
        p: pxa.clone(),
    };
    let mut conditional = 0.0;
    for x in 0..j.nx {
        for a in 0..j.na {
            for b in 0..j.nb {
                let p = j.at(x, a, b);
                if p > 0.0 {
                    conditional += p * (p * pa[a] / (pxa[x * j.na + a] * pab[a * j.nb + b])).ln();
                }
            }
        }
    }
    Ok((exact_mi(&whole) - exact_mi(&first) - conditional).abs())
}

// ----- randomized sweeps -----

fn random_dist(rng: &mut rng::Rng, n: usize, allow_zeros: bool) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n)
            .map(|_| {
                if allow_zeros && rng.random_bool(0.15) {
                    0.0
                } else {
                    -(1.0 - rng.random::<f64>()).ln()
                }
            })
            .collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
            return v;
        }
    }
}

fn random_conditional(rng: &mut rng::Rng, rows: usize, cols: usize, allow_zeros: bool) -> Vec<f64> {
    (0..rows).flat_map(|_| random_dist(rng, cols, allow_zeros)).collect()
}

fn alphabet(rng: &mut rng::Rng) -> usize {
    rng.random_range(2..=MAX_ALPHABET)
}

fn random_joint(rng: &mut rng::Rng) -> DiscreteJoint {
    let (nx, ny) = (alphabet(rng), alphabet(rng));
    DiscreteJoint::new(nx, ny, random_dist(rng, nx * ny, true)).expect("generated table is valid")
}

/// Outcome of one property sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    /// Largest amount by which the inequality was violated (0 if never).
    pub max_violation: f64,
    /// Largest deviation in the equality cases the sweep also checks.
    pub max_equality_error: f64,
    pub equality_tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub trials: usize,
    pub seed: u64,
    pub violation_tolerance: f64,
    pub properties: Vec<PropertyReport>,
    pub pass: bool,
}

/// Test hooks for [`verify_bounds`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Evaluate the NWJ joint term with a critic shifted by +1, which breaks
    /// the bound; used to check that violations are detected.
    pub corrupt_critic: bool,
}

struct Tracker {
    property: &'static str,
    trials: usize,
    max_violation: f64,
    max_equality_error: f64,
    equality_tolerance: f64,
}

impl Tracker {
    fn new(property: &'static str, equality_tolerance: f64) -> Self {
        Tracker {
            property,
            trials: 0,
            max_violation: 0.0,
            max_equality_error: 0.0,
            equality_tolerance,
        }
    }

    fn violation(&mut self, amount: f64) {
        // NaN counts as a violation
        self.max_violation = if amount.is_nan() { f64::INFINITY } else { self.max_violation.max(amount) };
    }

    fn equality(&mut self, err: f64) {
        self.max_equality_error = if err.is_nan() { f64::INFINITY } else { self.max_equality_error.max(err) };
    }

    fn finish(self) -> PropertyReport {
        let pass = self.max_violation <= VIOLATION_TOL && self.max_equality_error <= self.equality_tolerance;
        PropertyReport {
            property: self.property.to_string(),
            trials: self.trials,
            max_violation: self.max_violation,
            max_equality_error: self.max_equality_error,
            equality_tolerance: self.equality_tolerance,
            pass,
        }
    }
}

/// Runs all five randomized sweeps with `trials` draws each.
pub fn verify_bounds(trials: usize, seed: u64, opts: SweepOptions) -> Result<BoundsReport> {
    if trials == 0 {
        return Err(Error::Argument("trials must be at least 1".into()));
    }
    let mut props = Vec::with_capacity(5);

    // NWJ lower bound on I(X;Y), tight at the optimal critic.
    let mut t = Tracker::new("nwj_lower_bound", VIOLATION_TOL);
    for i in 0..trials {
        let mut r = rng::rng(rng::derive(seed, &[0, i as u64]));
        let joint = random_joint(&mut r);
        let mi = exact_mi(&joint);
        let n = joint.nx * joint.ny;
        let critic: Vec<f64> = if i % 2 == 0 {
            (0..n).map(|_| r.random_range(-3.0..3.0)).collect()
        } else {
            optimal_critic(&joint)
                .iter()
                .map(|&g| if g.is_finite() { g + r.random_range(-0.5..0.5) } else { -5.0 })
                .collect()
        };
        let g_star = optimal_critic(&joint);
        let (value, at_opt) = if opts.corrupt_critic {
            let shifted: Vec<f64> = critic.iter().map(|g| g + 1.0).collect();
            let shifted_opt: Vec<f64> = g_star.iter().map(|g| g + 1.0).collect();
            (nwj_split(&joint, &shifted, &critic), nwj_split(&joint, &shifted_opt, &g_star))
        } else {
            (nwj_value(&joint, &critic), nwj_value(&joint, &g_star))
        };
        t.violation(value - mi);
        t.violation(at_opt - mi);
        t.equality((at_opt - mi).abs());
        t.trials += 1;
    }
    props.push(t.finish());

    // Variational lower bound with conditional Q1 and marginal Q2.
    let mut t = Tracker::new("prop1_lower_bound", VIOLATION_TOL);
    for i in 0..trials {
        let mut r = rng::rng(rng::derive(seed, &[1, i as u64]));
        let joint = random_joint(&mut r);
        let mi = exact_mi(&joint);
        let q1 = random_conditional(&mut r, joint.nx, joint.ny, false);
        let q2 = random_dist(&mut r, joint.ny, false);
        t.violation(prop1_bound(&joint, &q1, &q2)? - mi);
        let truth = prop1_bound(&joint, &joint.conditional_y_given_x(), &joint.marginal_y())?;
        t.violation(truth - mi);
        t.equality((truth - mi).abs());
        t.trials += 1;
    }
    props.push(t.finish());

    // Variational upper bound; the gap must be exactly KL(p(y) ‖ Q).
    let mut t = Tracker::new("variational_upper_bound", IDENTITY_TOL);
    for i in 0..trials {
        let mut r = rng::rng(rng::derive(seed, &[2, i as u64]));
        let joint = random_joint(&mut r);
        let mi = exact_mi(&joint);
        let q = random_dist(&mut r, joint.ny, false);
        let upper = variational_upper(&joint, &q)?;
        t.violation(mi - upper);
        t.equality((upper - mi - kl_divergence(&joint.marginal_y(), &q)).abs());
        t.trials += 1;
    }
    props.push(t.finish());

    // Data processing inequality along X → Z1 → Z2.
    let mut t = Tracker::new("data_processing_inequality", VIOLATION_TOL);
    for i in 0..trials {
        let mut r = rng::rng(rng::derive(seed, &[3, i as u64]));
        let nx = r.random_range(2..=3);
        let n1 = r.random_range(2..=3);
        let n2 = r.random_range(2..=3);
        let chain = MarkovChain {
            px: random_dist(&mut r, nx, false),
            k1: random_conditional(&mut r, nx, n1, true),
            n1,
            k2: random_conditional(&mut r, n1, n2, true),
            n2,
        };
        let (i2, i1) = dpi_chain_check(&chain)?;
        t.violation(i2 - i1);
        // identity channel: equality
        let ident = MarkovChain {
            k2: (0..n1 * n1).map(|k| if k / n1 == k % n1 { 1.0 } else { 0.0 }).collect(),
            n2: n1,
            ..chain.clone()
        };
        let (e2, e1) = dpi_chain_check(&ident)?;
        t.equality((e2 - e1).abs());
        t.trials += 1;
    }
    props.push(t.finish());

    // Chain rule I(X;Za,Zb) = I(X;Za) + I(X;Zb|Za).
    let mut t = Tracker::new("mi_chain_rule", IDENTITY_TOL);
    for i in 0..trials {
        let mut r = rng::rng(rng::derive(seed, &[4, i as u64]));
        let (nx, na, nb) = (r.random_range(2..=3), r.random_range(2..=3), r.random_range(2..=3));
        let j = Joint3 {
            nx,
            na,
            nb,
            p: random_dist(&mut r, nx * na * nb, true),
        };
        let residual = chain_rule_check(&j)?;
        t.violation(residual - IDENTITY_TOL);
        t.equality(residual);
        t.trials += 1;
    }
    props.push(t.finish());

    let pass = props.iter().all(|p| p.pass);
    Ok(BoundsReport {
        trials,
        seed,
        violation_tolerance: VIOLATION_TOL,
        properties: props,
        pass,
    })
}
