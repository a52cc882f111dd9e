// Reverse-mode differentiation on the thread-local tape, including the
// symmetric eigen-decomposition used for covariance propagation.

use std::error::Error;

use gausscade::ad::{backward, reset, tape_len, Var};
use gausscade::math::{Mat3, Real, Vec3};

fn f(x: Var, y: Var) -> Var {
    (x * y + x.tanh()) / (y.exp() + Var::constant(1.0))
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    reset();
    let (x, y) = (Var::input(0.7), Var::input(-0.2));
    let out = f(x, y);
    let adj = backward(&[(out, 1.0)]);
    println!("f = {:.6}, tape holds {} nodes", out.val(), tape_len());

    let h = 1e-6;
    let fx = |a: f64, b: f64| {
        let v = f(Var::constant(a), Var::constant(b));
        v.val()
    };
    let dx = (fx(0.7 + h, -0.2) - fx(0.7 - h, -0.2)) / (2.0 * h);
    let dy = (fx(0.7, -0.2 + h) - fx(0.7, -0.2 - h)) / (2.0 * h);
    println!("df/dx tape {:.8} finite diff {:.8}", adj.wrt(x), dx);
    println!("df/dy tape {:.8} finite diff {:.8}", adj.wrt(y), dy);

    // Largest eigenvalue of a symmetric matrix, differentiated w.r.t. one entry.
    reset();
    let e = Var::input(0.3);
    let c = Var::constant;
    let m = Mat3::from_cols(
        Vec3::new(c(2.0), e, c(0.1)),
        Vec3::new(e, c(1.0), c(0.0)),
        Vec3::new(c(0.1), c(0.0), c(0.5)),
    );
    let (vals, _) = Var::sym_eigen(&m);
    let top = vals.to_array().into_iter().max_by(|a, b| a.val().total_cmp(&b.val())).unwrap();
    let g = backward(&[(top, 1.0)]).wrt(e);
    println!("largest eigenvalue {:.6}, d/d(offdiag) {:.6}", top.val(), g);
    reset();
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
