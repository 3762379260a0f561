//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (degrees 3, 5, 7, 9, 13; Higham 2005).

use nalgebra::Matrix4;

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(a: &Matrix4<f64>) -> f64 {
    (0..4)
        .map(|j| (0..4).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_low(a: &Matrix4<f64>, b: &[f64]) -> Matrix4<f64> {
    let id = Matrix4::identity();
    let a2 = a * a;
    let mut u = Matrix4::zeros();
    let mut v = Matrix4::zeros();
    let mut pow = id;
    for k in (0..b.len()).step_by(2) {
        v += pow * b[k];
        u += pow * b[k + 1];
        pow *= a2;
    }
    let u = a * u;
    solve(&(v - u), &(v + u))
}

fn pade13(a: &Matrix4<f64>) -> Matrix4<f64> {
    let b = &B13;
    let id = Matrix4::identity();
    let a2 = a * a;
    let a4 = a2 * a2;
    let a6 = a4 * a2;
    let u = a * (a6 * (a6 * b[13] + a4 * b[11] + a2 * b[9])
        + a6 * b[7]
        + a4 * b[5]
        + a2 * b[3]
        + id * b[1]);
    let v = a6 * (a6 * b[12] + a4 * b[10] + a2 * b[8]) + a6 * b[6] + a4 * b[4] + a2 * b[2] + id * b[0];
    solve(&(v - u), &(v + u))
}

fn solve(q: &Matrix4<f64>, p: &Matrix4<f64>) -> Matrix4<f64> {
    // Q is well conditioned for the norms admitted by each degree
    q.lu().solve(p).expect("Padé denominator is nonsingular")
}

/// `exp(A)` for a 4×4 matrix.
pub fn expm(a: &Matrix4<f64>) -> Matrix4<f64> {
    let n = norm1(a);
    if n == 0.0 {
        return Matrix4::identity();
    }
    for &(deg, theta) in &THETA {
        if n <= theta {
            let b: &[f64] = match deg {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            return pade_low(a, b);
        }
    }
    let s = (n / THETA_13).log2().ceil().max(0.0) as i32;
    let scaled = a / 2f64.powi(s);
    let mut r = pade13(&scaled);
    for _ in 0..s {
        r = r * r;
    }
    r
}
