use alloc::string::String;
use alloc::vec::Vec;

use super::calibrate::{CalibrationPoint, CalibrationSeries, CalibrationTable};

const H100_TOKENS: [usize; 10] = [64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768];
const H100_AR: [f64; 10] = [
    16.32, 20.64, 28.35, 43.84, 74.85, 136.00, 257.47, 500.54, 986.24, 1955.71,
];
const H100_RN: [f64; 10] = [
    8.32, 9.57, 12.06, 18.91, 29.82, 52.16, 96.29, 185.09, 361.54, 716.13,
];
const H100_AR_RN: [f64; 10] = [
    24.64, 30.21, 40.41, 62.75, 104.67, 188.16, 353.76, 685.63, 1347.78, 2671.84,
];
const H100_FUSED: [f64; 10] = [
    17.70, 22.53, 30.02, 46.46, 75.71, 137.34, 258.34, 502.24, 990.59, 1960.90,
];

const B200_TOKENS: [usize; 12] = [
    32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768, 65536,
];
const B200_AR: [f64; 12] = [
    26.08, 28.80, 32.29, 35.20, 45.55, 60.26, 95.86, 166.61, 305.78, 578.48, 1131.55, 2240.93,
];
const B200_RN: [f64; 12] = [
    14.46, 13.15, 14.67, 13.66, 15.38, 21.12, 31.62, 53.66, 93.38, 173.84, 333.02, 654.51,
];
const B200_AR_RN: [f64; 12] = [
    40.54, 41.95, 46.96, 48.86, 60.93, 81.38, 127.47, 220.27, 399.15, 752.32, 1464.58, 2895.44,
];
const B200_FUSED: [f64; 12] = [
    30.46, 32.45, 34.14, 39.18, 49.31, 63.62, 100.48, 170.14, 307.71, 581.55, 1130.69, 2236.02,
];

fn series(name: &str, tokens: &[usize], us: &[f64]) -> CalibrationSeries {
    CalibrationSeries {
        name: String::from(name),
        points: tokens
            .iter()
            .zip(us)
            .map(|(&tokens, &microseconds)| CalibrationPoint {
                tokens,
                microseconds,
            })
            .collect::<Vec<_>>(),
    }
}

/// 8xH100, hidden 8192, bf16.
pub(crate) fn h100_table() -> CalibrationTable {
    let t = &H100_TOKENS;
    CalibrationTable {
        name: String::from("h100-tp8"),
        hidden: 8192,
        bytes_per_element: 2,
        series: alloc::vec![
            series("allreduce", t, &H100_AR),
            series("rmsnorm", t, &H100_RN),
            series("allreduce+rmsnorm", t, &H100_AR_RN),
            series("fused", t, &H100_FUSED),
        ],
    }
}

/// 8xB200, hidden 8192, bf16.
pub(crate) fn b200_table() -> CalibrationTable {
    let t = &B200_TOKENS;
    CalibrationTable {
        name: String::from("b200-tp8"),
        hidden: 8192,
        bytes_per_element: 2,
        series: alloc::vec![
            series("allreduce", t, &B200_AR),
            series("rmsnorm", t, &B200_RN),
            series("allreduce+rmsnorm", t, &B200_AR_RN),
            series("fused", t, &B200_FUSED),
        ],
    }
}
