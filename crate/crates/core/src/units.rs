// SPDX-License-Identifier: Apache-2.0

//! Frequency unit conversion.
//!
//! All internal math runs in angular frequency (rad/s). Files and the CLI
//! speak Hz. Conversions happen here and nowhere else.

use std::f64::consts::TAU;

/// Hz → rad/s.
#[inline]
pub fn hz_to_angular(f_hz: f64) -> f64 {
    TAU * f_hz
}

/// rad/s → Hz.
#[inline]
pub fn angular_to_hz(omega: f64) -> f64 {
    omega / TAU
}
