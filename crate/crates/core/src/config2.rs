use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::Real;

/// A planar configuration (world coordinates, meters).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Config2<T>(pub [T; 2]);

impl<T: Real> Config2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Config2([x, y])
    }

    #[inline]
    pub fn x(&self) -> T {
        self.0[0]
    }

    #[inline]
    pub fn y(&self) -> T {
        self.0[1]
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> T {
        self.0[0] * other.0[0] + self.0[1] * other.0[1]
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.0[0].hypot(self.0[1])
    }

    #[inline]
    pub fn dist(&self, other: &Self) -> T {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0[0].is_finite() && self.0[1].is_finite()
    }

    /// `self + (other - self) * t`
    #[inline]
    pub fn lerp(&self, other: &Self, t: T) -> Self {
        Config2([
            self.0[0] + (other.0[0] - self.0[0]) * t,
            self.0[1] + (other.0[1] - self.0[1]) * t,
        ])
    }
}

impl<T: Real> Add for Config2<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Config2([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1]])
    }
}

impl<T: Real> Sub for Config2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Config2([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1]])
    }
}

impl<T: Real> Mul<T> for Config2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: T) -> Self {
        Config2([self.0[0] * rhs, self.0[1] * rhs])
    }
}

impl<T> Index<usize> for Config2<T> {
    type Output = T;
    #[inline]
    fn index(&self, axis: usize) -> &T {
        &self.0[axis]
    }
}

impl<T> IndexMut<usize> for Config2<T> {
    #[inline]
    fn index_mut(&mut self, axis: usize) -> &mut T {
        &mut self.0[axis]
    }
}

/// Axis-aligned world box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds<T> {
    pub min: Config2<T>,
    pub max: Config2<T>,
}

impl<T: Real> Bounds<T> {
    pub fn new(min: Config2<T>, max: Config2<T>) -> Self {
        Bounds { min, max }
    }

    pub fn extent(&self) -> Config2<T> {
        self.max - self.min
    }

    pub fn contains(&self, q: &Config2<T>) -> bool {
        (0..2).all(|a| q[a] >= self.min[a] && q[a] <= self.max[a])
    }

    pub fn clamp(&self, q: &Config2<T>) -> Config2<T> {
        Config2([
            q[0].max(self.min[0]).min(self.max[0]),
            q[1].max(self.min[1]).min(self.max[1]),
        ])
    }
}
