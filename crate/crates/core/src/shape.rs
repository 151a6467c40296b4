use std::fmt;

/// Dense 4-D layout: batch, channels, height, width, row-major in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat offset of element (n, c, h, w).
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn is_scalar(&self) -> bool {
        self.n == 1 && self.c == 1 && self.h == 1 && self.w == 1
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from(t: (usize, usize, usize, usize)) -> Shape {
        Shape::new(t.0, t.1, t.2, t.3)
    }
}
