use crate::math::Vec2;

/// Camera-z depths, row-major, `+inf` for background.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthSample {
    pub depth: f64,
    /// The bilinear stencil touched background and the nearest foreground
    /// neighbor was used instead.
    pub fallback: bool,
}

impl DepthMap {
    pub fn background(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![f32::INFINITY; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.get(x, y).is_finite()
    }

    /// The four lattice neighbors of lattice point `(x, y)`, edge-clamped, with
    /// bilinear weights.
    fn stencil(&self, x: f64, y: f64) -> [((usize, usize), f64, f64); 4] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let d2 = |cx: usize, cy: usize| (cx as f64 - x).powi(2) + (cy as f64 - y).powi(2);
        [
            ((x0, y0), (1.0 - fx) * (1.0 - fy), d2(x0, y0)),
            ((x1, y0), fx * (1.0 - fy), d2(x1, y0)),
            ((x0, y1), (1.0 - fx) * fy, d2(x0, y1)),
            ((x1, y1), fx * fy, d2(x1, y1)),
        ]
    }

    /// Bilinear sample in lattice coordinates, where `(i, j)` is exactly the stored
    /// value of pixel `(i, j)`. Background in the stencil falls back to the nearest
    /// foreground neighbor; an all-background stencil gives `None`.
    pub fn sample_lattice(&self, x: f64, y: f64) -> Option<DepthSample> {
        let st = self.stencil(x, y);
        if st.iter().all(|((cx, cy), _, _)| self.is_foreground(*cx, *cy)) {
            let depth = st.iter().map(|((cx, cy), w, _)| self.get(*cx, *cy) as f64 * w).sum();
            return Some(DepthSample { depth, fallback: false });
        }
        // nearest foreground neighbor; the stencil order breaks distance ties
        st.iter()
            .filter(|((cx, cy), _, _)| self.is_foreground(*cx, *cy))
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .map(|((cx, cy), _, _)| DepthSample {
                depth: self.get(*cx, *cy) as f64,
                fallback: true,
            })
    }

    /// Bilinear sample at image coordinate `p` (pixel centers at half-integers).
    pub fn sample_bilinear(&self, p: Vec2) -> Option<DepthSample> {
        self.sample_lattice(p.x - 0.5, p.y - 0.5)
    }

    /// Largest finite depth among the stencil of image coordinate `p`, used as the
    /// conservative occlusion reference for visibility tests.
    pub fn stencil_max(&self, p: Vec2) -> Option<f64> {
        self.stencil(p.x - 0.5, p.y - 0.5)
            .iter()
            .map(|((cx, cy), _, _)| self.get(*cx, *cy))
            .filter(|d| d.is_finite())
            .map(|d| d as f64)
            .reduce(f64::max)
    }
}
