use super::LabeledImage;

/// Map output pixel index to a source coordinate with pixel centers
/// aligned: `src = (dst + 0.5) * in / out - 0.5`.
pub(crate) fn center_aligned(dst: usize, out_len: usize, in_len: usize) -> f64 {
    if out_len == in_len {
        dst as f64
    } else {
        (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
    }
}

/// Bilinear sample of channel `c` at `(y, x)`; coordinates outside the
/// image are clamped to the nearest edge pixel.
pub(crate) fn sample_bilinear(img: &LabeledImage, y: f64, x: f64, out: &mut [f64]) {
    let (h, w) = (img.height(), img.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let px = img.pixels();
    for (c, o) in out.iter_mut().enumerate().take(3) {
        let at = |yy: usize, xx: usize| px[(yy * w + xx) * 3 + c];
        if fy == 0.0 && fx == 0.0 {
            *o = at(y0, x0);
            continue;
        }
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
        let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
}

/// Bilinear resize to `h x w`. Resizing to the current size is the identity.
pub fn resize(img: &LabeledImage, h: usize, w: usize) -> LabeledImage {
    assert!(h > 0 && w > 0, "resize to empty image");
    if (h, w) == (img.height(), img.width()) {
        return img.clone();
    }
    let mut px = vec![0.0; h * w * 3];
    for oy in 0..h {
        let sy = center_aligned(oy, h, img.height());
        for ox in 0..w {
            let sx = center_aligned(ox, w, img.width());
            let o = (oy * w + ox) * 3;
            sample_bilinear(img, sy, sx, &mut px[o..o + 3]);
        }
    }
    // bilinear weights are convex, so the range is preserved
    img.with_pixels(h, w, px, img.range())
}

/// Mirror left-right.
pub fn flip_horizontal(img: &LabeledImage) -> LabeledImage {
    let (h, w) = (img.height(), img.width());
    let src = img.pixels();
    let mut px = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let o = (y * w + x) * 3;
            px.extend_from_slice(&src[o..o + 3]);
        }
    }
    img.with_pixels(h, w, px, img.range())
}

/// Per-channel 256-bin histogram. Values are mapped to 8-bit levels by
/// rounding (after scaling by 255 for unit-range images).
pub fn channel_histogram(img: &LabeledImage) -> [[u64; 256]; 3] {
    let scale = 255.0 / img.range().max();
    let mut hist = [[0u64; 256]; 3];
    for px in img.pixels().chunks(3) {
        for c in 0..3 {
            let level = (px[c] * scale).round().clamp(0.0, 255.0) as usize;
            hist[c][level] += 1;
        }
    }
    hist
}

/// Mean of each channel, in the image's own range.
pub fn mean_rgb(img: &LabeledImage) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for px in img.pixels().chunks(3) {
        for c in 0..3 {
            acc[c] += px[c];
        }
    }
    let n = (img.height() * img.width()) as f64;
    acc.map(|v| v / n)
}

/// HSV (hue in degrees, s and v in `[0, 1]`) to RGB in `[0, 1]`.
pub fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue in degrees `[0, 360)` of an RGB triple (any consistent scale).
/// Achromatic colors return 0.
pub fn rgb_to_hue(rgb: [f64; 3]) -> f64 {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h * 60.0).rem_euclid(360.0)
}

#[cfg(test)]
mod tests {
    use super::super::ValueRange;
    use super::*;

    fn gradient_image(h: usize, w: usize) -> LabeledImage {
        let px = (0..h * w * 3).map(|i| (i * 37 % 256) as f64).collect();
        LabeledImage::new(h, w, px, ValueRange::Raw, 0, "a").unwrap()
    }

    #[test]
    fn resize_to_own_size_is_identity() {
        let img = gradient_image(7, 5);
        assert_eq!(resize(&img, 7, 5), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = LabeledImage::new(4, 6, vec![17.0; 72], ValueRange::Raw, 0, "a").unwrap();
        let r = resize(&img, 9, 3);
        assert_eq!((r.height(), r.width()), (9, 3));
        assert!(r.pixels().iter().all(|&v| (v - 17.0).abs() < 1e-12));
    }

    #[test]
    fn histogram_of_uniform_gray() {
        let img = LabeledImage::new(3, 4, vec![128.0; 36], ValueRange::Raw, 0, "g").unwrap();
        let h = channel_histogram(&img);
        for ch in &h {
            assert_eq!(ch[128], 12);
            assert_eq!(ch.iter().filter(|&&c| c > 0).count(), 1);
        }
    }

    #[test]
    fn histogram_sums_to_pixel_count() {
        let img = gradient_image(11, 13);
        for ch in channel_histogram(&img) {
            assert_eq!(ch.iter().sum::<u64>(), 11 * 13);
        }
        let unit = img.to_unit();
        assert_eq!(channel_histogram(&unit), channel_histogram(&img));
    }

    #[test]
    fn flip_is_an_involution() {
        let img = gradient_image(6, 9);
        let f = flip_horizontal(&img);
        assert_ne!(f, img);
        assert_eq!(flip_horizontal(&f), img);
        assert_eq!(f.pixel(2, 0, 1), img.pixel(2, 8, 1));
    }

    #[test]
    fn hue_round_trip() {
        for hue in [0.0, 30.0, 59.0, 120.0, 200.0, 300.0, 355.0] {
            let rgb = hsv_to_rgb(hue, 0.8, 0.9);
            assert!((rgb_to_hue(rgb) - hue).abs() < 1e-9, "{hue}");
        }
    }
}
