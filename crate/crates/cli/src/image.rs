use tofflow_core::Raster;

/// 8-bit grayscale PNG with `lo` mapped to black and `hi` to white.
pub fn grayscale_png(raster: &Raster, lo: f64, hi: f64) -> Vec<u8> {
    let (w, h) = raster.shape();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = raster
        .data()
        .iter()
        .map(|&v| {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            if t.is_nan() {
                0
            } else {
                (t * 255.0).round() as u8
            }
        })
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&pixels).expect("in-memory png data");
    }
    out
}

/// Places rasters of equal height next to each other.
pub fn side_by_side(rasters: &[&Raster]) -> Raster {
    let h = rasters.iter().map(|r| r.height()).max().unwrap_or(0);
    let w: usize = rasters.iter().map(|r| r.width()).sum();
    let mut out = Raster::zeros(w, h);
    let mut x0 = 0;
    for r in rasters {
        for y in 0..r.height() {
            for x in 0..r.width() {
                out.set(x0 + x, y, r.get(x, y));
            }
        }
        x0 += r.width();
    }
    out
}
