//! Static output of `n`-approximations: SVG images and flat CSV records.

use std::fmt::Write as _;

use randcarpet::sampler::RectSet;

/// One filled `<rect>` per rectangle in generation order. The unit square
/// maps to a `width_px` square canvas with the y axis pointing up.
pub fn render_svg(rects: &RectSet, width_px: u32) -> String {
    let w = f64::from(width_px);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{width_px}" viewBox="0 0 {width_px} {width_px}">"#
    );
    for r in &rects.rects {
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="black"/>"#,
            r.x * w,
            (1.0 - r.y - r.h) * w,
            r.w * w,
            r.h * w
        );
    }
    s.push_str("</svg>\n");
    s
}

pub const RECT_HEADER: &str = "depth,x,y,w,h,log_w,log_h";

/// One CSV record per rectangle: `depth,x,y,w,h,log_w,log_h`.
pub fn rect_records(rects: &RectSet) -> String {
    let mut s = String::from(RECT_HEADER);
    s.push('\n');
    for r in &rects.rects {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", rects.depth, r.x, r.y, r.w, r.h, r.log_w, r.log_h);
    }
    s
}
