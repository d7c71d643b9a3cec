//! Screenshots for SimWeb and adapters without a real browser: the element
//! tree drawn as a text grid with an 8x8 bitmap font.

use font8x8::UnicodeFonts;

use super::page::PageSnapshot;
use crate::digest::sha256_hex;

const MAX_COLS: usize = 72;
const LINE_PX: usize = 10;

pub fn grid_lines(snap: &PageSnapshot) -> Vec<String> {
    let mut lines = vec![format!("URL: {}", snap.url), format!("# {}", snap.title), String::new()];
    for ov in &snap.overlays {
        lines.push(format!("*** {} ***", ov.label));
    }
    for el in snap.elements.iter().filter(|e| e.visible) {
        let mut line = format!("[{}] {}", el.role.as_str(), el.label);
        if !el.text_value.is_empty() {
            line.push_str(": ");
            line.push_str(&el.text_value);
        }
        if !el.enabled {
            line.push_str(" (inactive)");
        }
        if !el.viewport {
            line.push_str(" (below)");
        }
        lines.push(line);
    }
    lines
}

/// Content address of the rendered image.
pub fn screenshot_ref(snap: &PageSnapshot) -> String {
    sha256_hex(grid_lines(snap).join("\n").as_bytes())
}

pub fn render_png(snap: &PageSnapshot) -> Vec<u8> {
    let lines: Vec<Vec<char>> = grid_lines(snap)
        .iter()
        .map(|l| l.chars().take(MAX_COLS).collect())
        .collect();
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let (w, h) = (cols * 8 + 8, lines.len().max(1) * LINE_PX + 8);
    let mut px = vec![255u8; w * h];
    for (row, line) in lines.iter().enumerate() {
        for (col, ch) in line.iter().enumerate() {
            let glyph = font8x8::BASIC_FONTS.get(*ch).or_else(|| font8x8::BASIC_FONTS.get('?'));
            let Some(glyph) = glyph else { continue };
            for (gy, bits) in glyph.iter().enumerate() {
                for gx in 0..8 {
                    if bits & (1 << gx) != 0 {
                        let (x, y) = (4 + col * 8 + gx, 4 + row * LINE_PX + gy);
                        px[y * w + x] = 0;
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(&px).expect("png data");
    }
    out
}
