//! Debug overlay: detected dots and decoded ids drawn over the input.

use ct_kit::codebook::DotRole;
use ct_kit::{DecodedMarker, GrayImage, Point};
use image::{Rgb, RgbImage};

const FIXED: Rgb<u8> = Rgb([230, 40, 40]);
const CODE: Rgb<u8> = Rgb([40, 200, 60]);
const TEXT: Rgb<u8> = Rgb([30, 90, 230]);
const DOT: Rgb<u8> = Rgb([240, 180, 0]);

/// 3x5 bitmaps for 0-9, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn cross(img: &mut RgbImage, p: Point, half: i64, c: Rgb<u8>) {
    let (x, y) = (p.x.round() as i64, p.y.round() as i64);
    for d in -half..=half {
        put(img, x + d, y, c);
        put(img, x, y + d, c);
    }
}

fn text(img: &mut RgbImage, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
    for (k, ch) in s.chars().enumerate() {
        let Some(d) = ch.to_digit(10) else { continue };
        let ox = x + k as i64 * 4 * scale;
        for (row, bits) in DIGITS[d as usize].iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            put(img, ox + col * scale + dx, y + row as i64 * scale + dy, c);
                        }
                    }
                }
            }
        }
    }
}

pub fn draw(base: &GrayImage, dots: &[Point], markers: &[DecodedMarker]) -> RgbImage {
    let mut img = RgbImage::from_fn(base.width() as u32, base.height() as u32, |x, y| {
        let v = base.get(x as usize, y as usize);
        Rgb([v, v, v])
    });
    for &p in dots {
        cross(&mut img, p, 1, DOT);
    }
    for m in markers {
        for &(role, p) in &m.labeled_dots {
            let c = if matches!(role, DotRole::Slot(_)) { CODE } else { FIXED };
            cross(&mut img, p, 4, c);
        }
        if let Some(&(_, x0)) = m.labeled_dots.first() {
            text(&mut img, x0.x as i64 + 6, x0.y as i64 + 6, &m.id.to_string(), 2, TEXT);
        }
    }
    img
}
