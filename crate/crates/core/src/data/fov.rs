use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use super::{Image, Mask};

const LUMINANCE_THRESHOLD: f64 = 25.0;
const CLOSING_RADIUS: isize = 5;

fn largest_component(m: &Mask) -> Mask {
    let (h, w) = (m.height, m.width);
    let mut label = vec![0u32; h * w];
    let mut best = (0usize, 0u32);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if m.data[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if m.data[q] == 1 && label[q] == 0 {
                    label[q] = next;
                    queue.push_back(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        if size > best.0 {
            best = (size, next);
        }
    }
    Mask {
        height: h,
        width: w,
        data: label.iter().map(|&l| (l != 0 && l == best.1) as u8).collect(),
    }
}

fn disk_offsets(r: isize) -> Vec<(isize, isize)> {
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Dilation (`grow`) or erosion by a structuring element. Pixels beyond the
/// border count as background for dilation and foreground for erosion, so
/// closing never shrinks the input.
fn morph(m: &Mask, offsets: &[(isize, isize)], grow: bool) -> Mask {
    let (h, w) = (m.height as isize, m.width as isize);
    let mut out = m.clone();
    for y in 0..h {
        for x in 0..w {
            let hit = offsets.iter().any(|&(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                let inside = yy >= 0 && xx >= 0 && yy < h && xx < w;
                let v = inside && m.data[(yy * w + xx) as usize] == 1;
                if grow {
                    v
                } else {
                    inside && !v
                }
            });
            out.data[(y * w + x) as usize] = if grow { hit as u8 } else { (!hit) as u8 };
        }
    }
    out
}

/// Field-of-view mask for datasets that ship without one: luminance above
/// 25/255, largest 4-connected component, then a morphological closing with a
/// disk of radius 5.
pub fn stare_fov(image: &Image) -> Mask {
    let n = image.height * image.width;
    let mut m = Mask::filled(image.height, image.width, false);
    for i in 0..n {
        let d = &image.data[i * 3..i * 3 + 3];
        let lum = 0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2];
        m.data[i] = (lum > LUMINANCE_THRESHOLD) as u8;
    }
    let m = largest_component(&m);
    let disk = disk_offsets(CLOSING_RADIUS);
    morph(&morph(&m, &disk, true), &disk, false)
}
