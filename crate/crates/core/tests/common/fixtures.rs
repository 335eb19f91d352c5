//! Tiny stand-ins for the public chest X-ray collections, laid out the way
//! the loader expects and with the published class counts.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

const SIDE: u32 = 24;

fn image16(seed: u32) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    ImageBuffer::from_fn(SIDE, SIDE, |x, y| {
        Luma([((x * 977 + y * 131 + seed * 7919) % 4096) as u16 * 16])
    })
}

/// Left or right lung: a rectangle on one half.
fn half_mask(side: u32, right: bool, size: u32) -> GrayImage {
    GrayImage::from_fn(size, size, |x, y| {
        let in_half = if right { x >= size / 2 + 1 } else { x + 1 < size / 2 };
        let inside = in_half && y >= size / 6 && y < size - size / 6 && x > 0 && x + 1 < size;
        Luma([if inside && side > 0 { 255 } else { 0 }])
    })
}

fn mkdirs(root: &Path, dirs: &[&str]) {
    for d in dirs {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
}

/// `MCX/`: 80 normal + 58 TB PNGs with separate left/right masks.
pub fn write_mcx(root: &Path) {
    let dir = root.join("MCX");
    mkdirs(&dir, &["images", "masks/left", "masks/right"]);
    for i in 0..138u32 {
        let id = format!("MCUCXR_{:04}_{}", i + 1, u32::from(i >= 80));
        image16(i).save(dir.join(format!("images/{id}.png"))).unwrap();
        half_mask(1, false, SIDE).save(dir.join(format!("masks/left/{id}.png"))).unwrap();
        half_mask(1, true, SIDE).save(dir.join(format!("masks/right/{id}.png"))).unwrap();
    }
}

/// `SCX/`: 300 normal + 360 TB, `<id>_mask.png` masks; every tenth image
/// has an empty mask and every fifteenth none at all, so curation has
/// something to reject.
pub fn write_scx(root: &Path) {
    let dir = root.join("SCX");
    mkdirs(&dir, &["images", "masks"]);
    for i in 0..660u32 {
        let id = format!("CHNCXR_{:04}_{}", i + 1, u32::from(i >= 300));
        image16(i).save(dir.join(format!("images/{id}.png"))).unwrap();
        if i % 15 == 14 {
            continue;
        }
        let side = u32::from(i % 10 != 9);
        half_mask(side, i % 2 == 0, SIDE)
            .save(dir.join(format!("masks/{id}_mask.png")))
            .unwrap();
    }
}

/// `JCX/`: 154 nodule + 93 normal raw big-endian `.IMG` files with
/// half-resolution GIF masks.
pub fn write_jcx(root: &Path) {
    let dir = root.join("JCX");
    mkdirs(&dir, &["images", "masks/left", "masks/right"]);
    let side = 2 * SIDE;
    for i in 0..247u32 {
        let id = if i < 154 {
            format!("JPCLN{:03}", i + 1)
        } else {
            format!("JPCNN{:03}", i - 153)
        };
        let bytes: Vec<u8> = (0..side * side)
            .flat_map(|p| (((p * 37 + i * 101) % 4096) as u16).to_be_bytes())
            .collect();
        std::fs::write(dir.join(format!("images/{id}.IMG")), bytes).unwrap();
        for (right, sub) in [(false, "left"), (true, "right")] {
            let rgba = image::DynamicImage::ImageLuma8(half_mask(1, right, SIDE)).to_rgba8();
            rgba.save(dir.join(format!("masks/{sub}/{id}.gif"))).unwrap();
        }
    }
}

pub fn write_all(root: &Path) {
    write_mcx(root);
    write_scx(root);
    write_jcx(root);
}
