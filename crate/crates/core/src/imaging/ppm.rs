//! Binary PPM (`P6`, maxval 255) reader and writer.

use std::io::Write;
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

pub fn write_ppm(img: &ImageBuffer, out: &mut impl Write) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height())?;
    out.write_all(img.pixels())?;
    Ok(())
}

pub fn write_ppm_file(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(img.pixels().len() + 32);
    write_ppm(img, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_ppm_file(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    read_ppm(&std::fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn header_number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return Err(Error::Truncated {
                    offset: self.pos,
                    expected: 1,
                });
            }
            return Err(Error::Malformed {
                offset: start,
                reason: format!("expected {what} as a decimal number"),
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        let value = text.parse::<usize>().map_err(|_| Error::Malformed {
            offset: start,
            reason: format!("{what} out of range"),
        })?;
        Ok((value, start))
    }
}

pub fn read_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < 2 {
        return Err(Error::Truncated {
            offset: bytes.len(),
            expected: 2 - bytes.len(),
        });
    }
    if &bytes[..2] != b"P6" {
        return Err(Error::BadMagic {
            offset: 0,
            expected: "P6".into(),
            found: String::from_utf8_lossy(&bytes[..2]).into_owned(),
        });
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let (width, wpos) = cur.header_number("width")?;
    let (height, hpos) = cur.header_number("height")?;
    let (maxval, mpos) = cur.header_number("maxval")?;
    if width == 0 {
        return Err(Error::Malformed {
            offset: wpos,
            reason: "width must be positive".into(),
        });
    }
    if height == 0 {
        return Err(Error::Malformed {
            offset: hpos,
            reason: "height must be positive".into(),
        });
    }
    if maxval != 255 {
        return Err(Error::Malformed {
            offset: mpos,
            reason: format!("maxval must be 255, got {maxval}"),
        });
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => {
            return Err(Error::Malformed {
                offset: cur.pos,
                reason: "expected a single whitespace byte after maxval".into(),
            })
        }
        None => {
            return Err(Error::Truncated {
                offset: cur.pos,
                expected: 1,
            })
        }
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Malformed {
            offset: wpos,
            reason: "image dimensions overflow".into(),
        })?;
    let data = &bytes[cur.pos..];
    if data.len() < need {
        return Err(Error::Truncated {
            offset: bytes.len(),
            expected: need - data.len(),
        });
    }
    ImageBuffer::new(width, height, data[..need].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn white_pixel_bytes() {
        let img = ImageBuffer::filled(1, 1, [255, 255, 255]);
        let mut buf = Vec::new();
        write_ppm(&img, &mut buf).unwrap();
        assert_eq!(
            buf,
            [0x50, 0x36, 0x0A, 0x31, 0x20, 0x31, 0x0A, 0x32, 0x35, 0x35, 0x0A, 0xFF, 0xFF, 0xFF]
        );
    }

    #[test]
    fn hand_built_two_by_two() {
        let mut file = b"P6\n# hand built\n2 2\n255\n".to_vec();
        file.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 0, 0, 0]);
        let img = read_ppm(&file).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.get(0, 0), [255, 0, 0]);
        assert_eq!(img.get(1, 0), [0, 255, 0]);
        assert_eq!(img.get(0, 1), [0, 0, 255]);
        assert_eq!(img.get(1, 1), [0, 0, 0]);
    }

    #[test]
    fn roundtrip_random() {
        let mut rng = SeededRng::new(1);
        for _ in 0..10 {
            let (w, h) = (1 + rng.below(20), 1 + rng.below(20));
            let px = (0..3 * w * h).map(|_| rng.below(256) as u8).collect();
            let img = ImageBuffer::new(w, h, px).unwrap();
            let mut buf = Vec::new();
            write_ppm(&img, &mut buf).unwrap();
            assert_eq!(read_ppm(&buf).unwrap(), img);
        }
    }

    #[test]
    fn errors_carry_offsets() {
        match read_ppm(b"P5\n1 1\n255\n\0") {
            Err(Error::BadMagic { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match read_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0") {
            Err(Error::Malformed { offset: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match read_ppm(b"P6\n2 1\n255\n\x01\x02\x03") {
            Err(Error::Truncated { offset: 14, expected: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match read_ppm(b"P6\nx 1\n255\n") {
            Err(Error::Malformed { offset: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
