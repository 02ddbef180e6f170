use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::{in_frame, Dataset, GrayImage, Sample, NUM_COORDS, NUM_PIXELS};
use crate::error::{Error, Result};

const IMAGE_COLUMN: &str = "Image";
const ID_COLUMN: &str = "ImageId";

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input)
}

fn parse_pixels(cell: &str, row: usize) -> Result<GrayImage> {
    let mut pixels = Vec::with_capacity(NUM_PIXELS);
    for tok in cell.split_ascii_whitespace() {
        let v: i64 = tok.parse().map_err(|_| Error::Parse {
            row,
            message: format!("non-integer pixel {tok:?}"),
        })?;
        if !(0..=255).contains(&v) {
            return Err(Error::Parse {
                row,
                message: format!("pixel {v} outside 0-255"),
            });
        }
        pixels.push(v as u8);
    }
    if pixels.len() != NUM_PIXELS {
        return Err(Error::Parse {
            row,
            message: format!("expected {NUM_PIXELS} pixels, found {}", pixels.len()),
        });
    }
    GrayImage::new(pixels)
}

fn parse_coord(cell: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        row,
        message: format!("column {column}: not a number: {cell:?}"),
    })?;
    if !in_frame(v) {
        return Err(Error::Parse {
            row,
            message: format!("column {column}: coordinate {v} outside [0, 96)"),
        });
    }
    Ok(Some(v))
}

fn check_width(record: &StringRecord, expected: usize, row: usize) -> Result<()> {
    if record.len() != expected {
        return Err(Error::Parse {
            row,
            message: format!("expected {expected} columns, found {}", record.len()),
        });
    }
    Ok(())
}

/// Parses the training layout: 30 coordinate columns then `Image`.
/// Row numbers in errors count data rows from 1.
pub fn parse_training_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    if header.len() != NUM_COORDS + 1 {
        return Err(Error::Parse {
            row: 0,
            message: format!(
                "header must have {} columns ({NUM_COORDS} coordinates + Image), found {}",
                NUM_COORDS + 1,
                header.len()
            ),
        });
    }
    if header.get(NUM_COORDS).map(str::trim) != Some(IMAGE_COLUMN) {
        return Err(Error::Parse {
            row: 0,
            message: "last header column must be Image".into(),
        });
    }
    let names: Vec<String> = header.iter().take(NUM_COORDS).map(|s| s.trim().to_string()).collect();

    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        check_width(&rec, NUM_COORDS + 1, row)?;
        let mut coords = [None; NUM_COORDS];
        for (c, slot) in coords.iter_mut().enumerate() {
            *slot = parse_coord(&rec[c], row, &names[c])?;
        }
        let image = parse_pixels(&rec[NUM_COORDS], row)?;
        samples.push(Sample::new(image, coords));
    }
    Ok(Dataset {
        samples,
        keypoint_names: names,
    })
}

/// Parses the test layout `ImageId,Image`; all keypoints come back missing.
pub fn parse_test_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Ok(Dataset::default());
    }
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != [ID_COLUMN, IMAGE_COLUMN] {
        return Err(Error::Parse {
            row: 0,
            message: format!("test header must be ImageId,Image, found {cols:?}"),
        });
    }
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        check_width(&rec, 2, row)?;
        let id: u32 = rec[0].trim().parse().map_err(|_| Error::Parse {
            row,
            message: format!("bad ImageId {:?}", &rec[0]),
        })?;
        let image = parse_pixels(&rec[1], row)?;
        samples.push(Sample {
            image,
            coords: [None; NUM_COORDS],
            image_id: Some(id),
        });
    }
    Ok(Dataset::new(samples))
}

fn pixels_cell(img: &GrayImage) -> String {
    let mut s = String::with_capacity(NUM_PIXELS * 4);
    for (i, p) in img.pixels().iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&p.to_string());
    }
    s
}

pub fn write_training_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    let mut header: Vec<&str> = ds.keypoint_names.iter().map(String::as_str).collect();
    header.push(IMAGE_COLUMN);
    w.write_record(&header)?;
    for s in &ds.samples {
        let mut rec: Vec<String> = s
            .coords
            .iter()
            .map(|c| c.map(|v| v.to_string()).unwrap_or_default())
            .collect();
        rec.push(pixels_cell(&s.image));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `ImageId,Image`; samples without an id are numbered from 1.
pub fn write_test_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record([ID_COLUMN, IMAGE_COLUMN])?;
    for (i, s) in ds.samples.iter().enumerate() {
        let id = s.image_id.unwrap_or(i as u32 + 1);
        w.write_record([id.to_string(), pixels_cell(&s.image)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{coordinate_columns, null_profile};

    fn header() -> String {
        let mut h = coordinate_columns().join(",");
        h.push_str(",Image\n");
        h
    }

    fn pixels(n: usize) -> String {
        (0..n).map(|i| (i % 256).to_string()).collect::<Vec<_>>().join(" ")
    }

    fn row(coords: &[&str], px: &str) -> String {
        format!("{},{}\n", coords.join(","), px)
    }

    #[test]
    fn two_rows_one_gap() {
        let full: Vec<String> = (0..30).map(|i| format!("{}.5", 10 + i)).collect();
        let full: Vec<&str> = full.iter().map(String::as_str).collect();
        let mut gap = full.clone();
        gap[4] = "";
        let text = format!("{}{}{}", header(), row(&full, &pixels(9216)), row(&gap, &pixels(9216)));
        let ds = parse_training_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        let p = null_profile(&ds);
        assert_eq!(p.with_missing, 1);
        assert_eq!(ds.samples[1].coords[4], None);
        assert_eq!(ds.samples[0].coords[0], Some(10.5));
        assert_eq!(ds.samples[0].image.get(5, 0), 5);
    }

    #[test]
    fn short_image_names_row() {
        let full: Vec<&str> = vec!["40"; 30];
        let text = format!("{}{}{}", header(), row(&full, &pixels(9216)), row(&full, &pixels(9215)));
        let err = parse_training_csv(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { row, message } => {
                assert_eq!(row, 2);
                assert!(message.contains("9215"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_pixels_rejected() {
        let full: Vec<&str> = vec!["40"; 30];
        let mut px = pixels(9215);
        px.push_str(" 256");
        let text = format!("{}{}", header(), row(&full, &px));
        assert!(matches!(
            parse_training_csv(text.as_bytes()),
            Err(Error::Parse { row: 1, .. })
        ));
        let mut px = pixels(9215);
        px.push_str(" 1.5");
        let text = format!("{}{}", header(), row(&full, &px));
        assert!(matches!(
            parse_training_csv(text.as_bytes()),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn wrong_column_count() {
        let short: Vec<&str> = vec!["40"; 29];
        let text = format!("{}{}", header(), row(&short, &pixels(9216)));
        assert!(matches!(
            parse_training_csv(text.as_bytes()),
            Err(Error::Parse { row: 1, .. })
        ));
        assert!(parse_training_csv("a,b,Image\n".as_bytes()).is_err());
    }

    #[test]
    fn crlf_accepted() {
        let full: Vec<&str> = vec!["40"; 30];
        let text = format!("{}{}", header(), row(&full, &pixels(9216))).replace('\n', "\r\n");
        assert_eq!(parse_training_csv(text.as_bytes()).unwrap().len(), 1);
    }

    #[test]
    fn test_file_layout() {
        let text = format!("ImageId,Image\n7,{}\n9,{}\n", pixels(9216), pixels(9216));
        let ds = parse_test_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[1].image_id, Some(9));
        assert!(ds.samples[0].coords.iter().all(Option::is_none));

        assert!(parse_test_csv("ImageId,Image\n".as_bytes()).unwrap().is_empty());
        assert!(parse_test_csv("".as_bytes()).unwrap().is_empty());

        let bad = format!("ImageId,Image\n1,{} x\n", pixels(9215));
        assert!(matches!(
            parse_test_csv(bad.as_bytes()),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn test_file_round_trip() {
        let text = format!("ImageId,Image\n3,{}\n", pixels(9216));
        let ds = parse_test_csv(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_test_csv(&ds, &mut buf).unwrap();
        assert_eq!(parse_test_csv(&buf[..]).unwrap(), ds);
    }
}
