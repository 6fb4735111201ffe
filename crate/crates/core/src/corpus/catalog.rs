use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::race::RaceCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl FaceBox {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.width as u64 <= width as u64
            && self.y as u64 + self.height as u64 <= height as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub subject_id: String,
    pub race: RaceCategory,
    /// File path, or `synth://<id>` for synthetic rows.
    pub path: String,
    pub face_box: Option<FaceBox>,
    /// (width, height) in pixels.
    pub dims: Option<(u32, u32)>,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        if let (Some(b), Some((w, h))) = (self.face_box, self.dims) {
            if !b.fits_within(w, h) {
                return Err(Error::malformed(
                    "catalog row",
                    format!("face box of {} exceeds {w}x{h} image", self.image_id),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogRow {
    image_id: String,
    subject_id: String,
    race: String,
    path: String,
    box_x: Option<u32>,
    box_y: Option<u32>,
    box_w: Option<u32>,
    box_h: Option<u32>,
    img_w: Option<u32>,
    img_h: Option<u32>,
}

impl TryFrom<CatalogRow> for ImageRecord {
    type Error = Error;

    fn try_from(r: CatalogRow) -> Result<Self> {
        let face_box = match (r.box_x, r.box_y, r.box_w, r.box_h) {
            (Some(x), Some(y), Some(width), Some(height)) => Some(FaceBox {
                x,
                y,
                width,
                height,
            }),
            (None, None, None, None) => None,
            _ => {
                return Err(Error::malformed(
                    "catalog row",
                    format!("partial face box for {}", r.image_id),
                ))
            }
        };
        let dims = match (r.img_w, r.img_h) {
            (Some(w), Some(h)) => Some((w, h)),
            (None, None) => None,
            _ => {
                return Err(Error::malformed(
                    "catalog row",
                    format!("partial image size for {}", r.image_id),
                ))
            }
        };
        let rec = ImageRecord {
            race: r.race.parse()?,
            image_id: r.image_id,
            subject_id: r.subject_id,
            path: r.path,
            face_box,
            dims,
        };
        rec.validate()?;
        Ok(rec)
    }
}

impl From<&ImageRecord> for CatalogRow {
    fn from(r: &ImageRecord) -> Self {
        CatalogRow {
            image_id: r.image_id.clone(),
            subject_id: r.subject_id.clone(),
            race: r.race.name().to_string(),
            path: r.path.clone(),
            box_x: r.face_box.map(|b| b.x),
            box_y: r.face_box.map(|b| b.y),
            box_w: r.face_box.map(|b| b.width),
            box_h: r.face_box.map(|b| b.height),
            img_w: r.dims.map(|d| d.0),
            img_h: r.dims.map(|d| d.1),
        }
    }
}

/// Reads `image_id,subject_id,race,path,box_x,box_y,box_w,box_h,img_w,img_h`.
pub fn read_catalog(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<CatalogRow>()
        .map(|row| ImageRecord::try_from(row?))
        .collect()
}

pub fn write_catalog(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in records {
        w.serialize(CatalogRow::from(r))?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}
