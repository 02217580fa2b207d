//! Label maps, single-class masks and the algebra between them.

pub mod pnm;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_ID: u8 = 255;

/// The nineteen evaluation classes of the Cityscapes benchmark, by train id.
pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
}

#[derive(Serialize, Deserialize)]
struct ClassTableDoc {
    #[serde(default = "default_ignore")]
    ignore_id: u8,
    classes: Vec<ClassEntry>,
}

fn default_ignore() -> u8 {
    DEFAULT_IGNORE_ID
}

/// Ordered set of semantic classes plus the id reserved for unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ClassTableDoc", into = "ClassTableDoc")]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
    ignore_id: u8,
    index: Box<[Option<u8>; 256]>,
}

impl From<ClassTable> for ClassTableDoc {
    fn from(t: ClassTable) -> Self {
        ClassTableDoc {
            ignore_id: t.ignore_id,
            classes: t.entries,
        }
    }
}

impl TryFrom<ClassTableDoc> for ClassTable {
    type Error = Error;

    fn try_from(doc: ClassTableDoc) -> Result<Self> {
        ClassTable::new(doc.classes, doc.ignore_id)
    }
}

impl ClassTable {
    pub fn new(entries: Vec<ClassEntry>, ignore_id: u8) -> Result<Self> {
        if entries.len() > 255 {
            return Err(Error::ClassTable("more than 255 classes".into()));
        }
        let mut index = Box::new([None; 256]);
        let mut names = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.id == ignore_id {
                return Err(Error::ClassTable(format!(
                    "class {:?} uses the ignore id {ignore_id}",
                    e.name
                )));
            }
            if index[e.id as usize].is_some() {
                return Err(Error::ClassTable(format!("duplicate class id {}", e.id)));
            }
            if !names.insert(e.name.as_str()) {
                return Err(Error::ClassTable(format!("duplicate class name {:?}", e.name)));
            }
            index[e.id as usize] = Some(i as u8);
        }
        Ok(ClassTable {
            entries,
            ignore_id,
            index,
        })
    }

    /// Cityscapes evaluation classes with ids 0..=18 and ignore id 255.
    pub fn cityscapes() -> Self {
        let entries = CITYSCAPES_CLASSES
            .iter()
            .enumerate()
            .map(|(id, name)| ClassEntry {
                id: id as u8,
                name: (*name).to_string(),
            })
            .collect();
        ClassTable::new(entries, DEFAULT_IGNORE_ID).expect("static table is valid")
    }

    /// The sub-table with only the listed ids, in this table's order.
    pub fn subset(&self, ids: &[u8]) -> Result<Self> {
        for id in ids {
            if !self.contains(*id) {
                return Err(Error::ClassTable(format!("class id {id} not in table")));
            }
        }
        let entries = self
            .entries
            .iter()
            .filter(|e| ids.contains(&e.id))
            .cloned()
            .collect();
        ClassTable::new(entries, self.ignore_id)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("class table serializes")
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ignore_id(&self) -> u8 {
        self.ignore_id
    }

    pub fn contains(&self, id: u8) -> bool {
        self.index[id as usize].is_some()
    }

    /// Position of `id` in the table.
    pub fn index_of(&self, id: u8) -> Option<usize> {
        self.index[id as usize].map(usize::from)
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.index_of(id).map(|i| self.entries[i].name.as_str())
    }

    pub fn id_by_name(&self, name: &str) -> Option<u8> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    /// Distinct ids in `map` that are neither classes nor the ignore id.
    pub fn unknown_ids(&self, map: &LabelMap) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &map.data {
            seen[v as usize] = true;
        }
        (0..=255u8)
            .filter(|&v| seen[v as usize] && v != self.ignore_id && !self.contains(v))
            .collect()
    }

    pub fn validate(&self, map: &LabelMap) -> Result<()> {
        let ids = self.unknown_ids(map);
        if ids.is_empty() {
            Ok(())
        } else {
            Err(Error::UnknownClasses { ids })
        }
    }
}

/// Dense row-major raster of class ids.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LabelMap({}x{})", self.width, self.height)?;
        if self.data.len() <= 64 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Composition(format!(
                "label map must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Composition(format!(
                "{width}x{height} label map needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, class_id: u8) -> Result<Self> {
        LabelMap::new(width, height, vec![class_id; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn contains_class(&self, class_id: u8) -> bool {
        self.data.contains(&class_id)
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.data.iter().filter(|&&v| v == class_id).count()
    }
}

/// Decodes a binary PGM (P5, maxval 255) label raster.
///
/// Values are taken as-is; use [`ClassTable::validate`] to reject ids the
/// table does not know.
pub fn load_labelmap(bytes: &[u8]) -> Result<LabelMap> {
    let r = pnm::decode_p5(bytes)?;
    LabelMap::new(r.width, r.height, r.samples)
}

pub fn save_labelmap(map: &LabelMap) -> Vec<u8> {
    pnm::encode_p5(map.width, map.height, &map.data)
}

/// Pixel set of one class, in the coordinates of the frame it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    class_id: u8,
    width: usize,
    height: usize,
    /// `(x, y)` pairs sorted by row then column, without duplicates.
    pixels: Vec<(u32, u32)>,
    source_id: String,
}

impl Mask {
    pub fn new(
        class_id: u8,
        width: usize,
        height: usize,
        mut pixels: Vec<(u32, u32)>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if let Some(&(x, y)) = pixels
            .iter()
            .find(|&&(x, y)| x as usize >= width || y as usize >= height)
        {
            return Err(Error::Mask(format!(
                "pixel ({x}, {y}) outside {width}x{height} frame"
            )));
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        if pixels.is_empty() {
            return Err(Error::Mask("mask has no pixels".into()));
        }
        Ok(Mask {
            class_id,
            width,
            height,
            pixels,
            source_id: source_id.into(),
        })
    }

    pub fn class_id(&self) -> u8 {
        self.class_id
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }
}

/// Splits `map` into one mask per class present, ascending by class id.
/// Ignore pixels belong to no mask.
pub fn separate(map: &LabelMap, table: &ClassTable) -> Result<Vec<Mask>> {
    table.validate(map)?;
    let mut buckets: Vec<Vec<(u32, u32)>> = vec![Vec::new(); 256];
    for y in 0..map.height {
        for x in 0..map.width {
            let v = map.get(x, y);
            if v != table.ignore_id() {
                buckets[v as usize].push((x as u32, y as u32));
            }
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .filter(|(_, px)| !px.is_empty())
        .map(|(id, pixels)| Mask {
            class_id: id as u8,
            width: map.width,
            height: map.height,
            pixels,
            source_id: String::new(),
        })
        .collect())
}

/// Paints `masks` in order over a canvas of `fill`; later masks win.
pub fn compose(masks: &[Mask], width: usize, height: usize, fill: u8) -> Result<LabelMap> {
    let mut out = LabelMap::filled(width, height, fill)?;
    for m in masks {
        if m.dims() != (width, height) {
            return Err(Error::Composition(format!(
                "mask of class {} has frame {:?}, target is {:?}",
                m.class_id,
                m.dims(),
                (width, height)
            )));
        }
        paint(&mut out, m);
    }
    Ok(out)
}

/// Copy of `base` with the mask's pixels set to its class.
pub fn overlay(base: &LabelMap, mask: &Mask) -> Result<LabelMap> {
    if mask.dims() != base.dims() {
        return Err(Error::Overlay {
            mask: mask.dims(),
            base: base.dims(),
        });
    }
    let mut out = base.clone();
    paint(&mut out, mask);
    Ok(out)
}

fn paint(map: &mut LabelMap, mask: &Mask) {
    for &(x, y) in &mask.pixels {
        map.set(x as usize, y as usize, mask.class_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> ClassTable {
        ClassTable::cityscapes()
    }

    fn arb_map() -> impl Strategy<Value = LabelMap> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop_oneof![0u8..19, Just(255u8)], w * h)
                .prop_map(move |d| LabelMap::new(w, h, d).unwrap())
        })
    }

    #[test]
    fn decode_examples() {
        let m = load_labelmap(b"P5 2 1 255\n\x07\xff").unwrap();
        assert_eq!(m.dims(), (2, 1));
        assert_eq!(m.data(), &[7, 255]);
        let m = load_labelmap(b"P5\n1 1\n255\n\x00").unwrap();
        assert_eq!(m.data(), &[0]);
    }

    #[test]
    fn canonical_encoding() {
        let m = LabelMap::new(1, 1, vec![3]).unwrap();
        let bytes = save_labelmap(&m);
        assert_eq!(bytes, b"P5\n1 1\n255\n\x03");
        assert_eq!(bytes, save_labelmap(&m));
    }

    #[test]
    fn unknown_ids_are_reported() {
        let m = load_labelmap(b"P5\n4 1\n255\n\x00\x63\x14\x63").unwrap();
        assert_eq!(m.data(), &[0, 99, 20, 99]);
        match table().validate(&m) {
            Err(Error::UnknownClasses { ids }) => assert_eq!(ids, vec![20, 99]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            separate(&m, &table()),
            Err(Error::UnknownClasses { .. })
        ));
    }

    #[test]
    fn class_table_json() {
        let t = ClassTable::from_json(
            r#"{"ignore_id":255,"classes":[{"id":0,"name":"road"},{"id":10,"name":"sky"}]}"#,
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.index_of(10), Some(1));
        assert_eq!(t.name(0), Some("road"));
        let again = ClassTable::from_json(&t.to_json()).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn class_table_invariants() {
        let e = |id: u8, name: &str| ClassEntry {
            id,
            name: name.into(),
        };
        assert!(ClassTable::new(vec![e(1, "a"), e(1, "b")], 255).is_err());
        assert!(ClassTable::new(vec![e(1, "a"), e(2, "a")], 255).is_err());
        assert!(ClassTable::new(vec![e(0, "a")], 0).is_err());
        assert!(ClassTable::from_json(r#"{"classes":[{"id":255,"name":"x"}]}"#).is_err());
    }

    #[test]
    fn separate_uniform_and_ignore() {
        let m = LabelMap::filled(5, 3, 5).unwrap();
        let masks = separate(&m, &table()).unwrap();
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].class_id(), 5);
        assert_eq!(masks[0].pixel_count(), 15);

        let m = LabelMap::filled(4, 4, 255).unwrap();
        assert!(separate(&m, &table()).unwrap().is_empty());
    }

    #[test]
    fn compose_edge_cases() {
        let m = compose(&[], 3, 2, 7).unwrap();
        assert_eq!(m, LabelMap::filled(3, 2, 7).unwrap());

        let a = Mask::new(1, 3, 1, vec![(0, 0), (1, 0)], "a").unwrap();
        let b = Mask::new(2, 3, 1, vec![(1, 0), (2, 0)], "b").unwrap();
        assert_eq!(compose(&[a.clone(), b.clone()], 3, 1, 0).unwrap().data(), &[1, 2, 2]);
        assert_eq!(compose(&[b, a.clone()], 3, 1, 0).unwrap().data(), &[1, 1, 2]);
        assert!(matches!(
            compose(&[a], 4, 1, 0),
            Err(Error::Composition(_))
        ));
    }

    #[test]
    fn mask_validation() {
        assert!(Mask::new(1, 2, 2, vec![], "").is_err());
        assert!(Mask::new(1, 2, 2, vec![(2, 0)], "").is_err());
        let m = Mask::new(1, 2, 2, vec![(1, 1), (0, 0), (1, 1)], "").unwrap();
        assert_eq!(m.pixels(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn overlay_cases() {
        let base = LabelMap::filled(4, 4, 0).unwrap();
        let one = Mask::new(3, 4, 4, vec![(2, 1)], "").unwrap();
        let out = overlay(&base, &one).unwrap();
        assert_eq!(out.data().iter().zip(base.data()).filter(|(a, b)| a != b).count(), 1);
        assert_eq!(out.get(2, 1), 3);
        assert_eq!(base, LabelMap::filled(4, 4, 0).unwrap());

        let all: Vec<_> = (0..4).flat_map(|y| (0..4).map(move |x| (x, y))).collect();
        let full = Mask::new(9, 4, 4, all, "").unwrap();
        assert_eq!(overlay(&base, &full).unwrap(), LabelMap::filled(4, 4, 9).unwrap());

        let small = Mask::new(3, 2, 2, vec![(0, 0)], "").unwrap();
        assert!(matches!(overlay(&base, &small), Err(Error::Overlay { .. })));
    }

    #[test]
    fn overlay_adds_missing_wall() {
        let t = table();
        let wall = t.id_by_name("wall").unwrap();
        let road = t.id_by_name("road").unwrap();
        let building = t.id_by_name("building").unwrap();
        let mut data = vec![road; 8 * 8];
        data[..32].fill(building);
        let base = LabelMap::new(8, 8, data).unwrap();
        assert!(!base.contains_class(wall));
        let donor = {
            let mut d = vec![road; 64];
            for y in 2..6 {
                for x in 0..3 {
                    d[y * 8 + x] = wall;
                }
            }
            LabelMap::new(8, 8, d).unwrap()
        };
        let mask = separate(&donor, &t)
            .unwrap()
            .into_iter()
            .find(|m| m.class_id() == wall)
            .unwrap();
        let out = overlay(&base, &mask).unwrap();
        assert!(out.contains_class(wall));
        assert_eq!(out.count(wall), 12);
        assert_eq!(out.get(0, 2), wall);
    }

    #[test]
    fn separate_random_oracle() {
        use rand::Rng;
        let mut rng = crate::seed::rng(16);
        let t = table();
        let data: Vec<u8> = (0..256).map(|_| [2u8, 7, 13][rng.random_range(0..3)]).collect();
        let m = LabelMap::new(16, 16, data).unwrap();
        let masks = separate(&m, &t).unwrap();
        assert_eq!(masks.len(), 3);
        let mut owner = [0usize; 256];
        for mask in &masks {
            for &(x, y) in mask.pixels() {
                let i = y as usize * 16 + x as usize;
                assert_eq!(m.data()[i], mask.class_id());
                owner[i] += 1;
            }
        }
        assert!(owner.iter().all(|&c| c == 1));
    }

    proptest! {
        #[test]
        fn separate_is_disjoint_cover(m in arb_map()) {
            let t = table();
            let masks = separate(&m, &t).unwrap();
            prop_assert!(masks.len() <= t.len());
            let mut hits = vec![0u8; m.data().len()];
            for mask in &masks {
                for &(x, y) in mask.pixels() {
                    hits[y as usize * m.width() + x as usize] += 1;
                }
            }
            for (h, &v) in hits.iter().zip(m.data()) {
                prop_assert_eq!(*h, u8::from(v != t.ignore_id()));
            }
        }

        #[test]
        fn compose_inverts_separate(m in arb_map()) {
            let t = table();
            let masks = separate(&m, &t).unwrap();
            prop_assert_eq!(compose(&masks, m.width(), m.height(), t.ignore_id()).unwrap(), m);
        }

        #[test]
        fn codec_roundtrip(m in arb_map()) {
            let bytes = save_labelmap(&m);
            let back = load_labelmap(&bytes).unwrap();
            prop_assert_eq!(save_labelmap(&back), bytes);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn overlay_idempotent(m in arb_map(), cls in 0u8..19, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let px: Vec<(u32, u32)> = (0..=m.data().len() / 2)
                .map(|_| (rng.random_range(0..m.width() as u32), rng.random_range(0..m.height() as u32)))
                .collect();
            let k = Mask::new(cls, m.width(), m.height(), px, "").unwrap();
            let once = overlay(&m, &k).unwrap();
            prop_assert_eq!(overlay(&once, &k).unwrap(), once);
        }
    }
}
