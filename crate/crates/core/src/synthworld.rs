//! Procedural street-like scenes with controllable class imbalance.
//!
//! Every image is the banded background canvas with axis-aligned
//! rectangles of object classes pasted on top, each class included with its
//! own probability. Images are rendered with the palette renderer.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_basic_map, BasicLayout};
use crate::error::{Error, Result};
use crate::generator::{render_palette, Palette, RenderedImage};
use crate::labelmap::{ClassTable, LabelMap};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_id: u8,
    /// Chance that an image contains this object.
    pub probability: f64,
    /// Side length range in pixels, inclusive.
    pub min_size: usize,
    pub max_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub classes: ClassTable,
    pub layout: BasicLayout,
    /// Pasted in list order; later objects cover earlier ones.
    pub objects: Vec<ObjectSpec>,
    pub palette: Palette,
    pub noise_sigma: f64,
    pub seed: u64,
    pub count: usize,
}

impl WorldConfig {
    /// 64x64 scenes of sky/building/road with car (0.9), bus (0.5) and
    /// train (0.1). Bus and train differ only slightly in color, so the
    /// rare class is genuinely hard to tell apart.
    pub fn default_world(seed: u64, count: usize) -> Self {
        let classes = ClassTable::cityscapes()
            .subset(&[0, 2, 10, 13, 15, 16])
            .expect("ids exist");
        let obj = |class_id, probability| ObjectSpec {
            class_id,
            probability,
            min_size: 10,
            max_size: 20,
        };
        WorldConfig {
            width: 64,
            height: 64,
            classes,
            layout: BasicLayout::cityscapes_default(),
            objects: vec![obj(13, 0.9), obj(15, 0.5), obj(16, 0.1)],
            palette: Palette::cityscapes(),
            noise_sigma: 8.0,
            seed,
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("world needs at least one image".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("world frame must be at least 1x1".into()));
        }
        for b in self.layout.bands() {
            if !self.classes.contains(b.class_id) {
                return Err(Error::Config(format!("band class {} not in class table", b.class_id)));
            }
        }
        for o in &self.objects {
            if !self.classes.contains(o.class_id) {
                return Err(Error::Config(format!("object class {} not in class table", o.class_id)));
            }
            if !(0.0..=1.0).contains(&o.probability) {
                return Err(Error::Config(format!(
                    "object class {} has probability {} outside [0, 1]",
                    o.class_id, o.probability
                )));
            }
            if o.min_size == 0 || o.min_size > o.max_size {
                return Err(Error::Config(format!("object class {} has an empty size range", o.class_id)));
            }
            if o.max_size > self.width || o.max_size > self.height {
                return Err(Error::Config(format!(
                    "object class {} may be {} px, larger than the {}x{} frame",
                    o.class_id, o.max_size, self.width, self.height
                )));
            }
        }
        for id in self.classes.ids() {
            if self.palette.color(id).is_none() {
                return Err(Error::Render(id));
            }
        }
        Ok(())
    }

    pub fn label_map(&self, index: usize) -> Result<LabelMap> {
        let mut map = make_basic_map(&self.layout, self.width, self.height)?;
        let mut rng = seed::rng(seed::derive(seed::derive_named(self.seed, "layout"), index as u64));
        for o in &self.objects {
            if rng.random::<f64>() >= o.probability {
                continue;
            }
            let w = rng.random_range(o.min_size..=o.max_size);
            let h = rng.random_range(o.min_size..=o.max_size);
            let x0 = rng.random_range(0..=self.width - w);
            let y0 = rng.random_range(0..=self.height - h);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    map.set(x, y, o.class_id);
                }
            }
        }
        Ok(map)
    }

    pub fn render(&self, map: &LabelMap, index: usize) -> Result<RenderedImage> {
        render_palette(
            map,
            &self.palette,
            self.noise_sigma,
            seed::derive(seed::derive_named(self.seed, "render"), index as u64),
        )
    }
}

pub fn generate_dataset(config: &WorldConfig) -> Result<Vec<(LabelMap, RenderedImage)>> {
    config.validate()?;
    (0..config.count)
        .into_par_iter()
        .map(|i| {
            let label = config.label_map(i)?;
            let image = config.render(&label, i)?;
            Ok((label, image))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::appearance_frequency;
    use crate::labelmap::save_labelmap;

    #[test]
    fn no_objects_gives_basic_maps() {
        let mut c = WorldConfig::default_world(1, 10);
        for o in &mut c.objects {
            o.probability = 0.0;
        }
        let basic = make_basic_map(&c.layout, 64, 64).unwrap();
        for (label, _) in generate_dataset(&c).unwrap() {
            assert_eq!(label, basic);
        }
    }

    #[test]
    fn certain_objects_always_appear() {
        let mut c = WorldConfig::default_world(2, 25);
        c.objects = vec![ObjectSpec { class_id: 16, probability: 1.0, min_size: 4, max_size: 8 }];
        let ds = generate_dataset(&c).unwrap();
        let r = appearance_frequency::<f64>(ds.iter().map(|(l, _)| l), &c.classes).unwrap();
        assert_eq!(r.frequency(16), Some(1.0));
    }

    #[test]
    fn rare_frequency_concentrates() {
        let mut c = WorldConfig::default_world(3, 1000);
        c.objects = vec![ObjectSpec { class_id: 16, probability: 0.1, min_size: 4, max_size: 8 }];
        let ds = generate_dataset(&c).unwrap();
        let r = appearance_frequency::<f64>(ds.iter().map(|(l, _)| l), &c.classes).unwrap();
        let f = r.frequency(16).unwrap();
        assert!((f - 0.1).abs() < 0.03, "{f}");
    }

    #[test]
    fn deterministic_and_ignore_free() {
        let c = WorldConfig::default_world(4, 12);
        let a = generate_dataset(&c).unwrap();
        let b = generate_dataset(&c).unwrap();
        for ((la, ia), (lb, ib)) in a.iter().zip(&b) {
            assert_eq!(save_labelmap(la), save_labelmap(lb));
            assert_eq!(ia.to_ppm(), ib.to_ppm());
            assert_eq!(la.count(255), 0);
            assert!(c.classes.validate(la).is_ok());
        }
    }

    #[test]
    fn config_errors() {
        let mut c = WorldConfig::default_world(0, 1);
        c.objects[0].max_size = 65;
        assert!(generate_dataset(&c).is_err());
        let mut c = WorldConfig::default_world(0, 1);
        c.objects[0].probability = 1.5;
        assert!(c.validate().is_err());
        let mut c = WorldConfig::default_world(0, 1);
        c.count = 0;
        assert!(c.validate().is_err());
        let c: WorldConfig = serde_json::from_str(&serde_json::to_string(&WorldConfig::default_world(5, 3)).unwrap()).unwrap();
        assert_eq!(c, WorldConfig::default_world(5, 3));
    }
}
