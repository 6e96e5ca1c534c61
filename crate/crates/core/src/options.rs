//! Vocabulary shared by the model and the oracle: dynamic slots, the three
//! reconfigurable attributes, their option sets and full permutations.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{config_err, Result};

/// Kernel size of every stored dynamic kernel.
pub const STORED_KERNEL: usize = 3;

pub const STRIDE_CHOICES: [Stride; 5] =
    [Stride::Half, Stride::Whole(1), Stride::Whole(2), Stride::Whole(3), Stride::Whole(4)];
pub const DILATION_CHOICES: [usize; 5] = [1, 2, 3, 4, 5];
pub const SIZE_CHOICES: [usize; 5] = [1, 3, 5, 7, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    A,
    B,
    C,
    D,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::A, Slot::B, Slot::C, Slot::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Slot> {
        Slot::ALL.get(i).copied()
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Stride,
    Dilation,
    Size,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Stride, Attribute::Dilation, Attribute::Size];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Stride => "stride",
            Attribute::Dilation => "dilation",
            Attribute::Size => "size",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Convolution stride: a whole step or the fractional ½ (2× up-sampling).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stride {
    Half,
    Whole(usize),
}

impl Stride {
    pub fn as_f64(self) -> f64 {
        match self {
            Stride::Half => 0.5,
            Stride::Whole(s) => s as f64,
        }
    }

    pub fn is_fractional(self) -> bool {
        matches!(self, Stride::Half)
    }

    pub fn from_f64(v: f64) -> Option<Stride> {
        if v == 0.5 {
            Some(Stride::Half)
        } else if v >= 1.0 && v.fract() == 0.0 && v <= 64.0 {
            Some(Stride::Whole(v as usize))
        } else {
            None
        }
    }
}

impl PartialOrd for Stride {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Stride {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let key = |s: &Stride| match s {
            Stride::Half => 0,
            Stride::Whole(n) => 2 * n,
        };
        key(self).cmp(&key(other))
    }
}

impl fmt::Display for Stride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stride::Half => f.write_str("1/2"),
            Stride::Whole(s) => write!(f, "{s}"),
        }
    }
}

impl Serialize for Stride {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Stride::Half => s.serialize_f64(0.5),
            Stride::Whole(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Stride {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct StrideVisitor;
        impl Visitor<'_> for StrideVisitor {
            type Value = Stride;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a stride: 0.5, \"1/2\" or a positive integer")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Stride, E> {
                Stride::from_f64(v as f64).ok_or_else(|| E::custom(format!("invalid stride {v}")))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Stride, E> {
                Stride::from_f64(v as f64).ok_or_else(|| E::custom(format!("invalid stride {v}")))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Stride, E> {
                Stride::from_f64(v).ok_or_else(|| E::custom(format!("invalid stride {v}")))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Stride, E> {
                match v.trim() {
                    "1/2" | "0.5" => Ok(Stride::Half),
                    other => other
                        .parse::<usize>()
                        .ok()
                        .and_then(|n| Stride::from_f64(n as f64))
                        .ok_or_else(|| E::custom(format!("invalid stride {other:?}"))),
                }
            }
        }
        d.deserialize_any(StrideVisitor)
    }
}

/// Active attribute values of one dynamic slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotSetting {
    pub stride: Stride,
    pub dilation: usize,
    pub size: usize,
}

impl SlotSetting {
    pub fn with_stride(stride: Stride) -> Self {
        SlotSetting { stride, dilation: 1, size: STORED_KERNEL }
    }

    pub fn get(&self, attr: Attribute) -> f64 {
        match attr {
            Attribute::Stride => self.stride.as_f64(),
            Attribute::Dilation => self.dilation as f64,
            Attribute::Size => self.size as f64,
        }
    }

    pub fn label(&self, attr: Attribute) -> String {
        match attr {
            Attribute::Stride => self.stride.to_string(),
            Attribute::Dilation => self.dilation.to_string(),
            Attribute::Size => self.size.to_string(),
        }
    }
}

/// One model configuration: a setting for each of the four dynamic slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    pub slots: [SlotSetting; 4],
}

impl Permutation {
    pub fn from_strides(strides: [Stride; 4]) -> Self {
        Permutation { slots: strides.map(SlotSetting::with_stride) }
    }

    pub fn slot(&self, slot: Slot) -> &SlotSetting {
        &self.slots[slot.index()]
    }

    pub fn slot_mut(&mut self, slot: Slot) -> &mut SlotSetting {
        &mut self.slots[slot.index()]
    }

    /// Compact label listing every attribute that differs from `base`,
    /// e.g. `S(1,2,2,2)` or `S(1,2,2,2)K(3,3,1,1)`.
    pub fn label(&self, base: &Permutation) -> String {
        let mut out = String::new();
        for (attr, tag) in [(Attribute::Stride, 'S'), (Attribute::Dilation, 'D'), (Attribute::Size, 'K')] {
            let differs = self.slots.iter().zip(&base.slots).any(|(a, b)| a.get(attr) != b.get(attr));
            if differs || (attr == Attribute::Stride && out.is_empty()) {
                let parts: Vec<String> = self.slots.iter().map(|s| s.label(attr)).collect();
                out.push_str(&format!("{tag}({})", parts.join(",")));
            }
        }
        out
    }
}

/// Allowed option values per slot for each attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionSets {
    pub stride: PerSlot<Stride>,
    pub dilation: PerSlot<usize>,
    pub size: PerSlot<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerSlot<V> {
    #[serde(rename = "A")]
    pub a: Vec<V>,
    #[serde(rename = "B")]
    pub b: Vec<V>,
    #[serde(rename = "C")]
    pub c: Vec<V>,
    #[serde(rename = "D")]
    pub d: Vec<V>,
}

impl<V: Clone> PerSlot<V> {
    pub fn uniform(values: &[V]) -> Self {
        PerSlot { a: values.to_vec(), b: values.to_vec(), c: values.to_vec(), d: values.to_vec() }
    }

    pub fn get(&self, slot: Slot) -> &[V] {
        match slot {
            Slot::A => &self.a,
            Slot::B => &self.b,
            Slot::C => &self.c,
            Slot::D => &self.d,
        }
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Vec<V> {
        match slot {
            Slot::A => &mut self.a,
            Slot::B => &mut self.b,
            Slot::C => &mut self.c,
            Slot::D => &mut self.d,
        }
    }
}

impl OptionSets {
    /// Strides {1,2,3,4} in A and B, {½,1,2,3,4} in C and D; dilations
    /// {1..5} and sizes {1,3,5,7,9} everywhere.
    pub fn full() -> Self {
        let shallow = [Stride::Whole(1), Stride::Whole(2), Stride::Whole(3), Stride::Whole(4)];
        OptionSets {
            stride: PerSlot {
                a: shallow.to_vec(),
                b: shallow.to_vec(),
                c: STRIDE_CHOICES.to_vec(),
                d: STRIDE_CHOICES.to_vec(),
            },
            dilation: PerSlot::uniform(&DILATION_CHOICES),
            size: PerSlot::uniform(&SIZE_CHOICES),
        }
    }

    /// The efficiency study's space: strides {1,2,3,4}, sizes {1,3}.
    pub fn efficiency() -> Self {
        OptionSets {
            stride: PerSlot::uniform(&[Stride::Whole(1), Stride::Whole(2), Stride::Whole(3), Stride::Whole(4)]),
            dilation: PerSlot::uniform(&[1]),
            size: PerSlot::uniform(&[1, 3]),
        }
    }

    pub fn values(&self, attr: Attribute, slot: Slot) -> Vec<f64> {
        match attr {
            Attribute::Stride => self.stride.get(slot).iter().map(|s| s.as_f64()).collect(),
            Attribute::Dilation => self.dilation.get(slot).iter().map(|&d| d as f64).collect(),
            Attribute::Size => self.size.get(slot).iter().map(|&k| k as f64).collect(),
        }
    }

    pub fn len(&self, attr: Attribute, slot: Slot) -> usize {
        match attr {
            Attribute::Stride => self.stride.get(slot).len(),
            Attribute::Dilation => self.dilation.get(slot).len(),
            Attribute::Size => self.size.get(slot).len(),
        }
    }

    /// Whether `setting` is reachable in `slot`. The default stride of a
    /// slot is always admissible.
    pub fn admits(&self, slot: Slot, setting: &SlotSetting, default_stride: Stride) -> Result<()> {
        if setting.stride != default_stride && !self.stride.get(slot).contains(&setting.stride) {
            return config_err(format!("stride {} is not allowed in slot {slot}", setting.stride));
        }
        if setting.dilation != 1 && !self.dilation.get(slot).contains(&setting.dilation) {
            return config_err(format!("dilation {} is not allowed in slot {slot}", setting.dilation));
        }
        if setting.size != STORED_KERNEL && !self.size.get(slot).contains(&setting.size) {
            return config_err(format!("kernel size {} is not allowed in slot {slot}", setting.size));
        }
        Ok(())
    }

    /// Checks that every listed option is one of the recognised values and
    /// that `self` is contained in `allowed`. Returns human-readable
    /// violations keyed by a dotted path below `prefix`.
    pub fn violations(&self, allowed: &OptionSets, prefix: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for slot in Slot::ALL {
            let path = |attr: &str| format!("{prefix}.{attr}.{slot}");
            let strides = self.stride.get(slot);
            if strides.is_empty() {
                out.push((path("stride"), "empty option set".into()));
            }
            for s in strides {
                if !STRIDE_CHOICES.contains(s) {
                    out.push((path("stride"), format!("stride {s} is not one of 1/2,1,2,3,4")));
                } else if !allowed.stride.get(slot).contains(s) {
                    out.push((path("stride"), format!("option not allowed: stride {s} in slot {slot}")));
                }
            }
            let dilations = self.dilation.get(slot);
            if dilations.is_empty() {
                out.push((path("dilation"), "empty option set".into()));
            }
            for d in dilations {
                if !DILATION_CHOICES.contains(d) {
                    out.push((path("dilation"), format!("dilation {d} is not one of 1..5")));
                } else if !allowed.dilation.get(slot).contains(d) {
                    out.push((path("dilation"), format!("option not allowed: dilation {d} in slot {slot}")));
                }
            }
            let sizes = self.size.get(slot);
            if sizes.is_empty() {
                out.push((path("size"), "empty option set".into()));
            }
            for k in sizes {
                if !SIZE_CHOICES.contains(k) {
                    out.push((path("size"), format!("kernel size {k} is not one of 1,3,5,7,9")));
                } else if !allowed.size.get(slot).contains(k) {
                    out.push((path("size"), format!("option not allowed: size {k} in slot {slot}")));
                }
            }
        }
        out
    }
}
