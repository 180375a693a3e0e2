use std::fmt;
use std::str::FromStr;

use super::Genotype;

/// Reference architectures shipped with the tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Three-layer CapsNet on 28x28x1 inputs.
    CapsNet,
    /// The same CapsNet on 32x32x3 inputs.
    CapsNetCifar10,
    /// DeepCaps on 32x32x3 inputs resized to 64x64: one conv, four cells with
    /// a skip connection around the last one, class capsules.
    DeepCaps,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::CapsNet, Preset::CapsNetCifar10, Preset::DeepCaps];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CapsNet => "capsnet",
            Preset::CapsNetCifar10 => "capsnet-cifar10",
            Preset::DeepCaps => "deepcaps",
        }
    }

    pub fn genotype_str(self) -> &'static str {
        match self {
            Preset::CapsNet => {
                "conv,28,1,1,9,1,20,256,1;cconv,20,256,1,9,2,6,32,8;ccaps,6,32,8,1,1,1,10,16;skip=none;resize=0"
            }
            Preset::CapsNetCifar10 => {
                "conv,32,3,1,9,1,24,256,1;cconv,24,256,1,9,2,8,32,8;ccaps,8,32,8,1,1,1,10,16;skip=none;resize=0"
            }
            Preset::DeepCaps => concat!(
                "conv,64,3,1,3,1,62,128,1;",
                "ccell,62,128,1,3,2,31,32,4;",
                "ccell,31,32,4,3,2,16,32,8;",
                "ccell,16,32,8,3,2,8,32,8;",
                "ccell,8,32,8,3,1,8,32,8;",
                "ccaps,8,32,8,1,1,1,10,16;",
                "skip=4;resize=1"
            ),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!("unknown preset {s:?} (expected one of capsnet, capsnet-cifar10, deepcaps)")
            })
    }
}

pub fn preset(p: Preset) -> Genotype {
    Genotype::deserialize(p.genotype_str()).expect("preset strings are well-formed")
}
