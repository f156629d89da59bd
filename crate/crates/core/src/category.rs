use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Road-user categories annotated in the traffic footage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Person,
    Car,
    Bus,
    TwoWheeler,
    ThreeWheeler,
    Others,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Person,
        Category::Car,
        Category::Bus,
        Category::TwoWheeler,
        Category::ThreeWheeler,
        Category::Others,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Label as written in annotation dumps.
    pub fn name(self) -> &'static str {
        match self {
            Category::Person => "Person",
            Category::Car => "Car",
            Category::Bus => "Bus",
            Category::TwoWheeler => "Two-wheeler",
            Category::ThreeWheeler => "Three-wheeler",
            Category::Others => "Others",
        }
    }

    /// Zero-based index into [`Category::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Category> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL.iter().copied().find(|c| c.name() == s).ok_or_else(|| UnknownCategory(s.to_string()))
    }
}
