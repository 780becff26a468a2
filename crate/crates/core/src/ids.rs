use std::collections::HashMap;
use std::fmt;

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(
    /// Dense KG entity id.
    EntityId
);
dense_id!(
    /// Dense relation id. In the relational graph, `0..R` are co-relations and
    /// `R` is the user-item interaction relation.
    RelationId
);
dense_id!(UserId);
dense_id!(ItemId);

/// Raw string id to dense integer table, assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    lookup: HashMap<String, u32>,
    raw: Vec<String>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the dense id of `raw`, inserting it if unseen.
    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.lookup.get(raw) {
            return id;
        }
        let id = self.raw.len() as u32;
        self.raw.push(raw.to_owned());
        self.lookup.insert(raw.to_owned(), id);
        id
    }

    pub fn get(&self, raw: &str) -> Option<u32> {
        self.lookup.get(raw).copied()
    }

    pub fn raw(&self, id: u32) -> &str {
        &self.raw[id as usize]
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Iterates `(raw, dense)` in dense order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.raw.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32))
    }
}

impl<S: AsRef<str>> FromIterator<S> for IdMap {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut map = IdMap::new();
        for s in iter {
            map.intern(s.as_ref());
        }
        map
    }
}
