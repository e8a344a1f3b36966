use std::collections::HashMap;

/// Reserved ID for padding and unknown tokens.
pub const PAD_ID: u32 = 0;
pub const PAD_TOKEN: &str = "[PAD]";

/// Bijection between the raw tokens of one field and contiguous IDs.
///
/// IDs are assigned in first-occurrence order starting at 1; ID 0 is the
/// padding token and is never assigned to an observed value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    field: String,
    index: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(field: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            index: HashMap::new(),
            tokens: vec![PAD_TOKEN.to_string()],
        }
    }

    pub fn field(&self) -> &str {
        &self.field
    }

    pub fn get_or_insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = u32::try_from(self.tokens.len()).expect("vocabulary exceeds u32 range");
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// The raw token for `id`; `None` for the padding ID or an unknown ID.
    pub fn token(&self, id: u32) -> Option<&str> {
        if id == PAD_ID {
            return None;
        }
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Number of IDs including the padding ID.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when no token has been observed.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == 1
    }

    /// Observed tokens in ID order (padding excluded).
    pub fn tokens(&self) -> &[String] {
        &self.tokens[1..]
    }
}
