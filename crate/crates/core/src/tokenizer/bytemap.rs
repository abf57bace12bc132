/// Bijection between the 256 byte values and printable code points.
///
/// Printable ASCII and the printable Latin-1 ranges map to themselves; the
/// remaining 68 bytes take consecutive code points from U+0100 upward.
#[derive(Debug, Clone)]
pub struct ByteMap {
    forward: [char; 256],
    inverse: std::collections::HashMap<char, u8>,
}

impl ByteMap {
    pub fn new() -> Self {
        let mut forward = ['\0'; 256];
        let printable = |b: u32| (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
        let mut next = 256u32;
        for b in 0..256u32 {
            let cp = if printable(b) {
                b
            } else {
                next += 1;
                next - 1
            };
            forward[b as usize] = char::from_u32(cp).expect("valid code point");
        }
        let inverse = forward.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        Self { forward, inverse }
    }

    pub fn to_char(&self, b: u8) -> char {
        self.forward[b as usize]
    }

    pub fn to_byte(&self, c: char) -> Option<u8> {
        self.inverse.get(&c).copied()
    }

    /// Maps raw bytes to their printable spelling.
    pub fn encode_bytes(&self, bytes: &[u8]) -> String {
        bytes.iter().map(|&b| self.to_char(b)).collect()
    }

    /// Inverse of [`encode_bytes`](Self::encode_bytes); `None` if a character
    /// is outside the byte alphabet.
    pub fn decode_str(&self, s: &str) -> Option<Vec<u8>> {
        s.chars().map(|c| self.to_byte(c)).collect()
    }
}

impl Default for ByteMap {
    fn default() -> Self {
        Self::new()
    }
}
