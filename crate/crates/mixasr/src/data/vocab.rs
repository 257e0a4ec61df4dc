use crate::error::{Error, Result};

/// Reserved token ids. Blank is the CTC no-label symbol; sos/eos delimit
/// decoder sequences. None of the three ever appears in reference labels.
pub const BLANK: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const N_RESERVED: usize = 3;

/// Symbol table: the three reserved ids followed by the ordinary symbols,
/// densely indexed from 0.
///
/// Two derived class spaces are used by the model heads:
/// * CTC classes: `0 = blank`, `1..=V` the symbols in order.
/// * Attention output classes: `0..V` the symbols in order, `V = eos`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Vocabulary {
    /// `n` symbols named `a`, `b`, ... (then `s26`, `s27`, ... beyond the
    /// alphabet).
    pub fn with_size(n: usize) -> Self {
        let symbols = (0..n)
            .map(|i| {
                if i < 26 {
                    ((b'a' + i as u8) as char).to_string()
                } else {
                    format!("s{i}")
                }
            })
            .collect();
        Vocabulary { symbols }
    }

    pub fn from_symbols(symbols: Vec<String>) -> Self {
        Vocabulary { symbols }
    }

    /// Number of ordinary (non-reserved) symbols, `V`.
    pub fn n_symbols(&self) -> usize {
        self.symbols.len()
    }

    /// Total token ids including the reserved three.
    pub fn n_tokens(&self) -> usize {
        self.symbols.len() + N_RESERVED
    }

    /// Global token id of the `ordinal`-th symbol.
    pub fn token_of_ordinal(&self, ordinal: usize) -> usize {
        debug_assert!(ordinal < self.n_symbols());
        ordinal + N_RESERVED
    }

    /// Position of a symbol token among the ordinary symbols.
    pub fn ordinal(&self, token: usize) -> Result<usize> {
        if token < N_RESERVED || token >= self.n_tokens() {
            return Err(Error::UnknownToken(token));
        }
        Ok(token - N_RESERVED)
    }

    pub fn is_symbol(&self, token: usize) -> bool {
        (N_RESERVED..self.n_tokens()).contains(&token)
    }

    pub fn name(&self, token: usize) -> &str {
        match token {
            BLANK => "<blank>",
            SOS => "<sos>",
            EOS => "<eos>",
            _ => &self.symbols[token - N_RESERVED],
        }
    }

    pub fn token_of_name(&self, name: &str) -> Option<usize> {
        match name {
            "<blank>" => Some(BLANK),
            "<sos>" => Some(SOS),
            "<eos>" => Some(EOS),
            _ => self
                .symbols
                .iter()
                .position(|s| s == name)
                .map(|i| i + N_RESERVED),
        }
    }

    // CTC class space: blank plus symbols.

    pub fn n_ctc_classes(&self) -> usize {
        self.n_symbols() + 1
    }

    pub fn ctc_class(&self, token: usize) -> Result<usize> {
        Ok(self.ordinal(token)? + 1)
    }

    pub fn ctc_classes(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.ctc_class(*t)).collect()
    }

    pub fn token_of_ctc_class(&self, class: usize) -> usize {
        debug_assert!(class >= 1 && class <= self.n_symbols());
        self.token_of_ordinal(class - 1)
    }

    // Attention output class space: symbols plus eos.

    pub fn n_att_classes(&self) -> usize {
        self.n_symbols() + 1
    }

    pub fn eos_att_class(&self) -> usize {
        self.n_symbols()
    }

    pub fn att_class(&self, token: usize) -> Result<usize> {
        if token == EOS {
            return Ok(self.eos_att_class());
        }
        self.ordinal(token)
    }

    pub fn token_of_att_class(&self, class: usize) -> usize {
        if class == self.eos_att_class() {
            EOS
        } else {
            self.token_of_ordinal(class)
        }
    }

    /// Space-separated symbol names, the manifest label format.
    pub fn format_labels(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .map(|t| self.name(*t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_labels(&self, text: &str) -> Option<Vec<usize>> {
        text.split_whitespace()
            .map(|name| self.token_of_name(name))
            .collect()
    }
}
