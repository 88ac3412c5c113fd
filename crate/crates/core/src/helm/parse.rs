//! Recursive-descent parser for the HELM grammar subset.

use super::{
    find_duplicate_connection, Connection, HelmError, HelmSequence, Monomer, Polymer, PolymerKind,
    RGroup,
};

/// Characters that may not occur inside a monomer code.
const FORBIDDEN_IN_SYMBOL: &[char] = &['.', '{', '}', '$', '|', ',', '[', ']'];

struct Cursor<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn expect(&mut self, byte: u8, expected: &str) -> Result<(), HelmError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error(&self, expected: &str) -> HelmError {
        HelmError::Syntax {
            position: self.pos,
            expected: expected.to_string(),
        }
    }

    /// Consume characters up to (excluding) the next `$`; error if none left.
    fn take_section(&mut self, expected: &str) -> Result<&'a str, HelmError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b == b'$' {
                let section = &self.text[start..self.pos];
                self.pos += 1;
                return Ok(section);
            }
            self.pos += 1;
        }
        Err(self.error(expected))
    }

    fn parse_number(&mut self, expected: &str) -> Result<usize, HelmError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(expected));
        }
        let digits = &self.text[start..self.pos];
        if digits.len() > 1 && digits.starts_with('0') {
            return Err(HelmError::Syntax {
                position: start,
                expected: format!("{expected} without leading zeros"),
            });
        }
        let value: usize = digits.parse().map_err(|_| HelmError::Syntax {
            position: start,
            expected: expected.to_string(),
        })?;
        if value == 0 {
            return Err(HelmError::Syntax {
                position: start,
                expected: format!("positive {expected}"),
            });
        }
        Ok(value)
    }

    fn parse_polymer_id(&mut self) -> Result<(PolymerKind, u32), HelmError> {
        let kind = if self.text[self.pos..].starts_with("PEPTIDE") {
            self.pos += "PEPTIDE".len();
            PolymerKind::Peptide
        } else if self.text[self.pos..].starts_with("CHEM") {
            self.pos += "CHEM".len();
            PolymerKind::Chem
        } else {
            return Err(self.error("polymer id (PEPTIDE<n> or CHEM<n>)"));
        };
        let number = self.parse_number("polymer number")? as u32;
        Ok((kind, number))
    }

    fn parse_monomer(&mut self) -> Result<Monomer, HelmError> {
        match self.peek() {
            Some(b'[') => {
                self.pos += 1;
                let start = self.pos;
                loop {
                    match self.peek() {
                        Some(b']') => break,
                        Some(b) => {
                            let c = b as char;
                            if FORBIDDEN_IN_SYMBOL.contains(&c) {
                                return Err(self.error("monomer code character"));
                            }
                            self.pos += 1;
                        }
                        None => return Err(self.error("`]`")),
                    }
                }
                if self.pos == start {
                    return Err(self.error("non-empty monomer code"));
                }
                let symbol = self.text[start..self.pos].to_string();
                self.pos += 1; // ']'
                Ok(Monomer {
                    symbol,
                    bracketed: true,
                })
            }
            Some(b) if b.is_ascii_uppercase() => {
                self.pos += 1;
                Ok(Monomer::natural(b as char))
            }
            _ => Err(self.error("monomer (uppercase letter or `[code]`)")),
        }
    }

    fn parse_polymer(&mut self) -> Result<Polymer, HelmError> {
        let (kind, number) = self.parse_polymer_id()?;
        self.expect(b'{', "`{`")?;
        let mut monomers = vec![self.parse_monomer()?];
        while self.eat(b'.') {
            monomers.push(self.parse_monomer()?);
        }
        self.expect(b'}', "`.` or `}`")?;
        if kind == PolymerKind::Chem && monomers.len() != 1 {
            return Err(HelmError::Syntax {
                position: self.pos,
                expected: "exactly one monomer in a CHEM polymer".to_string(),
            });
        }
        Ok(Polymer {
            kind,
            number,
            monomers,
        })
    }

    fn parse_rgroup(&mut self) -> Result<RGroup, HelmError> {
        self.expect(b'R', "R-group (R1, R2 or R3)")?;
        match self.bump() {
            Some(b'1') => Ok(RGroup::R1),
            Some(b'2') => Ok(RGroup::R2),
            Some(b'3') => Ok(RGroup::R3),
            _ => Err(HelmError::Syntax {
                position: self.pos.saturating_sub(1),
                expected: "R-group number 1, 2 or 3".to_string(),
            }),
        }
    }

    fn parse_connection(&mut self) -> Result<Connection, HelmError> {
        let (src_kind, src_number) = self.parse_polymer_id()?;
        self.expect(b',', "`,`")?;
        let (dst_kind, dst_number) = self.parse_polymer_id()?;
        self.expect(b',', "`,`")?;
        let source_index = self.parse_number("monomer index")?;
        self.expect(b':', "`:`")?;
        let source_rgroup = self.parse_rgroup()?;
        self.expect(b'-', "`-`")?;
        let target_index = self.parse_number("monomer index")?;
        self.expect(b':', "`:`")?;
        let target_rgroup = self.parse_rgroup()?;
        Ok(Connection {
            source_polymer: format!("{}{}", src_kind.prefix(), src_number),
            target_polymer: format!("{}{}", dst_kind.prefix(), dst_number),
            source_index,
            source_rgroup,
            target_index,
            target_rgroup,
        })
    }
}

/// Parse a HELM string. Trailing unconsumed content is an error; the returned
/// sequence satisfies all structural invariants (resolvable connections,
/// unique polymer ids, no duplicate connections).
pub fn parse_helm(input: &str) -> Result<HelmSequence, HelmError> {
    let mut cur = Cursor::new(input);

    let mut polymers = vec![cur.parse_polymer()?];
    while cur.eat(b'|') {
        polymers.push(cur.parse_polymer()?);
    }
    cur.expect(b'$', "`|` or `$`")?;

    let mut connections = Vec::new();
    if cur.peek() != Some(b'$') {
        connections.push(cur.parse_connection()?);
        while cur.eat(b'|') {
            connections.push(cur.parse_connection()?);
        }
    }
    cur.expect(b'$', "`|` or `$`")?;

    let groups = cur.take_section("`$` terminating the group section")?.to_string();
    let annotations = cur
        .take_section("`$` terminating the annotation section")?
        .to_string();

    let rest = &cur.text[cur.pos..];
    if let Some(offset) = rest.find('$') {
        return Err(HelmError::Syntax {
            position: cur.pos + offset,
            expected: "end of input after version tag".to_string(),
        });
    }
    let version_tag = if rest.is_empty() {
        None
    } else {
        Some(rest.to_string())
    };

    // Uniqueness of polymer ids.
    for (i, p) in polymers.iter().enumerate() {
        if polymers[..i].iter().any(|q| q.id() == p.id()) {
            return Err(HelmError::DuplicatePolymerId { id: p.id() });
        }
    }

    // Every connection endpoint must resolve to an existing monomer.
    for c in &connections {
        for (id, index) in [
            (&c.source_polymer, c.source_index),
            (&c.target_polymer, c.target_index),
        ] {
            match polymers.iter().find(|p| &p.id() == id) {
                None => {
                    return Err(HelmError::DanglingConnection {
                        detail: format!("polymer {id} does not exist"),
                    })
                }
                Some(p) if index > p.monomers.len() => {
                    return Err(HelmError::DanglingConnection {
                        detail: format!(
                            "monomer index {index} exceeds length {} of {id}",
                            p.monomers.len()
                        ),
                    })
                }
                Some(_) => {}
            }
        }
    }

    if let Some((a, b)) = find_duplicate_connection(&connections) {
        return Err(HelmError::DuplicateConnection {
            a: a.to_string(),
            b: b.to_string(),
        });
    }

    Ok(HelmSequence {
        polymers,
        connections,
        groups,
        annotations,
        version_tag,
    })
}
